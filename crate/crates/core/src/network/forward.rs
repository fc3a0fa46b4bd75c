use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{BlockKind, BlockLayout, ConvLayout, GraphOperators, LinearLayout, NetworkParams};
use crate::error::{MugError, Result};
use crate::features::FeatureMatrix;
use crate::numerics::{CsrMatrix, DenseMatrix, Tape, Var, DEFAULT_GN_EPS};

/// Parameters placed on a tape, in layout order.
pub type ParamVars = Vec<Var>;

/// Stacked network outputs on a tape.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    /// `K x 1` depth measures.
    pub depth: Var,
    /// `(K J) x 3` root-relative joints, meters.
    pub joints: Var,
    /// `(K V) x 3` root-relative mesh, meters.
    pub mesh: Var,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HumanOutput {
    pub depth_measure: f64,
    /// `J x 3` meters, root-relative.
    pub joints: DenseMatrix,
    /// `V x 3` meters, root-relative.
    pub mesh: DenseMatrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkOutput {
    pub humans: Vec<HumanOutput>,
}

impl NetworkOutput {
    fn from_stacked(ops: &GraphOperators, depth: &DenseMatrix, joints: &DenseMatrix, mesh: &DenseMatrix) -> Self {
        let (j, v) = (ops.joints_per_human, ops.vertices_per_human);
        let humans = (0..ops.humans)
            .map(|k| HumanOutput {
                depth_measure: depth[(k, 0)],
                joints: joints.slice_rows(k * j, (k + 1) * j),
                mesh: mesh.slice_rows(k * v, (k + 1) * v),
            })
            .collect();
        Self { humans }
    }
}

struct Ctx<'a> {
    tape: &'a mut Tape,
    params: &'a [Var],
    groups: usize,
}

impl Ctx<'_> {
    fn conv(&mut self, x: Var, laps: &[Arc<CsrMatrix>], layer: &ConvLayout) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for (lap, taps) in laps.iter().zip(&layer.taps) {
            let w: Vec<Var> = taps.iter().map(|&i| self.params[i]).collect();
            let y = self.tape.cheb_conv(x, lap, &w)?;
            acc = Some(match acc {
                Some(a) => self.tape.add(a, y)?,
                None => y,
            });
        }
        let y = acc.expect("at least one edge type");
        self.tape.group_norm(
            y,
            self.params[layer.gn_gain],
            self.params[layer.gn_bias],
            self.groups,
            DEFAULT_GN_EPS,
        )
    }

    fn block(&mut self, x: Var, laps: &[Arc<CsrMatrix>], block: &BlockLayout) -> Result<Var> {
        let out = match block.kind {
            BlockKind::Cascade => {
                let mut h = x;
                for layer in &block.convs {
                    let y = self.conv(h, laps, layer)?;
                    h = self.tape.relu(y);
                }
                h
            }
            BlockKind::Residual => {
                let y = self.conv(x, laps, &block.convs[0])?;
                let y = self.tape.relu(y);
                let y = self.conv(y, laps, &block.convs[1])?;
                let y = self.tape.add(y, x)?;
                self.tape.relu(y)
            }
        };
        self.check(out, block.name)?;
        Ok(out)
    }

    fn linear(&mut self, x: Var, lin: LinearLayout) -> Result<Var> {
        let y = self.tape.matmul(x, self.params[lin.weight])?;
        self.tape.add_row_bias(y, self.params[lin.bias])
    }

    fn check(&self, v: Var, name: &str) -> Result<()> {
        if self.tape.value(v).is_finite() {
            Ok(())
        } else {
            Err(MugError::Numeric(format!("non-finite activations after block {name}")))
        }
    }
}

/// Records the forward pass on `tape`. `param_vars` must follow the layout
/// order of `params`.
pub fn forward_on_tape(
    tape: &mut Tape,
    ops: &GraphOperators,
    feats: &FeatureMatrix,
    params: &NetworkParams,
    param_vars: &[Var],
) -> Result<ForwardVars> {
    let layout = params.layout();
    if param_vars.len() != layout.specs.len() {
        return Err(MugError::Config(format!(
            "{} parameter handles for {} tensors",
            param_vars.len(),
            layout.specs.len()
        )));
    }
    let nj = ops.humans * ops.joints_per_human;
    let nm = ops.humans * ops.vertices_per_human;
    if feats.joint_features.rows() != nj || feats.mesh_features.rows() != nm {
        return Err(MugError::Data(format!(
            "feature rows ({}, {}) do not match graph nodes ({nj}, {nm})",
            feats.joint_features.rows(),
            feats.mesh_features.rows()
        )));
    }
    if feats.dim != params.config.input_dim {
        return Err(MugError::Config(format!(
            "feature width {} but network expects {}",
            feats.dim, params.config.input_dim
        )));
    }
    let xj = tape.constant(feats.joint_features.clone());
    let xm = tape.constant(feats.mesh_features.clone());
    let mut cx = Ctx {
        tape,
        params: param_vars,
        groups: params.config.gn_groups,
    };
    let jl = &ops.joint_laplacians;
    let ml = std::slice::from_ref(&ops.mesh_laplacian);

    let hj = cx.block(xj, jl, &layout.j1)?;
    let hj = cx.block(hj, jl, &layout.j2)?;

    let hd = cx.block(hj, jl, &layout.d)?;
    let per_joint = cx.linear(hd, layout.d_out)?;
    let depth = cx.tape.spmm(&ops.root_selector, per_joint)?;
    cx.check(depth, "d_out")?;

    let hp = cx.block(hj, jl, &layout.p)?;
    let joints = cx.linear(hp, layout.p_out)?;
    cx.check(joints, "p_out")?;

    let hc = cx.tape.spmm(&ops.joint_to_mesh, hj)?;
    let hc = cx.block(hc, ml, &layout.c)?;

    let hm = cx.block(xm, ml, &layout.m1)?;
    let mut hm = cx.tape.add(hm, hc)?;
    for b in [&layout.m2, &layout.m3, &layout.m4] {
        hm = cx.block(hm, ml, b)?;
    }
    let mesh = cx.linear(hm, layout.m_out)?;
    cx.check(mesh, "m_out")?;
    Ok(ForwardVars { depth, joints, mesh })
}

/// Evaluates the network without recording gradients.
pub fn forward(ops: &GraphOperators, feats: &FeatureMatrix, params: &NetworkParams) -> Result<NetworkOutput> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.tensors.iter().map(|t| tape.constant(t.clone())).collect();
    let out = forward_on_tape(&mut tape, ops, feats, params, &vars)?;
    Ok(NetworkOutput::from_stacked(
        ops,
        tape.value(out.depth),
        tape.value(out.joints),
        tape.value(out.mesh),
    ))
}
