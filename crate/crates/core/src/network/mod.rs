//! Dual-branch heterogeneous graph network.
//!
//! Joint branch: `j1` (cascade) and `j2` (residual) over joint nodes, then
//! three consumers: the depth head `d`, the 3D-joint head `p`, and the
//! connection block `c` which carries joint features onto mesh nodes along
//! the joint-to-mesh edges. Mesh branch: `m1` (cascade), plus the
//! connection output, then `m2`..`m4` (residual) and a linear map to xyz.
//!
//! Every convolution sums one Chebyshev filter per edge type. Parameter
//! names follow `{block}.conv{i}.{edge}.t{k}` for filter taps,
//! `{block}.conv{i}.gn.{gain,bias}` for group norm and `{head}.{weight,bias}`
//! for the output layers (`d_out`, `p_out`, `m_out`).

mod checkpoint;
mod forward;
mod operators;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MugError, Result};
use crate::numerics::DenseMatrix;

pub use checkpoint::{Checkpoint, ConfigEcho, CHECKPOINT_VERSION};
pub use forward::{forward, forward_on_tape, ForwardVars, HumanOutput, NetworkOutput, ParamVars};
pub use operators::GraphOperators;

/// How inter-human edges map onto weight sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeTypeMode {
    /// One weight set for all inter-human edges.
    Shared,
    /// Separate weight sets for root-to-root and proximity edges.
    SplitInter,
}

impl EdgeTypeMode {
    /// Edge-type names of joint-branch convolutions, in operator order.
    pub fn joint_edge_types(self) -> &'static [&'static str] {
        match self {
            EdgeTypeMode::Shared => &["jj", "inter"],
            EdgeTypeMode::SplitInter => &["jj", "root", "prox"],
        }
    }
}

pub const MESH_EDGE_TYPES: &[&str] = &["mm"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub hidden: usize,
    /// Number of Chebyshev taps per filter.
    pub cheb_order: usize,
    pub gn_groups: usize,
    pub edge_type_mode: EdgeTypeMode,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input_dim: 71,
            hidden: 64,
            cheb_order: 2,
            gn_groups: 4,
            edge_type_mode: EdgeTypeMode::Shared,
        }
    }
}

impl NetworkConfig {
    /// Width giving roughly 2.3M parameters at two taps.
    pub const PAPER_SCALE_HIDDEN: usize = 208;

    pub fn paper_scale() -> Self {
        Self {
            hidden: Self::PAPER_SCALE_HIDDEN,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.hidden == 0 {
            problems.push("hidden width must be positive".to_string());
        }
        if self.cheb_order == 0 {
            problems.push("chebyshev order must be at least 1".to_string());
        }
        if self.input_dim == 0 {
            problems.push("input dimension must be positive".to_string());
        }
        if self.gn_groups == 0 || self.hidden % self.gn_groups != 0 {
            problems.push(format!(
                "hidden width {} is not divisible into {} groups",
                self.hidden, self.gn_groups
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(MugError::Config(problems.join("; ")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    /// Three conv-GN-ReLU layers.
    Cascade,
    /// conv-GN-ReLU-conv-GN, skip add, ReLU.
    Residual,
}

#[derive(Clone, Debug)]
pub struct ConvLayout {
    /// `taps[edge_type][k]` indexes into the parameter list.
    pub taps: Vec<Vec<usize>>,
    pub gn_gain: usize,
    pub gn_bias: usize,
}

#[derive(Clone, Debug)]
pub struct BlockLayout {
    pub name: &'static str,
    pub kind: BlockKind,
    pub convs: Vec<ConvLayout>,
}

#[derive(Clone, Copy, Debug)]
pub struct LinearLayout {
    pub weight: usize,
    pub bias: usize,
}

#[derive(Clone, Debug)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub init: Init,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Uniform { bound: f64 },
    Const(f64),
}

/// Index map from blocks to the flat parameter list.
#[derive(Clone, Debug)]
pub struct Layout {
    pub j1: BlockLayout,
    pub j2: BlockLayout,
    pub d: BlockLayout,
    pub p: BlockLayout,
    pub c: BlockLayout,
    pub m1: BlockLayout,
    pub m2: BlockLayout,
    pub m3: BlockLayout,
    pub m4: BlockLayout,
    pub d_out: LinearLayout,
    pub p_out: LinearLayout,
    pub m_out: LinearLayout,
    pub specs: Vec<ParamSpec>,
}

struct LayoutBuilder<'a> {
    cfg: &'a NetworkConfig,
    specs: Vec<ParamSpec>,
}

impl LayoutBuilder<'_> {
    fn push(&mut self, name: String, rows: usize, cols: usize, init: Init) -> usize {
        self.specs.push(ParamSpec {
            name,
            rows,
            cols,
            init,
        });
        self.specs.len() - 1
    }

    fn conv(&mut self, block: &str, i: usize, in_dim: usize, edges: &[&str]) -> ConvLayout {
        let h = self.cfg.hidden;
        let q = self.cfg.cheb_order;
        let fan_in = (in_dim * q * edges.len()) as f64;
        let bound = (6.0 / fan_in).sqrt();
        let taps = edges
            .iter()
            .map(|e| {
                (0..q)
                    .map(|k| self.push(format!("{block}.conv{i}.{e}.t{k}"), in_dim, h, Init::Uniform { bound }))
                    .collect()
            })
            .collect();
        let gn_gain = self.push(format!("{block}.conv{i}.gn.gain"), 1, h, Init::Const(1.0));
        let gn_bias = self.push(format!("{block}.conv{i}.gn.bias"), 1, h, Init::Const(0.0));
        ConvLayout {
            taps,
            gn_gain,
            gn_bias,
        }
    }

    fn block(&mut self, name: &'static str, kind: BlockKind, in_dim: usize, edges: &[&str]) -> BlockLayout {
        let n = match kind {
            BlockKind::Cascade => 3,
            BlockKind::Residual => 2,
        };
        let h = self.cfg.hidden;
        let convs = (0..n)
            .map(|i| self.conv(name, i, if i == 0 { in_dim } else { h }, edges))
            .collect();
        BlockLayout { name, kind, convs }
    }

    fn linear(&mut self, name: &str, out: usize) -> LinearLayout {
        let h = self.cfg.hidden;
        let bound = 1.0 / (h as f64).sqrt();
        LinearLayout {
            weight: self.push(format!("{name}.weight"), h, out, Init::Uniform { bound }),
            bias: self.push(format!("{name}.bias"), 1, out, Init::Const(0.0)),
        }
    }
}

impl Layout {
    pub fn new(cfg: &NetworkConfig) -> Self {
        let je = cfg.edge_type_mode.joint_edge_types();
        let me = MESH_EDGE_TYPES;
        let h = cfg.hidden;
        let mut b = LayoutBuilder {
            cfg,
            specs: Vec::new(),
        };
        let j1 = b.block("j1", BlockKind::Cascade, cfg.input_dim, je);
        let j2 = b.block("j2", BlockKind::Residual, h, je);
        let d = b.block("d", BlockKind::Residual, h, je);
        let d_out = b.linear("d_out", 1);
        let p = b.block("p", BlockKind::Residual, h, je);
        let p_out = b.linear("p_out", 3);
        let c = b.block("c", BlockKind::Residual, h, me);
        let m1 = b.block("m1", BlockKind::Cascade, cfg.input_dim, me);
        let m2 = b.block("m2", BlockKind::Residual, h, me);
        let m3 = b.block("m3", BlockKind::Residual, h, me);
        let m4 = b.block("m4", BlockKind::Residual, h, me);
        let m_out = b.linear("m_out", 3);
        Self {
            j1,
            j2,
            d,
            p,
            c,
            m1,
            m2,
            m3,
            m4,
            d_out,
            p_out,
            m_out,
            specs: b.specs,
        }
    }
}

/// Trainable parameters as a flat list ordered by [`Layout::specs`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub config: NetworkConfig,
    pub tensors: Vec<DenseMatrix>,
}

impl NetworkParams {
    pub fn init(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = layout
            .specs
            .iter()
            .map(|s| match s.init {
                Init::Const(c) => DenseMatrix::filled(s.rows, s.cols, c),
                Init::Uniform { bound } => {
                    let data = (0..s.rows * s.cols)
                        .map(|_| rng.random_range(-bound..bound))
                        .collect();
                    DenseMatrix::from_vec(s.rows, s.cols, data).expect("spec shape")
                }
            })
            .collect();
        Ok(Self { config, tensors })
    }

    /// Same layout with every entry zero.
    pub fn zeros(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let tensors = Layout::new(&config)
            .specs
            .iter()
            .map(|s| DenseMatrix::zeros(s.rows, s.cols))
            .collect();
        Ok(Self { config, tensors })
    }

    pub fn layout(&self) -> Layout {
        Layout::new(&self.config)
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(|t| t.rows() * t.cols()).sum()
    }

    pub fn names(&self) -> Vec<String> {
        self.layout().specs.into_iter().map(|s| s.name).collect()
    }

    pub fn get(&self, name: &str) -> Option<&DenseMatrix> {
        let idx = self.layout().specs.iter().position(|s| s.name == name)?;
        self.tensors.get(idx)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut DenseMatrix> {
        let idx = self.layout().specs.iter().position(|s| s.name == name)?;
        self.tensors.get_mut(idx)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(DenseMatrix::is_finite)
    }

    /// Checks tensor shapes against the layout implied by `config`.
    pub fn check_layout(&self) -> Result<()> {
        let specs = self.layout().specs;
        if specs.len() != self.tensors.len() {
            return Err(MugError::Config(format!(
                "expected {} parameter tensors, found {}",
                specs.len(),
                self.tensors.len()
            )));
        }
        for (s, t) in specs.iter().zip(&self.tensors) {
            if t.shape() != (s.rows, s.cols) {
                return Err(MugError::Config(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    s.name,
                    t.shape(),
                    (s.rows, s.cols)
                )));
            }
        }
        Ok(())
    }
}

/// `init_params` with the usual argument order.
pub fn init_params(seed: u64, hidden: usize, cheb_order: usize, mode: EdgeTypeMode) -> Result<NetworkParams> {
    NetworkParams::init(
        NetworkConfig {
            hidden,
            cheb_order,
            edge_type_mode: mode,
            ..NetworkConfig::default()
        },
        seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded() {
        let a = init_params(7, 16, 2, EdgeTypeMode::Shared).unwrap();
        let b = init_params(7, 16, 2, EdgeTypeMode::Shared).unwrap();
        let c = init_params(8, 16, 2, EdgeTypeMode::Shared).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.get("j1.conv0.gn.gain").unwrap().data(), &[1.0; 16]);
        assert_eq!(a.get("m_out.bias").unwrap().data(), &[0.0; 3]);
    }

    #[test]
    fn parameter_count_formula() {
        for (h, q) in [(8, 1), (16, 2), (64, 3)] {
            let p = init_params(0, h, q, EdgeTypeMode::Shared).unwrap();
            let want = 26 * q * h * h + 213 * q * h + 40 * h + (h + 1) + 2 * (3 * h + 3);
            assert_eq!(p.parameter_count(), want);
        }
    }

    #[test]
    fn paper_scale_is_near_two_point_three_million() {
        let p = NetworkParams::init(NetworkConfig::paper_scale(), 0).unwrap();
        let n = p.parameter_count() as f64;
        assert!((n - 2.3e6).abs() / 2.3e6 < 0.1, "{n}");
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(init_params(0, 10, 2, EdgeTypeMode::Shared).is_err());
        assert!(init_params(0, 16, 0, EdgeTypeMode::Shared).is_err());
    }
}
