//! Training losses.
//!
//! L1 terms are element means. Face terms sum over the three vertex pairs
//! of every face and divide by the face count. Coordinates are meters.

use std::sync::Arc;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::network::ForwardVars;
use crate::numerics::{CsrMatrix, DenseMatrix, Tape, Var};

const NORM_DELTA: f64 = 1e-12;

/// Coefficients of the weighted sum. The mesh term has weight 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub joint: f64,
    pub joint_mesh: f64,
    pub normal: f64,
    pub edge: f64,
    pub depth: f64,
    pub rel_depth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            joint: 1e-3,
            joint_mesh: 1e-3,
            normal: 0.1,
            edge: 20.0,
            depth: 1.0,
            rel_depth: 20.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.joint,
            self.joint_mesh,
            self.normal,
            self.edge,
            self.depth,
            self.rel_depth,
        ];
        if all.iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(crate::MugError::Config(format!("loss weights must be nonnegative: {all:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub mesh: f64,
    pub joint: f64,
    pub joint_mesh: f64,
    pub normal: f64,
    pub edge: f64,
    pub depth: f64,
    pub rel_depth: f64,
}

impl LossParts {
    pub fn total(&self, w: &LossWeights) -> f64 {
        total_loss(self, w)
    }

    pub const CSV_HEADER: &'static str = "step,L_M,L_J,L_JM,L_N,L_E,L_D,L_rD,total";

    pub fn csv_row(&self, step: u64, w: &LossWeights) -> String {
        format!(
            "{step},{},{},{},{},{},{},{},{}",
            self.mesh,
            self.joint,
            self.joint_mesh,
            self.normal,
            self.edge,
            self.depth,
            self.rel_depth,
            self.total(w)
        )
    }

    pub fn is_finite(&self) -> bool {
        [
            self.mesh,
            self.joint,
            self.joint_mesh,
            self.normal,
            self.edge,
            self.depth,
            self.rel_depth,
        ]
        .iter()
        .all(|x| x.is_finite())
    }
}

pub fn total_loss(p: &LossParts, w: &LossWeights) -> f64 {
    p.mesh
        + w.joint * p.joint
        + w.joint_mesh * p.joint_mesh
        + w.normal * p.normal
        + w.edge * p.edge
        + w.depth * p.depth
        + w.rel_depth * p.rel_depth
}

/// Stacked ground truth for a scene. Missing fields contribute zero.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// `(K V) x 3` root-relative mesh, meters.
    pub mesh: Option<DenseMatrix>,
    /// `(K J) x 3` root-relative joints, meters.
    pub joints: Option<DenseMatrix>,
    /// Depth measure per human.
    pub depth: Option<Vec<f64>>,
}

fn mean_abs_diff(a: &DenseMatrix, b: &DenseMatrix, op: &'static str) -> Result<f64> {
    if a.shape() != b.shape() {
        return shape_err(op, format!("prediction {:?}, target {:?}", a.shape(), b.shape()));
    }
    let n = a.data().len();
    if n == 0 {
        return Ok(0.0);
    }
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / n as f64)
}

pub fn loss_mesh(pred: &DenseMatrix, gt: &DenseMatrix) -> Result<f64> {
    mean_abs_diff(pred, gt, "loss_mesh")
}

pub fn loss_joint(pred: &DenseMatrix, gt: &DenseMatrix) -> Result<f64> {
    mean_abs_diff(pred, gt, "loss_joint")
}

/// Compares joints regressed from each human's mesh with the target joints.
/// `mesh` is `(K V) x 3`, `gt_joints` is `(K J) x 3`, `regressor` is `J x V`.
pub fn loss_jm(mesh: &DenseMatrix, gt_joints: &DenseMatrix, regressor: &DenseMatrix) -> Result<f64> {
    let (j, v) = regressor.shape();
    if v == 0 || mesh.rows() % v != 0 || gt_joints.rows() != mesh.rows() / v * j {
        return shape_err(
            "loss_jm",
            format!(
                "mesh {:?}, joints {:?}, regressor {:?}",
                mesh.shape(),
                gt_joints.shape(),
                regressor.shape()
            ),
        );
    }
    let k = mesh.rows() / v;
    let mut parts = Vec::with_capacity(k);
    for h in 0..k {
        parts.push(regressor.matmul(&mesh.slice_rows(h * v, (h + 1) * v))?);
    }
    let refs: Vec<&DenseMatrix> = parts.iter().collect();
    mean_abs_diff(&DenseMatrix::vstack(&refs)?, gt_joints, "loss_jm")
}

pub fn loss_depth(pred: &[f64], gt: &[f64]) -> Result<f64> {
    if pred.len() != gt.len() {
        return shape_err("loss_depth", format!("{} predictions, {} targets", pred.len(), gt.len()));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    Ok(pred.iter().zip(gt).map(|(p, g)| (p - g).abs()).sum::<f64>() / pred.len() as f64)
}

/// Mean over human pairs of the error in depth differences.
pub fn loss_rel_depth(pred: &[f64], gt: &[f64]) -> Result<f64> {
    if pred.len() != gt.len() {
        return shape_err("loss_rel_depth", format!("{} predictions, {} targets", pred.len(), gt.len()));
    }
    let k = pred.len();
    if k < 2 {
        return Ok(0.0);
    }
    let mut s = 0.0;
    for m in 0..k {
        for n in m + 1..k {
            s += ((pred[m] - pred[n]) - (gt[m] - gt[n])).abs();
        }
    }
    Ok(s / (k * (k - 1) / 2) as f64)
}

fn vec3(m: &DenseMatrix, i: usize) -> [f64; 3] {
    let r = m.row(i);
    [r[0], r[1], r[2]]
}

fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm3(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

fn face_pairs(f: &[usize; 3]) -> [(usize, usize); 3] {
    [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])]
}

/// Unit normal of each target face, `None` when the face is degenerate.
pub fn face_normals(gt: &DenseMatrix, faces: &[[usize; 3]]) -> Vec<Option<[f64; 3]>> {
    faces
        .iter()
        .map(|f| {
            let a = vec3(gt, f[0]);
            let u = sub3(vec3(gt, f[1]), a);
            let v = sub3(vec3(gt, f[2]), a);
            let n = [
                u[1] * v[2] - u[2] * v[1],
                u[2] * v[0] - u[0] * v[2],
                u[0] * v[1] - u[1] * v[0],
            ];
            let l = norm3(n);
            (l > NORM_DELTA).then(|| [n[0] / l, n[1] / l, n[2] / l])
        })
        .collect()
}

fn check_faces(pred: &DenseMatrix, gt: &DenseMatrix, faces: &[[usize; 3]], op: &'static str) -> Result<()> {
    if pred.shape() != gt.shape() || pred.cols() != 3 {
        return shape_err(op, format!("prediction {:?}, target {:?}", pred.shape(), gt.shape()));
    }
    if faces.iter().flatten().any(|&i| i >= pred.rows()) {
        return shape_err(op, format!("face index out of range for {} vertices", pred.rows()));
    }
    Ok(())
}

/// Predicted edges should lie in the target face plane.
pub fn loss_normal(pred: &DenseMatrix, gt: &DenseMatrix, faces: &[[usize; 3]]) -> Result<f64> {
    check_faces(pred, gt, faces, "loss_normal")?;
    let normals = face_normals(gt, faces);
    let mut s = 0.0;
    let mut used = 0usize;
    for (f, n) in faces.iter().zip(&normals) {
        let Some(n) = n else { continue };
        used += 1;
        for (a, b) in face_pairs(f) {
            let e = sub3(vec3(pred, a), vec3(pred, b));
            s += (e[0] * n[0] + e[1] * n[1] + e[2] * n[2]).abs() / (norm3(e) + NORM_DELTA);
        }
    }
    if used < faces.len() {
        warn!("skipped {} degenerate target faces", faces.len() - used);
    }
    Ok(if used == 0 { 0.0 } else { s / used as f64 })
}

/// Predicted edge lengths should match the target's.
pub fn loss_edge(pred: &DenseMatrix, gt: &DenseMatrix, faces: &[[usize; 3]]) -> Result<f64> {
    check_faces(pred, gt, faces, "loss_edge")?;
    if faces.is_empty() {
        return Ok(0.0);
    }
    let mut s = 0.0;
    for f in faces {
        for (a, b) in face_pairs(f) {
            let e = norm3(sub3(vec3(pred, a), vec3(pred, b)));
            let e_gt = norm3(sub3(vec3(gt, a), vec3(gt, b)));
            s += (e - e_gt).abs();
        }
    }
    Ok(s / faces.len() as f64)
}

/// Stacks per-human faces with vertex offsets.
pub fn stacked_faces(faces: &[[usize; 3]], vertices_per_human: usize, humans: usize) -> Vec<[usize; 3]> {
    (0..humans)
        .flat_map(|h| {
            let o = h * vertices_per_human;
            faces.iter().map(move |f| [f[0] + o, f[1] + o, f[2] + o])
        })
        .collect()
}

/// All parts from stacked predictions.
pub fn compute_parts(
    depth: &[f64],
    joints: &DenseMatrix,
    mesh: &DenseMatrix,
    gt: &GroundTruth,
    faces: &[[usize; 3]],
    regressor: &DenseMatrix,
) -> Result<LossParts> {
    let mut p = LossParts::default();
    let humans = if regressor.cols() == 0 { 0 } else { mesh.rows() / regressor.cols() };
    if let Some(m) = &gt.mesh {
        let all = stacked_faces(faces, regressor.cols(), humans);
        p.mesh = loss_mesh(mesh, m)?;
        p.normal = loss_normal(mesh, m, &all)?;
        p.edge = loss_edge(mesh, m, &all)?;
    }
    if let Some(j) = &gt.joints {
        p.joint = loss_joint(joints, j)?;
        p.joint_mesh = loss_jm(mesh, j, regressor)?;
    }
    if let Some(d) = &gt.depth {
        p.depth = loss_depth(depth, d)?;
        p.rel_depth = loss_rel_depth(depth, d)?;
    }
    Ok(p)
}

/// Constants for recording the losses of one scene on a tape.
#[derive(Clone, Debug)]
pub struct LossOperators {
    humans: usize,
    /// `(K J) x (K V)` block-diagonal regressor.
    regressor: Arc<CsrMatrix>,
    /// `3F x (K V)` vertex differences over all face edges.
    edge_diff: Arc<CsrMatrix>,
    /// Same, over non-degenerate target faces only.
    normal_diff: Arc<CsrMatrix>,
    normal_rows: DenseMatrix,
    normal_faces: usize,
    edge_faces: usize,
    /// `P x K` pairwise differences `e_m − e_n`, `m < n`.
    pair_diff: Arc<CsrMatrix>,
}

fn diff_operator(faces: &[[usize; 3]], cols: usize) -> Result<CsrMatrix> {
    let trip = faces.iter().enumerate().flat_map(|(i, f)| {
        face_pairs(f)
            .into_iter()
            .enumerate()
            .flat_map(move |(e, (a, b))| [(3 * i + e, a, 1.0), (3 * i + e, b, -1.0)])
    });
    CsrMatrix::from_triplets(3 * faces.len(), cols, trip)
}

impl LossOperators {
    pub fn new(regressor: &DenseMatrix, faces: &[[usize; 3]], humans: usize, gt: &GroundTruth) -> Result<Self> {
        let (j, v) = regressor.shape();
        let all = stacked_faces(faces, v, humans);
        let reg = (0..humans).flat_map(|h| {
            (0..j).flat_map(move |r| {
                regressor
                    .row(r)
                    .iter()
                    .enumerate()
                    .filter(|(_, w)| **w != 0.0)
                    .map(move |(c, &w)| (h * j + r, h * v + c, w))
            })
        });
        let regressor = Arc::new(CsrMatrix::from_triplets(humans * j, humans * v, reg)?);
        let edge_diff = Arc::new(diff_operator(&all, humans * v)?);
        let (normal_faces, normal_rows): (Vec<[usize; 3]>, Vec<[f64; 3]>) = match &gt.mesh {
            Some(m) => {
                check_faces(m, m, &all, "loss_normal")?;
                let normals = face_normals(m, &all);
                let skipped = normals.iter().filter(|n| n.is_none()).count();
                if skipped > 0 {
                    warn!("skipped {skipped} degenerate target faces");
                }
                all.iter().zip(normals).filter_map(|(f, n)| n.map(|n| (*f, n))).unzip()
            }
            None => (Vec::new(), Vec::new()),
        };
        let normal_diff = Arc::new(diff_operator(&normal_faces, humans * v)?);
        let rows: Vec<[f64; 3]> = normal_rows.iter().flat_map(|n| [*n, *n, *n]).collect();
        let normal_rows = if rows.is_empty() {
            DenseMatrix::zeros(0, 3)
        } else {
            DenseMatrix::from_rows(&rows)?
        };
        let pairs = (0..humans)
            .flat_map(|m| (m + 1..humans).map(move |n| (m, n)))
            .enumerate()
            .flat_map(|(p, (m, n))| [(p, m, 1.0), (p, n, -1.0)]);
        let npairs = humans * humans.saturating_sub(1) / 2;
        let pair_diff = Arc::new(CsrMatrix::from_triplets(npairs, humans, pairs)?);
        Ok(Self {
            humans,
            regressor,
            edge_diff,
            normal_diff,
            normal_rows,
            normal_faces: normal_faces.len(),
            edge_faces: all.len(),
            pair_diff,
        })
    }
}

/// Loss parts as tape variables; `None` when the target is missing.
#[derive(Clone, Copy, Debug, Default)]
pub struct TapeParts {
    pub mesh: Option<Var>,
    pub joint: Option<Var>,
    pub joint_mesh: Option<Var>,
    pub normal: Option<Var>,
    pub edge: Option<Var>,
    pub depth: Option<Var>,
    pub rel_depth: Option<Var>,
}

impl TapeParts {
    pub fn values(&self, tape: &Tape) -> LossParts {
        let v = |x: Option<Var>| x.map_or(0.0, |x| tape.value(x).item());
        LossParts {
            mesh: v(self.mesh),
            joint: v(self.joint),
            joint_mesh: v(self.joint_mesh),
            normal: v(self.normal),
            edge: v(self.edge),
            depth: v(self.depth),
            rel_depth: v(self.rel_depth),
        }
    }
}

fn l1_mean(tape: &mut Tape, pred: Var, target: &DenseMatrix) -> Result<Var> {
    let t = tape.constant(target.clone());
    let d = tape.sub(pred, t)?;
    let a = tape.abs(d);
    Ok(tape.mean(a))
}

/// Records every available loss and the weighted total. Returns `None` for
/// the total when no target is available.
pub fn record_losses(
    tape: &mut Tape,
    out: ForwardVars,
    gt: &GroundTruth,
    ops: &LossOperators,
    w: &LossWeights,
) -> Result<(Option<Var>, TapeParts)> {
    let mut parts = TapeParts::default();
    if let Some(m) = &gt.mesh {
        parts.mesh = Some(l1_mean(tape, out.mesh, m)?);

        let gt_v = tape.constant(m.clone());
        let e_gt = tape.spmm(&ops.edge_diff, gt_v)?;
        let len_gt = tape.row_norm(e_gt);
        let e = tape.spmm(&ops.edge_diff, out.mesh)?;
        let len = tape.row_norm(e);
        let d = tape.sub(len, len_gt)?;
        let a = tape.abs(d);
        let s = tape.sum(a);
        parts.edge = Some(tape.scale(s, 1.0 / ops.edge_faces.max(1) as f64));

        if ops.normal_faces > 0 {
            let e = tape.spmm(&ops.normal_diff, out.mesh)?;
            let n = tape.constant(ops.normal_rows.clone());
            let dot = tape.mul(e, n)?;
            let dot = tape.row_sum(dot);
            let dot = tape.abs(dot);
            let len = tape.row_norm(e);
            let delta = tape.constant(DenseMatrix::filled(3 * ops.normal_faces, 1, NORM_DELTA));
            let den = tape.add(len, delta)?;
            let r = tape.div(dot, den)?;
            let s = tape.sum(r);
            parts.normal = Some(tape.scale(s, 1.0 / ops.normal_faces as f64));
        }
    }
    if let Some(j) = &gt.joints {
        parts.joint = Some(l1_mean(tape, out.joints, j)?);
        let reg = tape.spmm(&ops.regressor, out.mesh)?;
        parts.joint_mesh = Some(l1_mean(tape, reg, j)?);
    }
    if let Some(d) = &gt.depth {
        let target = DenseMatrix::from_vec(d.len(), 1, d.clone())?;
        parts.depth = Some(l1_mean(tape, out.depth, &target)?);
        if ops.humans >= 2 {
            let pd = tape.spmm(&ops.pair_diff, out.depth)?;
            let gd = ops.pair_diff.mul_dense(&target)?;
            parts.rel_depth = Some(l1_mean(tape, pd, &gd)?);
        }
    }
    let weighted = [
        (parts.mesh, 1.0),
        (parts.joint, w.joint),
        (parts.joint_mesh, w.joint_mesh),
        (parts.normal, w.normal),
        (parts.edge, w.edge),
        (parts.depth, w.depth),
        (parts.rel_depth, w.rel_depth),
    ];
    let mut total: Option<Var> = None;
    for (v, c) in weighted {
        let Some(v) = v else { continue };
        let term = tape.scale(v, c);
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    Ok((total, parts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[[f64; 3]]) -> DenseMatrix {
        DenseMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn l1_examples() {
        let a = m(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        assert_eq!(loss_mesh(&a, &a).unwrap(), 0.0);
        assert!((loss_mesh(&a.map(|x| x + 1.0), &a).unwrap() - 1.0).abs() < 1e-15);
        assert!(loss_joint(&a, &DenseMatrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn depth_examples() {
        assert!((loss_depth(&[0.1, 0.3], &[0.1, 0.2]).unwrap() - 0.05).abs() < 1e-12);
        assert!((loss_rel_depth(&[0.1, 0.3], &[0.1, 0.2]).unwrap() - 0.1).abs() < 1e-12);
        let gt = [0.2, 0.5, 0.9];
        let pred: Vec<f64> = gt.iter().map(|x| x + 0.07).collect();
        assert!(loss_rel_depth(&pred, &gt).unwrap().abs() < 1e-12);
        assert!((loss_depth(&pred, &gt).unwrap() - 0.07).abs() < 1e-12);
        assert_eq!(loss_rel_depth(&[0.4], &[0.1]).unwrap(), 0.0);
    }

    #[test]
    fn weighted_total() {
        let ones = LossParts {
            mesh: 1.0,
            joint: 1.0,
            joint_mesh: 1.0,
            normal: 1.0,
            edge: 1.0,
            depth: 1.0,
            rel_depth: 1.0,
        };
        assert!((total_loss(&ones, &LossWeights::default()) - 42.102).abs() < 1e-12);
        assert_eq!(total_loss(&LossParts::default(), &LossWeights::default()), 0.0);
    }

    #[test]
    fn face_losses_at_identity_and_scale() {
        let gt = m(&[[0.0, 0.0, 0.0], [3.0, 0.0, 0.0], [0.0, 4.0, 0.0], [0.0, 0.0, 1.0]]);
        let faces = [[0, 1, 2], [0, 1, 3]];
        assert!(loss_normal(&gt, &gt, &faces).unwrap() < 1e-12);
        assert_eq!(loss_edge(&gt, &gt, &faces).unwrap(), 0.0);
        let twice = gt.scale(2.0);
        assert!(loss_normal(&twice, &gt, &faces).unwrap() < 1e-12);
        let perimeters = (3.0 + 4.0 + 5.0) + (3.0 + 10f64.sqrt() + 1.0);
        assert!((loss_edge(&twice, &gt, &faces).unwrap() - perimeters / 2.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_target_face_is_skipped() {
        let gt = m(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        let pred = m(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.5], [0.0, 1.0, 0.0]]);
        let faces = [[0, 1, 2], [0, 1, 3]];
        assert!(loss_normal(&pred, &gt, &faces).unwrap() < 1e-12);
    }
}
