//! MPJPE, PA-MPJPE, MPVPE, 3DPCK and ordinal depth accuracy. Distances are
//! millimeters.

use log::warn;
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::numerics::DenseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    /// 3DPCK threshold, mm.
    pub pck_threshold: f64,
    /// Matching gate on root distance, canonical pixels.
    pub match_gate: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            pck_threshold: 150.0,
            match_gate: 250.0,
        }
    }
}

fn check(p: &DenseMatrix, gt: &DenseMatrix, op: &'static str) -> Result<()> {
    if p.shape() != gt.shape() || p.cols() != 3 || p.rows() == 0 {
        return shape_err(op, format!("prediction {:?}, target {:?}", p.shape(), gt.shape()));
    }
    Ok(())
}

fn point_errors<'a>(p: &'a DenseMatrix, gt: &'a DenseMatrix) -> impl Iterator<Item = f64> + 'a {
    (0..p.rows()).map(move |i| {
        p.row(i)
            .iter()
            .zip(gt.row(i))
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    })
}

/// Mean Euclidean distance between corresponding rows.
pub fn mpjpe(p: &DenseMatrix, gt: &DenseMatrix) -> Result<f64> {
    check(p, gt, "mpjpe")?;
    Ok(point_errors(p, gt).sum::<f64>() / p.rows() as f64)
}

pub fn mpvpe(m: &DenseMatrix, gt: &DenseMatrix) -> Result<f64> {
    check(m, gt, "mpvpe")?;
    Ok(point_errors(m, gt).sum::<f64>() / m.rows() as f64)
}

/// Subtracts `root` from every row.
pub fn root_align(m: &DenseMatrix, root: &[f64]) -> DenseMatrix {
    let mut out = m.clone();
    for i in 0..out.rows() {
        for (x, r) in out.row_mut(i).iter_mut().zip(root) {
            *x -= r;
        }
    }
    out
}

fn to_points(m: &DenseMatrix) -> Vec<Vector3<f64>> {
    (0..m.rows()).map(|i| Vector3::new(m[(i, 0)], m[(i, 1)], m[(i, 2)])).collect()
}

/// Best similarity transform of `p` onto `gt` (no reflection), applied to
/// `p`. Degenerate inputs fall back to aligning centroids only.
pub fn procrustes_align(p: &DenseMatrix, gt: &DenseMatrix) -> Result<DenseMatrix> {
    check(p, gt, "procrustes")?;
    let xs = to_points(p);
    let ys = to_points(gt);
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<Vector3<f64>>() / n;
    let my = ys.iter().sum::<Vector3<f64>>() / n;
    let var_x = xs.iter().map(|x| (x - mx).norm_squared()).sum::<f64>() / n;
    let mut cov = Matrix3::zeros();
    for (x, y) in xs.iter().zip(&ys) {
        cov += (y - my) * (x - mx).transpose();
    }
    cov /= n;
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let sv = svd.singular_values;
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let degenerate = var_x < 1e-12 || sv[order[1]] <= 1e-9 * sv[order[0]].max(f64::MIN_POSITIVE);
    let mut out = DenseMatrix::zeros(p.rows(), 3);
    if degenerate {
        warn!("degenerate point set; using translation-only alignment");
        for (i, x) in xs.iter().enumerate() {
            let q = x - mx + my;
            out.row_mut(i).copy_from_slice(q.as_slice());
        }
        return Ok(out);
    }
    let d = if (u * vt).determinant() < 0.0 { -1.0 } else { 1.0 };
    // Flip the axis of the smallest singular value when needed.
    let mut s = Matrix3::identity();
    let smallest = order[2];
    s[(smallest, smallest)] = d;
    let r = u * s * vt;
    let trace: f64 = (0..3).map(|i| sv[i] * s[(i, i)]).sum();
    let c = trace / var_x;
    for (i, x) in xs.iter().enumerate() {
        let q = c * (r * (x - mx)) + my;
        out.row_mut(i).copy_from_slice(q.as_slice());
    }
    Ok(out)
}

pub fn pa_mpjpe(p: &DenseMatrix, gt: &DenseMatrix) -> Result<f64> {
    mpjpe(&procrustes_align(p, gt)?, gt)
}

/// Fraction of rows whose error is below `threshold`.
pub fn pck3d(p: &DenseMatrix, gt: &DenseMatrix, threshold: f64) -> Result<f64> {
    check(p, gt, "pck3d")?;
    Ok(point_errors(p, gt).filter(|&e| e < threshold).count() as f64 / p.rows() as f64)
}

/// Greedy nearest-first matching of predictions to targets by 2D root
/// distance. Returns, per target, the matched prediction index.
pub fn match_humans(pred_roots: &[[f64; 2]], gt_roots: &[[f64; 2]], gate: f64) -> Vec<Option<usize>> {
    let mut pairs = Vec::new();
    for (g, gr) in gt_roots.iter().enumerate() {
        for (p, pr) in pred_roots.iter().enumerate() {
            let d = ((gr[0] - pr[0]).powi(2) + (gr[1] - pr[1]).powi(2)).sqrt();
            if d < gate {
                pairs.push((d, g, p));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out = vec![None; gt_roots.len()];
    let mut used = vec![false; pred_roots.len()];
    for (_, g, p) in pairs {
        if out[g].is_none() && !used[p] {
            out[g] = Some(p);
            used[p] = true;
        }
    }
    out
}

/// Correct and total pair counts of depth ordering.
pub fn ordinal_pairs(pred: &[f64], gt: &[f64]) -> (usize, usize) {
    let k = pred.len().min(gt.len());
    let mut correct = 0;
    let mut total = 0;
    for m in 0..k {
        for n in m + 1..k {
            total += 1;
            let dg = gt[m] - gt[n];
            let dp = pred[m] - pred[n];
            let ok = if dg.abs() < 1e-6 {
                dp.abs() < 1e-3
            } else {
                dp.signum() == dg.signum() && dp != 0.0
            };
            correct += ok as usize;
        }
    }
    (correct, total)
}

/// Fraction of human pairs ordered correctly in depth; `None` for K < 2.
pub fn ordinal_depth_accuracy(pred: &[f64], gt: &[f64]) -> Option<f64> {
    let (c, t) = ordinal_pairs(pred, gt);
    (t > 0).then(|| c as f64 / t as f64)
}

/// One human as seen by the evaluator. Coordinates are mm in any common
/// frame; joints must be regressed from the mesh.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalHuman {
    /// Root position in canonical pixels.
    pub root_2d: [f64; 2],
    pub joints: DenseMatrix,
    pub mesh: DenseMatrix,
    pub depth_measure: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneEval {
    pub seed: u64,
    pub gt_humans: usize,
    pub matched: usize,
    /// Means over matched humans, mm.
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
    pub mpvpe: f64,
    /// Unmatched targets count as zero.
    pub pck_all: f64,
    pub pck_matched: f64,
    pub depth_pairs_correct: usize,
    pub depth_pairs: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub scenes: usize,
    pub gt_humans: usize,
    pub matched: usize,
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
    pub mpvpe: f64,
    pub pck_all: f64,
    pub pck_matched: f64,
    /// Pooled over all pairs; `None` when no scene has two humans.
    pub d_percent: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: MetricConfig,
    pub aggregate: Aggregate,
    pub scenes: Vec<SceneEval>,
}

struct HumanScores {
    mpjpe: f64,
    pa_mpjpe: f64,
    mpvpe: f64,
    pck: f64,
}

fn score(p: &EvalHuman, g: &EvalHuman, root_index: usize, cfg: &MetricConfig) -> Result<HumanScores> {
    let pj = root_align(&p.joints, p.joints.row(root_index));
    let gj = root_align(&g.joints, g.joints.row(root_index));
    let pm = root_align(&p.mesh, p.joints.row(root_index));
    let gm = root_align(&g.mesh, g.joints.row(root_index));
    Ok(HumanScores {
        mpjpe: mpjpe(&pj, &gj)?,
        pa_mpjpe: pa_mpjpe(&pj, &gj)?,
        mpvpe: mpvpe(&pm, &gm)?,
        pck: pck3d(&pj, &gj, cfg.pck_threshold)?,
    })
}

pub fn evaluate_scene(
    seed: u64,
    preds: &[EvalHuman],
    truths: &[EvalHuman],
    root_index: usize,
    cfg: &MetricConfig,
) -> Result<SceneEval> {
    let pr: Vec<[f64; 2]> = preds.iter().map(|h| h.root_2d).collect();
    let gr: Vec<[f64; 2]> = truths.iter().map(|h| h.root_2d).collect();
    let matching = match_humans(&pr, &gr, cfg.match_gate);
    let mut ev = SceneEval {
        seed,
        gt_humans: truths.len(),
        ..SceneEval::default()
    };
    let mut pck_sum = 0.0;
    let mut pd = Vec::new();
    let mut gd = Vec::new();
    for (g, m) in matching.iter().enumerate() {
        let Some(p) = m else { continue };
        let s = score(&preds[*p], &truths[g], root_index, cfg)?;
        ev.matched += 1;
        ev.mpjpe += s.mpjpe;
        ev.pa_mpjpe += s.pa_mpjpe;
        ev.mpvpe += s.mpvpe;
        pck_sum += s.pck;
        pd.push(preds[*p].depth_measure);
        gd.push(truths[g].depth_measure);
    }
    if ev.matched > 0 {
        let n = ev.matched as f64;
        ev.mpjpe /= n;
        ev.pa_mpjpe /= n;
        ev.mpvpe /= n;
        ev.pck_matched = pck_sum / n;
    }
    if ev.gt_humans > 0 {
        ev.pck_all = pck_sum / ev.gt_humans as f64;
    }
    let (c, t) = ordinal_pairs(&pd, &gd);
    ev.depth_pairs_correct = c;
    ev.depth_pairs = t;
    Ok(ev)
}

impl EvalReport {
    pub fn from_scenes(config: MetricConfig, scenes: Vec<SceneEval>) -> Self {
        let mut a = Aggregate {
            scenes: scenes.len(),
            ..Aggregate::default()
        };
        let (mut pairs, mut correct) = (0, 0);
        for s in &scenes {
            let m = s.matched as f64;
            a.gt_humans += s.gt_humans;
            a.matched += s.matched;
            a.mpjpe += s.mpjpe * m;
            a.pa_mpjpe += s.pa_mpjpe * m;
            a.mpvpe += s.mpvpe * m;
            a.pck_all += s.pck_all * s.gt_humans as f64;
            a.pck_matched += s.pck_matched * m;
            pairs += s.depth_pairs;
            correct += s.depth_pairs_correct;
        }
        if a.matched > 0 {
            let m = a.matched as f64;
            a.mpjpe /= m;
            a.pa_mpjpe /= m;
            a.mpvpe /= m;
            a.pck_matched /= m;
        }
        if a.gt_humans > 0 {
            a.pck_all /= a.gt_humans as f64;
        }
        a.d_percent = (pairs > 0).then(|| correct as f64 / pairs as f64);
        Self {
            config,
            aggregate: a,
            scenes,
        }
    }

    /// Plain-text summary table.
    pub fn table(&self) -> String {
        let a = &self.aggregate;
        let d = a.d_percent.map_or("n/a".to_string(), |d| format!("{:.1}", 100.0 * d));
        format!(
            "scenes   humans  matched  MPJPE   PA-MPJPE  MPVPE   PCK-all  PCK-matched  D%\n\
             {:<8} {:<7} {:<8} {:<7.1} {:<9.1} {:<7.1} {:<8.1} {:<12.1} {}\n",
            a.scenes,
            a.gt_humans,
            a.matched,
            a.mpjpe,
            a.pa_mpjpe,
            a.mpvpe,
            100.0 * a.pck_all,
            100.0 * a.pck_matched,
            d
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts() -> DenseMatrix {
        DenseMatrix::from_rows(&[
            [0.0, 0.0, 0.0],
            [100.0, 20.0, -5.0],
            [30.0, 150.0, 40.0],
            [-60.0, 80.0, 120.0],
            [10.0, -90.0, 60.0],
        ])
        .unwrap()
    }

    #[test]
    fn mpjpe_examples() {
        let p = pts();
        assert_eq!(mpjpe(&p, &p).unwrap(), 0.0);
        let mut s = p.clone();
        for i in 0..s.rows() {
            s[(i, 0)] += 10.0;
        }
        assert!((mpjpe(&s, &p).unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn procrustes_removes_similarity() {
        let gt = pts();
        let r = nalgebra::Rotation3::from_euler_angles(0.3, -0.7, 1.1);
        let mut p = DenseMatrix::zeros(gt.rows(), 3);
        for i in 0..gt.rows() {
            let x = Vector3::new(gt[(i, 0)], gt[(i, 1)], gt[(i, 2)]);
            let y = 1.7 * (r * x) + Vector3::new(5.0, -3.0, 200.0);
            p.row_mut(i).copy_from_slice(y.as_slice());
        }
        assert!(pa_mpjpe(&p, &gt).unwrap() < 1e-8);
        assert!(pa_mpjpe(&gt, &gt).unwrap() < 1e-9);
    }

    #[test]
    fn mirror_image_is_not_aligned_by_reflection() {
        let gt = pts();
        let mut m = gt.clone();
        for i in 0..m.rows() {
            m[(i, 0)] = -m[(i, 0)];
        }
        assert!(pa_mpjpe(&m, &gt).unwrap() > 1.0);
    }

    #[test]
    fn degenerate_points_fall_back_to_translation() {
        let gt = pts();
        let p = DenseMatrix::filled(5, 3, 7.0);
        let aligned = procrustes_align(&p, &gt).unwrap();
        let c: f64 = (0..5).map(|i| gt[(i, 0)]).sum::<f64>() / 5.0;
        assert!((aligned[(0, 0)] - c).abs() < 1e-9);
    }

    #[test]
    fn pck_examples() {
        let gt = pts();
        assert_eq!(pck3d(&gt, &gt, 150.0).unwrap(), 1.0);
        let far = gt.map(|x| x + 200.0 / 3f64.sqrt());
        assert_eq!(pck3d(&far, &gt, 150.0).unwrap(), 0.0);
        let mut half = DenseMatrix::zeros(4, 3);
        half[(0, 0)] = 10.0;
        half[(1, 0)] = 149.0;
        half[(2, 0)] = 150.0;
        half[(3, 0)] = 400.0;
        assert_eq!(pck3d(&half, &DenseMatrix::zeros(4, 3), 150.0).unwrap(), 0.5);
    }

    #[test]
    fn ordinal_examples() {
        assert_eq!(ordinal_depth_accuracy(&[2.0, 3.0], &[2.1, 3.5]), Some(1.0));
        assert_eq!(ordinal_depth_accuracy(&[3.0, 2.0], &[2.1, 3.5]), Some(0.0));
        assert_eq!(ordinal_depth_accuracy(&[1.0], &[1.0]), None);
        assert_eq!(ordinal_depth_accuracy(&[1.0, 1.0005], &[2.0, 2.0]), Some(1.0));
    }

    #[test]
    fn matching_is_greedy_and_gated() {
        let m = match_humans(&[[0.0, 0.0], [100.0, 0.0]], &[[90.0, 0.0], [5.0, 0.0], [900.0, 0.0]], 250.0);
        assert_eq!(m, vec![Some(1), Some(0), None]);
    }
}
