use super::dense::DenseMatrix;
use crate::error::{shape_err, Result};

pub const DEFAULT_GN_EPS: f64 = 1e-5;

/// Normalized activations and per-(row, group) inverse std, kept for the
/// backward pass.
#[derive(Clone, Debug)]
pub(crate) struct GroupNormCache {
    pub normalized: DenseMatrix,
    pub inv_std: Vec<f64>,
}

fn check(features: &DenseMatrix, groups: usize, gain: &DenseMatrix, bias: &DenseMatrix) -> Result<()> {
    let c = features.cols();
    if groups == 0 || c % groups != 0 {
        return shape_err(
            "group_norm",
            format!("{c} channels not divisible into {groups} groups"),
        );
    }
    if gain.shape() != (1, c) || bias.shape() != (1, c) {
        return shape_err(
            "group_norm",
            format!(
                "gain {:?} / bias {:?} must be 1x{c}",
                gain.shape(),
                bias.shape()
            ),
        );
    }
    Ok(())
}

pub(crate) fn group_norm_forward(
    features: &DenseMatrix,
    groups: usize,
    gain: &DenseMatrix,
    bias: &DenseMatrix,
    eps: f64,
) -> Result<(DenseMatrix, GroupNormCache)> {
    check(features, groups, gain, bias)?;
    let (n, c) = features.shape();
    let m = c / groups;
    let mut normalized = DenseMatrix::zeros(n, c);
    let mut out = DenseMatrix::zeros(n, c);
    let mut inv_std = Vec::with_capacity(n * groups);
    let (g, b) = (gain.data(), bias.data());
    for i in 0..n {
        let row = features.row(i);
        for grp in 0..groups {
            let span = grp * m..(grp + 1) * m;
            let xs = &row[span.clone()];
            let mean = xs.iter().sum::<f64>() / m as f64;
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / m as f64;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std.push(istd);
            for ch in span {
                let xh = (row[ch] - mean) * istd;
                normalized[(i, ch)] = xh;
                out[(i, ch)] = g[ch] * xh + b[ch];
            }
        }
    }
    Ok((out, GroupNormCache { normalized, inv_std }))
}

/// Returns `(d_features, d_gain, d_bias)`.
pub(crate) fn group_norm_backward(
    grad_out: &DenseMatrix,
    cache: &GroupNormCache,
    gain: &DenseMatrix,
    groups: usize,
) -> (DenseMatrix, DenseMatrix, DenseMatrix) {
    let (n, c) = grad_out.shape();
    let m = c / groups;
    let mut dx = DenseMatrix::zeros(n, c);
    let mut dgain = DenseMatrix::zeros(1, c);
    let mut dbias = DenseMatrix::zeros(1, c);
    let g = gain.data();
    for i in 0..n {
        let dy = grad_out.row(i);
        let xh = cache.normalized.row(i);
        for ch in 0..c {
            dgain.data_mut()[ch] += dy[ch] * xh[ch];
            dbias.data_mut()[ch] += dy[ch];
        }
        for grp in 0..groups {
            let span = grp * m..(grp + 1) * m;
            let istd = cache.inv_std[i * groups + grp];
            let mut mean_d = 0.0;
            let mut mean_dx = 0.0;
            for ch in span.clone() {
                let d = dy[ch] * g[ch];
                mean_d += d;
                mean_dx += d * xh[ch];
            }
            mean_d /= m as f64;
            mean_dx /= m as f64;
            for ch in span {
                let d = dy[ch] * g[ch];
                dx[(i, ch)] = istd * (d - mean_d - xh[ch] * mean_dx);
            }
        }
    }
    (dx, dgain, dbias)
}

/// Group normalization over the channels of each row.
///
/// Each row's channels are split into `groups` contiguous groups, shifted to
/// zero mean and scaled to unit (population) variance with `eps` added to the
/// variance, then scaled by `gain` and shifted by `bias` (both `1 x channels`).
pub fn group_norm(
    features: &DenseMatrix,
    groups: usize,
    gain: &DenseMatrix,
    bias: &DenseMatrix,
    eps: f64,
) -> Result<DenseMatrix> {
    group_norm_forward(features, groups, gain, bias, eps).map(|(out, _)| out)
}
