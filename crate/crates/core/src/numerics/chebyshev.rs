//! Chebyshev spectral graph convolution.
//!
//! Filters are polynomials `Σ_k T_k(L̃) X W_k` in the scaled Laplacian
//! `L̃ = 2L/λ_max − I` of the symmetric normalized Laplacian
//! `L = I − D^{-1/2} A D^{-1/2}`. `λ_max` is fixed at 2, its upper bound,
//! so no eigensolve is needed and the spectrum of `L̃` stays in `[−1, 1]`.

use super::dense::DenseMatrix;
use super::sparse::{CsrMatrix, SparseAdjacency};
use crate::error::{shape_err, Result};

pub const LAMBDA_MAX: f64 = 2.0;

/// Scaled Laplacian of a (symmetric) weighted adjacency.
///
/// A node with zero degree gets a normalized-Laplacian row of zeros, so its
/// scaled-Laplacian diagonal entry is `−1`.
pub fn scaled_laplacian(adj: &SparseAdjacency) -> SparseAdjacency {
    let n = adj.node_count();
    let mut degree = vec![0.0; n];
    for &(s, _, w) in adj.edges() {
        degree[s] += w;
    }
    let inv_sqrt: Vec<f64> = degree
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();

    let mut lap_diag = vec![0.0; n];
    let mut entries = Vec::with_capacity(adj.edges().len() + n);
    for &(s, d, w) in adj.edges() {
        let norm = w * inv_sqrt[s] * inv_sqrt[d];
        if s == d {
            lap_diag[s] -= norm;
        } else if norm != 0.0 {
            entries.push((s, d, -2.0 * norm / LAMBDA_MAX));
        }
    }
    for i in 0..n {
        if degree[i] > 0.0 {
            lap_diag[i] += 1.0;
        }
        let v = 2.0 * lap_diag[i] / LAMBDA_MAX - 1.0;
        if v != 0.0 {
            entries.push((i, i, v));
        }
    }
    SparseAdjacency::new(n, entries).expect("laplacian entries inherit valid indices")
}

/// Applies `T_0(L̃)X … T_{order−1}(L̃)X` and returns the list.
pub fn chebyshev_basis(features: &DenseMatrix, lap: &CsrMatrix, order: usize) -> Result<Vec<DenseMatrix>> {
    if features.rows() != lap.rows() {
        return shape_err(
            "cheb_conv",
            format!(
                "features have {} rows but the laplacian has {} nodes",
                features.rows(),
                lap.rows()
            ),
        );
    }
    let mut basis = Vec::with_capacity(order);
    if order == 0 {
        return Ok(basis);
    }
    basis.push(features.clone());
    if order > 1 {
        basis.push(lap.mul_dense(features)?);
    }
    for k in 2..order {
        let mut next = lap.mul_dense(&basis[k - 1])?.scale(2.0);
        next.axpy(-1.0, &basis[k - 2]);
        basis.push(next);
    }
    Ok(basis)
}

/// `Σ_{k<order} T_k(L̃) X W_k`.
pub fn cheb_conv(
    features: &DenseMatrix,
    lap: &SparseAdjacency,
    weights: &[DenseMatrix],
    order: usize,
) -> Result<DenseMatrix> {
    if weights.len() != order {
        return shape_err(
            "cheb_conv",
            format!("weights: {} matrices for order {order}", weights.len()),
        );
    }
    let Some(first) = weights.first() else {
        return shape_err("cheb_conv", "weights: order must be at least 1");
    };
    let (in_dim, out_dim) = first.shape();
    for (k, w) in weights.iter().enumerate() {
        if w.shape() != (in_dim, out_dim) {
            return shape_err(
                "cheb_conv",
                format!("weights[{k}] is {:?}, expected {:?}", w.shape(), (in_dim, out_dim)),
            );
        }
    }
    if features.cols() != in_dim {
        return shape_err(
            "cheb_conv",
            format!("features have {} columns, weights expect {in_dim}", features.cols()),
        );
    }
    if features.rows() != lap.node_count() {
        return shape_err(
            "cheb_conv",
            format!(
                "features have {} rows but the laplacian has {} nodes",
                features.rows(),
                lap.node_count()
            ),
        );
    }
    let basis = chebyshev_basis(features, &lap.to_csr(), order)?;
    let mut out = DenseMatrix::zeros(features.rows(), out_dim);
    for (tx, w) in basis.iter().zip(weights) {
        out.add_assign(&tx.matmul(w)?);
    }
    Ok(out)
}
