use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::dense::DenseMatrix;
use crate::error::{shape_err, MugError, Result};

/// Weighted edge list over `node_count` nodes. Entries are kept sorted by
/// `(src, dst)` with no duplicates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseAdjacency {
    node_count: usize,
    edges: Vec<(usize, usize, f64)>,
}

impl SparseAdjacency {
    pub fn new(node_count: usize, edges: Vec<(usize, usize, f64)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for &(s, d, w) in &edges {
            if s >= node_count || d >= node_count {
                return Err(MugError::Graph(format!(
                    "edge ({s},{d}) out of range for {node_count} nodes"
                )));
            }
            if !w.is_finite() {
                return Err(MugError::Graph(format!("edge ({s},{d}) has weight {w}")));
            }
            if map.insert((s, d), w).is_some() {
                return Err(MugError::Graph(format!("duplicate edge ({s},{d})")));
            }
        }
        Ok(Self {
            node_count,
            edges: map.into_iter().map(|((s, d), w)| (s, d, w)).collect(),
        })
    }

    /// Symmetric unit-weight adjacency from undirected pairs. Both directions
    /// are inserted; repeated pairs collapse.
    pub fn from_undirected(node_count: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut map = BTreeMap::new();
        for &(a, b) in pairs {
            if a >= node_count || b >= node_count {
                return Err(MugError::Graph(format!(
                    "edge ({a},{b}) out of range for {node_count} nodes"
                )));
            }
            if a == b {
                return Err(MugError::Graph(format!("self-loop at node {a}")));
            }
            map.insert((a, b), 1.0);
            map.insert((b, a), 1.0);
        }
        Ok(Self {
            node_count,
            edges: map.into_iter().map(|((s, d), w)| (s, d, w)).collect(),
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let map: BTreeMap<(usize, usize), f64> =
            self.edges.iter().map(|&(s, d, w)| ((s, d), w)).collect();
        self.edges.iter().all(|&(s, d, w)| {
            map.get(&(d, s))
                .map_or(false, |&wt| (wt - w).abs() <= tol)
        })
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.node_count, self.node_count);
        for &(s, d, w) in &self.edges {
            m[(s, d)] = w;
        }
        m
    }

    /// Operator form: row `dst` gathers from column `src`, i.e. entry
    /// `(src, dst, w)` lands at matrix position `[src][dst]`.
    pub fn to_csr(&self) -> CsrMatrix {
        CsrMatrix::from_triplets(
            self.node_count,
            self.node_count,
            self.edges.iter().copied(),
        )
        .expect("adjacency indices validated on construction")
    }
}

/// Compressed sparse row matrix, used as a constant linear operator.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut map: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (r, c, v) in triplets {
            if r >= rows || c >= cols {
                return shape_err(
                    "CsrMatrix::from_triplets",
                    format!("entry ({r},{c}) outside {rows}x{cols}"),
                );
            }
            *map.entry((r, c)).or_insert(0.0) += v;
        }
        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(map.len());
        let mut values = Vec::with_capacity(map.len());
        for ((r, c), v) in map {
            indptr[r + 1] += 1;
            indices.push(c);
            values.push(v);
        }
        for i in 0..rows {
            indptr[i + 1] += indptr[i];
        }
        Ok(Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, n, (0..n).map(|i| (i, i, 1.0))).unwrap()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| self.row_entries(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.rows, self.cols);
        for (r, c, v) in self.triplets() {
            m[(r, c)] = v;
        }
        m
    }

    /// `self · x`.
    pub fn mul_dense(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if x.rows() != self.cols {
            return shape_err(
                "sparse matmul",
                format!(
                    "operator is {}x{}, operand has {} rows",
                    self.rows,
                    self.cols,
                    x.rows()
                ),
            );
        }
        let d = x.cols();
        let mut out = DenseMatrix::zeros(self.rows, d);
        for r in 0..self.rows {
            let span = self.indptr[r]..self.indptr[r + 1];
            let dst = &mut out.data_mut()[r * d..(r + 1) * d];
            for (&c, &v) in self.indices[span.clone()].iter().zip(&self.values[span]) {
                let src = x.row(c);
                for (o, s) in dst.iter_mut().zip(src) {
                    *o += v * s;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · g`, accumulated into `out`.
    pub fn transpose_mul_acc(&self, g: &DenseMatrix, out: &mut DenseMatrix) {
        debug_assert_eq!(g.rows(), self.rows);
        debug_assert_eq!(out.shape(), (self.cols, g.cols()));
        let d = g.cols();
        for r in 0..self.rows {
            let span = self.indptr[r]..self.indptr[r + 1];
            let src = g.row(r);
            for (&c, &v) in self.indices[span.clone()].iter().zip(&self.values[span]) {
                let dst = &mut out.data_mut()[c * d..(c + 1) * d];
                for (o, s) in dst.iter_mut().zip(src) {
                    *o += v * s;
                }
            }
        }
    }
}
