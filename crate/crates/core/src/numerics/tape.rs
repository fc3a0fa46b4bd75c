//! Reverse-mode differentiation over coarse matrix operations.
//!
//! Every operation appends one node holding its value; `backward` walks the
//! nodes in reverse insertion order, so each recorded node is visited once.
//! Constant operators (Laplacians, selection matrices) live outside the tape
//! as shared [`CsrMatrix`] values.

use std::sync::Arc;

use super::dense::{gemm, DenseMatrix};
use super::group_norm::{group_norm_backward, group_norm_forward, GroupNormCache};
use super::sparse::CsrMatrix;
use crate::error::{shape_err, MugError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    SpMM(Arc<CsrMatrix>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddRowBias(Var, Var),
    Relu(Var),
    Abs(Var),
    GroupNorm {
        x: Var,
        gain: Var,
        bias: Var,
        groups: usize,
        cache: GroupNormCache,
    },
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    RowNorm(Var),
}

struct Node {
    value: DenseMatrix,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that required one.
pub struct Gradients {
    grads: Vec<Option<DenseMatrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&DenseMatrix> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `var`; zeros when the loss does not depend on it.
    pub fn wrt(&self, var: Var) -> DenseMatrix {
        match self.get(var) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[var.0];
                DenseMatrix::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, var: Var) -> DenseMatrix {
        match self.grads.get_mut(var.0).and_then(|g| g.take()) {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[var.0];
                DenseMatrix::zeros(r, c)
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: DenseMatrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, value: DenseMatrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: DenseMatrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn spmm(&mut self, op: &Arc<CsrMatrix>, x: Var) -> Result<Var> {
        let value = op.mul_dense(self.value(x))?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::SpMM(Arc::clone(op), x), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x / y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Div(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scale(c);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, c), rg)
    }

    /// `x + 1·bias` with `bias` a `1 x cols` row.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.shape() != (1, xv.cols()) {
            return shape_err(
                "add_row_bias",
                format!("bias {:?} for input {:?}", bv.shape(), xv.shape()),
            );
        }
        let mut value = xv.clone();
        let c = xv.cols();
        for i in 0..xv.rows() {
            for (o, b) in value.row_mut(i).iter_mut().zip(&bv.data()[..c]) {
                *o += b;
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(value, Op::AddRowBias(x, bias), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(x);
        self.push(value, Op::Relu(x), rg)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::abs);
        let rg = self.rg(x);
        self.push(value, Op::Abs(x), rg)
    }

    pub fn group_norm(&mut self, x: Var, gain: Var, bias: Var, groups: usize, eps: f64) -> Result<Var> {
        let (value, cache) =
            group_norm_forward(self.value(x), groups, self.value(gain), self.value(bias), eps)?;
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            value,
            Op::GroupNorm {
                x,
                gain,
                bias,
                groups,
                cache,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = DenseMatrix::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(value, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let n = v.rows() * v.cols();
        let value = DenseMatrix::scalar(if n == 0 { 0.0 } else { v.sum() / n as f64 });
        let rg = self.rg(x);
        self.push(value, Op::Mean(x), rg)
    }

    /// `n x c -> n x 1` row sums.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let mut value = DenseMatrix::zeros(v.rows(), 1);
        for i in 0..v.rows() {
            value[(i, 0)] = v.row(i).iter().sum();
        }
        let rg = self.rg(x);
        self.push(value, Op::RowSum(x), rg)
    }

    /// `n x c -> n x 1` Euclidean row norms.
    pub fn row_norm(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let mut value = DenseMatrix::zeros(v.rows(), 1);
        for i in 0..v.rows() {
            value[(i, 0)] = v.row(i).iter().map(|a| a * a).sum::<f64>().sqrt();
        }
        let rg = self.rg(x);
        self.push(value, Op::RowNorm(x), rg)
    }

    /// Chebyshev graph convolution `Σ_k T_k(L̃) X W_k`, recorded as sparse
    /// products, matmuls and sums.
    pub fn cheb_conv(&mut self, x: Var, lap: &Arc<CsrMatrix>, weights: &[Var]) -> Result<Var> {
        if weights.is_empty() {
            return shape_err("cheb_conv", "weights: order must be at least 1");
        }
        let mut basis: Vec<Var> = vec![x];
        if weights.len() > 1 {
            basis.push(self.spmm(lap, x)?);
        }
        for k in 2..weights.len() {
            let lt = self.spmm(lap, basis[k - 1])?;
            let two_lt = self.scale(lt, 2.0);
            basis.push(self.sub(two_lt, basis[k - 2])?);
        }
        let mut acc = self.matmul(basis[0], weights[0])?;
        for (&tx, &w) in basis.iter().zip(weights).skip(1) {
            let term = self.matmul(tx, w)?;
            acc = self.add(acc, term)?;
        }
        Ok(acc)
    }

    /// Gradients of the scalar `loss` with respect to all recorded nodes.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shapes: Vec<_> = self.nodes.iter().map(|n| n.value.shape()).collect();
        if self.value(loss).shape() != (1, 1) {
            return shape_err(
                "backward",
                format!("loss must be 1x1, got {:?}", self.value(loss).shape()),
            );
        }
        let mut grads: Vec<Option<DenseMatrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(DenseMatrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if !g.is_finite() {
                return Err(MugError::Numeric(format!(
                    "non-finite gradient at tape node {idx}"
                )));
            }
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.rg(*a) {
                        let bv = self.value(*b);
                        let mut da = DenseMatrix::zeros(g.rows(), bv.rows());
                        gemm(&g, false, bv, true, &mut da, 0.0);
                        accumulate(&mut grads, *a, da);
                    }
                    if self.rg(*b) {
                        let av = self.value(*a);
                        let mut db = DenseMatrix::zeros(av.cols(), g.cols());
                        gemm(av, true, &g, false, &mut db, 0.0);
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::SpMM(op, x) => {
                    let mut dx = DenseMatrix::zeros(op.cols(), g.cols());
                    op.transpose_mul_acc(&g, &mut dx);
                    accumulate(&mut grads, *x, dx);
                }
                Op::Add(a, b) => {
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, g.clone());
                    }
                    accumulate(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, g.scale(-1.0));
                    }
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g.zip_map(bv, |x, y| x * y)?);
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, g.zip_map(av, |x, y| x * y)?);
                    }
                }
                Op::Div(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g.zip_map(bv, |x, y| x / y)?);
                    }
                    if self.rg(*b) {
                        let mut db = g.zip_map(av, |x, y| -x * y)?;
                        for (d, y) in db.data_mut().iter_mut().zip(bv.data()) {
                            *d /= y * y;
                        }
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, g.scale(*c)),
                Op::AddRowBias(x, bias) => {
                    if self.rg(*bias) {
                        let mut db = DenseMatrix::zeros(1, g.cols());
                        for i in 0..g.rows() {
                            for (d, v) in db.data_mut().iter_mut().zip(g.row(i)) {
                                *d += v;
                            }
                        }
                        accumulate(&mut grads, *bias, db);
                    }
                    accumulate(&mut grads, *x, g);
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let dx = g.zip_map(xv, |d, v| if v > 0.0 { d } else { 0.0 })?;
                    accumulate(&mut grads, *x, dx);
                }
                Op::Abs(x) => {
                    let xv = self.value(*x);
                    let dx = g.zip_map(xv, |d, v| {
                        if v > 0.0 {
                            d
                        } else if v < 0.0 {
                            -d
                        } else {
                            0.0
                        }
                    })?;
                    accumulate(&mut grads, *x, dx);
                }
                Op::GroupNorm {
                    x,
                    gain,
                    bias,
                    groups,
                    cache,
                } => {
                    let (dx, dgain, dbias) =
                        group_norm_backward(&g, cache, self.value(*gain), *groups);
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *gain, dgain);
                    accumulate(&mut grads, *bias, dbias);
                }
                Op::Sum(x) => {
                    let (r, c) = shapes[x.0];
                    accumulate(&mut grads, *x, DenseMatrix::filled(r, c, g.item()));
                }
                Op::Mean(x) => {
                    let (r, c) = shapes[x.0];
                    let n = (r * c).max(1) as f64;
                    accumulate(&mut grads, *x, DenseMatrix::filled(r, c, g.item() / n));
                }
                Op::RowSum(x) => {
                    let (r, c) = shapes[x.0];
                    let mut dx = DenseMatrix::zeros(r, c);
                    for i in 0..r {
                        dx.row_mut(i).fill(g[(i, 0)]);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::RowNorm(x) => {
                    let xv = self.value(*x);
                    let mut dx = DenseMatrix::zeros(xv.rows(), xv.cols());
                    for i in 0..xv.rows() {
                        let n = node.value[(i, 0)];
                        if n > 0.0 {
                            let s = g[(i, 0)] / n;
                            for (d, v) in dx.row_mut(i).iter_mut().zip(xv.row(i)) {
                                *d = s * v;
                            }
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
            }
        }
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<DenseMatrix>], v: Var, g: DenseMatrix) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
pub(crate) mod fd {
    //! Central finite differences used as the gradient oracle in tests.
    use super::*;

    /// Max relative error between analytic gradients and central differences
    /// of `f` around `params`. `f` must rebuild its tape from scratch.
    pub fn check<F>(params: &[DenseMatrix], step: f64, f: F) -> f64
    where
        F: Fn(&mut Tape, &[Var]) -> Var,
    {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
        let loss = f(&mut tape, &vars);
        let grads = tape.backward(loss).unwrap();
        let eval = |ps: &[DenseMatrix]| {
            let mut t = Tape::new();
            let vs: Vec<Var> = ps.iter().map(|p| t.param(p.clone())).collect();
            let l = f(&mut t, &vs);
            t.value(l).item()
        };
        let mut worst: f64 = 0.0;
        for (pi, p) in params.iter().enumerate() {
            let analytic = grads.wrt(vars[pi]);
            for e in 0..p.data().len() {
                let mut plus = params.to_vec();
                plus[pi].data_mut()[e] += step;
                let mut minus = params.to_vec();
                minus[pi].data_mut()[e] -= step;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * step);
                let a = analytic.data()[e];
                let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max(err);
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{chebyshev::scaled_laplacian, sparse::SparseAdjacency};

    fn mat(rows: &[&[f64]]) -> DenseMatrix {
        DenseMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn square_at_three() {
        let mut t = Tape::new();
        let w = t.param(DenseMatrix::scalar(3.0));
        let sq = t.mul(w, w).unwrap();
        let g = t.backward(sq).unwrap();
        assert_eq!(g.wrt(w).item(), 6.0);
    }

    #[test]
    fn independent_parameter_gets_zero() {
        let mut t = Tape::new();
        let a = t.param(DenseMatrix::scalar(2.0));
        let b = t.param(mat(&[&[1.0, 2.0]]));
        let loss = t.mul(a, a).unwrap();
        let g = t.backward(loss).unwrap();
        assert!(g.get(b).is_none());
        assert_eq!(g.wrt(b), DenseMatrix::zeros(1, 2));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let a = t.param(DenseMatrix::zeros(2, 2));
        assert!(t.backward(a).is_err());
    }

    #[test]
    fn elementwise_ops_match_finite_differences() {
        let x = mat(&[&[0.3, -1.2, 2.1], &[0.8, 0.5, -0.4]]);
        let y = mat(&[&[1.1, 0.7, -0.9], &[2.2, -1.5, 0.6]]);
        let bias = mat(&[&[0.1, -0.3, 0.2]]);
        let err = fd::check(&[x, y, bias], 1e-5, |t, v| {
            let p = t.mul(v[0], v[1]).unwrap();
            let q = t.div(p, v[1]).unwrap();
            let r = t.sub(q, v[1]).unwrap();
            let s = t.add_row_bias(r, v[2]).unwrap();
            let a = t.abs(s);
            let rl = t.relu(v[0]);
            let n = t.row_norm(v[1]);
            let rs = t.row_sum(a);
            let z = t.add(rs, n).unwrap();
            let z = t.scale(z, 0.5);
            let m = t.mean(z);
            let s2 = t.sum(rl);
            t.add(m, s2).unwrap()
        });
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn matmul_group_norm_and_cheb_match_finite_differences() {
        let adj = SparseAdjacency::from_undirected(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let lap = Arc::new(scaled_laplacian(&adj).to_csr());
        let x = mat(&[
            &[0.3, -1.2, 2.1, 0.4],
            &[0.8, 0.5, -0.4, 1.0],
            &[-0.6, 0.2, 0.9, -1.1],
            &[1.3, -0.7, 0.1, 0.6],
        ]);
        let w: Vec<DenseMatrix> = (0..3)
            .map(|k| {
                DenseMatrix::from_vec(
                    4,
                    4,
                    (0..16).map(|i| ((i * 7 + k * 3) % 11) as f64 / 11.0 - 0.45).collect(),
                )
                .unwrap()
            })
            .collect();
        let gain = mat(&[&[1.2, 0.8, -0.5, 1.1]]);
        let bias = mat(&[&[0.1, 0.0, -0.2, 0.3]]);
        let mut params = vec![x];
        params.extend(w);
        params.push(gain);
        params.push(bias);
        let lap2 = Arc::clone(&lap);
        let err = fd::check(&params, 1e-5, move |t, v| {
            let h = t.cheb_conv(v[0], &lap2, &v[1..4]).unwrap();
            let n = t.group_norm(h, v[4], v[5], 2, 1e-5).unwrap();
            let sq = t.mul(n, n).unwrap();
            let y = t.matmul(sq, v[2]).unwrap();
            t.mean(y)
        });
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn tape_cheb_matches_direct() {
        let adj = SparseAdjacency::from_undirected(3, &[(0, 1), (1, 2)]).unwrap();
        let lap = scaled_laplacian(&adj);
        let x = mat(&[&[1.0, 2.0], &[-1.0, 0.5], &[0.3, 0.3]]);
        let w = vec![
            mat(&[&[1.0], &[0.5]]),
            mat(&[&[-2.0], &[1.0]]),
            mat(&[&[0.25], &[0.75]]),
        ];
        let direct = crate::numerics::chebyshev::cheb_conv(&x, &lap, &w, 3).unwrap();
        let mut t = Tape::new();
        let xv = t.constant(x);
        let wv: Vec<Var> = w.into_iter().map(|m| t.param(m)).collect();
        let out = t.cheb_conv(xv, &Arc::new(lap.to_csr()), &wv).unwrap();
        assert!(t.value(out).max_abs_diff(&direct) < 1e-12);
    }
}
