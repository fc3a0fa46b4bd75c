use serde::{Deserialize, Serialize};

use super::dense::DenseMatrix;
use crate::error::{shape_err, MugError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub first_moment: Vec<DenseMatrix>,
    pub second_moment: Vec<DenseMatrix>,
    pub beta1: f64,
    pub beta2: f64,
    pub lr: f64,
    pub eps: f64,
}

impl AdamState {
    /// Fresh state with zero moments shaped like `params`.
    pub fn new(params: &[DenseMatrix], lr: f64) -> Self {
        let zeros: Vec<DenseMatrix> = params
            .iter()
            .map(|p| DenseMatrix::zeros(p.rows(), p.cols()))
            .collect();
        Self {
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
            beta1: 0.9,
            beta2: 0.999,
            lr,
            eps: 1e-8,
        }
    }

    /// One bias-corrected Adam update applied in place.
    pub fn apply(&mut self, params: &mut [DenseMatrix], grads: &[DenseMatrix]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return shape_err(
                "adam_step",
                format!(
                    "{} params, {} grads, {} moment slots",
                    params.len(),
                    grads.len(),
                    self.first_moment.len()
                ),
            );
        }
        for (i, ((p, g), m)) in params.iter().zip(grads).zip(&self.first_moment).enumerate() {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return shape_err(
                    "adam_step",
                    format!(
                        "param {i}: value {:?}, grad {:?}, moment {:?}",
                        p.shape(),
                        g.shape(),
                        m.shape()
                    ),
                );
            }
            if !g.is_finite() {
                return Err(MugError::Numeric(format!("non-finite gradient for param {i}")));
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (self.beta1, self.beta2);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
        {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = b1 * *mv + (1.0 - b1) * gv;
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Pure Adam step: returns updated parameters and state.
pub fn adam_step(
    params: &[DenseMatrix],
    grads: &[DenseMatrix],
    state: &AdamState,
) -> Result<(Vec<DenseMatrix>, AdamState)> {
    let mut p = params.to_vec();
    let mut s = state.clone();
    s.apply(&mut p, grads)?;
    Ok((p, s))
}
