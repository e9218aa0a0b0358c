use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Bias-corrected Adam over a fixed, ordered list of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F = f32> {
    pub m: Vec<Vec<F>>,
    pub v: Vec<Vec<F>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<F: Scalar> AdamState<F> {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    /// Zero moments for parameters of the given lengths.
    pub fn new(lens: impl IntoIterator<Item = usize>) -> Self {
        let m: Vec<Vec<F>> = lens.into_iter().map(|n| vec![F::zero(); n]).collect();
        Self { v: m.clone(), m, t: 0, beta1: Self::BETA1, beta2: Self::BETA2, eps: Self::EPS }
    }

    pub fn for_tensors(params: &[&mut Tensor<F>]) -> Self {
        Self::new(params.iter().map(|p| p.len()))
    }

    /// One update `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, params: &mut [&mut Tensor<F>], grads: &[Vec<F>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer holds {} moments, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(Error::Shape(format!("parameter {i} does not match its moments")));
            }
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, value) in p.data_mut().iter_mut().enumerate() {
                let gj = g[j].as_f64();
                let mj = b1 * m[j].as_f64() + (1.0 - b1) * gj;
                let vj = b2 * v[j].as_f64() + (1.0 - b2) * gj * gj;
                m[j] = F::of(mj);
                v[j] = F::of(vj);
                let update = lr * (mj / c1) / ((vj / c2).sqrt() + self.eps);
                *value = F::of(value.as_f64() - update);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm<F: Scalar>(grads: &mut [Vec<F>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g.as_f64() * g.as_f64()).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let k = F::of(max_norm / norm);
        grads.iter_mut().flatten().for_each(|g| *g = *g * k);
    }
    norm
}
