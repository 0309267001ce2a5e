//! Forward-process noise schedule.

use crate::error::{DdmiError, Result};
use crate::tensor::{Element, Tensor};

/// Per-step constants of the forward diffusion process, 1-indexed by
/// step `t in [1, T]`.
#[derive(Clone, Debug)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear beta ramp from `beta_start` to `beta_end` over `steps`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
        if steps == 0
            || !(beta_start > 0.0)
            || !(beta_end < 1.0)
            || beta_start > beta_end
            || !beta_start.is_finite()
            || !beta_end.is_finite()
        {
            return Err(DdmiError::InvalidScheduleRange { beta_start, beta_end });
        }
        let mut beta = Vec::with_capacity(steps);
        for i in 0..steps {
            let frac = if steps == 1 { 0.0 } else { i as f64 / (steps - 1) as f64 };
            beta.push(beta_start + (beta_end - beta_start) * frac);
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for &a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        let sigma: Vec<f64> = beta.iter().map(|b| b.sqrt()).collect();
        Ok(NoiseSchedule { beta, alpha, alpha_bar, sigma })
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn index(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.steps() {
            return Err(DdmiError::StepOutOfRange { t, max: self.steps() });
        }
        Ok(t - 1)
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        Ok(self.beta[self.index(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(self.alpha[self.index(t)?])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        Ok(self.alpha_bar[self.index(t)?])
    }

    pub fn sigma(&self, t: usize) -> Result<f64> {
        Ok(self.sigma[self.index(t)?])
    }

    pub fn terminal_alpha_bar(&self) -> f64 {
        *self.alpha_bar.last().expect("non-empty schedule")
    }
}

/// Closed-form forward marginal: `z_t = sqrt(abar_t) z0 + sqrt(1-abar_t) eps`.
pub fn forward_diffuse<E: Element>(
    z0: &Tensor<E>,
    t: usize,
    eps: &Tensor<E>,
    sched: &NoiseSchedule,
) -> Result<Tensor<E>> {
    if eps.shape() != z0.shape() {
        return Err(DdmiError::ShapeMismatch {
            expected: z0.shape().to_vec(),
            got: eps.shape().to_vec(),
        });
    }
    let abar = sched.alpha_bar(t)?;
    z0.mul_scalar(abar.sqrt()).add(&eps.mul_scalar((1.0 - abar).sqrt()))
}

/// Per-item variant: item `b` of the batch is diffused to its own step
/// `ts[b]`.
pub fn forward_diffuse_per_item<E: Element>(
    z0: &Tensor<E>,
    ts: &[usize],
    eps: &Tensor<E>,
    sched: &NoiseSchedule,
) -> Result<Tensor<E>> {
    if eps.shape() != z0.shape() {
        return Err(DdmiError::ShapeMismatch {
            expected: z0.shape().to_vec(),
            got: eps.shape().to_vec(),
        });
    }
    let b = z0.shape()[0];
    if ts.len() != b {
        return Err(DdmiError::ShapeMismatch { expected: vec![b], got: vec![ts.len()] });
    }
    let mut ca = Vec::with_capacity(b);
    let mut cb = Vec::with_capacity(b);
    for &t in ts {
        let abar = sched.alpha_bar(t)?;
        ca.push(E::from_f64(abar.sqrt()));
        cb.push(E::from_f64((1.0 - abar).sqrt()));
    }
    let mut bshape = vec![1usize; z0.rank()];
    bshape[0] = b;
    let ca = Tensor::from_vec(ca, &bshape)?;
    let cb = Tensor::from_vec(cb, &bshape)?;
    z0.mul(&ca)?.add(&eps.mul(&cb)?)
}
