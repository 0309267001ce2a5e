//! Ancestral sampling and classifier-free guidance.

use crate::error::{DdmiError, Result};
use crate::nn::init::randn;
use crate::rng::Rng;
use crate::tensor::{no_grad, Element, Tensor};

use super::denoiser::Denoiser;
use super::schedule::NoiseSchedule;

/// One reverse step:
/// `z_{t-1} = (z_t - beta_t / sqrt(1 - abar_t) * eps) / sqrt(alpha_t) + sigma_t * zeta`
/// with the noise term forced off at t = 1.
pub fn ancestral_step<E: Element>(
    z_t: &Tensor<E>,
    t: usize,
    eps_pred: &Tensor<E>,
    zeta: &Tensor<E>,
    sched: &NoiseSchedule,
) -> Result<Tensor<E>> {
    if eps_pred.shape() != z_t.shape() || zeta.shape() != z_t.shape() {
        return Err(DdmiError::ShapeMismatch {
            expected: z_t.shape().to_vec(),
            got: eps_pred.shape().to_vec(),
        });
    }
    let beta = sched.beta(t)?;
    let alpha = sched.alpha(t)?;
    let abar = sched.alpha_bar(t)?;
    let mean = z_t
        .sub(&eps_pred.mul_scalar(beta / (1.0 - abar).sqrt()))?
        .mul_scalar(1.0 / alpha.sqrt());
    if t == 1 {
        return Ok(mean);
    }
    mean.add(&zeta.mul_scalar(sched.sigma(t)?))
}

/// Guided prediction: `e_uncond + w * (e_cond - e_uncond)`.
pub fn cfg_combine<E: Element>(
    e_uncond: &Tensor<E>,
    e_cond: &Tensor<E>,
    w: f64,
) -> Result<Tensor<E>> {
    if e_uncond.shape() != e_cond.shape() {
        return Err(DdmiError::ShapeMismatch {
            expected: e_uncond.shape().to_vec(),
            got: e_cond.shape().to_vec(),
        });
    }
    e_uncond.add(&e_cond.sub(e_uncond)?.mul_scalar(w))
}

/// Conditioning request for sampling.
#[derive(Clone, Copy, Debug)]
pub struct Guidance {
    pub class: usize,
    pub weight: f64,
}

/// Run the full reverse chain from `z_T ~ N(0, I)`.
///
/// All work happens under [`no_grad`]. Aborts with the offending step
/// index if a non-finite value appears.
pub fn sample<E: Element>(
    denoiser: &Denoiser<E>,
    sched: &NoiseSchedule,
    latent_shape: &[usize],
    count: usize,
    rng: &mut Rng,
    guidance: Option<Guidance>,
) -> Result<Tensor<E>> {
    no_grad(|| {
        let mut shape = Vec::with_capacity(latent_shape.len() + 1);
        shape.push(count);
        shape.extend_from_slice(latent_shape);
        let mut z = randn::<E>(&shape, rng);
        let steps = sched.steps();
        for t in (1..=steps).rev() {
            let ts = vec![t; count];
            let eps = match guidance {
                None => denoiser.forward(&z, &ts, None)?,
                Some(g) => {
                    let null = denoiser.null_class().ok_or_else(|| {
                        DdmiError::Config("guided sampling needs a class-conditional denoiser".into())
                    })?;
                    let e_uncond = denoiser.forward(&z, &ts, Some(&vec![null; count]))?;
                    let e_cond = denoiser.forward(&z, &ts, Some(&vec![g.class; count]))?;
                    cfg_combine(&e_uncond, &e_cond, g.weight)?
                }
            };
            let zeta = if t > 1 { randn::<E>(&shape, rng) } else { Tensor::zeros(&shape) };
            z = ancestral_step(&z, t, &eps, &zeta, sched)?;
            if !z.all_finite() {
                return Err(DdmiError::NonFiniteSample { step: t });
            }
        }
        Ok(z)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::denoiser::DenoiserArch;

    #[test]
    fn zero_prediction_zero_noise_rescales() {
        let s = NoiseSchedule::linear(10, 0.01, 0.2).unwrap();
        let z = Tensor::<f64>::full(1.0, &[1, 1, 2, 2]);
        let zero = Tensor::<f64>::zeros(&[1, 1, 2, 2]);
        let out = ancestral_step(&z, 5, &zero, &zero, &s).unwrap();
        let expect = 1.0 / s.alpha(5).unwrap().sqrt();
        for &v in out.data() {
            assert!((v - expect).abs() < 1e-12);
        }
        assert!(ancestral_step(&z, 0, &zero, &zero, &s).is_err());
        assert!(ancestral_step(&z, 11, &zero, &zero, &s).is_err());
    }

    #[test]
    fn single_step_schedule_with_perfect_prediction_recovers_z0() {
        // With T = 1, abar_1 = alpha_1, so
        // (z_1 - sqrt(1-abar_1) eps) / sqrt(alpha_1) = z0 exactly.
        let s = NoiseSchedule::linear(1, 0.3, 0.3).unwrap();
        let mut rng = Rng::seed_from(40);
        let z0 = randn::<f64>(&[1, 1, 2, 2], &mut rng);
        let eps = randn::<f64>(&[1, 1, 2, 2], &mut rng);
        let z1 = super::super::schedule::forward_diffuse(&z0, 1, &eps, &s).unwrap();
        let back = ancestral_step(&z1, 1, &eps, &Tensor::zeros(&[1, 1, 2, 2]), &s).unwrap();
        for (a, b) in back.data().iter().zip(z0.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_is_forced_off_at_final_step() {
        let s = NoiseSchedule::linear(10, 0.01, 0.2).unwrap();
        let z = Tensor::<f64>::full(0.5, &[1, 1, 1, 1]);
        let eps = Tensor::<f64>::zeros(&[1, 1, 1, 1]);
        let huge_zeta = Tensor::<f64>::full(1e6, &[1, 1, 1, 1]);
        let a = ancestral_step(&z, 1, &eps, &huge_zeta, &s).unwrap();
        let b = ancestral_step(&z, 1, &eps, &Tensor::zeros(&[1, 1, 1, 1]), &s).unwrap();
        assert_eq!(a.to_vec(), b.to_vec());
    }

    #[test]
    fn cfg_identities() {
        let u = Tensor::<f64>::from_vec(vec![1.0, 2.0], &[2]).unwrap();
        let c = Tensor::<f64>::from_vec(vec![3.0, -1.0], &[2]).unwrap();
        assert_eq!(cfg_combine(&u, &c, 0.0).unwrap().to_vec(), u.to_vec());
        assert_eq!(cfg_combine(&u, &c, 1.0).unwrap().to_vec(), c.to_vec());
        let one = Tensor::<f64>::scalar(1.0);
        let three = Tensor::<f64>::scalar(3.0);
        assert_eq!(cfg_combine(&one, &three, 2.0).unwrap().item(), 5.0);
        let bad = Tensor::<f64>::zeros(&[3]);
        assert!(cfg_combine(&u, &bad, 1.0).is_err());
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let mut rng1 = Rng::seed_from(50);
        let mut rng2 = Rng::seed_from(50);
        let mut rng_init = Rng::seed_from(51);
        let arch = DenoiserArch {
            latent_channels: 2,
            width0: 8,
            width1: 16,
            temb_dim: 8,
            num_classes: None,
            triplane_mix: false,
        };
        let d: Denoiser<f64> = Denoiser::init(arch, &mut rng_init);
        let s = NoiseSchedule::linear(8, 0.01, 0.2).unwrap();
        let a = sample(&d, &s, &[2, 8, 8], 2, &mut rng1, None).unwrap();
        let b = sample(&d, &s, &[2, 8, 8], 2, &mut rng2, None).unwrap();
        assert_eq!(
            a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn gaussian_oracle_preserves_unit_marginals() {
        // For z0 ~ N(0,I) the optimal predictor is
        // eps_hat = sqrt(1 - abar_t) z_t, under which every ancestral
        // step maps N(0,I) to N(0,I) exactly. Checked empirically via
        // the chain z_t -> z_0 over a small latent.
        let steps = 50;
        let s = NoiseSchedule::linear(steps, 5e-4, 0.1).unwrap();
        let mut rng = Rng::seed_from(52);
        let n = 4000usize;
        let dim = 8usize;
        let mut z = randn::<f64>(&[n, dim], &mut rng);
        for t in (1..=steps).rev() {
            let eps_hat = z.mul_scalar((1.0 - s.alpha_bar(t).unwrap()).sqrt());
            let zeta = if t > 1 { randn::<f64>(&[n, dim], &mut rng) } else { Tensor::zeros(&[n, dim]) };
            z = ancestral_step(&z, t, &eps_hat, &zeta, &s).unwrap();
        }
        let d = z.data();
        for j in 0..dim {
            let mut sum = 0.0;
            let mut sq = 0.0;
            for i in 0..n {
                sum += d[i * dim + j];
                sq += d[i * dim + j] * d[i * dim + j];
            }
            let mean = sum / n as f64;
            let var = sq / n as f64 - mean * mean;
            assert!(mean.abs() < 0.08, "dim {j} mean {mean}");
            assert!((var - 1.0).abs() < 0.12, "dim {j} var {var}");
        }
    }
}
