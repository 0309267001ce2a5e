//! Latent denoising diffusion: schedule, noise-prediction network,
//! training loss, EMA, and the ancestral sampler.

mod denoiser;
mod ema;
mod sampler;
mod schedule;

pub use denoiser::{Denoiser, DenoiserArch};
pub use ema::EmaState;
pub use sampler::{ancestral_step, cfg_combine, sample, Guidance};
pub use schedule::{forward_diffuse, forward_diffuse_per_item, NoiseSchedule};

use crate::error::Result;
use crate::nn::init::randn;
use crate::rng::Rng;
use crate::tensor::{Element, Tensor};

/// Probability of replacing the class label with the null class during
/// guidance training.
pub const P_UNCOND: f64 = 0.1;

/// Noise-prediction loss with unit weighting: squared error summed over
/// latent dimensions, averaged over the batch. Steps and noise are
/// drawn per item; labels, when given, are dropped to the null class
/// with probability [`P_UNCOND`].
pub fn denoise_loss<E: Element>(
    z0: &Tensor<E>,
    sched: &NoiseSchedule,
    denoiser: &Denoiser<E>,
    rng: &mut Rng,
    labels: Option<&[usize]>,
) -> Result<Tensor<E>> {
    let b = z0.shape()[0];
    let ts: Vec<usize> = (0..b).map(|_| 1 + rng.below(sched.steps())).collect();
    let eps = randn::<E>(z0.shape(), rng);
    let z_t = forward_diffuse_per_item(z0, &ts, &eps, sched)?;

    let dropped: Option<Vec<usize>> = labels.map(|ls| {
        let null = denoiser.null_class().unwrap_or(0);
        ls.iter()
            .map(|&l| if rng.uniform() < P_UNCOND { null } else { l })
            .collect()
    });
    let pred = denoiser.forward(&z_t, &ts, dropped.as_deref())?;
    // ||eps - pred||^2 summed over dims, mean over batch
    Ok(eps.sub(&pred)?.square().sum().mul_scalar(1.0 / b as f64))
}

/// Tri-plane variant: one step/noise draw per item, shared across the
/// three planes of that item; losses summed over planes.
pub fn denoise_loss_triplane<E: Element>(
    planes: &[Tensor<E>; 3],
    sched: &NoiseSchedule,
    denoiser: &Denoiser<E>,
    rng: &mut Rng,
) -> Result<Tensor<E>> {
    let b = planes[0].shape()[0];
    let ts: Vec<usize> = (0..b).map(|_| 1 + rng.below(sched.steps())).collect();
    let eps: [Tensor<E>; 3] = [
        randn::<E>(planes[0].shape(), rng),
        randn::<E>(planes[1].shape(), rng),
        randn::<E>(planes[2].shape(), rng),
    ];
    let z_t: [Tensor<E>; 3] = [
        forward_diffuse_per_item(&planes[0], &ts, &eps[0], sched)?,
        forward_diffuse_per_item(&planes[1], &ts, &eps[1], sched)?,
        forward_diffuse_per_item(&planes[2], &ts, &eps[2], sched)?,
    ];
    let preds = denoiser.forward_triplane(&z_t, &ts, None)?;
    let mut loss = eps[0].sub(&preds[0])?.square().sum();
    loss = loss.add(&eps[1].sub(&preds[1])?.square().sum())?;
    loss = loss.add(&eps[2].sub(&preds[2])?.square().sum())?;
    Ok(loss.mul_scalar(1.0 / b as f64))
}
