//! Sampling, arbitrary-resolution rendering, decomposition analysis,
//! and reconstruction evaluation.

use std::path::Path;

use crate::diffusion::{sample, Guidance};
use crate::error::{DdmiError, Result};
use crate::field::{BasisFieldSet, CoordinateBatch};
use crate::rng::Rng;
use crate::tensor::{no_grad, Tensor};
use crate::vae::{D2cVae, ScaleVariable};

use super::grid::make_grid;
use super::imageio::{write_pgm, write_png};
use super::metrics::fft_band_energy;
use super::train::PipelineState;

/// Rows per read-out chunk; bounds the activation footprint when
/// rendering large grids.
const CHUNK_ROWS: usize = 8192;

/// Evaluate a decoded basis-field set over the full `rho x rho` lattice
/// with `s = r / rho`; returns `[out, rho, rho]`.
pub fn render_sets_image(
    vae: &D2cVae<f32>,
    set: &BasisFieldSet<f32>,
    base_r: usize,
    rho: usize,
) -> Result<Tensor<f32>> {
    no_grad(|| {
        let s = ScaleVariable::new(base_r as f64 / rho as f64)?;
        let grid = make_grid::<f32>(&[rho, rho])?;
        let out_ch = vae.readout.out_channels;
        let mut rows: Vec<f32> = Vec::with_capacity(rho * rho * out_ch);
        let coords = grid.tensor();
        let total = rho * rho;
        let mut start = 0usize;
        while start < total {
            let len = CHUNK_ROWS.min(total - start);
            let chunk = CoordinateBatch::new(coords.narrow(0, start, len)?)?;
            let pred = vae.readout_sets(
                std::slice::from_ref(set),
                std::slice::from_ref(&chunk),
                s,
            )?;
            rows.extend_from_slice(pred.data());
            start += len;
        }
        // [rows, out] -> [out, rho, rho]
        let mut data = vec![0.0f32; out_ch * total];
        for i in 0..total {
            for c in 0..out_ch {
                data[c * total + i] = rows[i * out_ch + c];
            }
        }
        Tensor::from_vec(data, &[out_ch, rho, rho])
    })
}

/// Decode one latent `[1, Cz, h, w]` and render it at `rho x rho`.
pub fn render_latent_image(
    vae: &D2cVae<f32>,
    z: &Tensor<f32>,
    base_r: usize,
    rho: usize,
) -> Result<Tensor<f32>> {
    no_grad(|| {
        if vae.arch().single_field {
            return render_single_field(vae, z, base_r, rho);
        }
        let sets = vae.decoder.decode(z)?;
        render_sets_image(vae, &sets[0], base_r, rho)
    })
}

fn render_single_field(
    vae: &D2cVae<f32>,
    z: &Tensor<f32>,
    base_r: usize,
    rho: usize,
) -> Result<Tensor<f32>> {
    let s = ScaleVariable::new(base_r as f64 / rho as f64)?;
    let grid = make_grid::<f32>(&[rho, rho])?;
    let chunk = CoordinateBatch::new(grid.tensor().detach())?;
    let pred = vae.readout_latent(z, std::slice::from_ref(&chunk), s)?;
    let out_ch = vae.readout.out_channels;
    let total = rho * rho;
    let mut data = vec![0.0f32; out_ch * total];
    for i in 0..total {
        for c in 0..out_ch {
            data[c * total + i] = pred.data()[i * out_ch + c];
        }
    }
    Tensor::from_vec(data, &[out_ch, rho, rho])
}

/// Encode an image `[3, r, r]` with the posterior mean and render it
/// back at its own resolution.
pub fn reconstruct_image(vae: &D2cVae<f32>, x: &Tensor<f32>) -> Result<Tensor<f32>> {
    no_grad(|| {
        let r = x.shape()[1];
        let input = x.reshape(&[1, 3, r, r])?;
        let posterior = vae.encoder.encode(&input)?;
        render_latent_image(vae, &posterior.mean, r, r)
    })
}

/// Occupancy logits of a tri-plane set over the full voxel lattice,
/// `[res, res, res]`.
pub fn render_occupancy_logits(
    vae: &D2cVae<f32>,
    set: &BasisFieldSet<f32>,
    res: usize,
) -> Result<Tensor<f32>> {
    no_grad(|| {
        let s = ScaleVariable::new(1.0)?;
        let grid = make_grid::<f32>(&[res, res, res])?;
        let coords = grid.tensor();
        let total = res * res * res;
        let mut logits: Vec<f32> = Vec::with_capacity(total);
        let mut start = 0usize;
        while start < total {
            let len = CHUNK_ROWS.min(total - start);
            let chunk = CoordinateBatch::new(coords.narrow(0, start, len)?)?;
            let pred = vae.readout_sets(
                std::slice::from_ref(set),
                std::slice::from_ref(&chunk),
                s,
            )?;
            logits.extend_from_slice(pred.data());
            start += len;
        }
        Tensor::from_vec(logits, &[res, res, res])
    })
}

/// A generated sample: the rendered signal plus the latent that made it.
pub struct GeneratedSample {
    pub image: Tensor<f32>,
    pub latent: Tensor<f32>,
}

/// Sample `count` latents with the EMA denoiser and render each at
/// `rho x rho`. The RNG stream depends only on the seed, never on the
/// render resolution, so the same seed at two resolutions shares its
/// latents.
pub fn generate_images(
    state: &PipelineState,
    rho: usize,
    count: usize,
    seed: u64,
    guidance: Option<Guidance>,
) -> Result<Vec<GeneratedSample>> {
    if rho < 8 {
        return Err(DdmiError::Config(format!("generation resolution {rho} below 8")));
    }
    let denoiser = state.ema_denoiser()?;
    let sched = state.schedule()?;
    let hw = state.cfg.vae_arch().latent_hw();
    let mut rng = Rng::seed_from(seed);
    let z0 = sample(
        &denoiser,
        &sched,
        &[state.cfg.latent_channels, hw, hw],
        count,
        &mut rng,
        guidance,
    )?;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let latent = z0.narrow(0, i, 1)?.detach();
        let image = render_latent_image(&state.vae, &latent, state.cfg.base_resolution, rho)?;
        if !image.all_finite() {
            return Err(DdmiError::NonFinite { context: format!("generated sample {i}") });
        }
        out.push(GeneratedSample { image, latent });
    }
    Ok(out)
}

/// Sample occupancy shapes (tri-plane latents) and return logit grids.
pub fn generate_occupancy(
    state: &PipelineState,
    res: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Tensor<f32>>> {
    let denoiser = state.ema_denoiser()?;
    let sched = state.schedule()?;
    let hw = state.cfg.vae_arch().latent_hw();
    let mut rng = Rng::seed_from(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        // one reverse chain per plane triple, shared noise stream
        let planes = no_grad(|| -> Result<[Tensor<f32>; 3]> {
            let shape = [1usize, state.cfg.latent_channels, hw, hw];
            let mut zs: [Tensor<f32>; 3] = [
                crate::nn::init::randn(&shape, &mut rng),
                crate::nn::init::randn(&shape, &mut rng),
                crate::nn::init::randn(&shape, &mut rng),
            ];
            for t in (1..=sched.steps()).rev() {
                let preds = denoiser.forward_triplane(&zs, &[t], None)?;
                for p in 0..3 {
                    let zeta = if t > 1 {
                        crate::nn::init::randn(&shape, &mut rng)
                    } else {
                        Tensor::zeros(&shape)
                    };
                    zs[p] = crate::diffusion::ancestral_step(&zs[p], t, &preds[p], &zeta, &sched)?;
                    if !zs[p].all_finite() {
                        return Err(DdmiError::NonFiniteSample { step: t });
                    }
                }
            }
            Ok(zs)
        })?;
        let sets = state.vae.decode_triplane(&planes)?;
        out.push(render_occupancy_logits(&state.vae, &sets[0], res)?);
    }
    Ok(out)
}

/// Spectral report of one decomposed generation.
pub struct DecompositionReport {
    pub image: Tensor<f32>,
    pub low: f64,
    pub mid: f64,
    pub high: f64,
}

/// Generate with all basis-field scales except `keep` zeroed, plus the
/// radial spectral energy split of the result.
pub fn decompose(
    state: &PipelineState,
    keep: usize,
    seed: u64,
) -> Result<DecompositionReport> {
    if state.cfg.vae_arch().single_field {
        return Err(DdmiError::Config("decomposition needs the multi-scale field model".into()));
    }
    let denoiser = state.ema_denoiser()?;
    let sched = state.schedule()?;
    let hw = state.cfg.vae_arch().latent_hw();
    let mut rng = Rng::seed_from(seed);
    let z0 = sample(
        &denoiser,
        &sched,
        &[state.cfg.latent_channels, hw, hw],
        1,
        &mut rng,
        None,
    )?;
    let sets = no_grad(|| state.vae.decoder.decode(&z0))?;
    let kept = sets[0].zero_scales(keep)?;
    let r = state.cfg.base_resolution;
    let image = render_sets_image(&state.vae, &kept, r, r)?;

    let hwpx = r * r;
    let d = image.data();
    let gray: Vec<f64> =
        (0..hwpx).map(|i| (d[i] + d[hwpx + i] + d[2 * hwpx + i]) as f64 / 3.0).collect();
    let (low, mid, high) = fft_band_energy(&gray, r, r);
    Ok(DecompositionReport { image, low, mid, high })
}

/// Write generated images as PNGs under `dir`.
pub fn write_image_samples(dir: &Path, samples: &[GeneratedSample]) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let path = dir.join(format!("sample_{i:03}.png"));
        write_png(&path, &s.image)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Write occupancy samples: middle z-slice PGM plus a raw voxel dump of
/// thresholded bytes (1 = inside), layout `[X, Y, Z]`.
pub fn write_occupancy_samples(dir: &Path, grids: &[Tensor<f32>]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, logits) in grids.iter().enumerate() {
        let res = logits.shape()[0];
        let d = logits.data();
        let mid = res / 2;
        // slice at z = mid over (x, y)
        let slice: Vec<f32> = (0..res * res)
            .map(|xy| {
                let (x, y) = (xy / res, xy % res);
                let logit = d[(x * res + y) * res + mid];
                if logit >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        write_pgm(&dir.join(format!("shape_{i:03}_midslice.pgm")), &slice, res, res)?;
        let bytes: Vec<u8> = d.iter().map(|&l| if l >= 0.0 { 1u8 } else { 0u8 }).collect();
        let tmp = super::imageio::temp_sibling(&dir.join(format!("shape_{i:03}.vox")));
        std::fs::write(&tmp, &bytes)?;
        std::fs::rename(&tmp, dir.join(format!("shape_{i:03}.vox")))?;
    }
    Ok(())
}
