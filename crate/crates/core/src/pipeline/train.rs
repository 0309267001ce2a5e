//! Two-stage training drivers and the resumable pipeline state.

use std::time::Instant;

use crate::diffusion::{denoise_loss, denoise_loss_triplane, Denoiser, EmaState, NoiseSchedule};
use crate::error::{DdmiError, Result};
use crate::field::CoordinateBatch;
use crate::nn::init::randn;
use crate::nn::optim::{AdamW, AdamWConfig};
use crate::nn::Params;
use crate::rng::Rng;
use crate::tensor::{no_grad, Tensor};
use crate::vae::{
    area_resample, multiscale_batch, D2cVae, Likelihood, MultiscaleBatch, ScaleVariable,
};

use super::checkpoint::Checkpoint;
use super::dataset::Dataset;
use super::generate::render_occupancy_logits;
use super::metrics::{iou_at_half, psnr, MetricsWriter};
use super::Config;

/// Everything a run owns: both models, both optimizers, EMA, and the
/// generator state. Checkpoints capture it completely.
pub struct PipelineState {
    pub cfg: Config,
    pub vae: D2cVae<f32>,
    pub opt1: AdamW<f32>,
    pub stage1_step: u64,
    pub denoiser: Option<Denoiser<f32>>,
    pub ema: Option<EmaState<f32>>,
    pub opt2: AdamW<f32>,
    pub stage2_step: u64,
    pub rng: Rng,
}

impl PipelineState {
    pub fn init(cfg: Config) -> Result<PipelineState> {
        cfg.validate()?;
        let mut rng = Rng::seed_from(cfg.seed);
        let vae = D2cVae::init(cfg.vae_arch(), &mut rng)?;
        let opt_cfg = AdamWConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, ..Default::default() };
        Ok(PipelineState {
            vae,
            opt1: AdamW::new(opt_cfg),
            stage1_step: 0,
            denoiser: None,
            ema: None,
            opt2: AdamW::new(opt_cfg),
            stage2_step: 0,
            rng,
            cfg,
        })
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.cfg.diffusion_steps, self.cfg.beta_start, self.cfg.beta_end)
    }

    // ── Checkpointing ─────────────────────────────────────────────

    pub fn to_checkpoint(&mut self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(self.cfg.dump());
        ck.rng_state = self.rng.state();
        ck.stage1_step = self.stage1_step;
        ck.stage2_step = self.stage2_step;

        let mut err = None;
        self.vae.visit_all(&mut |name, t| {
            if let Err(e) = ck.insert_tensor(name, t) {
                err.get_or_insert(e);
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        for (name, data) in self.opt1.export_state() {
            ck.insert(&format!("opt1.{name}"), super::checkpoint::TensorPayload::F32 {
                shape: vec![data.len()],
                data,
            })?;
        }
        if let Some(denoiser) = &mut self.denoiser {
            let mut err = None;
            denoiser.visit_trainable(&mut |name, t| {
                if let Err(e) = ck.insert_tensor(name, t) {
                    err.get_or_insert(e);
                }
            });
            if let Some(e) = err {
                return Err(e);
            }
            let ema = self
                .ema
                .as_ref()
                .ok_or_else(|| DdmiError::Checkpoint("denoiser without EMA state".into()))?;
            for (name, data) in ema.export() {
                let suffix = name.strip_prefix("ldm.").unwrap_or(&name);
                ck.insert(&format!("ldm.ema.{suffix}"), super::checkpoint::TensorPayload::F32 {
                    shape: vec![data.len()],
                    data,
                })?;
            }
            for (name, data) in self.opt2.export_state() {
                ck.insert(&format!("opt2.{name}"), super::checkpoint::TensorPayload::F32 {
                    shape: vec![data.len()],
                    data,
                })?;
            }
        }
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<PipelineState> {
        let cfg = Config::parse(&ck.config_text)?;
        let mut state = PipelineState::init(cfg)?;

        let mut missing: Option<String> = None;
        state.vae.visit_all(&mut |name, t| match ck.get(name) {
            Some(payload) => match payload.to_tensor::<f32>() {
                Ok(loaded) if loaded.shape() == t.shape() => *t = loaded.tracked(),
                _ => missing = Some(format!("{name} (shape mismatch)")),
            },
            None => missing = Some(name.to_string()),
        });
        if let Some(name) = missing {
            return Err(DdmiError::Checkpoint(format!("missing VAE tensor '{name}'")));
        }
        state.opt1.import_state(ck.stage1_step, payload_entries(ck, "opt1.")?);

        let has_denoiser = ck.names().any(|n| n.starts_with("ldm.") && !n.starts_with("ldm.ema."));
        if has_denoiser {
            let mut denoiser = Denoiser::init(state.cfg.denoiser_arch(), &mut Rng::seed_from(0));
            let mut missing: Option<String> = None;
            denoiser.visit_trainable(&mut |name, t| match ck.get(name) {
                Some(payload) => match payload.to_tensor::<f32>() {
                    Ok(loaded) if loaded.shape() == t.shape() => *t = loaded.tracked(),
                    _ => missing = Some(format!("{name} (shape mismatch)")),
                },
                None => missing = Some(name.to_string()),
            });
            if let Some(name) = missing {
                return Err(DdmiError::Checkpoint(format!("missing denoiser tensor '{name}'")));
            }
            let ema_entries: Vec<(String, Vec<f32>)> = ck
                .entries_under("ldm.ema.")
                .into_iter()
                .map(|(suffix, p)| match p {
                    super::checkpoint::TensorPayload::F32 { data, .. } => {
                        Ok((format!("ldm.{suffix}"), data.clone()))
                    }
                    _ => Err(DdmiError::Checkpoint("EMA tensors must be f32".into())),
                })
                .collect::<Result<_>>()?;
            if ema_entries.is_empty() {
                return Err(DdmiError::Checkpoint("checkpoint has denoiser but no EMA".into()));
            }
            state.ema = Some(EmaState::import(state.cfg.ema_decay, ema_entries)?);
            state.opt2.import_state(ck.stage2_step, payload_entries(ck, "opt2.")?);
            state.denoiser = Some(denoiser);
        }

        state.stage1_step = ck.stage1_step;
        state.stage2_step = ck.stage2_step;
        state.rng = Rng::from_state(ck.rng_state);
        Ok(state)
    }

    // ── Stage 1 ───────────────────────────────────────────────────

    /// Run `steps` more stage-1 optimizer steps. Returns the recorded
    /// (total, recon, kl) of the final step.
    pub fn train_stage1(
        &mut self,
        data: &Dataset,
        steps: u64,
        mut metrics: Option<&mut MetricsWriter>,
    ) -> Result<(f64, f64, f64)> {
        if data.is_empty() {
            return Err(DdmiError::Data("empty dataset".into()));
        }
        let (train_idx, _) = split_indices(&self.cfg, data.len());
        let started = Instant::now();
        let mut last = (0.0, 0.0, 0.0);
        let occupancy = self.cfg.is_occupancy();
        let mut voxel_cache: Vec<Option<Tensor<f32>>> = vec![None; data.len()];

        for _ in 0..steps {
            let step = self.stage1_step + 1;
            let lambda = self.lambda_at(step);
            self.opt1.cfg.lr = Self::lr_at(self.cfg.lr, step, self.cfg.stage1_steps);
            let parts = if occupancy {
                self.occupancy_step(data, &train_idx, &mut voxel_cache, lambda)?
            } else {
                self.image_step(data, &train_idx, lambda)?
            };
            if !parts.0.is_finite() {
                return Err(DdmiError::NonFinite { context: format!("stage-1 loss at step {step}") });
            }
            self.stage1_step = step;
            last = parts;
            if let Some(writer) = metrics.as_deref_mut() {
                if step % self.cfg.log_every == 0 || step == 1 {
                    writer.append(
                        step,
                        &[parts.0, parts.1, parts.2, lambda, started.elapsed().as_secs_f64()],
                    )?;
                }
            }
        }
        Ok(last)
    }

    fn lambda_at(&self, step: u64) -> f64 {
        let warmup = (self.cfg.lambda_warmup_frac * self.cfg.stage1_steps as f64).round() as u64;
        if warmup == 0 {
            return self.cfg.lambda_z;
        }
        self.cfg.lambda_z * (step as f64 / warmup as f64).min(1.0)
    }

    /// Learning-rate schedule shared by both stages: short linear
    /// warmup, constant to the halfway mark, then cosine decay to 1% of
    /// the base rate. The l1 objective in particular plateaus at an
    /// oscillation floor proportional to the step size, so the decay
    /// tail is what reaches high reconstruction quality.
    fn lr_at(base: f64, step: u64, total: u64) -> f64 {
        let warmup = 200.min(total / 20).max(1);
        if step <= warmup {
            return base * step as f64 / warmup as f64;
        }
        let decay_start = total * 2 / 5;
        if step <= decay_start || total <= decay_start {
            return base;
        }
        let t = (step - decay_start) as f64 / (total - decay_start) as f64;
        let floor = 0.01;
        base * (floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
    }

    fn image_step(&mut self, data: &Dataset, train_idx: &[usize], lambda: f64) -> Result<(f64, f64, f64)> {
        let cfg = &self.cfg;
        let r = cfg.base_resolution;
        let b = cfg.batch_size;
        let budget = (cfg.coord_budget / b).max(1);

        // one target resolution per batch
        let rho = if cfg.multiscale {
            match self.rng.below(3) {
                0 => r,
                1 => r + r / 2,
                _ => 2 * r,
            }
        } else {
            r
        };

        let mut enc_inputs = Vec::with_capacity(b);
        let mut coord_batches = Vec::with_capacity(b);
        let mut target_parts = Vec::with_capacity(b);
        let mut scale = 1.0;
        for _ in 0..b {
            let idx = train_idx[self.rng.below(train_idx.len())];
            let source = data.source_image(idx, r)?;
            let ms = multiscale_at(&source, r, rho, &mut self.rng)?;
            scale = ms.scale;
            let (coords, values) = subsample_rows(&ms, budget, &mut self.rng)?;
            enc_inputs.push(area_resample(&source, r, r)?.reshape(&[1, 3, r, r])?);
            coord_batches.push(CoordinateBatch::new(coords)?);
            target_parts.push(values);
        }
        let x = if b == 1 {
            enc_inputs.into_iter().next().expect("one item")
        } else {
            Tensor::concat(&enc_inputs, 0)?
        };
        let targets = if target_parts.len() == 1 {
            target_parts.into_iter().next().expect("one item")
        } else {
            Tensor::concat(&target_parts, 0)?
        };

        let latent_hw = cfg.vae_arch().latent_hw();
        let noise = randn::<f32>(&[b, cfg.latent_channels, latent_hw, latent_hw], &mut self.rng);
        let parts = self.vae.loss(
            &x,
            &coord_batches,
            &targets,
            ScaleVariable::new(scale)?,
            Likelihood::GaussianL1,
            lambda,
            Some(&noise),
        )?;
        let grads = parts.total.backward()?;
        self.opt1.step(&mut self.vae, &grads);
        self.vae.post_step();
        Ok((parts.total.item() as f64, parts.recon.item() as f64, parts.kl.item() as f64))
    }

    fn occupancy_step(
        &mut self,
        data: &Dataset,
        train_idx: &[usize],
        voxel_cache: &mut [Option<Tensor<f32>>],
        lambda: f64,
    ) -> Result<(f64, f64, f64)> {
        let cfg = &self.cfg;
        let res = cfg.base_resolution;
        let b = cfg.batch_size;
        let budget = (cfg.coord_budget / b).max(1);

        let mut voxel_parts = Vec::with_capacity(b);
        let mut coord_batches = Vec::with_capacity(b);
        let mut target_parts = Vec::with_capacity(b);
        for _ in 0..b {
            let idx = train_idx[self.rng.below(train_idx.len())];
            if voxel_cache[idx].is_none() {
                voxel_cache[idx] = Some(data.shape(idx)?.voxelize(res)?);
            }
            let vox = voxel_cache[idx].as_ref().expect("cached");
            voxel_parts.push(vox.reshape(&[1, res, res, res])?);

            // continuous supervision from the analytic oracle
            let shape = data.shape(idx)?;
            let mut coords = Vec::with_capacity(budget * 3);
            let mut values = Vec::with_capacity(budget);
            for _ in 0..budget {
                let c = [
                    self.rng.uniform_in(-1.0, 1.0),
                    self.rng.uniform_in(-1.0, 1.0),
                    self.rng.uniform_in(-1.0, 1.0),
                ];
                coords.extend(c.iter().map(|&v| v as f32));
                values.push(shape.occupancy(c) as f32);
            }
            coord_batches.push(CoordinateBatch::new(Tensor::from_vec(coords, &[budget, 3])?)?);
            target_parts.push(Tensor::from_vec(values, &[budget, 1])?);
        }
        let voxels = if b == 1 {
            voxel_parts.into_iter().next().expect("one item")
        } else {
            Tensor::concat(&voxel_parts, 0)?
        };
        let targets = if target_parts.len() == 1 {
            target_parts.into_iter().next().expect("one item")
        } else {
            Tensor::concat(&target_parts, 0)?
        };

        let latent_hw = cfg.vae_arch().latent_hw();
        let lshape = [b, cfg.latent_channels, latent_hw, latent_hw];
        let noise: [Tensor<f32>; 3] = [
            randn::<f32>(&lshape, &mut self.rng),
            randn::<f32>(&lshape, &mut self.rng),
            randn::<f32>(&lshape, &mut self.rng),
        ];
        let parts = self.vae.loss_triplane(&voxels, &coord_batches, &targets, lambda, Some(&noise))?;
        let grads = parts.total.backward()?;
        self.opt1.step(&mut self.vae, &grads);
        self.vae.post_step();
        Ok((parts.total.item() as f64, parts.recon.item() as f64, parts.kl.item() as f64))
    }

    // ── Stage 2 ───────────────────────────────────────────────────

    /// Run `steps` more denoiser steps over the frozen stage-1 latents.
    /// Returns every step's loss. Labels from the dataset are used when
    /// the config enables class conditioning.
    pub fn train_stage2(
        &mut self,
        data: &Dataset,
        steps: u64,
        mut metrics: Option<&mut MetricsWriter>,
    ) -> Result<Vec<f64>> {
        if data.is_empty() {
            return Err(DdmiError::Data("empty dataset".into()));
        }
        let stage1_before = params_fingerprint(&mut self.vae);
        let sched = self.schedule()?;
        let (train_idx, _) = split_indices(&self.cfg, data.len());
        let occupancy = self.cfg.is_occupancy();
        let conditional = self.cfg.num_classes > 0;

        if self.denoiser.is_none() {
            let mut init_rng = self.rng.split();
            let mut denoiser = Denoiser::init(self.cfg.denoiser_arch(), &mut init_rng);
            self.ema = Some(EmaState::from_params(&mut denoiser, self.cfg.ema_decay)?);
            self.denoiser = Some(denoiser);
        }

        // Posterior statistics of every training item under the frozen
        // encoder, computed once.
        let posteriors = no_grad(|| -> Result<Vec<PosteriorStat>> {
            let r = self.cfg.base_resolution;
            train_idx
                .iter()
                .map(|&idx| {
                    if occupancy {
                        let vox = data.shape(idx)?.voxelize(r)?.reshape(&[1, r, r, r])?;
                        let ps = self.vae.encode_triplane(&vox)?;
                        Ok(PosteriorStat::TriPlane(ps.map(|p| (p.mean.detach(), p.logvar.detach()))))
                    } else {
                        let src = data.source_image(idx, r)?;
                        let x = area_resample(&src, r, r)?.reshape(&[1, 3, r, r])?;
                        let p = self.vae.encoder.encode(&x)?;
                        Ok(PosteriorStat::Single {
                            mean: p.mean.detach(),
                            logvar: p.logvar.detach(),
                            label: data.label(idx),
                        })
                    }
                })
                .collect()
        })?;

        let started = Instant::now();
        let mut losses = Vec::with_capacity(steps as usize);
        for _ in 0..steps {
            let step = self.stage2_step + 1;
            self.opt2.cfg.lr = Self::lr_at(self.cfg.lr, step, self.cfg.stage2_steps);
            let b = self.cfg.stage2_batch;
            let picks: Vec<usize> = (0..b).map(|_| self.rng.below(posteriors.len())).collect();

            let loss = if occupancy {
                let mut planes: [Vec<Tensor<f32>>; 3] = [Vec::new(), Vec::new(), Vec::new()];
                for &p in &picks {
                    let PosteriorStat::TriPlane(stats) = &posteriors[p] else {
                        return Err(DdmiError::Data("posterior kind mismatch".into()));
                    };
                    for (axis, (mean, logvar)) in stats.iter().enumerate() {
                        planes[axis].push(reparam(mean, logvar, &mut self.rng)?);
                    }
                }
                let z: [Tensor<f32>; 3] = [
                    Tensor::concat(&planes[0], 0)?,
                    Tensor::concat(&planes[1], 0)?,
                    Tensor::concat(&planes[2], 0)?,
                ];
                denoise_loss_triplane(&z, &sched, self.denoiser.as_ref().expect("denoiser"), &mut self.rng)?
            } else {
                let mut zs = Vec::with_capacity(b);
                let mut labels = Vec::with_capacity(b);
                for &p in &picks {
                    let PosteriorStat::Single { mean, logvar, label } = &posteriors[p] else {
                        return Err(DdmiError::Data("posterior kind mismatch".into()));
                    };
                    zs.push(reparam(mean, logvar, &mut self.rng)?);
                    labels.push(label.unwrap_or(0));
                }
                let z0 = if zs.len() == 1 { zs.into_iter().next().expect("one") } else { Tensor::concat(&zs, 0)? };
                denoise_loss(
                    &z0,
                    &sched,
                    self.denoiser.as_ref().expect("denoiser"),
                    &mut self.rng,
                    conditional.then_some(&labels[..]),
                )?
            };
            if !loss.item().is_finite() {
                return Err(DdmiError::NonFinite { context: format!("stage-2 loss at step {step}") });
            }
            let grads = loss.backward()?;
            let denoiser = self.denoiser.as_mut().expect("denoiser");
            self.opt2.step(denoiser, &grads);
            self.ema.as_mut().expect("ema").update(denoiser)?;
            self.stage2_step = step;
            losses.push(loss.item() as f64);
            if let Some(writer) = metrics.as_deref_mut() {
                if step % self.cfg.log_every == 0 || step == 1 {
                    writer.append(
                        step,
                        &[*losses.last().expect("loss"), started.elapsed().as_secs_f64()],
                    )?;
                }
            }
        }

        // stage-1 parameters must be untouched, bit for bit
        let stage1_after = params_fingerprint(&mut self.vae);
        if stage1_before != stage1_after {
            return Err(DdmiError::Data("stage-2 training mutated stage-1 parameters".into()));
        }
        Ok(losses)
    }

    /// Denoiser with the EMA shadow weights written in (sampling-time
    /// network).
    pub fn ema_denoiser(&self) -> Result<Denoiser<f32>> {
        let live = self
            .denoiser
            .as_ref()
            .ok_or_else(|| DdmiError::Checkpoint("checkpoint has no trained denoiser".into()))?;
        let mut copy = live.clone();
        self.ema
            .as_ref()
            .ok_or_else(|| DdmiError::Checkpoint("missing EMA state".into()))?
            .write_into(&mut copy)?;
        Ok(copy)
    }

    // ── Evaluation ────────────────────────────────────────────────

    /// Mean reconstruction quality over a set of indices: PSNR for
    /// images, IoU at probability 0.5 for occupancy.
    pub fn eval_reconstruction(&self, data: &Dataset, indices: &[usize]) -> Result<f64> {
        no_grad(|| {
            let r = self.cfg.base_resolution;
            let mut acc = 0.0;
            for &idx in indices {
                if self.cfg.is_occupancy() {
                    let vox = data.shape(idx)?.voxelize(r)?;
                    let input = vox.reshape(&[1, r, r, r])?;
                    let ps = self.vae.encode_triplane(&input)?;
                    let z = [ps[0].mean.clone(), ps[1].mean.clone(), ps[2].mean.clone()];
                    let sets = self.vae.decode_triplane(&z)?;
                    let logits = render_occupancy_logits(&self.vae, &sets[0], r)?;
                    acc += iou_at_half(logits.data(), vox.data())?;
                } else {
                    let src = data.source_image(idx, r)?;
                    let x = area_resample(&src, r, r)?;
                    let recon = super::generate::reconstruct_image(&self.vae, &x)?;
                    acc += psnr(recon.data(), x.data())?;
                }
            }
            Ok(acc / indices.len() as f64)
        })
    }
}

enum PosteriorStat {
    Single { mean: Tensor<f32>, logvar: Tensor<f32>, label: Option<usize> },
    TriPlane([(Tensor<f32>, Tensor<f32>); 3]),
}

fn reparam(mean: &Tensor<f32>, logvar: &Tensor<f32>, rng: &mut Rng) -> Result<Tensor<f32>> {
    let noise = randn::<f32>(mean.shape(), rng);
    mean.add(&logvar.mul_scalar(0.5).exp().mul(&noise)?)
}

fn payload_entries(ck: &Checkpoint, prefix: &str) -> Result<Vec<(String, Vec<f32>)>> {
    ck.entries_under(prefix)
        .into_iter()
        .map(|(name, p)| match p {
            super::checkpoint::TensorPayload::F32 { data, .. } => Ok((name, data.clone())),
            _ => Err(DdmiError::Checkpoint("optimizer state must be f32".into())),
        })
        .collect()
}

/// Deterministic train/holdout split from the config seed.
pub fn split_indices(cfg: &Config, len: usize) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = Rng::seed_from(cfg.seed ^ 0x517_1e55);
    rng.shuffle(&mut order);
    let holdout = ((len as f64 * cfg.holdout_fraction).round() as usize).min(len.saturating_sub(1));
    let held = order[..holdout].to_vec();
    let train = order[holdout..].to_vec();
    (train, held)
}

/// FNV-1a over the raw bytes of every tensor reachable via `visit_all`.
pub fn params_fingerprint<P: Params<f32>>(params: &mut P) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    params.visit_all(&mut |_, t| {
        for v in t.data() {
            for byte in v.to_le_bytes() {
                hash ^= byte as u64;
                hash = hash.wrapping_mul(0x1000_0000_01b3);
            }
        }
    });
    hash
}

/// [`multiscale_batch`] with the target resolution already drawn
/// (shared across a batch).
fn multiscale_at(
    source: &Tensor<f32>,
    base_r: usize,
    rho: usize,
    rng: &mut Rng,
) -> Result<MultiscaleBatch<f32>> {
    if rho == base_r {
        // no crop randomness needed; delegate through the general path
        // by drawing until rho matches would distort the stream, so
        // build directly
        let resampled = area_resample(source, rho, rho)?;
        let c = resampled.shape()[0];
        let d = resampled.data();
        let mut values = Vec::with_capacity(base_r * base_r * c);
        let mut coords = Vec::with_capacity(base_r * base_r * 2);
        let denom = (rho - 1) as f64;
        for i in 0..base_r {
            for j in 0..base_r {
                coords.push((-1.0 + 2.0 * i as f64 / denom) as f32);
                coords.push((-1.0 + 2.0 * j as f64 / denom) as f32);
                for ch in 0..c {
                    values.push(d[(ch * rho + i) * rho + j]);
                }
            }
        }
        return Ok(MultiscaleBatch {
            values: Tensor::from_vec(values, &[base_r * base_r, c])?,
            coords: Tensor::from_vec(coords, &[base_r * base_r, 2])?,
            scale: 1.0,
            rho,
            offset: (0, 0),
        });
    }
    // draw crops through the same entry point used everywhere else
    loop {
        let b = multiscale_batch(source, base_r, rng)?;
        if b.rho == rho {
            return Ok(b);
        }
    }
}

/// Pick `budget` coordinate rows (all rows when they fit).
fn subsample_rows(
    ms: &MultiscaleBatch<f32>,
    budget: usize,
    rng: &mut Rng,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let rows = ms.coords.shape()[0];
    if rows <= budget {
        return Ok((ms.coords.detach(), ms.values.detach()));
    }
    let mut order: Vec<usize> = (0..rows).collect();
    for i in 0..budget {
        let j = i + rng.below(rows - i);
        order.swap(i, j);
    }
    let chosen = &order[..budget];
    let cd = ms.coords.data();
    let vd = ms.values.data();
    let ch = ms.values.shape()[1];
    let mut coords = Vec::with_capacity(budget * 2);
    let mut values = Vec::with_capacity(budget * ch);
    for &row in chosen {
        coords.extend_from_slice(&cd[row * 2..(row + 1) * 2]);
        values.extend_from_slice(&vd[row * ch..(row + 1) * ch]);
    }
    Ok((
        Tensor::from_vec(coords, &[budget, 2])?,
        Tensor::from_vec(values, &[budget, ch])?,
    ))
}
