//! Run configuration: a flat TOML file with strict validation.

use serde::{Deserialize, Serialize};

use crate::diffusion::DenoiserArch;
use crate::error::{DdmiError, Result};
use crate::vae::VaeArch;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    // dataset
    pub dataset_kind: String,
    pub dataset_path: String,
    pub dataset_size: usize,
    pub num_classes: usize,
    pub base_resolution: usize,
    pub holdout_fraction: f64,

    // shared model dimensions
    pub latent_channels: usize,
    pub enc_widths: Vec<usize>,
    pub dec_widths: Vec<usize>,
    pub embed_channels: usize,
    pub mlp_blocks: usize,
    pub spectral_norm: bool,
    pub scale_fourier: usize,
    pub scale_hidden: usize,
    /// false = ablation baseline: one basis field, no coarse-to-fine
    /// conditioning.
    pub hdbf: bool,

    // stage 1
    pub stage1_steps: u64,
    pub batch_size: usize,
    /// Random coordinates per optimization step (split across the
    /// batch); the full grid is used when it is no larger.
    pub coord_budget: usize,
    pub lambda_z: f64,
    /// Fraction of stage-1 steps over which lambda_z ramps 0 -> final.
    pub lambda_warmup_frac: f64,
    pub multiscale: bool,
    pub lr: f64,
    pub weight_decay: f64,

    // stage 2
    pub stage2_steps: u64,
    pub stage2_batch: usize,
    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub ema_decay: f64,
    pub denoiser_width0: usize,
    pub denoiser_width1: usize,
    pub denoiser_temb: usize,
    pub triplane_mix: bool,

    // bookkeeping
    pub seed: u64,
    pub checkpoint_every: u64,
    pub log_every: u64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            dataset_kind: "synthetic-images".into(),
            dataset_path: String::new(),
            dataset_size: 512,
            num_classes: 0,
            base_resolution: 64,
            holdout_fraction: 0.1,

            latent_channels: 4,
            enc_widths: vec![16, 32, 48],
            dec_widths: vec![48, 32, 16],
            embed_channels: 48,
            mlp_blocks: 4,
            spectral_norm: true,
            scale_fourier: 4,
            scale_hidden: 32,
            hdbf: true,

            stage1_steps: 20_000,
            batch_size: 1,
            coord_budget: 4096,
            lambda_z: 1e-5,
            lambda_warmup_frac: 0.3,
            multiscale: true,
            lr: 2e-4,
            weight_decay: 1e-4,

            stage2_steps: 20_000,
            stage2_batch: 8,
            diffusion_steps: 200,
            beta_start: 5e-4,
            beta_end: 0.1,
            ema_decay: 0.999,
            denoiser_width0: 32,
            denoiser_width1: 64,
            denoiser_temb: 64,
            triplane_mix: true,

            seed: 0,
            checkpoint_every: 2000,
            log_every: 100,
        }
    }
}

/// Valid dataset kinds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    SyntheticImages,
    ImageFolder,
    SyntheticOccupancy,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let cfg: Config =
            toml::from_str(text).map_err(|e| DdmiError::Config(format!("parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DdmiError::Config(format!("cannot read {}: {e}", path.display())))?;
        Config::parse(&text)
    }

    pub fn dump(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn kind(&self) -> Result<DatasetKind> {
        match self.dataset_kind.as_str() {
            "synthetic-images" => Ok(DatasetKind::SyntheticImages),
            "image-folder" => Ok(DatasetKind::ImageFolder),
            "synthetic-occupancy" => Ok(DatasetKind::SyntheticOccupancy),
            other => Err(DdmiError::Config(format!("unknown dataset_kind '{other}'"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.kind()?;
        if kind == DatasetKind::ImageFolder && self.dataset_path.is_empty() {
            return Err(DdmiError::Config("image-folder needs dataset_path".into()));
        }
        if self.dataset_size == 0 && kind != DatasetKind::ImageFolder {
            return Err(DdmiError::Config("dataset_size must be positive".into()));
        }
        if self.base_resolution < 8 {
            return Err(DdmiError::Config("base_resolution must be at least 8".into()));
        }
        if !(0.0..0.5).contains(&self.holdout_fraction) {
            return Err(DdmiError::Config("holdout_fraction must be in [0, 0.5)".into()));
        }
        if self.batch_size == 0 || self.coord_budget == 0 || self.stage2_batch == 0 {
            return Err(DdmiError::Config("batch sizes and coord_budget must be positive".into()));
        }
        if !(self.lambda_z >= 0.0) || !(0.0..=1.0).contains(&self.lambda_warmup_frac) {
            return Err(DdmiError::Config("invalid lambda_z schedule".into()));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(DdmiError::Config("invalid optimizer settings".into()));
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return Err(DdmiError::Config("ema_decay must be in (0,1)".into()));
        }
        if self.diffusion_steps == 0
            || !(self.beta_start > 0.0)
            || !(self.beta_end < 1.0)
            || self.beta_start > self.beta_end
        {
            return Err(DdmiError::Config("invalid diffusion schedule".into()));
        }
        for &w in self.enc_widths.iter().chain(&self.dec_widths).chain([
            &self.denoiser_width0,
            &self.denoiser_width1,
        ]) {
            if w == 0 || (w >= 8 && w % 8 != 0) {
                return Err(DdmiError::Config(format!(
                    "channel width {w} must be under 8 or divisible by 8 (normalization groups)"
                )));
            }
        }
        if self.denoiser_temb % 2 != 0 {
            return Err(DdmiError::Config("denoiser_temb must be even".into()));
        }
        self.vae_arch().validate()?;
        // latent must survive one pooling level in the denoiser
        if self.vae_arch().latent_hw() % 2 != 0 {
            return Err(DdmiError::Config("latent extent must be even for the denoiser".into()));
        }
        Ok(())
    }

    pub fn vae_arch(&self) -> VaeArch {
        let occupancy = self.dataset_kind == "synthetic-occupancy";
        VaeArch {
            in_channels: if occupancy { 1 } else { 3 },
            out_channels: if occupancy { 1 } else { 3 },
            base_resolution: self.base_resolution,
            latent_channels: self.latent_channels,
            enc_widths: self.enc_widths.clone(),
            dec_widths: self.dec_widths.clone(),
            embed_channels: self.embed_channels,
            mlp_blocks: self.mlp_blocks,
            spectral_norm: self.spectral_norm,
            scale_fourier: self.scale_fourier,
            scale_hidden: self.scale_hidden,
            single_field: !self.hdbf,
        }
    }

    pub fn denoiser_arch(&self) -> DenoiserArch {
        DenoiserArch {
            latent_channels: self.latent_channels,
            width0: self.denoiser_width0,
            width1: self.denoiser_width1,
            temb_dim: self.denoiser_temb,
            num_classes: (self.num_classes > 0).then_some(self.num_classes),
            triplane_mix: self.triplane_mix,
        }
    }

    pub fn is_occupancy(&self) -> bool {
        self.dataset_kind == "synthetic-occupancy"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = Config::default();
        cfg.validate().unwrap();
        let text = cfg.dump();
        let back = Config::parse(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut text = Config::default().dump();
        text.push_str("\nnot_a_real_key = 3\n");
        match Config::parse(&text) {
            Err(DdmiError::Config(msg)) => assert!(msg.contains("not_a_real_key"), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn field_values_validated() {
        let mut cfg = Config::default();
        cfg.ema_decay = 1.5;
        assert!(cfg.validate().is_err());

        let mut cfg = Config::default();
        cfg.dataset_kind = "mystery".into();
        assert!(cfg.validate().is_err());

        let mut cfg = Config::default();
        cfg.enc_widths = vec![24, 36, 48]; // 36 breaks group norm
        assert!(cfg.validate().is_err());

        let mut cfg = Config::default();
        cfg.beta_start = 0.5;
        cfg.beta_end = 0.1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn partial_files_fill_defaults() {
        let cfg = Config::parse("base_resolution = 32\nseed = 7\n").unwrap();
        assert_eq!(cfg.base_resolution, 32);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.stage1_steps, Config::default().stage1_steps);
    }
}
