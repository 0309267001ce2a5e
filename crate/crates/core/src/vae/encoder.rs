//! CNN encoder: discrete array in, grid posterior out.

use crate::error::{DdmiError, Result};
use crate::nn::{Conv2dLayer, GroupNormLayer, SpectralNorm};
use crate::rng::Rng;
use crate::tensor::{avgpool2x, Element, Tensor};

use super::VaeArch;

/// Mean and log-variance grids of the approximate posterior.
#[derive(Clone, Debug)]
pub struct LatentPosterior<E: Element = f32> {
    pub mean: Tensor<E>,
    pub logvar: Tensor<E>,
}

impl<E: Element> LatentPosterior<E> {
    /// z = mean + exp(logvar/2) * noise
    pub fn reparameterize(&self, noise: &Tensor<E>) -> Result<Tensor<E>> {
        if noise.shape() != self.mean.shape() {
            return Err(DdmiError::ShapeMismatch {
                expected: self.mean.shape().to_vec(),
                got: noise.shape().to_vec(),
            });
        }
        let std = self.logvar.mul_scalar(0.5).exp();
        self.mean.add(&std.mul(noise)?)
    }

    /// KL(q || N(0, I)): 0.5 * sum(mean^2 + e^logvar - 1 - logvar),
    /// averaged over the batch axis.
    pub fn kl_divergence(&self) -> Tensor<E> {
        let batch = self.mean.shape()[0] as f64;
        let m2 = self.mean.square();
        let ev = self.logvar.exp();
        let inner = m2.add(&ev).unwrap().add_scalar(-1.0).sub(&self.logvar).unwrap();
        inner.sum().mul_scalar(0.5 / batch)
    }
}

struct EncLevel<E: Element> {
    conv: Conv2dLayer<E>,
    norm: GroupNormLayer<E>,
    /// Transition into the next (coarser) level; absent on the last.
    down: Option<Conv2dLayer<E>>,
}

/// U-Net-style downsampling encoder. Input `[B, Cin, r, r]`, posterior
/// grids at `r / 2^(levels-1)`.
pub struct Encoder<E: Element = f32> {
    stem: Conv2dLayer<E>,
    levels: Vec<EncLevel<E>>,
    head: Conv2dLayer<E>,
    sn: Option<Vec<SpectralNorm<E>>>,
    pub base_resolution: usize,
    pub latent_channels: usize,
}

impl<E: Element> Encoder<E> {
    pub fn init(arch: &VaeArch, rng: &mut Rng) -> Self {
        let w = &arch.enc_widths;
        let stem = Conv2dLayer::init(arch.in_channels, w[0], 3, 1, 1, rng);
        let mut levels = Vec::with_capacity(w.len());
        for i in 0..w.len() {
            levels.push(EncLevel {
                conv: Conv2dLayer::init(w[i], w[i], 3, 1, 1, rng),
                norm: GroupNormLayer::init(w[i]),
                down: (i + 1 < w.len()).then(|| Conv2dLayer::init(w[i], w[i + 1], 3, 1, 1, rng)),
            });
        }
        let mut head = Conv2dLayer::init(w[w.len() - 1], 2 * arch.latent_channels, 3, 1, 1, rng);
        // Start the posterior tight: bias the log-variance channels to
        // -4 so early reconstruction gradients are not drowned by
        // reparameterization noise. The KL term then starts high and
        // falls as the posterior widens toward informative values.
        let mut head_bias = vec![E::ZERO; 2 * arch.latent_channels];
        for slot in head_bias.iter_mut().skip(arch.latent_channels) {
            *slot = E::from_f64(-4.0);
        }
        head.bias = Tensor::from_vec(head_bias, &[2 * arch.latent_channels])
            .expect("head bias shape")
            .tracked();
        let mut enc = Encoder {
            stem,
            levels,
            head,
            sn: None,
            base_resolution: arch.base_resolution,
            latent_channels: arch.latent_channels,
        };
        if arch.spectral_norm {
            enc.attach_spectral_norm(rng);
        }
        enc
    }

    fn attach_spectral_norm(&mut self, rng: &mut Rng) {
        let mut states = vec![SpectralNorm::init(&self.stem.weight, rng)];
        for level in &self.levels {
            states.push(SpectralNorm::init(&level.conv.weight, rng));
            if let Some(down) = &level.down {
                states.push(SpectralNorm::init(&down.weight, rng));
            }
        }
        states.push(SpectralNorm::init(&self.head.weight, rng));
        self.sn = Some(states);
    }

    /// Replace the posterior head with zeros (test hook: a zero image
    /// then encodes to an exactly-zero posterior).
    pub fn zero_head(&mut self) {
        let in_ch = self.head.weight.shape()[1];
        self.head = Conv2dLayer::init_zero(in_ch, 2 * self.latent_channels, 3, 1, 1);
        if let Some(sn) = &mut self.sn {
            // keep list length in sync; the zero weight has sigma 0 and
            // is excluded from normalization
            let last = sn.len() - 1;
            sn.truncate(last);
        }
    }

    fn conv_forward(
        &self,
        layer: &Conv2dLayer<E>,
        sn_index: &mut usize,
        x: &Tensor<E>,
    ) -> Result<Tensor<E>> {
        match &self.sn {
            Some(states) if *sn_index < states.len() => {
                let normalized = states[*sn_index].apply(&layer.weight)?;
                *sn_index += 1;
                layer.forward_with_weight(x, &normalized)
            }
            _ => layer.forward(x),
        }
    }

    pub fn encode(&self, x: &Tensor<E>) -> Result<LatentPosterior<E>> {
        if x.rank() != 4 {
            return Err(DdmiError::RankMismatch { expected: 4, got: x.shape().to_vec() });
        }
        let (h, w) = (x.shape()[2], x.shape()[3]);
        if h != self.base_resolution || w != self.base_resolution {
            return Err(DdmiError::WrongInputResolution {
                expected: self.base_resolution,
                got_h: h,
                got_w: w,
            });
        }
        let mut sn_index = 0usize;
        let mut feat = self.conv_forward(&self.stem, &mut sn_index, x)?;
        for level in &self.levels {
            // residual around the normalized conv so constant image
            // components (absolute color) survive the normalization
            let h = self.conv_forward(&level.conv, &mut sn_index, &level.norm.forward(&feat)?.silu())?;
            feat = feat.add(&h)?;
            if let Some(down) = &level.down {
                feat = self.conv_forward(down, &mut sn_index, &avgpool2x(&feat)?)?;
            }
        }
        let stats = self.conv_forward(&self.head, &mut sn_index, &feat)?;
        let mean = stats.narrow(1, 0, self.latent_channels)?;
        let logvar = stats.narrow(1, self.latent_channels, self.latent_channels)?;
        if !mean.all_finite() || !logvar.all_finite() {
            return Err(DdmiError::NonFinite { context: "encoder posterior".into() });
        }
        Ok(LatentPosterior { mean, logvar })
    }

    /// Advance every spectral-norm power iteration one step against the
    /// current weights. Call after each optimizer update.
    pub fn update_spectral_norm(&mut self) {
        let Some(states) = &mut self.sn else { return };
        let mut idx = 0usize;
        let advance = |w: &Tensor<E>, states: &mut Vec<SpectralNorm<E>>, idx: &mut usize| {
            if *idx < states.len() {
                states[*idx].power_iterate(w);
                *idx += 1;
            }
        };
        advance(&self.stem.weight, states, &mut idx);
        let level_weights: Vec<Tensor<E>> = self
            .levels
            .iter()
            .flat_map(|l| {
                let mut ws = vec![l.conv.weight.clone()];
                if let Some(d) = &l.down {
                    ws.push(d.weight.clone());
                }
                ws
            })
            .collect();
        for w in &level_weights {
            advance(w, states, &mut idx);
        }
        advance(&self.head.weight, states, &mut idx);
    }

    pub fn visit_trainable(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        self.stem.visit("enc.stem", f);
        for (i, level) in self.levels.iter_mut().enumerate() {
            level.conv.visit(&format!("enc.l{i}.conv"), f);
            level.norm.visit(&format!("enc.l{i}.norm"), f);
            if let Some(down) = &mut level.down {
                down.visit(&format!("enc.l{i}.down"), f);
            }
        }
        self.head.visit("enc.head", f);
    }

    pub fn visit_all(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        self.visit_trainable(f);
        if let Some(states) = &mut self.sn {
            for (i, s) in states.iter_mut().enumerate() {
                s.visit(&format!("enc.sn{i}"), f);
            }
        }
    }
}
