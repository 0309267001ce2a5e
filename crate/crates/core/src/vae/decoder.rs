//! CNN decoder: latent grid in, basis fields at three scales out.

use crate::error::{DdmiError, Result};
use crate::field::{BasisFieldSet, NUM_SCALES};
use crate::nn::{Conv2dLayer, GroupNormLayer};
use crate::rng::Rng;
use crate::tensor::{upsample_nearest2x, Element, Tensor};

use super::VaeArch;

struct DecLevel<E: Element> {
    conv: Conv2dLayer<E>,
    norm: GroupNormLayer<E>,
    /// 1x1 channel matching onto the shared embedding width.
    tap: Conv2dLayer<E>,
    /// Transition into the next (finer) level; absent on the last.
    up: Option<Conv2dLayer<E>>,
}

/// Upsampling decoder that taps a basis field at every level, coarse
/// (latent resolution) to fine.
pub struct Decoder<E: Element = f32> {
    stem: Conv2dLayer<E>,
    levels: Vec<DecLevel<E>>,
    pub latent_channels: usize,
    pub embed_channels: usize,
}

impl<E: Element> Decoder<E> {
    pub fn init(arch: &VaeArch, rng: &mut Rng) -> Self {
        assert_eq!(arch.dec_widths.len(), NUM_SCALES, "decoder must emit exactly {NUM_SCALES} scales");
        let w = &arch.dec_widths;
        let stem = Conv2dLayer::init(arch.latent_channels, w[0], 3, 1, 1, rng);
        let mut levels = Vec::with_capacity(w.len());
        for i in 0..w.len() {
            levels.push(DecLevel {
                conv: Conv2dLayer::init(w[i], w[i], 3, 1, 1, rng),
                norm: GroupNormLayer::init(w[i]),
                tap: Conv2dLayer::init(w[i], arch.embed_channels, 1, 1, 0, rng),
                up: (i + 1 < w.len()).then(|| Conv2dLayer::init(w[i], w[i + 1], 3, 1, 1, rng)),
            });
        }
        Decoder {
            stem,
            levels,
            latent_channels: arch.latent_channels,
            embed_channels: arch.embed_channels,
        }
    }

    /// Decode a latent batch `[B, Cz, h, w]` into per-item basis-field
    /// sets; scale spatial extents are `h, 2h, 4h`.
    pub fn decode(&self, z: &Tensor<E>) -> Result<Vec<BasisFieldSet<E>>> {
        let taps = self.decode_taps(z)?;
        let b = z.shape()[0];
        let mut sets = Vec::with_capacity(b);
        for bi in 0..b {
            let mut grids: Vec<Tensor<E>> = Vec::with_capacity(NUM_SCALES);
            for tap in &taps {
                let (c, h, w) = (tap.shape()[1], tap.shape()[2], tap.shape()[3]);
                grids.push(tap.narrow(0, bi, 1)?.reshape(&[c, h, w])?);
            }
            let [g1, g2, g3]: [Tensor<E>; 3] =
                grids.try_into().map_err(|_| DdmiError::Data("scale count".into()))?;
            sets.push(BasisFieldSet::single_plane([g1, g2, g3])?);
        }
        Ok(sets)
    }

    /// Raw batched taps `[B, C, h_i, w_i]`, coarse to fine.
    pub fn decode_taps(&self, z: &Tensor<E>) -> Result<Vec<Tensor<E>>> {
        if z.rank() != 4 || z.shape()[1] != self.latent_channels {
            return Err(DdmiError::ShapeMismatch {
                expected: vec![0, self.latent_channels, 0, 0],
                got: z.shape().to_vec(),
            });
        }
        let mut feat = self.stem.forward(z)?;
        let mut taps = Vec::with_capacity(self.levels.len());
        for level in &self.levels {
            // residual around the normalized conv (see encoder)
            let h = level.conv.forward(&level.norm.forward(&feat)?.silu())?;
            feat = feat.add(&h)?;
            taps.push(level.tap.forward(&feat)?);
            if let Some(up) = &level.up {
                feat = up.forward(&upsample_nearest2x(&feat)?)?;
            }
        }
        Ok(taps)
    }

    pub fn visit_trainable(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        self.stem.visit("dec.stem", f);
        for (i, level) in self.levels.iter_mut().enumerate() {
            level.conv.visit(&format!("dec.l{i}.conv"), f);
            level.norm.visit(&format!("dec.l{i}.norm"), f);
            level.tap.visit(&format!("dec.l{i}.tap"), f);
            if let Some(up) = &mut level.up {
                up.visit(&format!("dec.l{i}.up"), f);
            }
        }
    }
}
