//! Noise-prediction U-Net over latent grids, with sinusoidal time
//! embedding, optional class conditioning (a learned embedding added to
//! the time embedding, including a null row for guidance training), and
//! an optional cross-plane mixing block for tri-plane latents.

use crate::error::{DdmiError, Result};
use crate::nn::{sinusoidal_embedding, Conv2dLayer, GroupNormLayer, Linear, Params};
use crate::rng::Rng;
use crate::tensor::{avgpool2x, upsample_nearest2x, Element, Tensor};

#[derive(Clone, Debug)]
pub struct DenoiserArch {
    pub latent_channels: usize,
    /// Channel width at latent resolution and at the downsampled mid.
    pub width0: usize,
    pub width1: usize,
    pub temb_dim: usize,
    /// Number of data classes; the embedding table carries one extra
    /// null row used when conditioning is dropped.
    pub num_classes: Option<usize>,
    /// Mix features across the three planes at the bottleneck.
    pub triplane_mix: bool,
}

#[derive(Clone)]
struct ResBlock<E: Element> {
    norm1: GroupNormLayer<E>,
    conv1: Conv2dLayer<E>,
    temb_proj: Linear<E>,
    norm2: GroupNormLayer<E>,
    conv2: Conv2dLayer<E>,
}

impl<E: Element> ResBlock<E> {
    fn init(channels: usize, temb_dim: usize, rng: &mut Rng) -> Self {
        ResBlock {
            norm1: GroupNormLayer::init(channels),
            conv1: Conv2dLayer::init(channels, channels, 3, 1, 1, rng),
            temb_proj: Linear::init(temb_dim, channels, rng),
            norm2: GroupNormLayer::init(channels),
            conv2: Conv2dLayer::init(channels, channels, 3, 1, 1, rng),
        }
    }

    fn forward(&self, x: &Tensor<E>, temb: &Tensor<E>) -> Result<Tensor<E>> {
        let b = x.shape()[0];
        let c = self.conv1.out_channels();
        let mut h = self.conv1.forward(&self.norm1.forward(x)?.silu())?;
        let shift = self.temb_proj.forward(&temb.silu())?.reshape(&[b, c, 1, 1])?;
        h = h.add(&shift)?;
        h = self.conv2.forward(&self.norm2.forward(&h)?.silu())?;
        x.add(&h)
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        self.norm1.visit(&format!("{prefix}.n1"), f);
        self.conv1.visit(&format!("{prefix}.c1"), f);
        self.temb_proj.visit(&format!("{prefix}.t"), f);
        self.norm2.visit(&format!("{prefix}.n2"), f);
        self.conv2.visit(&format!("{prefix}.c2"), f);
    }
}

/// The denoiser network epsilon(z_t, t, cond).
pub struct Denoiser<E: Element = f32> {
    arch: DenoiserArch,
    temb_fc1: Linear<E>,
    temb_fc2: Linear<E>,
    class_table: Option<Tensor<E>>,
    conv_in: Conv2dLayer<E>,
    down_block: ResBlock<E>,
    down_conv: Conv2dLayer<E>,
    mid_block1: ResBlock<E>,
    mix: Option<Conv2dLayer<E>>,
    mid_block2: ResBlock<E>,
    up_conv: Conv2dLayer<E>,
    skip_conv: Conv2dLayer<E>,
    out_block: ResBlock<E>,
    out_norm: GroupNormLayer<E>,
    out_conv: Conv2dLayer<E>,
}

impl<E: Element> Denoiser<E> {
    pub fn init(arch: DenoiserArch, rng: &mut Rng) -> Self {
        let (w0, w1, td) = (arch.width0, arch.width1, arch.temb_dim);
        let class_table = arch.num_classes.map(|n| {
            crate::nn::init::normal_init(&[n + 1, td], 0.02, rng)
        });
        let mix = arch.triplane_mix.then(|| {
            // identity-initialized 1x1 mixing across the three planes
            let mut w = vec![E::ZERO; 3 * w1 * 3 * w1];
            for i in 0..3 * w1 {
                w[i * 3 * w1 + i] = E::ONE;
            }
            Conv2dLayer {
                weight: Tensor::from_vec(w, &[3 * w1, 3 * w1, 1, 1]).expect("mix shape").tracked(),
                bias: Tensor::zeros(&[3 * w1]).tracked(),
                stride: 1,
                pad: 0,
            }
        });
        Denoiser {
            temb_fc1: Linear::init(td, td, rng),
            temb_fc2: Linear::init(td, td, rng),
            class_table,
            conv_in: Conv2dLayer::init(arch.latent_channels, w0, 3, 1, 1, rng),
            down_block: ResBlock::init(w0, td, rng),
            down_conv: Conv2dLayer::init(w0, w1, 3, 1, 1, rng),
            mid_block1: ResBlock::init(w1, td, rng),
            mix,
            mid_block2: ResBlock::init(w1, td, rng),
            up_conv: Conv2dLayer::init(w1, w0, 3, 1, 1, rng),
            skip_conv: Conv2dLayer::init(2 * w0, w0, 3, 1, 1, rng),
            out_block: ResBlock::init(w0, td, rng),
            out_norm: GroupNormLayer::init(w0),
            out_conv: Conv2dLayer::init_zero(w0, arch.latent_channels, 3, 1, 1),
            arch,
        }
    }

    pub fn arch(&self) -> &DenoiserArch {
        &self.arch
    }

    /// Replace the zero-initialized output head with a random one
    /// (gradient-check harness; a zero head blocks upstream flow).
    pub fn randomize_head(&mut self, rng: &mut Rng) {
        self.out_conv = Conv2dLayer::init(self.arch.width0, self.arch.latent_channels, 3, 1, 1, rng);
    }

    /// Index of the null (unconditional) class row.
    pub fn null_class(&self) -> Option<usize> {
        self.arch.num_classes
    }

    fn time_embedding(&self, ts: &[usize], classes: Option<&[usize]>) -> Result<Tensor<E>> {
        let raw = sinusoidal_embedding::<E>(ts, self.arch.temb_dim);
        let mut temb = self.temb_fc2.forward(&self.temb_fc1.forward(&raw)?.silu())?;
        if let Some(classes) = classes {
            let table = self.class_table.as_ref().ok_or_else(|| {
                DdmiError::Config("class conditioning requested but the denoiser has no class table".into())
            })?;
            if classes.len() != ts.len() {
                return Err(DdmiError::ShapeMismatch {
                    expected: vec![ts.len()],
                    got: vec![classes.len()],
                });
            }
            for &c in classes {
                if c > self.arch.num_classes.unwrap_or(0) {
                    return Err(DdmiError::Config(format!("class index {c} out of range")));
                }
            }
            temb = temb.add(&table.index_select0(classes)?)?;
        }
        Ok(temb)
    }

    fn front(&self, z: &Tensor<E>, temb: &Tensor<E>) -> Result<(Tensor<E>, Tensor<E>)> {
        let x0 = self.conv_in.forward(z)?;
        let d0 = self.down_block.forward(&x0, temb)?;
        let x1 = self.down_conv.forward(&avgpool2x(&d0)?)?;
        let m = self.mid_block1.forward(&x1, temb)?;
        Ok((d0, m))
    }

    fn back(&self, m: &Tensor<E>, d0: &Tensor<E>, temb: &Tensor<E>) -> Result<Tensor<E>> {
        let m = self.mid_block2.forward(m, temb)?;
        let u = self.up_conv.forward(&upsample_nearest2x(&m)?)?;
        let cat = Tensor::concat(&[u, d0.clone()], 1)?;
        let h = self.skip_conv.forward(&cat)?;
        let h = self.out_block.forward(&h, temb)?;
        self.out_conv.forward(&self.out_norm.forward(&h)?.silu())
    }

    /// Predict the noise in `z_t` (`[B, Cz, h, w]`), per-item steps.
    pub fn forward(
        &self,
        z: &Tensor<E>,
        ts: &[usize],
        classes: Option<&[usize]>,
    ) -> Result<Tensor<E>> {
        if z.rank() != 4 || z.shape()[1] != self.arch.latent_channels {
            return Err(DdmiError::ShapeMismatch {
                expected: vec![0, self.arch.latent_channels, 0, 0],
                got: z.shape().to_vec(),
            });
        }
        if ts.len() != z.shape()[0] {
            return Err(DdmiError::ShapeMismatch {
                expected: vec![z.shape()[0]],
                got: vec![ts.len()],
            });
        }
        let temb = self.time_embedding(ts, classes)?;
        let (d0, m) = self.front(z, &temb)?;
        self.back(&m, &d0, &temb)
    }

    /// Tri-plane forward: the same network denoises each plane; when
    /// mixing is enabled the three mid features are concatenated on the
    /// channel axis, passed through a shared 1x1 conv, and split back.
    pub fn forward_triplane(
        &self,
        planes: &[Tensor<E>; 3],
        ts: &[usize],
        classes: Option<&[usize]>,
    ) -> Result<[Tensor<E>; 3]> {
        let temb = self.time_embedding(ts, classes)?;
        let mut fronts = Vec::with_capacity(3);
        for plane in planes {
            fronts.push(self.front(plane, &temb)?);
        }
        let mids: Vec<Tensor<E>> = if let Some(mix) = &self.mix {
            let cat = Tensor::concat(
                &[fronts[0].1.clone(), fronts[1].1.clone(), fronts[2].1.clone()],
                1,
            )?;
            let mixed = mix.forward(&cat)?;
            let w1 = self.arch.width1;
            (0..3).map(|p| mixed.narrow(1, p * w1, w1)).collect::<Result<_>>()?
        } else {
            fronts.iter().map(|(_, m)| m.clone()).collect()
        };
        let mut outs = Vec::with_capacity(3);
        for (p, (d0, _)) in fronts.iter().enumerate() {
            outs.push(self.back(&mids[p], d0, &temb)?);
        }
        let [a, b, c]: [Tensor<E>; 3] =
            outs.try_into().map_err(|_| DdmiError::Data("plane count".into()))?;
        Ok([a, b, c])
    }
}

impl<E: Element> Params<E> for Denoiser<E> {
    fn visit_trainable(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        self.temb_fc1.visit("ldm.temb1", f);
        self.temb_fc2.visit("ldm.temb2", f);
        if let Some(table) = &mut self.class_table {
            f("ldm.class", table);
        }
        self.conv_in.visit("ldm.in", f);
        self.down_block.visit("ldm.down", f);
        self.down_conv.visit("ldm.downc", f);
        self.mid_block1.visit("ldm.mid1", f);
        if let Some(mix) = &mut self.mix {
            mix.visit("ldm.mix", f);
        }
        self.mid_block2.visit("ldm.mid2", f);
        self.up_conv.visit("ldm.upc", f);
        self.skip_conv.visit("ldm.skip", f);
        self.out_block.visit("ldm.out", f);
        self.out_norm.visit("ldm.outn", f);
        self.out_conv.visit("ldm.outc", f);
    }
}

impl<E: Element> Clone for Denoiser<E> {
    fn clone(&self) -> Self {
        Denoiser {
            arch: self.arch.clone(),
            temb_fc1: self.temb_fc1.clone(),
            temb_fc2: self.temb_fc2.clone(),
            class_table: self.class_table.clone(),
            conv_in: self.conv_in.clone(),
            down_block: self.down_block.clone(),
            down_conv: self.down_conv.clone(),
            mid_block1: self.mid_block1.clone(),
            mix: self.mix.clone(),
            mid_block2: self.mid_block2.clone(),
            up_conv: self.up_conv.clone(),
            skip_conv: self.skip_conv.clone(),
            out_block: self.out_block.clone(),
            out_norm: self.out_norm.clone(),
            out_conv: self.out_conv.clone(),
        }
    }
}
