//! The discrete-to-continuous VAE: encoder, basis-field decoder, and
//! coordinate read-out, plus the re-weighted training objective.

mod decoder;
mod encoder;
mod loss;
mod multiscale;
mod readout;

pub use decoder::Decoder;
pub use encoder::{Encoder, LatentPosterior};
pub use loss::{reconstruction_loss, Likelihood};
pub use multiscale::{area_resample, multiscale_batch, MultiscaleBatch};
pub use readout::{scale_inject, ReadoutMlp, ScaleVariable, SCALE_INJECT_EPS};

use crate::error::{DdmiError, Result};
use crate::field::{sample_hdbf, BasisFieldSet, CoordinateBatch, NUM_SCALES};
use crate::nn::Params;
use crate::rng::Rng;
use crate::tensor::{Element, Tensor};

/// Network dimensions shared by encoder, decoder, and read-out.
#[derive(Clone, Debug)]
pub struct VaeArch {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Encoder input resolution r (per plane).
    pub base_resolution: usize,
    pub latent_channels: usize,
    /// Conv widths per encoder level; the latent sits at
    /// `r / 2^(len-1)`.
    pub enc_widths: Vec<usize>,
    /// Conv widths per decoder level, one per basis-field scale.
    pub dec_widths: Vec<usize>,
    /// Embedding width C, equal to the MLP block width.
    pub embed_channels: usize,
    pub mlp_blocks: usize,
    pub spectral_norm: bool,
    pub scale_fourier: usize,
    pub scale_hidden: usize,
    /// Ablation baseline: read out a single basis field (the finest
    /// decoder tap) with no coarse-to-fine merging.
    pub single_field: bool,
}

impl VaeArch {
    pub fn latent_hw(&self) -> usize {
        self.base_resolution >> (self.enc_widths.len() - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dec_widths.len() != NUM_SCALES {
            return Err(DdmiError::Config(format!(
                "decoder must have {NUM_SCALES} levels, got {}",
                self.dec_widths.len()
            )));
        }
        if self.enc_widths.is_empty() {
            return Err(DdmiError::Config("encoder needs at least one level".into()));
        }
        if self.base_resolution % (1 << (self.enc_widths.len() - 1)) != 0 {
            return Err(DdmiError::Config(format!(
                "base resolution {} is not divisible by the encoder downsampling factor {}",
                self.base_resolution,
                1 << (self.enc_widths.len() - 1)
            )));
        }
        if self.latent_hw() < 2 {
            return Err(DdmiError::Config("latent grid needs extent >= 2".into()));
        }
        Ok(())
    }
}

/// Loss components of one optimization step.
pub struct VaeLossParts<E: Element> {
    pub total: Tensor<E>,
    pub recon: Tensor<E>,
    pub kl: Tensor<E>,
}

/// The full stage-1 model.
pub struct D2cVae<E: Element = f32> {
    pub encoder: Encoder<E>,
    pub decoder: Decoder<E>,
    pub readout: ReadoutMlp<E>,
    arch: VaeArch,
}

impl<E: Element> D2cVae<E> {
    pub fn init(arch: VaeArch, rng: &mut Rng) -> Result<Self> {
        arch.validate()?;
        Ok(D2cVae {
            encoder: Encoder::init(&arch, rng),
            decoder: Decoder::init(&arch, rng),
            readout: ReadoutMlp::init(&arch, rng),
            arch,
        })
    }

    pub fn arch(&self) -> &VaeArch {
        &self.arch
    }

    /// Encode, reparameterize (posterior mean when `noise` is `None`),
    /// decode, and read out at per-item coordinates. Returns stacked
    /// predictions `[sum(I_b), out_channels]` and the posterior.
    pub fn forward_batch(
        &self,
        x: &Tensor<E>,
        coords: &[CoordinateBatch<E>],
        s: ScaleVariable,
        noise: Option<&Tensor<E>>,
    ) -> Result<(Tensor<E>, LatentPosterior<E>)> {
        let posterior = self.encoder.encode(x)?;
        let z = match noise {
            Some(n) => posterior.reparameterize(n)?,
            None => posterior.mean.clone(),
        };
        let pred = self.readout_latent(&z, coords, s)?;
        Ok((pred, posterior))
    }

    /// Decode a latent and evaluate the read-out at per-item coordinates.
    pub fn readout_latent(
        &self,
        z: &Tensor<E>,
        coords: &[CoordinateBatch<E>],
        s: ScaleVariable,
    ) -> Result<Tensor<E>> {
        if z.shape()[0] != coords.len() {
            return Err(DdmiError::ShapeMismatch {
                expected: vec![z.shape()[0]],
                got: vec![coords.len()],
            });
        }
        if self.arch.single_field {
            return self.readout_single_field(z, coords, s);
        }
        let sets = self.decoder.decode(z)?;
        self.readout_sets(&sets, coords, s)
    }

    /// Baseline path: sample only the finest decoder tap and feed the
    /// MLP a single embedding (no merges).
    fn readout_single_field(
        &self,
        z: &Tensor<E>,
        coords: &[CoordinateBatch<E>],
        s: ScaleVariable,
    ) -> Result<Tensor<E>> {
        let taps = self.decoder.decode_taps(z)?;
        let fine = &taps[taps.len() - 1];
        let (c, h, w) = (fine.shape()[1], fine.shape()[2], fine.shape()[3]);
        let mut pes = Vec::with_capacity(coords.len());
        for (bi, cb) in coords.iter().enumerate() {
            let plane = crate::field::BasisFieldPlane::new(
                fine.narrow(0, bi, 1)?.reshape(&[c, h, w])?,
                1,
                crate::field::Orientation::Single,
            )?;
            pes.push(crate::field::bilinear_sample(&plane, cb)?);
        }
        let stacked =
            if pes.len() == 1 { pes.into_iter().next().expect("one") } else { Tensor::concat(&pes, 0)? };
        self.readout.forward(&[stacked], s)
    }

    /// Read out already-decoded basis fields.
    pub fn readout_sets(
        &self,
        sets: &[BasisFieldSet<E>],
        coords: &[CoordinateBatch<E>],
        s: ScaleVariable,
    ) -> Result<Tensor<E>> {
        let mut per_scale: Vec<Vec<Tensor<E>>> = vec![Vec::new(); NUM_SCALES];
        for (set, cb) in sets.iter().zip(coords) {
            let pes = sample_hdbf(set, cb)?;
            for (scale, pe) in pes.into_iter().enumerate() {
                per_scale[scale].push(pe);
            }
        }
        let stacked: Vec<Tensor<E>> = per_scale
            .into_iter()
            .map(|group| {
                if group.len() == 1 {
                    Ok(group.into_iter().next().expect("one item"))
                } else {
                    Tensor::concat(&group, 0)
                }
            })
            .collect::<Result<_>>()?;
        self.readout.forward(&stacked, s)
    }

    /// The re-weighted objective: mean reconstruction over the sampled
    /// coordinate subset plus `lambda_z` times the posterior KL.
    #[allow(clippy::too_many_arguments)]
    pub fn loss(
        &self,
        x: &Tensor<E>,
        coords: &[CoordinateBatch<E>],
        targets: &Tensor<E>,
        s: ScaleVariable,
        likelihood: Likelihood,
        lambda_z: f64,
        noise: Option<&Tensor<E>>,
    ) -> Result<VaeLossParts<E>> {
        let (pred, posterior) = self.forward_batch(x, coords, s, noise)?;
        let recon = reconstruction_loss(&pred, targets, likelihood)?;
        let kl = posterior.kl_divergence();
        let total = recon.add(&kl.mul_scalar(lambda_z))?;
        Ok(VaeLossParts { total, recon, kl })
    }

    // ── Tri-plane (occupancy) path ────────────────────────────────

    /// Encode an occupancy voxel grid `[B, X, Y, Z]` through the shared
    /// 2D encoder, one posterior per axis-aligned mean projection.
    pub fn encode_triplane(&self, voxels: &Tensor<E>) -> Result<[LatentPosterior<E>; 3]> {
        let [xy, yz, xz] = voxel_mean_planes(voxels)?;
        Ok([self.encoder.encode(&xy)?, self.encoder.encode(&yz)?, self.encoder.encode(&xz)?])
    }

    /// Decode three plane latents (shared decoder weights) into per-item
    /// tri-plane basis-field sets.
    pub fn decode_triplane(&self, z: &[Tensor<E>; 3]) -> Result<Vec<BasisFieldSet<E>>> {
        let taps_xy = self.decoder.decode_taps(&z[0])?;
        let taps_yz = self.decoder.decode_taps(&z[1])?;
        let taps_xz = self.decoder.decode_taps(&z[2])?;
        let b = z[0].shape()[0];
        let slice = |tap: &Tensor<E>, bi: usize| -> Result<Tensor<E>> {
            let (c, h, w) = (tap.shape()[1], tap.shape()[2], tap.shape()[3]);
            tap.narrow(0, bi, 1)?.reshape(&[c, h, w])
        };
        let mut sets = Vec::with_capacity(b);
        for bi in 0..b {
            let mut grids: Vec<[Tensor<E>; 3]> = Vec::with_capacity(NUM_SCALES);
            for si in 0..NUM_SCALES {
                grids.push([
                    slice(&taps_xy[si], bi)?,
                    slice(&taps_yz[si], bi)?,
                    slice(&taps_xz[si], bi)?,
                ]);
            }
            let [g1, g2, g3]: [[Tensor<E>; 3]; 3] =
                grids.try_into().map_err(|_| DdmiError::Data("scale count".into()))?;
            sets.push(BasisFieldSet::tri_plane([g1, g2, g3])?);
        }
        Ok(sets)
    }

    /// Full tri-plane objective for occupancy targets at 3D coordinates.
    pub fn loss_triplane(
        &self,
        voxels: &Tensor<E>,
        coords: &[CoordinateBatch<E>],
        targets: &Tensor<E>,
        lambda_z: f64,
        noise: Option<&[Tensor<E>; 3]>,
    ) -> Result<VaeLossParts<E>> {
        let posteriors = self.encode_triplane(voxels)?;
        let z: [Tensor<E>; 3] = match noise {
            Some(ns) => [
                posteriors[0].reparameterize(&ns[0])?,
                posteriors[1].reparameterize(&ns[1])?,
                posteriors[2].reparameterize(&ns[2])?,
            ],
            None => [
                posteriors[0].mean.clone(),
                posteriors[1].mean.clone(),
                posteriors[2].mean.clone(),
            ],
        };
        let sets = self.decode_triplane(&z)?;
        let pred = self.readout_sets(&sets, coords, ScaleVariable::new(1.0)?)?;
        let recon = reconstruction_loss(&pred, targets, Likelihood::Bernoulli)?;
        let kl = posteriors[0]
            .kl_divergence()
            .add(&posteriors[1].kl_divergence())?
            .add(&posteriors[2].kl_divergence())?;
        let total = recon.add(&kl.mul_scalar(lambda_z))?;
        Ok(VaeLossParts { total, recon, kl })
    }

    /// Advance encoder spectral-norm state after an optimizer step.
    pub fn post_step(&mut self) {
        self.encoder.update_spectral_norm();
    }
}

impl<E: Element> Params<E> for D2cVae<E> {
    fn visit_trainable(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        self.encoder.visit_trainable(f);
        self.decoder.visit_trainable(f);
        self.readout.visit_trainable(f);
    }

    fn visit_all(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        self.encoder.visit_all(f);
        self.decoder.visit_trainable(f);
        self.readout.visit_trainable(f);
    }
}

/// Axis-aligned mean projections of `[B, X, Y, Z]` occupancy onto the
/// xy, yz, and xz planes, rescaled from {0,1} to [-1,1].
pub fn voxel_mean_planes<E: Element>(voxels: &Tensor<E>) -> Result<[Tensor<E>; 3]> {
    if voxels.rank() != 4 {
        return Err(DdmiError::RankMismatch { expected: 4, got: voxels.shape().to_vec() });
    }
    let (b, x, y, z) = (voxels.shape()[0], voxels.shape()[1], voxels.shape()[2], voxels.shape()[3]);
    let to_signal = |t: Tensor<E>| t.mul_scalar(2.0).add_scalar(-1.0);
    let xy = voxels.sum_axis(3, false).mul_scalar(1.0 / z as f64).reshape(&[b, 1, x, y])?;
    let yz = voxels.sum_axis(1, false).mul_scalar(1.0 / x as f64).reshape(&[b, 1, y, z])?;
    let xz = voxels.sum_axis(2, false).mul_scalar(1.0 / y as f64).reshape(&[b, 1, x, z])?;
    Ok([to_signal(xy), to_signal(yz), to_signal(xz)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init::randn;
    use crate::rng::Rng;

    pub(crate) fn tiny_arch() -> VaeArch {
        VaeArch {
            in_channels: 3,
            out_channels: 3,
            base_resolution: 8,
            latent_channels: 2,
            enc_widths: vec![6, 8],
            dec_widths: vec![8, 6, 6],
            embed_channels: 8,
            mlp_blocks: 2,
            spectral_norm: true,
            scale_fourier: 4,
            scale_hidden: 8,
            single_field: false,
        }
    }

    fn full_grid(res: usize) -> CoordinateBatch<f64> {
        let mut c = Vec::with_capacity(res * res * 2);
        for i in 0..res {
            for j in 0..res {
                c.push(-1.0 + 2.0 * i as f64 / (res - 1) as f64);
                c.push(-1.0 + 2.0 * j as f64 / (res - 1) as f64);
            }
        }
        CoordinateBatch::new(Tensor::from_vec(c, &[res * res, 2]).unwrap()).unwrap()
    }

    #[test]
    fn encode_shape_contract_and_determinism() {
        let mut rng = Rng::seed_from(100);
        let vae: D2cVae<f64> = D2cVae::init(tiny_arch(), &mut rng).unwrap();
        let x = randn::<f64>(&[2, 3, 8, 8], &mut rng);
        let p1 = vae.encoder.encode(&x).unwrap();
        assert_eq!(p1.mean.shape(), &[2, 2, 4, 4]);
        assert_eq!(p1.logvar.shape(), &[2, 2, 4, 4]);
        let p2 = vae.encoder.encode(&x).unwrap();
        assert_eq!(p1.mean.to_vec(), p2.mean.to_vec());
        assert_eq!(p1.logvar.to_vec(), p2.logvar.to_vec());

        let bad = randn::<f64>(&[1, 3, 16, 16], &mut rng);
        assert!(matches!(
            vae.encoder.encode(&bad),
            Err(DdmiError::WrongInputResolution { expected: 8, got_h: 16, got_w: 16 })
        ));
    }

    #[test]
    fn zero_head_encodes_zero_image_to_zero_posterior() {
        let mut rng = Rng::seed_from(101);
        let mut vae: D2cVae<f64> = D2cVae::init(tiny_arch(), &mut rng).unwrap();
        vae.encoder.zero_head();
        let p = vae.encoder.encode(&Tensor::zeros(&[1, 3, 8, 8])).unwrap();
        assert!(p.mean.data().iter().all(|&v| v == 0.0));
        assert!(p.logvar.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn decode_scale_ladder_and_determinism() {
        let mut rng = Rng::seed_from(102);
        let vae: D2cVae<f64> = D2cVae::init(tiny_arch(), &mut rng).unwrap();
        let z = randn::<f64>(&[2, 2, 4, 4], &mut rng);
        let sets = vae.decoder.decode(&z).unwrap();
        assert_eq!(sets.len(), 2);
        for set in &sets {
            assert_eq!(set.scale(1).unwrap()[0].extents(), (4, 4));
            assert_eq!(set.scale(2).unwrap()[0].extents(), (8, 8));
            assert_eq!(set.scale(3).unwrap()[0].extents(), (16, 16));
            assert_eq!(set.channels(), 8);
        }
        let again = vae.decoder.decode(&z).unwrap();
        assert_eq!(
            sets[0].scale(2).unwrap()[0].grid.to_vec(),
            again[0].scale(2).unwrap()[0].grid.to_vec()
        );
    }

    #[test]
    fn triplane_decode_equals_three_shared_single_plane_decodes() {
        let mut rng = Rng::seed_from(103);
        let mut arch = tiny_arch();
        arch.in_channels = 1;
        arch.out_channels = 1;
        let vae: D2cVae<f64> = D2cVae::init(arch, &mut rng).unwrap();
        let z: [Tensor<f64>; 3] = [
            randn::<f64>(&[1, 2, 4, 4], &mut rng),
            randn::<f64>(&[1, 2, 4, 4], &mut rng),
            randn::<f64>(&[1, 2, 4, 4], &mut rng),
        ];
        let tri = vae.decode_triplane(&z).unwrap();
        for (pi, zi) in z.iter().enumerate() {
            let single = vae.decoder.decode(zi).unwrap();
            for s in 1..=3 {
                let expect = single[0].scale(s).unwrap()[0].grid.to_vec();
                let got = tri[0].scale(s).unwrap()[pi].grid.to_vec();
                assert_eq!(expect, got, "plane {pi} scale {s}");
            }
        }
    }

    #[test]
    fn voxel_projection_shapes_and_values() {
        // 2x2x2 grid with a single occupied cell at (x=1, y=0, z=1)
        let mut v = vec![0.0; 8];
        v[4 + 1] = 1.0;
        let voxels = Tensor::<f64>::from_vec(v, &[1, 2, 2, 2]).unwrap();
        let [xy, yz, xz] = voxel_mean_planes(&voxels).unwrap();
        assert_eq!(xy.shape(), &[1, 1, 2, 2]);
        // xy at (x=1, y=0): mean over z = 0.5 -> signal 0
        assert_eq!(xy.data()[2], 0.0);
        // empty cells map to -1
        assert_eq!(xy.data()[0], -1.0);
        assert_eq!(yz.data()[1], 0.0); // (y=0, z=1)
        assert_eq!(xz.data()[3], 0.0); // (x=1, z=1)
    }

    /// Gradcheck needs channel counts whose normalization groups span
    /// at least two channels; otherwise conv biases cancel exactly and
    /// their true-zero gradients sit below finite-difference noise.
    pub(crate) fn gradcheck_arch() -> VaeArch {
        VaeArch {
            in_channels: 3,
            out_channels: 3,
            base_resolution: 4,
            latent_channels: 2,
            enc_widths: vec![16, 16],
            dec_widths: vec![16, 16, 16],
            embed_channels: 8,
            mlp_blocks: 2,
            spectral_norm: true,
            scale_fourier: 4,
            scale_hidden: 8,
            single_field: false,
        }
    }

    #[test]
    fn end_to_end_pipeline_gradients_match_finite_differences() {
        // The composed map: encode -> reparameterize(noise=0) -> decode
        // -> sample fields -> read out, differentiated w.r.t. every
        // parameter of all three networks.
        let mut rng = Rng::seed_from(104);
        let mut vae: D2cVae<f64> = D2cVae::init(gradcheck_arch(), &mut rng).unwrap();
        let x = randn::<f64>(&[1, 3, 4, 4], &mut rng);
        let coords = full_grid(4);

        let mut tensors: Vec<Tensor<f64>> = Vec::new();
        vae.visit_trainable(&mut |_, t| tensors.push(t.detach()));

        // A fixed random projection keeps the functional well
        // conditioned for finite differences (sum-of-squares would be
        // nearly invariant to the demodulated weights).
        let probe = randn::<f64>(&[16, 3], &mut rng);
        let cell = std::cell::RefCell::new(vae);
        let err = crate::tensor::grad_check_multi(
            |params| {
                let mut vae = cell.borrow_mut();
                let mut idx = 0usize;
                vae.visit_trainable(&mut |_, slot| {
                    *slot = params[idx].clone();
                    idx += 1;
                });
                let s = ScaleVariable::new(1.0).unwrap();
                let (pred, post) =
                    vae.forward_batch(&x, std::slice::from_ref(&coords), s, None).unwrap();
                pred.mul(&probe).unwrap().sum().add(&post.kl_divergence()).unwrap()
            },
            &tensors,
            1e-5,
        );
        assert!(err < 1e-4, "pipeline grad error {err}");
    }

    #[test]
    fn one_step_descends_on_single_example() {
        use crate::nn::optim::{AdamW, AdamWConfig};
        for seed in [1u64, 2, 3] {
            let mut rng = Rng::seed_from(seed);
            let mut vae: D2cVae<f64> = D2cVae::init(tiny_arch(), &mut rng).unwrap();
            let x = randn::<f64>(&[1, 3, 8, 8], &mut rng).tanh();
            let coords = full_grid(8);
            let targets = Tensor::<f64>::from_vec(
                {
                    let d = x.data();
                    let mut t = Vec::with_capacity(64 * 3);
                    for i in 0..64 {
                        for c in 0..3 {
                            t.push(d[c * 64 + i]);
                        }
                    }
                    t
                },
                &[64, 3],
            )
            .unwrap();

            let s = ScaleVariable::new(1.0).unwrap();
            let eval = |vae: &D2cVae<f64>| {
                vae.loss(
                    &x,
                    std::slice::from_ref(&coords),
                    &targets,
                    s,
                    Likelihood::GaussianL1,
                    1e-4,
                    None,
                )
                .unwrap()
            };
            let before = eval(&vae);
            let grads = before.total.backward().unwrap();
            let mut opt: AdamW<f64> =
                AdamW::new(AdamWConfig { lr: 1e-4, weight_decay: 0.0, ..Default::default() });
            opt.step(&mut vae, &grads);
            vae.post_step();
            let after = eval(&vae);
            assert!(
                after.total.item() < before.total.item(),
                "seed {seed}: {} -> {}",
                before.total.item(),
                after.total.item()
            );
        }
    }

    #[test]
    fn lambda_zero_reduces_total_to_reconstruction() {
        let mut rng = Rng::seed_from(105);
        let vae: D2cVae<f64> = D2cVae::init(tiny_arch(), &mut rng).unwrap();
        let x = randn::<f64>(&[1, 3, 8, 8], &mut rng);
        let coords = full_grid(3);
        let targets = randn::<f64>(&[9, 3], &mut rng);
        let s = ScaleVariable::new(1.0).unwrap();
        let parts = vae
            .loss(&x, std::slice::from_ref(&coords), &targets, s, Likelihood::GaussianL1, 0.0, None)
            .unwrap();
        assert_eq!(parts.total.item(), parts.recon.item());
    }
}
