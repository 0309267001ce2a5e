//! Network building blocks shared by the VAE and the denoiser.

pub mod init;
pub mod optim;

use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::{conv2d, groupnorm, Element, Tensor};

/// Named access to a network's tensors.
///
/// `visit_trainable` enumerates optimizer targets; `visit_all` also
/// includes persistent buffers (e.g. spectral-norm power-iteration
/// vectors) so checkpoints capture the full state.
pub trait Params<E: Element> {
    fn visit_trainable(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<E>));

    fn visit_all(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        self.visit_trainable(f);
    }
}

/// Read-only snapshot of every tensor reachable through `visit_all`.
pub fn collect_named<E: Element, P: Params<E>>(params: &mut P) -> Vec<(String, Tensor<E>)> {
    let mut out = Vec::new();
    params.visit_all(&mut |name, t| out.push((name.to_string(), t.clone())));
    out
}

/// Fully connected layer; weight layout `[out, in]`.
#[derive(Clone, Debug)]
pub struct Linear<E: Element = f32> {
    pub weight: Tensor<E>,
    pub bias: Tensor<E>,
}

impl<E: Element> Linear<E> {
    pub fn init(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        Linear {
            weight: init::fan_in_uniform(&[out_dim, in_dim], in_dim, rng),
            bias: Tensor::zeros(&[out_dim]).tracked(),
        }
    }

    /// `x [N, in] -> [N, out]`
    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        x.matmul_t(&self.weight)?.add(&self.bias)
    }

    /// Forward through an externally modulated copy of the weight.
    pub fn forward_with_weight(&self, x: &Tensor<E>, weight: &Tensor<E>) -> Result<Tensor<E>> {
        x.matmul_t(weight)?.add(&self.bias)
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        f(&format!("{prefix}.w"), &mut self.weight);
        f(&format!("{prefix}.b"), &mut self.bias);
    }
}

/// 3x3/1x1 convolution layer with fixed stride and padding.
#[derive(Clone, Debug)]
pub struct Conv2dLayer<E: Element = f32> {
    pub weight: Tensor<E>,
    pub bias: Tensor<E>,
    pub stride: usize,
    pub pad: usize,
}

impl<E: Element> Conv2dLayer<E> {
    pub fn init(
        in_ch: usize,
        out_ch: usize,
        ksize: usize,
        stride: usize,
        pad: usize,
        rng: &mut Rng,
    ) -> Self {
        let fan_in = in_ch * ksize * ksize;
        Conv2dLayer {
            weight: init::fan_in_uniform(&[out_ch, in_ch, ksize, ksize], fan_in, rng),
            bias: Tensor::zeros(&[out_ch]).tracked(),
            stride,
            pad,
        }
    }

    /// Zero-initialized variant for output heads.
    pub fn init_zero(in_ch: usize, out_ch: usize, ksize: usize, stride: usize, pad: usize) -> Self {
        Conv2dLayer {
            weight: Tensor::zeros(&[out_ch, in_ch, ksize, ksize]).tracked(),
            bias: Tensor::zeros(&[out_ch]).tracked(),
            stride,
            pad,
        }
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        conv2d(x, &self.weight, Some(&self.bias), self.stride, self.pad)
    }

    pub fn forward_with_weight(&self, x: &Tensor<E>, weight: &Tensor<E>) -> Result<Tensor<E>> {
        conv2d(x, weight, Some(&self.bias), self.stride, self.pad)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        f(&format!("{prefix}.w"), &mut self.weight);
        f(&format!("{prefix}.b"), &mut self.bias);
    }
}

/// Per-channel affine parameters for group normalization.
#[derive(Clone, Debug)]
pub struct GroupNormLayer<E: Element = f32> {
    pub gamma: Tensor<E>,
    pub beta: Tensor<E>,
    pub groups: usize,
}

impl<E: Element> GroupNormLayer<E> {
    /// groups = min(8, channels), required to divide the channel count.
    pub fn init(channels: usize) -> Self {
        let groups = if channels < 8 { channels } else { 8 };
        GroupNormLayer {
            gamma: Tensor::ones(&[channels]).tracked(),
            beta: Tensor::zeros(&[channels]).tracked(),
            groups,
        }
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        groupnorm(x, self.groups, &self.gamma, &self.beta)
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        f(&format!("{prefix}.g"), &mut self.gamma);
        f(&format!("{prefix}.beta"), &mut self.beta);
    }
}

/// Spectral normalization state for a conv weight viewed as
/// `[out, in*kh*kw]`. The stored singular vectors are treated as
/// constants inside the graph; the power iteration advances them as a
/// plain data update after each optimizer step.
#[derive(Clone, Debug)]
pub struct SpectralNorm<E: Element = f32> {
    pub u: Tensor<E>,
    pub v: Tensor<E>,
}

impl<E: Element> SpectralNorm<E> {
    pub fn init(weight: &Tensor<E>, rng: &mut Rng) -> Self {
        let rows = weight.shape()[0];
        let cols: usize = weight.shape()[1..].iter().product();
        let u: Vec<E> = (0..rows).map(|_| E::from_f64(rng.normal())).collect();
        let v = vec![E::ZERO; cols];
        let mut sn = SpectralNorm {
            u: Tensor::from_vec(normalize(u), &[rows]).expect("u shape"),
            v: Tensor::from_vec(v, &[cols]).expect("v shape"),
        };
        // A few warm-up iterations so sigma starts near the true top
        // singular value and stays positive.
        for _ in 0..5 {
            sn.power_iterate(weight);
        }
        sn
    }

    /// sigma = u^T W v with the stored vectors held constant.
    pub fn apply(&self, weight: &Tensor<E>) -> Result<Tensor<E>> {
        let rows = weight.shape()[0];
        let cols: usize = weight.shape()[1..].iter().product();
        let flat = weight.reshape(&[rows, cols])?;
        let wv = flat.matmul(&self.v.reshape(&[cols, 1])?)?; // [rows, 1]
        let sigma = wv.reshape(&[rows])?.mul(&self.u)?.sum().abs().add_scalar(1e-12);
        weight.div(&sigma)
    }

    /// One power-iteration step on raw data; no graph participation.
    pub fn power_iterate(&mut self, weight: &Tensor<E>) {
        let rows = weight.shape()[0];
        let cols: usize = weight.shape()[1..].iter().product();
        let w = weight.data();
        let u = self.u.data();
        // v <- normalize(W^T u)
        let mut v = vec![E::ZERO; cols];
        for r in 0..rows {
            let wrow = &w[r * cols..(r + 1) * cols];
            let uv = u[r];
            for c in 0..cols {
                v[c] += wrow[c] * uv;
            }
        }
        let v = normalize(v);
        // u <- normalize(W v)
        let mut nu = vec![E::ZERO; rows];
        for r in 0..rows {
            let wrow = &w[r * cols..(r + 1) * cols];
            let mut acc = E::ZERO;
            for c in 0..cols {
                acc += wrow[c] * v[c];
            }
            nu[r] = acc;
        }
        self.u = Tensor::from_vec(normalize(nu), &[rows]).expect("u shape");
        self.v = Tensor::from_vec(v, &[cols]).expect("v shape");
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        f(&format!("{prefix}.sn_u"), &mut self.u);
        f(&format!("{prefix}.sn_v"), &mut self.v);
    }
}

fn normalize<E: Element>(mut v: Vec<E>) -> Vec<E> {
    let mut sq = E::ZERO;
    for &x in &v {
        sq += x * x;
    }
    let inv = E::ONE / (sq.sqrt() + E::from_f64(1e-12));
    for x in v.iter_mut() {
        *x = *x * inv;
    }
    v
}

/// Sinusoidal embedding of integer timesteps; `[B, dim]`, no gradient.
pub fn sinusoidal_embedding<E: Element>(steps: &[usize], dim: usize) -> Tensor<E> {
    assert!(dim % 2 == 0, "embedding dim must be even");
    let half = dim / 2;
    let mut data = Vec::with_capacity(steps.len() * dim);
    for &t in steps {
        for k in 0..half {
            let freq = (-(k as f64) * (10_000f64).ln() / (half.max(2) - 1) as f64).exp();
            data.push(E::from_f64((t as f64 * freq).sin()));
        }
        for k in 0..half {
            let freq = (-(k as f64) * (10_000f64).ln() / (half.max(2) - 1) as f64).exp();
            data.push(E::from_f64((t as f64 * freq).cos()));
        }
    }
    Tensor::from_vec(data, &[steps.len(), dim]).expect("embedding shape")
}
