//! Run metrics: PSNR, IoU, spectral band energies, and the CSV log.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{DdmiError, Result};

/// Peak signal-to-noise ratio between two [-1, 1] signals (peak = 2.0),
/// capped at 99 dB for identical inputs.
pub fn psnr(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(DdmiError::ShapeMismatch { expected: vec![a.len()], got: vec![b.len()] });
    }
    let mut mse = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let d = (x - y) as f64;
        mse += d * d;
    }
    mse /= a.len() as f64;
    let value = 10.0 * (4.0 / mse).log10();
    if !value.is_finite() || value > 99.0 {
        return Ok(99.0);
    }
    Ok(value)
}

/// Intersection-over-union of two occupancy fields thresholded at
/// probability 0.5 (logit 0).
pub fn iou_at_half(pred_logits: &[f32], target: &[f32]) -> Result<f64> {
    if pred_logits.len() != target.len() || target.is_empty() {
        return Err(DdmiError::ShapeMismatch {
            expected: vec![target.len()],
            got: vec![pred_logits.len()],
        });
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&p, &t) in pred_logits.iter().zip(target) {
        let pv = p >= 0.0;
        let tv = t >= 0.5;
        if pv && tv {
            inter += 1;
        }
        if pv || tv {
            union += 1;
        }
    }
    if union == 0 {
        // both empty: perfect agreement
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Radial spectral energy of a grayscale image in three bands of
/// normalized frequency: [0, 1/3), [1/3, 2/3), and >= 2/3, where 1.0 is
/// the per-axis Nyquist rate. The DC term is excluded. Plain
/// O(n^2)-per-axis DFT; fine at generation sizes.
pub fn fft_band_energy(gray: &[f64], h: usize, w: usize) -> (f64, f64, f64) {
    assert_eq!(gray.len(), h * w);
    // row DFTs then column DFTs
    let mut re = gray.to_vec();
    let mut im = vec![0.0f64; h * w];
    dft_axis(&mut re, &mut im, h, w, true);
    dft_axis(&mut re, &mut im, h, w, false);

    let (mut low, mut mid, mut high) = (0.0, 0.0, 0.0);
    for ky in 0..h {
        for kx in 0..w {
            if ky == 0 && kx == 0 {
                continue;
            }
            let fy = ky.min(h - ky) as f64 / (h as f64 / 2.0);
            let fx = kx.min(w - kx) as f64 / (w as f64 / 2.0);
            let radius = (fy * fy + fx * fx).sqrt();
            let e = re[ky * w + kx].powi(2) + im[ky * w + kx].powi(2);
            if radius < 1.0 / 3.0 {
                low += e;
            } else if radius < 2.0 / 3.0 {
                mid += e;
            } else {
                high += e;
            }
        }
    }
    (low, mid, high)
}

fn dft_axis(re: &mut [f64], im: &mut [f64], h: usize, w: usize, rows: bool) {
    let (outer, n) = if rows { (h, w) } else { (w, h) };
    let mut out_re = vec![0.0f64; n];
    let mut out_im = vec![0.0f64; n];
    // precomputed twiddle table
    let mut cos = vec![0.0f64; n];
    let mut sin = vec![0.0f64; n];
    for k in 0..n {
        let ang = -2.0 * std::f64::consts::PI * k as f64 / n as f64;
        cos[k] = ang.cos();
        sin[k] = ang.sin();
    }
    let at = |o: usize, i: usize| if rows { o * w + i } else { i * w + o };
    for o in 0..outer {
        for k in 0..n {
            let mut acc_re = 0.0;
            let mut acc_im = 0.0;
            for i in 0..n {
                let tw = (k * i) % n;
                let (c, s) = (cos[tw], sin[tw]);
                let (vr, vi) = (re[at(o, i)], im[at(o, i)]);
                acc_re += vr * c - vi * s;
                acc_im += vr * s + vi * c;
            }
            out_re[k] = acc_re;
            out_im[k] = acc_im;
        }
        for k in 0..n {
            re[at(o, k)] = out_re[k];
            im[at(o, k)] = out_im[k];
        }
    }
}

/// Append-only CSV metrics log. Every numeric cell is checked for NaN
/// before it reaches the file; steps must increase strictly.
pub struct MetricsWriter {
    out: BufWriter<File>,
    columns: usize,
    last_step: Option<u64>,
}

impl MetricsWriter {
    pub fn create(path: &Path, header: &[&str]) -> Result<MetricsWriter> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "step,{}", header.join(","))?;
        out.flush()?;
        Ok(MetricsWriter { out, columns: header.len(), last_step: None })
    }

    pub fn append(&mut self, step: u64, values: &[f64]) -> Result<()> {
        if values.len() != self.columns {
            return Err(DdmiError::Data(format!(
                "metrics row has {} values, header has {}",
                values.len(),
                self.columns
            )));
        }
        if let Some(last) = self.last_step {
            if step <= last {
                return Err(DdmiError::Data(format!(
                    "metrics step {step} not after {last}"
                )));
            }
        }
        for &v in values {
            if v.is_nan() {
                return Err(DdmiError::NonFinite { context: format!("metrics at step {step}") });
            }
        }
        let row: Vec<String> = values.iter().map(|v| format!("{v:.6}")).collect();
        writeln!(self.out, "{step},{}", row.join(","))?;
        self.out.flush()?;
        self.last_step = Some(step);
        Ok(())
    }
}
