//! Multi-scale training batches: random target resolution, area
//! resampling, and global-frame crop coordinates.

use crate::error::{DdmiError, Result};
use crate::rng::Rng;
use crate::tensor::{Element, Tensor};

/// Exact area-average resampling of `[C, H, W]` to `(h2, w2)`,
/// separable per axis with fractional-overlap box weights.
pub fn area_resample<E: Element>(src: &Tensor<E>, h2: usize, w2: usize) -> Result<Tensor<E>> {
    if src.rank() != 3 {
        return Err(DdmiError::RankMismatch { expected: 3, got: src.shape().to_vec() });
    }
    let (c, h, w) = (src.shape()[0], src.shape()[1], src.shape()[2]);
    if h2 == h && w2 == w {
        return Ok(src.detach());
    }
    let wy = axis_weights(h, h2);
    let wx = axis_weights(w, w2);
    let d = src.data();

    // rows first: [C, h2, W]
    let mut tmp = vec![E::ZERO; c * h2 * w];
    for ch in 0..c {
        for (y2, row_w) in wy.iter().enumerate() {
            let dst = &mut tmp[(ch * h2 + y2) * w..(ch * h2 + y2 + 1) * w];
            for &(y, wv) in row_w {
                let srow = &d[(ch * h + y) * w..(ch * h + y + 1) * w];
                let wv = E::from_f64(wv);
                for x in 0..w {
                    dst[x] += srow[x] * wv;
                }
            }
        }
    }
    // then columns: [C, h2, w2]
    let mut out = vec![E::ZERO; c * h2 * w2];
    for ch in 0..c {
        for y2 in 0..h2 {
            let srow = &tmp[(ch * h2 + y2) * w..(ch * h2 + y2 + 1) * w];
            let dst = &mut out[(ch * h2 + y2) * w2..(ch * h2 + y2 + 1) * w2];
            for (x2, col_w) in wx.iter().enumerate() {
                let mut acc = E::ZERO;
                for &(x, wv) in col_w {
                    acc += srow[x] * E::from_f64(wv);
                }
                dst[x2] = acc;
            }
        }
    }
    Tensor::from_vec(out, &[c, h2, w2])
}

/// Box-filter weights from `n` source cells onto `n2` target cells:
/// target j covers the source interval [j*n/n2, (j+1)*n/n2).
fn axis_weights(n: usize, n2: usize) -> Vec<Vec<(usize, f64)>> {
    let ratio = n as f64 / n2 as f64;
    (0..n2)
        .map(|j| {
            let lo = j as f64 * ratio;
            let hi = (j + 1) as f64 * ratio;
            let mut weights = Vec::new();
            let mut i = lo.floor() as usize;
            while (i as f64) < hi && i < n {
                let overlap = hi.min((i + 1) as f64) - lo.max(i as f64);
                if overlap > 0.0 {
                    weights.push((i, overlap / ratio));
                }
                i += 1;
            }
            weights
        })
        .collect()
}

/// One multi-scale training sample: crop values, their coordinates in
/// the global [-1, 1] frame, and the scale variable.
#[derive(Clone, Debug)]
pub struct MultiscaleBatch<E: Element = f32> {
    /// `[r*r, C]`, rows aligned with `coords`.
    pub values: Tensor<E>,
    /// `[r*r, 2]` in the align-corners frame of the rho-grid.
    pub coords: Tensor<E>,
    /// s = r / rho
    pub scale: f64,
    pub rho: usize,
    /// crop origin in the rho-grid (rows, cols)
    pub offset: (usize, usize),
}

/// Resample one source image to a randomly drawn resolution
/// rho in {r, 1.5r, 2r}, crop an r x r window when rho > r, and return
/// the window's pixel values with their global coordinates.
pub fn multiscale_batch<E: Element>(
    source: &Tensor<E>,
    base_r: usize,
    rng: &mut Rng,
) -> Result<MultiscaleBatch<E>> {
    if source.rank() != 3 {
        return Err(DdmiError::RankMismatch { expected: 3, got: source.shape().to_vec() });
    }
    let (c, h, w) = (source.shape()[0], source.shape()[1], source.shape()[2]);
    if h < 2 * base_r || w < 2 * base_r {
        return Err(DdmiError::Data(format!(
            "multi-scale source must be at least {0}x{0}, got {h}x{w}",
            2 * base_r
        )));
    }
    let rho = match rng.below(3) {
        0 => base_r,
        1 => base_r + base_r / 2,
        _ => 2 * base_r,
    };
    let resampled = area_resample(source, rho, rho)?;
    let max_off = rho - base_r;
    let (oy, ox) = if max_off == 0 {
        (0, 0)
    } else {
        (rng.below(max_off + 1), rng.below(max_off + 1))
    };

    let d = resampled.data();
    let mut values = Vec::with_capacity(base_r * base_r * c);
    let mut coords = Vec::with_capacity(base_r * base_r * 2);
    let denom = (rho - 1) as f64;
    for i in 0..base_r {
        for j in 0..base_r {
            coords.push(E::from_f64(-1.0 + 2.0 * (oy + i) as f64 / denom));
            coords.push(E::from_f64(-1.0 + 2.0 * (ox + j) as f64 / denom));
            for ch in 0..c {
                values.push(d[(ch * rho + oy + i) * rho + ox + j]);
            }
        }
    }
    Ok(MultiscaleBatch {
        values: Tensor::from_vec(values, &[base_r * base_r, c])?,
        coords: Tensor::from_vec(coords, &[base_r * base_r, 2])?,
        scale: base_r as f64 / rho as f64,
        rho,
        offset: (oy, ox),
    })
}
