//! Group normalization with affine parameters.

use super::{Element, Tensor};
use crate::error::{DdmiError, Result};

pub const GROUPNORM_EPS: f64 = 1e-6;

/// Normalize `x [B,C,H,W]` per (batch, group) to zero mean / unit
/// variance, then apply per-channel `gamma`/`beta`.
pub fn groupnorm<E: Element>(
    x: &Tensor<E>,
    groups: usize,
    gamma: &Tensor<E>,
    beta: &Tensor<E>,
) -> Result<Tensor<E>> {
    if x.rank() != 4 {
        return Err(DdmiError::RankMismatch { expected: 4, got: x.shape().to_vec() });
    }
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if groups == 0 || c % groups != 0 {
        return Err(DdmiError::GroupMismatch { groups, channels: c });
    }
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(DdmiError::ShapeMismatch { expected: vec![c], got: gamma.shape().to_vec() });
    }

    let cg = c / groups; // channels per group
    let hw = h * w;
    let group_len = cg * hw;
    let eps = E::from_f64(GROUPNORM_EPS);
    let src = x.data();
    let gam = gamma.data();
    let bet = beta.data();

    let mut out = vec![E::ZERO; src.len()];
    // inverse std per (b, group), reused in backward
    let mut inv_std = vec![E::ZERO; b * groups];
    let mut means = vec![E::ZERO; b * groups];
    for bi in 0..b {
        for gi in 0..groups {
            let base = bi * c * hw + gi * group_len;
            let chunk = &src[base..base + group_len];
            let mut mean = E::ZERO;
            for &v in chunk {
                mean += v;
            }
            mean = mean * E::from_f64(1.0 / group_len as f64);
            let mut var = E::ZERO;
            for &v in chunk {
                let d = v - mean;
                var += d * d;
            }
            var = var * E::from_f64(1.0 / group_len as f64);
            let istd = E::ONE / (var + eps).sqrt();
            inv_std[bi * groups + gi] = istd;
            means[bi * groups + gi] = mean;
            for ci in 0..cg {
                let ch = gi * cg + ci;
                let dst = &mut out[base + ci * hw..base + (ci + 1) * hw];
                let sl = &chunk[ci * hw..(ci + 1) * hw];
                for i in 0..hw {
                    dst[i] = (sl[i] - mean) * istd * gam[ch] + bet[ch];
                }
            }
        }
    }

    let need_x = x.requires_grad();
    let need_g = gamma.requires_grad();
    let need_b = beta.requires_grad();
    let (xid, gid, bid) = (x.id(), gamma.id(), beta.id());
    let xn = x.numel();
    let x_data = x.data_rc();
    let gam_v = gamma.to_vec();

    Ok(Tensor::from_op(
        out,
        x.shape().to_vec(),
        vec![x.clone(), gamma.clone(), beta.clone()],
        move |g, sink| {
            let inv_n = E::from_f64(1.0 / group_len as f64);
            for bi in 0..b {
                for gi in 0..groups {
                    let base = bi * c * hw + gi * group_len;
                    let istd = inv_std[bi * groups + gi];
                    let mean = means[bi * groups + gi];

                    // dY w.r.t. normalized input, plus the two group means
                    // needed for the input gradient.
                    let mut sum_dxhat = E::ZERO;
                    let mut sum_dxhat_xhat = E::ZERO;
                    for ci in 0..cg {
                        let ch = gi * cg + ci;
                        for i in 0..hw {
                            let idx = base + ci * hw + i;
                            let xhat = (x_data[idx] - mean) * istd;
                            let dxhat = g[idx] * gam_v[ch];
                            sum_dxhat += dxhat;
                            sum_dxhat_xhat += dxhat * xhat;
                        }
                    }
                    if need_x {
                        let dx = sink.buf(xid, xn);
                        let m1 = sum_dxhat * inv_n;
                        let m2 = sum_dxhat_xhat * inv_n;
                        for ci in 0..cg {
                            let ch = gi * cg + ci;
                            for i in 0..hw {
                                let idx = base + ci * hw + i;
                                let xhat = (x_data[idx] - mean) * istd;
                                let dxhat = g[idx] * gam_v[ch];
                                dx[idx] += istd * (dxhat - m1 - xhat * m2);
                            }
                        }
                    }
                    if need_g {
                        let dg = sink.buf(gid, c);
                        for ci in 0..cg {
                            let ch = gi * cg + ci;
                            let mut acc = E::ZERO;
                            for i in 0..hw {
                                let idx = base + ci * hw + i;
                                acc += g[idx] * (x_data[idx] - mean) * istd;
                            }
                            dg[ch] += acc;
                        }
                    }
                    if need_b {
                        let db = sink.buf(bid, c);
                        for ci in 0..cg {
                            let ch = gi * cg + ci;
                            let mut acc = E::ZERO;
                            for i in 0..hw {
                                acc += g[base + ci * hw + i];
                            }
                            db[ch] += acc;
                        }
                    }
                }
            }
        },
    ))
}
