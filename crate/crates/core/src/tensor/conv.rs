//! 2D convolution, its transpose, and exact 2x resampling ops.

use super::matmul::{mm_nn, mm_nt, mm_tn};
use super::{Element, Tensor};
use crate::error::{DdmiError, Result};

fn conv_out_extent(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if k > padded || (padded - k) % stride != 0 {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// Gather one batch item into column layout `[C*kh*kw, H'*W']`: row
/// (c,i,j) holds the input plane shifted by the tap offset, so stride-1
/// gathers reduce to run copies.
#[allow(clippy::too_many_arguments)]
fn im2col<E: Element>(
    input: &[E],
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    h_out: usize,
    w_out: usize,
    cols: &mut [E],
) {
    let hw_out = h_out * w_out;
    debug_assert_eq!(cols.len(), c_in * kh * kw * hw_out);
    cols.iter_mut().for_each(|v| *v = E::ZERO);
    for c in 0..c_in {
        let plane = &input[c * h * w..(c + 1) * h * w];
        for i in 0..kh {
            for j in 0..kw {
                let row_base = ((c * kh + i) * kw + j) * hw_out;
                for oy in 0..h_out {
                    let y = (oy * stride + i) as isize - pad as isize;
                    if y < 0 || y as usize >= h {
                        continue;
                    }
                    let src_row = &plane[y as usize * w..(y as usize + 1) * w];
                    let dst = &mut cols[row_base + oy * w_out..row_base + (oy + 1) * w_out];
                    if stride == 1 {
                        // valid ox range: 0 <= ox + j - pad < w
                        let ox0 = pad.saturating_sub(j);
                        let ox1 = (w + pad - j).min(w_out);
                        if ox0 < ox1 {
                            dst[ox0..ox1]
                                .copy_from_slice(&src_row[ox0 + j - pad..ox1 + j - pad]);
                        }
                    } else {
                        for (ox, slot) in dst.iter_mut().enumerate() {
                            let x = (ox * stride + j) as isize - pad as isize;
                            if x >= 0 && (x as usize) < w {
                                *slot = src_row[x as usize];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Scatter column-layout gradients (same layout as [`im2col`]) back
/// onto one input batch item.
#[allow(clippy::too_many_arguments)]
fn col2im<E: Element>(
    cols: &[E],
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    h_out: usize,
    w_out: usize,
    dinput: &mut [E],
) {
    let hw_out = h_out * w_out;
    for c in 0..c_in {
        let plane = &mut dinput[c * h * w..(c + 1) * h * w];
        for i in 0..kh {
            for j in 0..kw {
                let row_base = ((c * kh + i) * kw + j) * hw_out;
                for oy in 0..h_out {
                    let y = (oy * stride + i) as isize - pad as isize;
                    if y < 0 || y as usize >= h {
                        continue;
                    }
                    let dst_row = &mut plane[y as usize * w..(y as usize + 1) * w];
                    let src = &cols[row_base + oy * w_out..row_base + (oy + 1) * w_out];
                    if stride == 1 {
                        let ox0 = pad.saturating_sub(j);
                        let ox1 = (w + pad - j).min(w_out);
                        for ox in ox0..ox1 {
                            dst_row[ox + j - pad] += src[ox];
                        }
                    } else {
                        for (ox, &v) in src.iter().enumerate() {
                            let x = (ox * stride + j) as isize - pad as isize;
                            if x >= 0 && (x as usize) < w {
                                dst_row[x as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2D convolution: `input [B,C,H,W]`, `kernel [O,C,kh,kw]`, optional
/// per-channel bias, uniform stride and zero padding.
pub fn conv2d<E: Element>(
    input: &Tensor<E>,
    kernel: &Tensor<E>,
    bias: Option<&Tensor<E>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<E>> {
    if input.rank() != 4 {
        return Err(DdmiError::RankMismatch { expected: 4, got: input.shape().to_vec() });
    }
    if kernel.rank() != 4 || kernel.shape()[1] != input.shape()[1] {
        return Err(DdmiError::ShapeMismatch {
            expected: vec![0, input.shape()[1], 0, 0],
            got: kernel.shape().to_vec(),
        });
    }
    let (b, c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]);
    let (o, kh, kw) = (kernel.shape()[0], kernel.shape()[2], kernel.shape()[3]);
    let (Some(h_out), Some(w_out)) =
        (conv_out_extent(h, kh, stride, pad), conv_out_extent(w, kw, stride, pad))
    else {
        return Err(DdmiError::ConvGeometry { input: h, input2: w, kh, kw, stride, padding: pad });
    };
    if let Some(bias) = bias {
        if bias.shape() != [o] {
            return Err(DdmiError::ShapeMismatch { expected: vec![o], got: bias.shape().to_vec() });
        }
    }

    let ckk = c_in * kh * kw;
    let hw_out = h_out * w_out;
    let ker = kernel.data();
    let inp = input.data();
    let bias_data: Option<Vec<E>> = bias.map(|t| t.to_vec());

    // out[b] = ker [O, CKK] x cols [CKK, HW'] lands directly in
    // channel-major layout
    let mut out = vec![E::ZERO; b * o * hw_out];
    let mut cols = vec![E::ZERO; ckk * hw_out];
    for bi in 0..b {
        im2col(&inp[bi * c_in * h * w..], c_in, h, w, kh, kw, stride, pad, h_out, w_out, &mut cols);
        let dst = &mut out[bi * o * hw_out..(bi + 1) * o * hw_out];
        mm_nn(ker, &cols, o, ckk, hw_out, dst);
        if let Some(bv) = &bias_data {
            for oc in 0..o {
                let chan = &mut dst[oc * hw_out..(oc + 1) * hw_out];
                for v in chan.iter_mut() {
                    *v += bv[oc];
                }
            }
        }
    }

    let mut parents = vec![input.clone(), kernel.clone()];
    if let Some(bias) = bias {
        parents.push(bias.clone());
    }
    let need_in = input.requires_grad();
    let need_k = kernel.requires_grad();
    let (need_bias, bias_id) = match bias {
        Some(t) => (t.requires_grad(), t.id()),
        None => (false, 0),
    };
    let (in_id, k_id) = (input.id(), kernel.id());
    let (in_n, k_n) = (input.numel(), kernel.numel());
    let in_data = input.data_rc();
    let k_data = kernel.data_rc();

    Ok(Tensor::from_op(
        out,
        vec![b, o, h_out, w_out],
        parents,
        move |g, sink| {
            let mut cols = vec![E::ZERO; ckk * hw_out];
            let mut d_cols = vec![E::ZERO; ckk * hw_out];
            for bi in 0..b {
                // [O, HW'] gradient slice, already in kernel-product layout
                let g_mat = &g[bi * o * hw_out..(bi + 1) * o * hw_out];
                if need_k || need_in {
                    im2col(
                        &in_data[bi * c_in * h * w..],
                        c_in,
                        h,
                        w,
                        kh,
                        kw,
                        stride,
                        pad,
                        h_out,
                        w_out,
                        &mut cols,
                    );
                }
                if need_k {
                    // dK = g_mat x cols^T
                    mm_nt(g_mat, &cols, o, hw_out, ckk, sink.buf(k_id, k_n));
                }
                if need_in {
                    // dCols = K^T x g_mat
                    d_cols.iter_mut().for_each(|v| *v = E::ZERO);
                    mm_tn(&k_data, g_mat, ckk, o, hw_out, &mut d_cols);
                    let dinp = sink.buf(in_id, in_n);
                    col2im(
                        &d_cols,
                        c_in,
                        h,
                        w,
                        kh,
                        kw,
                        stride,
                        pad,
                        h_out,
                        w_out,
                        &mut dinp[bi * c_in * h * w..(bi + 1) * c_in * h * w],
                    );
                }
                if need_bias {
                    let dbias = sink.buf(bias_id, o);
                    for oc in 0..o {
                        let chan = &g_mat[oc * hw_out..(oc + 1) * hw_out];
                        let mut acc = E::ZERO;
                        for &v in chan {
                            acc += v;
                        }
                        dbias[oc] += acc;
                    }
                }
            }
        },
    ))
}

/// Transposed 2D convolution (adjoint of [`conv2d`] in the spatial map):
/// `input [B,C,H,W]`, `kernel [C,O,kh,kw]`, output
/// `[B,O,(H-1)*stride+kh-2*pad, ...]`.
pub fn conv_transpose2d<E: Element>(
    input: &Tensor<E>,
    kernel: &Tensor<E>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<E>> {
    if input.rank() != 4 {
        return Err(DdmiError::RankMismatch { expected: 4, got: input.shape().to_vec() });
    }
    if kernel.rank() != 4 || kernel.shape()[0] != input.shape()[1] {
        return Err(DdmiError::ShapeMismatch {
            expected: vec![input.shape()[1], 0, 0, 0],
            got: kernel.shape().to_vec(),
        });
    }
    let (b, c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]);
    let (o, kh, kw) = (kernel.shape()[1], kernel.shape()[2], kernel.shape()[3]);
    let h_out = (h - 1) * stride + kh;
    let w_out = (w - 1) * stride + kw;
    if h_out < 2 * pad + 1 || w_out < 2 * pad + 1 {
        return Err(DdmiError::ConvGeometry { input: h, input2: w, kh, kw, stride, padding: pad });
    }
    let (h_out, w_out) = (h_out - 2 * pad, w_out - 2 * pad);

    let inp = input.data();
    let ker = kernel.data();
    let mut out = vec![E::ZERO; b * o * h_out * w_out];
    for bi in 0..b {
        for c in 0..c_in {
            let plane = &inp[(bi * c_in + c) * h * w..(bi * c_in + c + 1) * h * w];
            for oc in 0..o {
                let kplane = &ker[(c * o + oc) * kh * kw..(c * o + oc + 1) * kh * kw];
                let dst = &mut out[(bi * o + oc) * h_out * w_out..(bi * o + oc + 1) * h_out * w_out];
                for y in 0..h {
                    for x in 0..w {
                        let v = plane[y * w + x];
                        for i in 0..kh {
                            let ty = (y * stride + i) as isize - pad as isize;
                            if ty < 0 || ty as usize >= h_out {
                                continue;
                            }
                            for j in 0..kw {
                                let tx = (x * stride + j) as isize - pad as isize;
                                if tx < 0 || tx as usize >= w_out {
                                    continue;
                                }
                                dst[ty as usize * w_out + tx as usize] += v * kplane[i * kw + j];
                            }
                        }
                    }
                }
            }
        }
    }

    let need_in = input.requires_grad();
    let need_k = kernel.requires_grad();
    let (in_id, k_id) = (input.id(), kernel.id());
    let (in_n, k_n) = (input.numel(), kernel.numel());
    let in_data = input.data_rc();
    let k_data = kernel.data_rc();

    Ok(Tensor::from_op(
        out,
        vec![b, o, h_out, w_out],
        vec![input.clone(), kernel.clone()],
        move |g, sink| {
            for bi in 0..b {
                for c in 0..c_in {
                    for oc in 0..o {
                        let kplane = &k_data[(c * o + oc) * kh * kw..(c * o + oc + 1) * kh * kw];
                        let gplane =
                            &g[(bi * o + oc) * h_out * w_out..(bi * o + oc + 1) * h_out * w_out];
                        for y in 0..h {
                            for x in 0..w {
                                let mut acc = E::ZERO;
                                let src =
                                    in_data[(bi * c_in + c) * h * w + y * w + x];
                                for i in 0..kh {
                                    let ty = (y * stride + i) as isize - pad as isize;
                                    if ty < 0 || ty as usize >= h_out {
                                        continue;
                                    }
                                    for j in 0..kw {
                                        let tx = (x * stride + j) as isize - pad as isize;
                                        if tx < 0 || tx as usize >= w_out {
                                            continue;
                                        }
                                        let gv = gplane[ty as usize * w_out + tx as usize];
                                        if need_in {
                                            acc += gv * kplane[i * kw + j];
                                        }
                                        if need_k {
                                            sink.buf(k_id, k_n)
                                                [(c * o + oc) * kh * kw + i * kw + j] += gv * src;
                                        }
                                    }
                                }
                                if need_in {
                                    sink.buf(in_id, in_n)[(bi * c_in + c) * h * w + y * w + x] +=
                                        acc;
                                }
                            }
                        }
                    }
                }
            }
        },
    ))
}

/// 2x2 average pooling; spatial extents must be even.
pub fn avgpool2x<E: Element>(input: &Tensor<E>) -> Result<Tensor<E>> {
    if input.rank() != 4 {
        return Err(DdmiError::RankMismatch { expected: 4, got: input.shape().to_vec() });
    }
    let (b, c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(DdmiError::OddPoolExtent { h, w });
    }
    let (ho, wo) = (h / 2, w / 2);
    let quarter = E::from_f64(0.25);
    let src = input.data();
    let mut out = vec![E::ZERO; b * c * ho * wo];
    for bc in 0..b * c {
        let plane = &src[bc * h * w..(bc + 1) * h * w];
        let dst = &mut out[bc * ho * wo..(bc + 1) * ho * wo];
        for y in 0..ho {
            for x in 0..wo {
                let i = 2 * y * w + 2 * x;
                dst[y * wo + x] =
                    (plane[i] + plane[i + 1] + plane[i + w] + plane[i + w + 1]) * quarter;
            }
        }
    }
    let (id, n, need) = (input.id(), input.numel(), input.requires_grad());
    Ok(Tensor::from_op(out, vec![b, c, ho, wo], vec![input.clone()], move |g, sink| {
        if need {
            let buf = sink.buf(id, n);
            for bc in 0..b * c {
                let gp = &g[bc * ho * wo..(bc + 1) * ho * wo];
                let dst = &mut buf[bc * h * w..(bc + 1) * h * w];
                for y in 0..ho {
                    for x in 0..wo {
                        let share = gp[y * wo + x] * quarter;
                        let i = 2 * y * w + 2 * x;
                        dst[i] += share;
                        dst[i + 1] += share;
                        dst[i + w] += share;
                        dst[i + w + 1] += share;
                    }
                }
            }
        }
    }))
}

/// Nearest-neighbor 2x upsampling.
pub fn upsample_nearest2x<E: Element>(input: &Tensor<E>) -> Result<Tensor<E>> {
    if input.rank() != 4 {
        return Err(DdmiError::RankMismatch { expected: 4, got: input.shape().to_vec() });
    }
    let (b, c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]);
    let (ho, wo) = (2 * h, 2 * w);
    let src = input.data();
    let mut out = vec![E::ZERO; b * c * ho * wo];
    for bc in 0..b * c {
        let plane = &src[bc * h * w..(bc + 1) * h * w];
        let dst = &mut out[bc * ho * wo..(bc + 1) * ho * wo];
        for y in 0..h {
            for x in 0..w {
                let v = plane[y * w + x];
                let i = 2 * y * wo + 2 * x;
                dst[i] = v;
                dst[i + 1] = v;
                dst[i + wo] = v;
                dst[i + wo + 1] = v;
            }
        }
    }
    let (id, n, need) = (input.id(), input.numel(), input.requires_grad());
    Ok(Tensor::from_op(out, vec![b, c, ho, wo], vec![input.clone()], move |g, sink| {
        if need {
            let buf = sink.buf(id, n);
            for bc in 0..b * c {
                let gp = &g[bc * ho * wo..(bc + 1) * ho * wo];
                let dst = &mut buf[bc * h * w..(bc + 1) * h * w];
                for y in 0..h {
                    for x in 0..w {
                        let i = 2 * y * wo + 2 * x;
                        dst[y * w + x] += gp[i] + gp[i + 1] + gp[i + wo] + gp[i + wo + 1];
                    }
                }
            }
        }
    }))
}
