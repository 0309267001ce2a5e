//! Elementwise, broadcasting, reduction, and shape ops.

use super::{Element, Tensor};
use crate::error::{DdmiError, Result};

/// Broadcast result shape under trailing-dimension alignment.
pub fn broadcast_shape(lhs: &[usize], rhs: &[usize]) -> Result<Vec<usize>> {
    let rank = lhs.len().max(rhs.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let a = if i < rank - lhs.len() { 1 } else { lhs[i - (rank - lhs.len())] };
        let b = if i < rank - rhs.len() { 1 } else { rhs[i - (rank - rhs.len())] };
        if a == b || a == 1 || b == 1 {
            out[i] = a.max(b);
        } else {
            return Err(DdmiError::BroadcastMismatch { lhs: lhs.to_vec(), rhs: rhs.to_vec() });
        }
    }
    Ok(out)
}

/// Row-major strides with zeros on broadcast axes, aligned to `out` rank.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let offset = rank - shape.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1usize;
    for i in (0..shape.len()).rev() {
        strides[offset + i] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Odometer over the output index space yielding flat offsets into two
/// broadcast operands.
struct PairIter {
    idx: Vec<usize>,
    out_shape: Vec<usize>,
    sa: Vec<usize>,
    sb: Vec<usize>,
    oa: usize,
    ob: usize,
    remaining: usize,
}

impl PairIter {
    fn new(out_shape: &[usize], sa: Vec<usize>, sb: Vec<usize>) -> Self {
        let total: usize = out_shape.iter().product();
        PairIter {
            idx: vec![0; out_shape.len()],
            out_shape: out_shape.to_vec(),
            sa,
            sb,
            oa: 0,
            ob: 0,
            remaining: total,
        }
    }
}

impl Iterator for PairIter {
    type Item = (usize, usize);

    fn next(&mut self) -> Option<(usize, usize)> {
        if self.remaining == 0 {
            return None;
        }
        let item = (self.oa, self.ob);
        self.remaining -= 1;
        for d in (0..self.idx.len()).rev() {
            self.idx[d] += 1;
            self.oa += self.sa[d];
            self.ob += self.sb[d];
            if self.idx[d] < self.out_shape[d] {
                break;
            }
            self.oa -= self.sa[d] * self.out_shape[d];
            self.ob -= self.sb[d] * self.out_shape[d];
            self.idx[d] = 0;
        }
        Some(item)
    }
}

/// How one operand's flat index maps onto the output's flat index.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Pattern {
    /// Same shape as the output.
    Full,
    /// Repeating tile: index = flat % period (trailing dims match).
    Suffix(usize),
    /// Per-block constant: index = flat / inner (leading dims match).
    Prefix(usize),
    /// Anything else: odometer walk.
    General,
}

fn classify(shape: &[usize], out: &[usize]) -> Pattern {
    if shape == out {
        return Pattern::Full;
    }
    let numel: usize = shape.iter().product();
    let out_numel: usize = out.iter().product();
    // right-align, then strip broadcast dims
    let pad = out.len() - shape.len();
    let padded: Vec<usize> = std::iter::repeat_n(1usize, pad).chain(shape.iter().copied()).collect();
    // suffix: every non-1 dim sits in a contiguous trailing run that
    // matches the output exactly
    let mut suffix = true;
    let mut seen_real = false;
    for d in (0..out.len()).rev() {
        if padded[d] == out[d] && !(padded[d] == 1 && seen_real) {
            if padded[d] != 1 {
                seen_real = true;
            }
            continue;
        }
        if padded[d] == 1 {
            // all remaining leading dims must be 1 too
            if padded[..=d].iter().any(|&v| v != 1) {
                suffix = false;
            }
            break;
        }
        suffix = false;
        break;
    }
    if suffix {
        return Pattern::Suffix(numel.max(1));
    }
    // prefix: leading dims match, trailing dims are all 1
    let mut split = out.len();
    while split > 0 && padded[split - 1] == 1 {
        split -= 1;
    }
    if padded[..split] == out[..split] {
        let inner: usize = out[split..].iter().product();
        debug_assert_eq!(numel * inner, out_numel);
        return Pattern::Prefix(inner);
    }
    Pattern::General
}

/// Elementwise binary op with broadcasting. `f` computes the value,
/// `dfda`/`dfdb` the partials as functions of (a, b).
fn binary_op<E: Element>(
    a: &Tensor<E>,
    b: &Tensor<E>,
    f: fn(E, E) -> E,
    dfda: fn(E, E) -> E,
    dfdb: fn(E, E) -> E,
) -> Result<Tensor<E>> {
    let out_shape = broadcast_shape(a.shape(), b.shape())?;
    let numel: usize = out_shape.iter().product();
    let ad = a.data();
    let bd = b.data();
    let pa = classify(a.shape(), &out_shape);
    let pb = classify(b.shape(), &out_shape);

    let mut data = Vec::with_capacity(numel);
    match (pa, pb) {
        (Pattern::Full, Pattern::Full) => {
            for i in 0..numel {
                data.push(f(ad[i], bd[i]));
            }
        }
        (Pattern::Full, Pattern::Suffix(p)) => {
            for chunk in 0..numel / p {
                let arow = &ad[chunk * p..(chunk + 1) * p];
                for j in 0..p {
                    data.push(f(arow[j], bd[j]));
                }
            }
        }
        (Pattern::Full, Pattern::Prefix(inner)) => {
            for (o, &bv) in bd.iter().enumerate() {
                let arow = &ad[o * inner..(o + 1) * inner];
                for &av in arow {
                    data.push(f(av, bv));
                }
            }
        }
        (Pattern::Suffix(p), Pattern::Full) => {
            for chunk in 0..numel / p {
                let brow = &bd[chunk * p..(chunk + 1) * p];
                for j in 0..p {
                    data.push(f(ad[j], brow[j]));
                }
            }
        }
        (Pattern::Prefix(inner), Pattern::Full) => {
            for (o, &av) in ad.iter().enumerate() {
                let brow = &bd[o * inner..(o + 1) * inner];
                for &bv in brow {
                    data.push(f(av, bv));
                }
            }
        }
        _ => {
            let sa = broadcast_strides(a.shape(), &out_shape);
            let sb = broadcast_strides(b.shape(), &out_shape);
            for (oa, ob) in PairIter::new(&out_shape, sa, sb) {
                data.push(f(ad[oa], bd[ob]));
            }
        }
    }

    let need_a = a.requires_grad();
    let need_b = b.requires_grad();
    let (aid, bid) = (a.id(), b.id());
    let (an, bn) = (a.numel(), b.numel());
    let (a_data, b_data) = (a.data_rc(), b.data_rc());
    let (a_shape, b_shape) = (a.shape().to_vec(), b.shape().to_vec());
    let out_shape_bw = out_shape.clone();

    Ok(Tensor::from_op(
        data,
        out_shape,
        vec![a.clone(), b.clone()],
        move |g, sink| {
            let numel = g.len();
            // index resolvers for valued operands
            let fetch_a = |i: usize| -> E {
                match pa {
                    Pattern::Full => a_data[i],
                    Pattern::Suffix(p) => a_data[i % p],
                    Pattern::Prefix(inner) => a_data[i / inner],
                    Pattern::General => unreachable!("handled below"),
                }
            };
            let fetch_b = |i: usize| -> E {
                match pb {
                    Pattern::Full => b_data[i],
                    Pattern::Suffix(p) => b_data[i % p],
                    Pattern::Prefix(inner) => b_data[i / inner],
                    Pattern::General => unreachable!("handled below"),
                }
            };
            if pa == Pattern::General || pb == Pattern::General {
                let sa = broadcast_strides(&a_shape, &out_shape_bw);
                let sb = broadcast_strides(&b_shape, &out_shape_bw);
                if need_a {
                    let buf = sink.buf(aid, an);
                    for (i, (oa, ob)) in
                        PairIter::new(&out_shape_bw, sa.clone(), sb.clone()).enumerate()
                    {
                        buf[oa] += g[i] * dfda(a_data[oa], b_data[ob]);
                    }
                }
                if need_b {
                    let buf = sink.buf(bid, bn);
                    for (i, (oa, ob)) in PairIter::new(&out_shape_bw, sa, sb).enumerate() {
                        buf[ob] += g[i] * dfdb(a_data[oa], b_data[ob]);
                    }
                }
                return;
            }
            if need_a {
                let buf = sink.buf(aid, an);
                match pa {
                    Pattern::Full => match pb {
                        Pattern::Full => {
                            for i in 0..numel {
                                buf[i] += g[i] * dfda(a_data[i], b_data[i]);
                            }
                        }
                        Pattern::Suffix(p) => {
                            for chunk in 0..numel / p {
                                let base = chunk * p;
                                for j in 0..p {
                                    buf[base + j] += g[base + j] * dfda(a_data[base + j], b_data[j]);
                                }
                            }
                        }
                        Pattern::Prefix(inner) => {
                            for (o, &bv) in b_data.iter().enumerate() {
                                let base = o * inner;
                                for j in 0..inner {
                                    buf[base + j] += g[base + j] * dfda(a_data[base + j], bv);
                                }
                            }
                        }
                        Pattern::General => unreachable!(),
                    },
                    Pattern::Suffix(p) => {
                        for chunk in 0..numel / p {
                            let base = chunk * p;
                            for j in 0..p {
                                buf[j] += g[base + j] * dfda(a_data[j], fetch_b(base + j));
                            }
                        }
                    }
                    Pattern::Prefix(inner) => {
                        for (o, slot) in buf.iter_mut().enumerate() {
                            let base = o * inner;
                            let mut acc = E::ZERO;
                            for j in 0..inner {
                                acc += g[base + j] * dfda(a_data[o], fetch_b(base + j));
                            }
                            *slot += acc;
                        }
                    }
                    Pattern::General => unreachable!(),
                }
            }
            if need_b {
                let buf = sink.buf(bid, bn);
                match pb {
                    Pattern::Full => {
                        for i in 0..numel {
                            buf[i] += g[i] * dfdb(fetch_a(i), b_data[i]);
                        }
                    }
                    Pattern::Suffix(p) => {
                        for chunk in 0..numel / p {
                            let base = chunk * p;
                            for j in 0..p {
                                buf[j] += g[base + j] * dfdb(fetch_a(base + j), b_data[j]);
                            }
                        }
                    }
                    Pattern::Prefix(inner) => {
                        for (o, slot) in buf.iter_mut().enumerate() {
                            let base = o * inner;
                            let mut acc = E::ZERO;
                            for j in 0..inner {
                                acc += g[base + j] * dfdb(fetch_a(base + j), b_data[o]);
                            }
                            *slot += acc;
                        }
                    }
                    Pattern::General => unreachable!(),
                }
            }
        },
    ))
}

/// Elementwise unary op. `df` receives (input, output).
fn unary_op<E: Element>(x: &Tensor<E>, f: fn(E) -> E, df: fn(E, E) -> E) -> Tensor<E> {
    let data: Vec<E> = x.data().iter().map(|&v| f(v)).collect();
    let xid = x.id();
    let xn = x.numel();
    let need = x.requires_grad();
    let x_data = x.data_rc();
    let y_data: Vec<E> = data.clone();
    Tensor::from_op(data, x.shape().to_vec(), vec![x.clone()], move |g, sink| {
        if need {
            let buf = sink.buf(xid, xn);
            for i in 0..g.len() {
                buf[i] += g[i] * df(x_data[i], y_data[i]);
            }
        }
    })
}

impl<E: Element> Tensor<E> {
    pub fn add(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        binary_op(self, other, |a, b| a + b, |_, _| E::ONE, |_, _| E::ONE)
    }

    pub fn sub(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        binary_op(self, other, |a, b| a - b, |_, _| E::ONE, |_, _| -E::ONE)
    }

    pub fn mul(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        binary_op(self, other, |a, b| a * b, |_, b| b, |a, _| a)
    }

    pub fn div(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        binary_op(self, other, |a, b| a / b, |_, b| E::ONE / b, |a, b| -a / (b * b))
    }

    pub fn neg(&self) -> Tensor<E> {
        unary_op(self, |v| -v, |_, _| -E::ONE)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor<E> {
        let c = E::from_f64(c);
        let data = self.data().iter().map(|&v| v + c).collect();
        let (id, n, need) = (self.id(), self.numel(), self.requires_grad());
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], move |g, sink| {
            if need {
                let buf = sink.buf(id, n);
                for i in 0..g.len() {
                    buf[i] += g[i];
                }
            }
        })
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor<E> {
        let c = E::from_f64(c);
        let data = self.data().iter().map(|&v| v * c).collect();
        let (id, n, need) = (self.id(), self.numel(), self.requires_grad());
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], move |g, sink| {
            if need {
                let buf = sink.buf(id, n);
                for i in 0..g.len() {
                    buf[i] += g[i] * c;
                }
            }
        })
    }

    pub fn exp(&self) -> Tensor<E> {
        unary_op(self, |v| v.exp(), |_, y| y)
    }

    pub fn ln(&self) -> Tensor<E> {
        unary_op(self, |v| v.ln(), |x, _| E::ONE / x)
    }

    pub fn sqrt(&self) -> Tensor<E> {
        unary_op(self, |v| v.sqrt(), |_, y| E::from_f64(0.5) / y)
    }

    pub fn abs(&self) -> Tensor<E> {
        unary_op(
            self,
            |v| v.abs(),
            |x, _| if x >= E::ZERO { E::ONE } else { -E::ONE },
        )
    }

    pub fn square(&self) -> Tensor<E> {
        unary_op(self, |v| v * v, |x, _| E::from_f64(2.0) * x)
    }

    pub fn tanh(&self) -> Tensor<E> {
        unary_op(self, |v| v.tanh(), |_, y| E::ONE - y * y)
    }

    pub fn relu(&self) -> Tensor<E> {
        unary_op(
            self,
            |v| v.maximum(E::ZERO),
            |x, _| if x > E::ZERO { E::ONE } else { E::ZERO },
        )
    }

    pub fn sigmoid(&self) -> Tensor<E> {
        unary_op(self, sigmoid_val, |_, y| y * (E::ONE - y))
    }

    pub fn silu(&self) -> Tensor<E> {
        unary_op(
            self,
            |x| x * sigmoid_val(x),
            |x, _| {
                let s = sigmoid_val(x);
                s + x * s * (E::ONE - s)
            },
        )
    }

    pub fn gelu(&self) -> Tensor<E> {
        unary_op(self, gelu_val, gelu_grad)
    }

    /// ln(1 + e^x), evaluated in the overflow-safe form.
    pub fn softplus(&self) -> Tensor<E> {
        unary_op(
            self,
            |x| x.maximum(E::ZERO) + (E::ONE + (-x.abs()).exp()).ln(),
            |x, _| sigmoid_val(x),
        )
    }

    // ── Reductions ────────────────────────────────────────────────

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&self) -> Tensor<E> {
        let mut acc = E::ZERO;
        for &v in self.data() {
            acc += v;
        }
        let (id, n, need) = (self.id(), self.numel(), self.requires_grad());
        Tensor::from_op(vec![acc], Vec::new(), vec![self.clone()], move |g, sink| {
            if need {
                let buf = sink.buf(id, n);
                for slot in buf.iter_mut() {
                    *slot += g[0];
                }
            }
        })
    }

    /// Mean of all elements, as a rank-0 tensor.
    pub fn mean(&self) -> Tensor<E> {
        let n = self.numel();
        self.sum().mul_scalar(1.0 / n as f64)
    }

    /// Sum along one axis. With `keepdim` the axis stays with extent 1.
    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Tensor<E> {
        assert!(axis < self.rank(), "axis {axis} out of range for shape {:?}", self.shape());
        let shape = self.shape();
        let outer: usize = shape[..axis].iter().product();
        let extent = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();

        let src = self.data();
        let mut data = vec![E::ZERO; outer * inner];
        for o in 0..outer {
            for k in 0..extent {
                let base = (o * extent + k) * inner;
                let dst = &mut data[o * inner..(o + 1) * inner];
                for i in 0..inner {
                    dst[i] += src[base + i];
                }
            }
        }

        let mut out_shape: Vec<usize> = shape.to_vec();
        if keepdim {
            out_shape[axis] = 1;
        } else {
            out_shape.remove(axis);
        }

        let (id, n, need) = (self.id(), self.numel(), self.requires_grad());
        Tensor::from_op(data, out_shape, vec![self.clone()], move |g, sink| {
            if need {
                let buf = sink.buf(id, n);
                for o in 0..outer {
                    for k in 0..extent {
                        let base = (o * extent + k) * inner;
                        let gsl = &g[o * inner..(o + 1) * inner];
                        for i in 0..inner {
                            buf[base + i] += gsl[i];
                        }
                    }
                }
            }
        })
    }

    // ── Shape ops ─────────────────────────────────────────────────

    /// Reinterpret with a new shape of equal element count (zero-copy).
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<E>> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(DdmiError::ShapeMismatch { expected: shape.to_vec(), got: self.shape().to_vec() });
        }
        let (id, n, need) = (self.id(), self.numel(), self.requires_grad());
        Ok(Tensor::from_op(
            self.to_vec(),
            shape.to_vec(),
            vec![self.clone()],
            move |g, sink| {
                if need {
                    let buf = sink.buf(id, n);
                    for i in 0..g.len() {
                        buf[i] += g[i];
                    }
                }
            },
        ))
    }

    /// Concatenate along `axis`. All other extents must agree.
    pub fn concat(parts: &[Tensor<E>], axis: usize) -> Result<Tensor<E>> {
        assert!(!parts.is_empty());
        let rank = parts[0].rank();
        if axis >= rank {
            return Err(DdmiError::RankMismatch { expected: axis + 1, got: parts[0].shape().to_vec() });
        }
        for p in parts {
            if p.rank() != rank {
                return Err(DdmiError::RankMismatch { expected: rank, got: p.shape().to_vec() });
            }
            for d in 0..rank {
                if d != axis && p.shape()[d] != parts[0].shape()[d] {
                    return Err(DdmiError::ShapeMismatch {
                        expected: parts[0].shape().to_vec(),
                        got: p.shape().to_vec(),
                    });
                }
            }
        }

        let outer: usize = parts[0].shape()[..axis].iter().product();
        let inner: usize = parts[0].shape()[axis + 1..].iter().product();
        let extents: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total_extent: usize = extents.iter().sum();

        let mut out_shape = parts[0].shape().to_vec();
        out_shape[axis] = total_extent;
        let mut data = Vec::with_capacity(outer * total_extent * inner);
        for o in 0..outer {
            for (p, part) in parts.iter().enumerate() {
                let chunk = extents[p] * inner;
                data.extend_from_slice(&part.data()[o * chunk..(o + 1) * chunk]);
            }
        }

        let meta: Vec<(u64, usize, bool, usize)> = parts
            .iter()
            .map(|p| (p.id(), p.numel(), p.requires_grad(), p.shape()[axis]))
            .collect();
        Ok(Tensor::from_op(
            data,
            out_shape,
            parts.to_vec(),
            move |g, sink| {
                for o in 0..outer {
                    let mut off = o * total_extent * inner;
                    for &(id, n, need, extent) in &meta {
                        let chunk = extent * inner;
                        if need {
                            let buf = sink.buf(id, n);
                            let dst = &mut buf[o * chunk..(o + 1) * chunk];
                            let gsl = &g[off..off + chunk];
                            for i in 0..chunk {
                                dst[i] += gsl[i];
                            }
                        }
                        off += chunk;
                    }
                }
            },
        ))
    }

    /// Slice `len` extents starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<E>> {
        if axis >= self.rank() || start + len > self.shape()[axis] {
            return Err(DdmiError::ShapeMismatch {
                expected: self.shape().to_vec(),
                got: vec![axis, start, len],
            });
        }
        let shape = self.shape();
        let outer: usize = shape[..axis].iter().product();
        let extent = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();

        let src = self.data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;

        let (id, n, need) = (self.id(), self.numel(), self.requires_grad());
        Ok(Tensor::from_op(data, out_shape, vec![self.clone()], move |g, sink| {
            if need {
                let buf = sink.buf(id, n);
                for o in 0..outer {
                    let base = (o * extent + start) * inner;
                    let gsl = &g[o * len * inner..(o + 1) * len * inner];
                    for i in 0..len * inner {
                        buf[base + i] += gsl[i];
                    }
                }
            }
        }))
    }

    /// Gather rows along axis 0.
    pub fn index_select0(&self, indices: &[usize]) -> Result<Tensor<E>> {
        if self.rank() == 0 {
            return Err(DdmiError::RankMismatch { expected: 1, got: vec![] });
        }
        let rows = self.shape()[0];
        let inner: usize = self.shape()[1..].iter().product();
        for &ix in indices {
            if ix >= rows {
                return Err(DdmiError::ShapeMismatch { expected: vec![rows], got: vec![ix] });
            }
        }
        let src = self.data();
        let mut data = Vec::with_capacity(indices.len() * inner);
        for &ix in indices {
            data.extend_from_slice(&src[ix * inner..(ix + 1) * inner]);
        }
        let mut out_shape = self.shape().to_vec();
        out_shape[0] = indices.len();

        let (id, n, need) = (self.id(), self.numel(), self.requires_grad());
        let idx: Vec<usize> = indices.to_vec();
        Ok(Tensor::from_op(data, out_shape, vec![self.clone()], move |g, sink| {
            if need {
                let buf = sink.buf(id, n);
                for (r, &ix) in idx.iter().enumerate() {
                    let dst = &mut buf[ix * inner..(ix + 1) * inner];
                    let gsl = &g[r * inner..(r + 1) * inner];
                    for i in 0..inner {
                        dst[i] += gsl[i];
                    }
                }
            }
        }))
    }
}

fn sigmoid_val<E: Element>(x: E) -> E {
    // Evaluate via exp of a non-positive argument on both branches.
    if x >= E::ZERO {
        E::ONE / (E::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (E::ONE + e)
    }
}

const GELU_COEF: f64 = 0.044_715;

fn gelu_val<E: Element>(x: E) -> E {
    // tanh approximation
    let s = E::from_f64((2.0 / std::f64::consts::PI).sqrt());
    let c = E::from_f64(GELU_COEF);
    let u = s * (x + c * x * x * x);
    E::from_f64(0.5) * x * (E::ONE + u.tanh())
}

fn gelu_grad<E: Element>(x: E, _y: E) -> E {
    let s = E::from_f64((2.0 / std::f64::consts::PI).sqrt());
    let c = E::from_f64(GELU_COEF);
    let u = s * (x + c * x * x * x);
    let t = u.tanh();
    let sech2 = E::ONE - t * t;
    let du = s * (E::ONE + E::from_f64(3.0 * GELU_COEF) * x * x);
    E::from_f64(0.5) * (E::ONE + t) + E::from_f64(0.5) * x * sech2 * du
}


#[cfg(test)]
mod broadcast_pattern_tests {
    use super::super::grad_check_multi;
    use super::*;
    use crate::nn::init::randn;
    use crate::rng::Rng;

    #[test]
    fn classify_patterns() {
        assert_eq!(classify(&[4, 3], &[4, 3]), Pattern::Full);
        assert_eq!(classify(&[3], &[4, 3]), Pattern::Suffix(3));
        assert_eq!(classify(&[1, 3], &[4, 3]), Pattern::Suffix(3));
        assert_eq!(classify(&[], &[4, 3]), Pattern::Suffix(1));
        assert_eq!(classify(&[4, 1], &[4, 3]), Pattern::Prefix(3));
        assert_eq!(classify(&[2, 5, 1, 1], &[2, 5, 4, 4]), Pattern::Prefix(16));
        assert_eq!(classify(&[5, 1, 1], &[2, 5, 4, 4]), Pattern::General);
        assert_eq!(classify(&[3, 4], &[2, 3, 4]), Pattern::Suffix(12));
    }

    #[test]
    fn fast_paths_agree_with_finite_differences() {
        let mut rng = Rng::seed_from(91);
        let full = randn::<f64>(&[2, 3, 4], &mut rng);
        let cases: Vec<Tensor<f64>> = vec![
            randn::<f64>(&[4], &mut rng),          // suffix
            randn::<f64>(&[3, 4], &mut rng),       // suffix, longer
            randn::<f64>(&[2, 3, 1], &mut rng),    // prefix
            randn::<f64>(&[2, 1, 1], &mut rng),    // prefix, deeper
            randn::<f64>(&[1, 3, 1], &mut rng),    // general
            Tensor::scalar(0.7),                   // scalar
        ];
        for (i, other) in cases.iter().enumerate() {
            let err = grad_check_multi(
                |xs| xs[0].mul(&xs[1]).unwrap().div(&xs[1].square().add_scalar(1.0)).unwrap().sum(),
                &[full.clone(), other.clone()],
                1e-5,
            );
            assert!(err < 1e-4, "case {i} grad error {err}");
            // and flipped operand order
            let err = grad_check_multi(
                |xs| xs[1].mul(&xs[0]).unwrap().sub(&xs[0].abs()).unwrap().square().sum(),
                &[full.clone(), other.clone()],
                1e-5,
            );
            assert!(err < 1e-4, "case {i} flipped grad error {err}");
        }
    }

    #[test]
    fn fast_path_values_match_odometer() {
        let mut rng = Rng::seed_from(92);
        let a = randn::<f64>(&[2, 3, 4], &mut rng);
        for shape in [vec![4], vec![2, 3, 1], vec![1, 3, 1], vec![3, 1]] {
            let b = randn::<f64>(&shape, &mut rng);
            let got = a.mul(&b).unwrap();
            // reference through explicit index arithmetic
            let out_shape = broadcast_shape(a.shape(), &shape).unwrap();
            let sa = broadcast_strides(a.shape(), &out_shape);
            let sb = broadcast_strides(&shape, &out_shape);
            let expect: Vec<f64> = PairIter::new(&out_shape, sa, sb)
                .map(|(oa, ob)| a.data()[oa] * b.data()[ob])
                .collect();
            assert_eq!(got.to_vec(), expect, "shape {shape:?}");
        }
    }
}
