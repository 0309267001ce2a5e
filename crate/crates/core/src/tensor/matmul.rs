//! 2D matrix multiplication and its adjoints.
//!
//! Three kernel variants (nn, nt, tn) cover forward and both gradient
//! products without materializing transposes. Accumulation order is
//! fixed per output element, keeping results bit-deterministic.

use super::{Element, Tensor};
use crate::error::{DdmiError, Result};

/// c[m,n] = a[m,k] · b[k,n]
pub(crate) fn mm_nn<E: Element>(a: &[E], b: &[E], m: usize, k: usize, n: usize, c: &mut [E]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
}

/// c[m,n] = a[m,k] · b[n,k]^T  (rows of `b` are dotted against rows of `a`)
pub(crate) fn mm_nt<E: Element>(a: &[E], b: &[E], m: usize, k: usize, n: usize, c: &mut [E]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            crow[j] += dot(arow, brow);
        }
    }
}

/// c[m,n] = a[k,m]^T · b[k,n]
pub(crate) fn mm_tn<E: Element>(a: &[E], b: &[E], m: usize, k: usize, n: usize, c: &mut [E]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = arow[i];
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
}

/// Sixteen-lane unrolled dot product; fixed combine order.
fn dot<E: Element>(a: &[E], b: &[E]) -> E {
    let mut acc = [E::ZERO; 16];
    let chunks = a.len() / 16;
    for c in 0..chunks {
        let i = c * 16;
        for l in 0..16 {
            acc[l] += a[i + l] * b[i + l];
        }
    }
    let mut tail = E::ZERO;
    for i in chunks * 16..a.len() {
        tail += a[i] * b[i];
    }
    let mut lo = E::ZERO;
    let mut hi = E::ZERO;
    for l in 0..8 {
        lo += acc[l];
        hi += acc[l + 8];
    }
    lo + hi + tail
}

/// b[k,n] -> bt[n,k]
pub(crate) fn transpose2d<E: Element>(b: &[E], k: usize, n: usize) -> Vec<E> {
    let mut bt = vec![E::ZERO; n * k];
    for p in 0..k {
        for j in 0..n {
            bt[j * k + p] = b[p * n + j];
        }
    }
    bt
}

impl<E: Element> Tensor<E> {
    /// Standard 2D product `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        if self.rank() != 2 || other.rank() != 2 || self.shape()[1] != other.shape()[0] {
            return Err(DdmiError::MatmulMismatch {
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let (m, k) = (self.shape()[0], self.shape()[1]);
        let n = other.shape()[1];
        let mut data = vec![E::ZERO; m * n];
        mm_nn(self.data(), other.data(), m, k, n, &mut data);

        let (aid, bid) = (self.id(), other.id());
        let (need_a, need_b) = (self.requires_grad(), other.requires_grad());
        let (a_data, b_data) = (self.data_rc(), other.data_rc());
        Ok(Tensor::from_op(
            data,
            vec![m, n],
            vec![self.clone(), other.clone()],
            move |g, sink| {
                if need_a {
                    // dA = g · B^T, via the nn kernel on a materialized transpose
                    let bt = transpose2d(&b_data, k, n);
                    mm_nn(g, &bt, m, n, k, sink.buf(aid, m * k));
                }
                if need_b {
                    // dB = A^T · g
                    mm_tn(&a_data, g, k, m, n, sink.buf(bid, k * n));
                }
            },
        ))
    }
}

impl<E: Element> Tensor<E> {
    /// `[m,k] x [n,k] -> [m,n]`: product against the transpose of
    /// `other` without materializing it. The layout of choice for
    /// row-batched inputs against `[out, in]` weight matrices.
    pub fn matmul_t(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        if self.rank() != 2 || other.rank() != 2 || self.shape()[1] != other.shape()[1] {
            return Err(DdmiError::MatmulMismatch {
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let (m, k) = (self.shape()[0], self.shape()[1]);
        let n = other.shape()[0];
        let mut data = vec![E::ZERO; m * n];
        // materializing the [k, n] transpose is far cheaper than the
        // dot-product kernel at typical k
        let bt = transpose2d(other.data(), n, k);
        mm_nn(self.data(), &bt, m, k, n, &mut data);

        let (aid, bid) = (self.id(), other.id());
        let (need_a, need_b) = (self.requires_grad(), other.requires_grad());
        let (a_data, b_data) = (self.data_rc(), other.data_rc());
        Ok(Tensor::from_op(
            data,
            vec![m, n],
            vec![self.clone(), other.clone()],
            move |g, sink| {
                if need_a {
                    // dA = g · B
                    mm_nn(g, &b_data, m, n, k, sink.buf(aid, m * k));
                }
                if need_b {
                    // dB = g^T · A
                    mm_tn(g, &a_data, n, m, k, sink.buf(bid, n * k));
                }
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::super::grad_check_multi;
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn identity_preserves() {
        let eye = Tensor::<f64>::from_vec(
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            &[3, 3],
        )
        .unwrap();
        let m = Tensor::<f64>::from_vec((0..9).map(|v| v as f64 * 0.5).collect(), &[3, 3]).unwrap();
        assert_eq!(eye.matmul(&m).unwrap().to_vec(), m.to_vec());
    }

    #[test]
    fn row_times_column() {
        let a = Tensor::<f64>::from_vec(vec![1.0, 2.0], &[1, 2]).unwrap();
        let b = Tensor::<f64>::from_vec(vec![3.0, 4.0], &[2, 1]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[1, 1]);
        assert_eq!(c.item(), 11.0);
    }

    #[test]
    fn inner_extent_mismatch() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[4, 2]);
        assert!(matches!(a.matmul(&b), Err(DdmiError::MatmulMismatch { .. })));
    }

    #[test]
    fn grads_match_finite_differences() {
        let mut rng = Rng::seed_from(11);
        let a = Tensor::<f64>::from_vec((0..20).map(|_| rng.normal()).collect(), &[4, 5]).unwrap();
        let b = Tensor::<f64>::from_vec((0..15).map(|_| rng.normal()).collect(), &[5, 3]).unwrap();
        let err = grad_check_multi(
            |xs| xs[0].matmul(&xs[1]).unwrap().square().sum(),
            &[a, b],
            1e-5,
        );
        assert!(err < 1e-4, "matmul grad error {err}");
    }

    #[test]
    fn matmul_t_matches_explicit_transpose() {
        let mut rng = Rng::seed_from(13);
        let a = Tensor::<f64>::from_vec((0..12).map(|_| rng.normal()).collect(), &[3, 4]).unwrap();
        let b = Tensor::<f64>::from_vec((0..8).map(|_| rng.normal()).collect(), &[2, 4]).unwrap();
        let bt = Tensor::<f64>::from_vec(transpose2d(b.data(), 2, 4), &[4, 2]).unwrap();
        let via_t = a.matmul_t(&b).unwrap();
        let via_nn = a.matmul(&bt).unwrap();
        for (x, y) in via_t.data().iter().zip(via_nn.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        let err = grad_check_multi(
            |xs| xs[0].matmul_t(&xs[1]).unwrap().square().sum(),
            &[a, b],
            1e-5,
        );
        assert!(err < 1e-4, "matmul_t grad error {err}");
    }

    #[test]
    fn kernel_variants_agree() {
        let mut rng = Rng::seed_from(3);
        let (m, k, n) = (7, 5, 6);
        let a: Vec<f64> = (0..m * k).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..k * n).map(|_| rng.normal()).collect();

        let mut c_nn = vec![0.0; m * n];
        mm_nn(&a, &b, m, k, n, &mut c_nn);

        // b transposed -> nt path
        let mut bt = vec![0.0; n * k];
        for p in 0..k {
            for j in 0..n {
                bt[j * k + p] = b[p * n + j];
            }
        }
        let mut c_nt = vec![0.0; m * n];
        mm_nt(&a, &bt, m, k, n, &mut c_nt);

        // a transposed -> tn path
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for p in 0..k {
                at[p * m + i] = a[i * k + p];
            }
        }
        let mut c_tn = vec![0.0; m * n];
        mm_tn(&at, &b, m, k, n, &mut c_tn);

        for i in 0..m * n {
            assert!((c_nn[i] - c_nt[i]).abs() < 1e-12);
            assert!((c_nn[i] - c_tn[i]).abs() < 1e-12);
        }
    }
}
