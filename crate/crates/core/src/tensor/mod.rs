//! N-dimensional tensors with reverse-mode automatic differentiation.
//!
//! Row-major storage, trailing-dimension broadcasting, and a recorded
//! operation graph replayed once in reverse topological order by
//! [`Tensor::backward`]. Everything is owned and immutable after
//! construction; gradients come back in a separate [`Gradients`] map
//! rather than being written into the tensors, so calling `backward`
//! twice on the same graph yields identical results.

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt::{Debug, Display};
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};
use std::rc::Rc;

use crate::error::{DdmiError, Result};

mod conv;
mod gradcheck;
mod matmul;
mod norm;
mod ops;

pub use conv::{avgpool2x, conv2d, conv_transpose2d, upsample_nearest2x};
pub use gradcheck::{grad_check, grad_check_multi};
pub use norm::groupnorm;
pub use ops::broadcast_shape;

/// Storage precision of a tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<DType> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }
}

/// Scalar element of a tensor: 32-bit for training, 64-bit for the
/// gradient-check suite.
pub trait Element:
    'static
    + Copy
    + Send
    + Sync
    + Debug
    + Display
    + PartialOrd
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
{
    const DTYPE: DType;
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn tanh(self) -> Self;
    fn maximum(self, other: Self) -> Self;
    fn is_finite(self) -> bool;
}

impl Element for f32 {
    const DTYPE: DType = DType::F32;
    const ZERO: f32 = 0.0;
    const ONE: f32 = 1.0;

    fn from_f64(v: f64) -> f32 {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn exp(self) -> f32 {
        f32::exp(self)
    }
    fn ln(self) -> f32 {
        f32::ln(self)
    }
    fn sqrt(self) -> f32 {
        f32::sqrt(self)
    }
    fn abs(self) -> f32 {
        f32::abs(self)
    }
    fn tanh(self) -> f32 {
        f32::tanh(self)
    }
    fn maximum(self, other: f32) -> f32 {
        f32::max(self, other)
    }
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
}

impl Element for f64 {
    const DTYPE: DType = DType::F64;
    const ZERO: f64 = 0.0;
    const ONE: f64 = 1.0;

    fn from_f64(v: f64) -> f64 {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> f64 {
        f64::exp(self)
    }
    fn ln(self) -> f64 {
        f64::ln(self)
    }
    fn sqrt(self) -> f64 {
        f64::sqrt(self)
    }
    fn abs(self) -> f64 {
        f64::abs(self)
    }
    fn tanh(self) -> f64 {
        f64::tanh(self)
    }
    fn maximum(self, other: f64) -> f64 {
        f64::max(self, other)
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(1) };
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// True unless inside a [`no_grad`] scope.
pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|c| c.get())
}

/// Run `f` without recording operations; forwards are pure data.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = GRAD_ENABLED.with(|c| c.replace(false));
    let out = f();
    GRAD_ENABLED.with(|c| c.set(prev));
    out
}

type BackwardFn<E> = Box<dyn Fn(&[E], &mut GradMap<E>)>;

struct Node<E: Element> {
    parents: Vec<Tensor<E>>,
    backward: BackwardFn<E>,
}

struct Inner<E: Element> {
    id: u64,
    shape: Vec<usize>,
    data: Rc<Vec<E>>,
    requires_grad: bool,
    node: Option<Node<E>>,
}

/// Immutable N-dimensional array. Cloning is cheap (shared storage).
pub struct Tensor<E: Element = f32> {
    inner: Rc<Inner<E>>,
}

impl<E: Element> Clone for Tensor<E> {
    fn clone(&self) -> Self {
        Tensor { inner: Rc::clone(&self.inner) }
    }
}

impl<E: Element> Debug for Tensor<E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{:?}", self.shape())?;
        if self.numel() <= 8 {
            write!(f, " {:?}", self.data())?;
        }
        Ok(())
    }
}

/// Accumulated gradient buffers keyed by tensor identity.
pub struct GradMap<E: Element> {
    grads: HashMap<u64, Vec<E>>,
}

impl<E: Element> GradMap<E> {
    fn new() -> Self {
        GradMap { grads: HashMap::new() }
    }

    /// Gradient buffer for a tensor, zero-initialized on first touch.
    /// Op backward closures add their contributions in place.
    pub(crate) fn buf(&mut self, id: u64, numel: usize) -> &mut [E] {
        self.grads.entry(id).or_insert_with(|| vec![E::ZERO; numel])
    }

    fn take(&mut self, id: u64) -> Option<Vec<E>> {
        self.grads.remove(&id)
    }
}

/// Result of a backward pass: gradients for every grad-tracked leaf.
pub struct Gradients<E: Element> {
    grads: HashMap<u64, Vec<E>>,
}

impl<E: Element> Gradients<E> {
    pub fn wrt(&self, t: &Tensor<E>) -> Option<&[E]> {
        self.grads.get(&t.id()).map(|v| v.as_slice())
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

impl<E: Element> Tensor<E> {
    // ── Construction ──────────────────────────────────────────────

    pub fn from_vec(data: Vec<E>, shape: &[usize]) -> Result<Tensor<E>> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(DdmiError::ShapeMismatch { expected: shape.to_vec(), got: vec![data.len()] });
        }
        Ok(Self::leaf(data, shape.to_vec(), false))
    }

    pub fn zeros(shape: &[usize]) -> Tensor<E> {
        let numel = shape.iter().product();
        Self::leaf(vec![E::ZERO; numel], shape.to_vec(), false)
    }

    pub fn ones(shape: &[usize]) -> Tensor<E> {
        Self::full(E::ONE, shape)
    }

    pub fn full(value: E, shape: &[usize]) -> Tensor<E> {
        let numel = shape.iter().product();
        Self::leaf(vec![value; numel], shape.to_vec(), false)
    }

    pub fn scalar(value: E) -> Tensor<E> {
        Self::leaf(vec![value], Vec::new(), false)
    }

    fn leaf(data: Vec<E>, shape: Vec<usize>, requires_grad: bool) -> Tensor<E> {
        Tensor {
            inner: Rc::new(Inner {
                id: next_id(),
                shape,
                data: Rc::new(data),
                requires_grad,
                node: None,
            }),
        }
    }

    /// New leaf sharing this tensor's storage, marked as a gradient target.
    pub fn tracked(&self) -> Tensor<E> {
        Tensor {
            inner: Rc::new(Inner {
                id: next_id(),
                shape: self.shape().to_vec(),
                data: Rc::clone(&self.inner.data),
                requires_grad: true,
                node: None,
            }),
        }
    }

    /// New leaf sharing this tensor's storage, cut off from the graph.
    pub fn detach(&self) -> Tensor<E> {
        Tensor {
            inner: Rc::new(Inner {
                id: next_id(),
                shape: self.shape().to_vec(),
                data: Rc::clone(&self.inner.data),
                requires_grad: false,
                node: None,
            }),
        }
    }

    pub(crate) fn from_op(
        data: Vec<E>,
        shape: Vec<usize>,
        parents: Vec<Tensor<E>>,
        backward: impl Fn(&[E], &mut GradMap<E>) + 'static,
    ) -> Tensor<E> {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        let track = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        Tensor {
            inner: Rc::new(Inner {
                id: next_id(),
                shape,
                data: Rc::new(data),
                requires_grad: track,
                node: track.then(|| Node { parents, backward: Box::new(backward) }),
            }),
        }
    }

    // ── Accessors ─────────────────────────────────────────────────

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn dtype(&self) -> DType {
        E::DTYPE
    }

    pub fn data(&self) -> &[E] {
        &self.inner.data
    }

    pub fn to_vec(&self) -> Vec<E> {
        self.inner.data.as_ref().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> E {
        assert_eq!(self.numel(), 1, "item() requires exactly one element");
        self.inner.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub(crate) fn id(&self) -> u64 {
        self.inner.id
    }

    pub(crate) fn data_rc(&self) -> Rc<Vec<E>> {
        Rc::clone(&self.inner.data)
    }

    pub fn all_finite(&self) -> bool {
        self.data().iter().all(|v| v.is_finite())
    }

    // ── Backward ──────────────────────────────────────────────────

    /// Reverse-mode sweep from a scalar. Returns gradients for every
    /// grad-tracked leaf reachable from `self`. The graph is left
    /// intact; repeated calls re-accumulate from scratch and return
    /// identical values.
    pub fn backward(&self) -> Result<Gradients<E>> {
        if self.numel() != 1 {
            return Err(DdmiError::NonScalarBackward { shape: self.shape().to_vec() });
        }
        Ok(self.backward_seeded(vec![E::ONE]))
    }

    /// Backward with an explicit seed gradient (shape of `self`).
    pub fn backward_seeded(&self, seed: Vec<E>) -> Gradients<E> {
        assert_eq!(seed.len(), self.numel(), "seed gradient must match tensor size");

        // Collect interior nodes reachable from the root. Ids increase
        // monotonically at construction, so descending id order is a
        // valid reverse topological order.
        let mut interior: Vec<Tensor<E>> = Vec::new();
        let mut seen: HashSet<u64> = HashSet::new();
        let mut stack: Vec<Tensor<E>> = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if !seen.insert(t.id()) {
                continue;
            }
            if let Some(node) = &t.inner.node {
                for p in &node.parents {
                    if p.requires_grad() {
                        stack.push(p.clone());
                    }
                }
                interior.push(t);
            }
        }
        interior.sort_by(|a, b| b.id().cmp(&a.id()));

        let mut map = GradMap::new();
        let root_numel = self.numel();
        map.buf(self.id(), root_numel).copy_from_slice(&seed);

        for t in &interior {
            let Some(grad) = map.take(t.id()) else { continue };
            let node = t.inner.node.as_ref().expect("interior node");
            (node.backward)(&grad, &mut map);
        }

        Gradients { grads: map.grads }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_twice_identical() {
        let x = Tensor::<f64>::from_vec(vec![1.0, 2.0, 3.0], &[3]).unwrap().tracked();
        let y = x.mul(&x).unwrap().sum();
        let g1 = y.backward().unwrap();
        let g2 = y.backward().unwrap();
        assert_eq!(g1.wrt(&x).unwrap(), g2.wrt(&x).unwrap());
        assert_eq!(g1.wrt(&x).unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn non_scalar_backward_rejected() {
        let x = Tensor::<f64>::from_vec(vec![1.0, 2.0], &[2]).unwrap().tracked();
        let y = x.mul(&x).unwrap();
        assert!(matches!(y.backward(), Err(DdmiError::NonScalarBackward { .. })));
    }

    #[test]
    fn no_grad_suppresses_recording() {
        let x = Tensor::<f64>::from_vec(vec![2.0], &[1]).unwrap().tracked();
        let y = no_grad(|| x.mul(&x).unwrap());
        assert!(!y.requires_grad());
        assert!(y.inner.node.is_none());
    }

    #[test]
    fn detach_cuts_graph() {
        let x = Tensor::<f64>::from_vec(vec![3.0], &[1]).unwrap().tracked();
        let y = x.mul(&x).unwrap().detach();
        let z = y.mul(&y).unwrap().sum();
        let grads = z.backward().unwrap();
        assert!(grads.wrt(&x).is_none());
    }

    #[test]
    fn shared_consumer_grads_accumulate() {
        // y = x*x + x: dy/dx = 2x + 1
        let x = Tensor::<f64>::from_vec(vec![5.0], &[1]).unwrap().tracked();
        let y = x.mul(&x).unwrap().add(&x).unwrap().sum();
        let grads = y.backward().unwrap();
        assert_eq!(grads.wrt(&x).unwrap(), &[11.0]);
    }

    #[test]
    fn forward_deterministic_bitwise() {
        let run = || {
            let x = Tensor::<f32>::from_vec(vec![0.1, -0.7, 2.5, 3.0], &[2, 2]).unwrap();
            let y = x.gelu().mul(&x.sigmoid()).unwrap().matmul(&x).unwrap();
            y.to_vec()
        };
        let a = run();
        let b = run();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}
