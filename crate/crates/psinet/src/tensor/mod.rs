//! Reverse-mode automatic differentiation over dense row-major tensors.
//!
//! The engine is a Wengert tape: [`Graph`] records every operation in
//! execution order, forward values are computed eagerly, and
//! [`Graph::backward`] replays the tape in reverse to populate gradients
//! on every tensor created with [`Tensor::param`]. The op set is exactly
//! what the segmentation network needs: 3x3 convolution, ReLU, 2x2 max
//! pooling, bilinear upsampling, channel concatenation, channel softmax,
//! sigmoid, the two loss reductions, and a few elementwise helpers.
//!
//! Data layout is row-major `[N, C, H, W]` for image-like tensors.
//! Everything is generic over [`Element`] so training runs in `f32`
//! while gradient checks run in `f64`.

mod gradcheck;
mod graph;
mod kernels;

#[cfg(test)]
mod tests;

pub use gradcheck::{grad_check, max_rel_err};
pub use graph::{Graph, Reduction, Var, LOG_CLAMP_FLOOR};

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};

/// Scalar element of a tensor; implemented for `f32` and `f64`.
pub trait Element:
    num_traits::Float + std::fmt::Debug + std::fmt::Display + Default + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Element for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Ordered dimension list, e.g. `[N, C, H, W]` for image-like data.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Self {
        Shape(dims.into())
    }

    /// Rank-0 shape of a scalar (one element).
    pub fn scalar() -> Self {
        Shape(Vec::new())
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn elem_count(&self) -> usize {
        self.0.iter().product()
    }

    /// Interpret as `[N, C, H, W]`.
    pub fn nchw(&self) -> Result<[usize; 4]> {
        match self.0.as_slice() {
            &[n, c, h, w] => Ok([n, c, h, w]),
            other => Err(Error::shape(
                "nchw",
                format!("expected rank-4 tensor, got shape {:?}", other),
            )),
        }
    }
}

impl From<Vec<usize>> for Shape {
    fn from(v: Vec<usize>) -> Self {
        Shape(v)
    }
}

impl<const R: usize> From<[usize; R]> for Shape {
    fn from(v: [usize; R]) -> Self {
        Shape(v.to_vec())
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

struct TensorInner<T> {
    shape: Shape,
    data: Vec<T>,
    /// Present iff the tensor participates in gradient accumulation.
    grad: Option<RefCell<Vec<T>>>,
}

/// Dense immutable tensor. Cloning is cheap (shared storage); the only
/// mutable state is the gradient buffer of `param` tensors, which
/// `Graph::backward` accumulates into.
pub struct Tensor<T> {
    inner: Rc<TensorInner<T>>,
}

impl<T> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Element> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Tensor(shape={}, requires_grad={})",
            self.inner.shape,
            self.requires_grad()
        )
    }
}

impl<T: Element> Tensor<T> {
    fn build(shape: Shape, data: Vec<T>, requires_grad: bool) -> Result<Self> {
        if shape.elem_count() != data.len() {
            return Err(Error::shape(
                "tensor",
                format!(
                    "shape {} implies {} elements, data has {}",
                    shape,
                    shape.elem_count(),
                    data.len()
                ),
            ));
        }
        let grad = requires_grad.then(|| RefCell::new(vec![T::zero(); data.len()]));
        Ok(Tensor {
            inner: Rc::new(TensorInner { shape, data, grad }),
        })
    }

    /// Constant tensor (no gradient).
    pub fn new(shape: impl Into<Shape>, data: Vec<T>) -> Result<Self> {
        Self::build(shape.into(), data, false)
    }

    /// Trainable tensor: backward passes accumulate into its gradient buffer.
    pub fn param(shape: impl Into<Shape>, data: Vec<T>) -> Result<Self> {
        Self::build(shape.into(), data, true)
    }

    pub fn zeros(shape: impl Into<Shape>) -> Self {
        let shape = shape.into();
        let n = shape.elem_count();
        Self::build(shape, vec![T::zero(); n], false).expect("count matches by construction")
    }

    pub fn filled(shape: impl Into<Shape>, value: T) -> Self {
        let shape = shape.into();
        let n = shape.elem_count();
        Self::build(shape, vec![value; n], false).expect("count matches by construction")
    }

    pub fn scalar(value: T) -> Self {
        Self::build(Shape::scalar(), vec![value], false).expect("scalar")
    }

    pub fn shape(&self) -> &Shape {
        &self.inner.shape
    }

    pub fn data(&self) -> &[T] {
        &self.inner.data
    }

    pub fn elem_count(&self) -> usize {
        self.inner.data.len()
    }

    /// Value of a one-element tensor.
    pub fn scalar_value(&self) -> Result<T> {
        if self.elem_count() != 1 {
            return Err(Error::shape(
                "scalar_value",
                format!("tensor has shape {}", self.shape()),
            ));
        }
        Ok(self.inner.data[0])
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.grad.is_some()
    }

    /// Snapshot of the accumulated gradient, if this is a `param` tensor.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.as_ref().map(|g| g.borrow().clone())
    }

    pub fn zero_grad(&self) {
        if let Some(g) = &self.inner.grad {
            g.borrow_mut().fill(T::zero());
        }
    }

    pub(crate) fn accumulate_grad(&self, delta: &[T]) {
        if let Some(g) = &self.inner.grad {
            let mut g = g.borrow_mut();
            debug_assert_eq!(g.len(), delta.len());
            for (gi, di) in g.iter_mut().zip(delta) {
                *gi = *gi + *di;
            }
        }
    }

    /// True when both handles share storage (same underlying allocation).
    pub fn same_storage(&self, other: &Tensor<T>) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    pub fn all_finite(&self) -> bool {
        self.inner.data.iter().all(|v| v.is_finite())
    }

    /// Copy with the given data and this tensor's shape/grad flag.
    pub fn with_data(&self, data: Vec<T>) -> Result<Self> {
        Self::build(self.inner.shape.clone(), data, self.requires_grad())
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        let data = self.data().iter().map(|v| U::from_f64(v.as_f64())).collect();
        Tensor::build(self.inner.shape.clone(), data, self.requires_grad())
            .expect("same element count")
    }
}
