//! Reverse-mode autodiff carrier: immutable-once-written tensors plus an
//! explicit tape of backward closures walked in reverse topological order.
//! Generic over the scalar so the same operator code runs in 32-bit for
//! training/inference and 64-bit for finite-difference verification.

use std::cell::{Ref, RefCell, RefMut};
use std::fmt::{Debug, Display};
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};
use std::rc::Rc;

use rand::Rng;

use crate::error::{Error, Result};

pub trait Scalar:
    Copy
    + PartialOrd
    + Debug
    + Display
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    /// Identifies the storage width in checkpoint manifests.
    const DTYPE: &'static str;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn tanh(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn maxv(self, other: Self) -> Self;
    fn is_finite(self) -> bool;
}

macro_rules! impl_scalar {
    ($t:ty, $name:expr) => {
        impl Scalar for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            const DTYPE: &'static str = $name;
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn exp(self) -> Self {
                self.exp()
            }
            fn tanh(self) -> Self {
                self.tanh()
            }
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            fn abs(self) -> Self {
                self.abs()
            }
            fn maxv(self, other: Self) -> Self {
                self.max(other)
            }
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
        }
    };
}

impl_scalar!(f32, "f32");
impl_scalar!(f64, "f64");

struct Inner<S: Scalar> {
    shape: Vec<usize>,
    data: RefCell<Vec<S>>,
    grad: RefCell<Option<Vec<S>>>,
}

/// Shared handle to a shaped buffer with an optional gradient of the same
/// shape. Cloning is cheap (reference count); the buffer itself is treated
/// as immutable once an op has produced it.
pub struct Tensor<S: Scalar> {
    inner: Rc<Inner<S>>,
}

impl<S: Scalar> Clone for Tensor<S> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<S: Scalar> Debug for Tensor<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{:?}", self.shape())
    }
}

impl<S: Scalar> Tensor<S> {
    /// Wraps caller data, validating the element count and finiteness.
    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} wants {} elements, got {}",
                shape.iter().product::<usize>(),
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(format!(
                "non-finite value at flat index {i} while building tensor {shape:?}"
            )));
        }
        Ok(Self::raw(shape.to_vec(), data))
    }

    /// Internal constructor for op outputs; skips the validation scan.
    pub(crate) fn raw(shape: Vec<usize>, data: Vec<S>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            inner: Rc::new(Inner {
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
            }),
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::raw(shape.to_vec(), vec![S::ZERO; shape.iter().product()])
    }

    pub fn scalar(v: S) -> Self {
        Self::raw(vec![1], vec![v])
    }

    pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| S::from_f64(rng.gen_range(lo..hi)))
            .collect();
        Self::raw(shape.to_vec(), data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn data(&self) -> Ref<'_, Vec<S>> {
        self.inner.data.borrow()
    }

    /// Mutable access to the raw buffer: parameter updates and the
    /// finite-difference verifier's in-place perturbations. Never call while
    /// a forward graph referencing this tensor is still to be replayed.
    pub fn data_mut(&self) -> RefMut<'_, Vec<S>> {
        self.inner.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<S> {
        self.inner.data.borrow().clone()
    }

    pub fn item(&self) -> S {
        debug_assert_eq!(self.numel(), 1);
        self.inner.data.borrow()[0]
    }

    /// Gradient buffer, allocated as zeros on first access.
    pub fn grad_mut(&self) -> RefMut<'_, Vec<S>> {
        let mut g = self.inner.grad.borrow_mut();
        if g.is_none() {
            *g = Some(vec![S::ZERO; self.numel()]);
        }
        RefMut::map(g, |o| o.as_mut().unwrap())
    }

    /// Borrow of the gradient if backward has touched this tensor. Backward
    /// closures early-return on `None`: a dead branch propagates nothing.
    pub fn grad_opt(&self) -> Option<Ref<'_, Vec<S>>> {
        let g = self.inner.grad.borrow();
        if g.is_none() {
            return None;
        }
        Some(Ref::map(g, |o| o.as_ref().unwrap()))
    }

    /// Accumulated gradient, or zeros if backward never touched this tensor.
    pub fn grad_vec(&self) -> Vec<S> {
        self.inner
            .grad
            .borrow()
            .clone()
            .unwrap_or_else(|| vec![S::ZERO; self.numel()])
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// True when both handles point at the same buffer.
    pub fn same_buffer(&self, other: &Tensor<S>) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    pub fn all_finite(&self) -> bool {
        self.inner.data.borrow().iter().all(|v| v.is_finite())
    }
}

type BackwardFn = Box<dyn FnOnce()>;

/// Tape of executed operations. Ops push one backward closure each, in
/// execution order; `backward` seeds the loss gradient and replays them in
/// reverse, accumulating additively into each tensor's grad buffer.
pub struct Graph<S: Scalar> {
    tape: RefCell<Vec<BackwardFn>>,
    _marker: std::marker::PhantomData<S>,
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph {
            tape: RefCell::new(Vec::new()),
            _marker: std::marker::PhantomData,
        }
    }

    pub(crate) fn push(&self, f: impl FnOnce() + 'static) {
        self.tape.borrow_mut().push(Box::new(f));
    }

    pub fn num_nodes(&self) -> usize {
        self.tape.borrow().len()
    }

    /// Runs reverse accumulation from a scalar loss, consuming the tape.
    pub fn backward(&self, loss: &Tensor<S>) -> Result<()> {
        if loss.numel() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        if !loss.item().is_finite() {
            return Err(Error::numeric("loss is non-finite"));
        }
        loss.grad_mut()[0] += S::ONE;
        let mut tape = self.tape.borrow_mut();
        while let Some(f) = tape.pop() {
            f();
        }
        Ok(())
    }
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_data_must_agree() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0f64; 6]).is_ok());
        assert!(Tensor::from_vec(&[2, 3], vec![0.0f64; 5]).is_err());
    }

    #[test]
    fn non_finite_data_rejected() {
        assert!(Tensor::from_vec(&[2], vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn grad_starts_zero_and_accumulates() {
        let t = Tensor::<f64>::zeros(&[3]);
        assert_eq!(t.grad_vec(), vec![0.0; 3]);
        t.grad_mut()[1] += 2.0;
        t.grad_mut()[1] += 0.5;
        assert_eq!(t.grad_vec(), vec![0.0, 2.5, 0.0]);
        t.zero_grad();
        assert_eq!(t.grad_vec(), vec![0.0; 3]);
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let g = Graph::<f64>::new();
        let t = Tensor::<f64>::zeros(&[2]);
        assert!(g.backward(&t).is_err());
    }
}
