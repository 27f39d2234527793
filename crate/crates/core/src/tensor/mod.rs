//! Minimal reverse-mode differentiable array engine.
//!
//! The engine supports exactly the operator set the U-Net and its losses
//! need: same-padded 1-D convolution, batch normalization, leaky ReLU,
//! decimation by two, linear upsampling by two, channel concatenation,
//! `tanh`, the half squared L2 distance, and scalar scale/add for mixing
//! loss terms. Operations are recorded on a [`Graph`] tape and replayed in
//! reverse by [`Graph::backward`].
//!
//! All kernels are generic over [`Real`] so gradient checks can run in
//! double precision while training runs in single precision.

mod adam;
mod graph;
pub(crate) mod ops;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;
use thiserror::Error;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use graph::{BatchStats, Graph, NormMode, Var};

/// Floating-point scalar the engine computes in.
pub trait Real:
    Float
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Short name used in logs and run configs (`"f32"` / `"f64"`).
    const NAME: &'static str;

    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn of(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("batchnorm in train mode needs at least 2 values per channel, got {0}")]
    DegenerateBatch(usize),
    #[error("loss must be a scalar, got dims {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("loss does not depend on any tracked tensor")]
    DetachedLoss,
    #[error("backward already ran on this graph; call reset() before running it again")]
    BackwardTwice,
    #[error("non-finite gradient in parameter #{param} at flat index {index}: {value}")]
    NonFiniteGradient { param: usize, index: usize, value: f64 },
    #[error("adam: {0}")]
    Optimizer(String),
}

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> TensorError {
    TensorError::Shape {
        op,
        detail: detail.into(),
    }
}

/// Dense row-major array of rank at most 3 with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    dims: Vec<usize>,
    data: Vec<F>,
    requires_grad: bool,
    grad: Option<Vec<F>>,
}

impl<F: Real> Tensor<F> {
    pub fn from_vec(dims: Vec<usize>, data: Vec<F>) -> Result<Self, TensorError> {
        if dims.len() > 3 {
            return Err(shape_err("tensor", format!("rank {} exceeds 3", dims.len())));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(shape_err(
                "tensor",
                format!("dims {dims:?} hold {n} values but data has {}", data.len()),
            ));
        }
        Ok(Self {
            dims,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Self::from_vec(dims, vec![F::zero(); n]).expect("rank checked by caller")
    }

    pub fn scalar(v: F) -> Self {
        Self::from_vec(vec![], vec![v]).unwrap()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
        if !on {
            self.grad = None;
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn grad(&self) -> Option<&[F]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<F>) -> Result<(), TensorError> {
        if grad.len() != self.data.len() {
            return Err(shape_err(
                "set_grad",
                format!("gradient has {} values, tensor {}", grad.len(), self.data.len()),
            ));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Converts element type, dropping any gradient.
    pub fn cast<G: Real>(&self) -> Tensor<G> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| G::of(v.as_f64())).collect(),
            requires_grad: self.requires_grad,
            grad: None,
        }
    }
}
