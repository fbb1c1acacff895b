//! Dense f64 tensors and a dynamic reverse-mode tape.
//!
//! [`Tensor`] is a flat row-major `Vec<f64>` plus a shape. [`tape::Tape`]
//! records every operation of a forward pass as a node; `backward` walks the
//! nodes in reverse insertion order and accumulates gradients. The tape is
//! rebuilt from scratch on every forward pass, so control flow in the caller
//! (different image sizes, optional layers) needs no special casing.
//!
//! All reductions — convolution inner products, bias/softmax/norm sums,
//! gradient accumulation — run in a fixed documented order (input channel,
//! then kernel row, then kernel column; spatial positions row-major), which
//! makes every forward and backward pass bit-reproducible for identical
//! inputs on the same build.

mod kernels;
pub mod tape;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

/// Errors from tensor construction and tape operations. Messages name the
/// offending dimensions so shape bugs are diagnosable from the error alone.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TensorError {
    /// Dimension mismatch or unsatisfiable geometry.
    Shape(String),
    /// NaN or infinity where a finite value is required; carries the op name.
    NonFinite(&'static str),
    /// Structural misuse of the tape (e.g. backward from a non-scalar).
    Graph(String),
}

impl core::fmt::Display for TensorError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            TensorError::Shape(msg) => write!(f, "shape error: {msg}"),
            TensorError::NonFinite(op) => write!(f, "non-finite values in input of {op}"),
            TensorError::Graph(msg) => write!(f, "graph error: {msg}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for TensorError {}

/// Row-major f64 tensor. Rank is dynamic; the convolution ops expect
/// `[channels, height, width]` activations and `[out_ch, in_ch, kh, kw]`
/// kernels.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor, TensorError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(TensorError::Shape(format!(
                "shape {:?} wants {} elements, data has {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// The single value of a scalar (empty-shape or one-element) tensor.
    pub fn item(&self) -> Result<f64, TensorError> {
        if self.data.len() != 1 {
            return Err(TensorError::Shape(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    /// Interpret as `[channels, height, width]`.
    pub fn dims3(&self) -> Result<(usize, usize, usize), TensorError> {
        match *self.shape.as_slice() {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(TensorError::Shape(format!(
                "expected rank-3 [c,h,w] tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    /// Interpret as `[out_ch, in_ch, kh, kw]`.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize), TensorError> {
        match *self.shape.as_slice() {
            [o, i, kh, kw] => Ok((o, i, kh, kw)),
            _ => Err(TensorError::Shape(format!(
                "expected rank-4 [co,ci,kh,kw] kernel, got shape {:?}",
                self.shape
            ))),
        }
    }
}
