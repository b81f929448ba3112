//! Dense row-major tensors with reverse-mode automatic differentiation.
//!
//! A [`Tape`] owns every tensor created during one forward pass; creation
//! order is the topological order used by [`Tape::backward`]. Training runs
//! in 32-bit mode; tests that compare against central finite differences run
//! the same code in 64-bit mode via the [`Scalar`] parameter.

mod adam;
pub mod check;
mod checkpoint;
mod tape;

pub use adam::AdamState;
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError, NamedTensor};
pub use tape::{Gradients, Tape, TensorId};

use thiserror::Error;

/// Element type of the engine: `f32` for training, `f64` for test mode.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + Default
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn from_f32(v: f32) -> Self;
    fn to_f32(self) -> f32;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f32(v: f32) -> Self {
        v
    }
    fn to_f32(self) -> f32 {
        self
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn from_f32(v: f32) -> Self {
        v as f64
    }
    fn to_f32(self) -> f32 {
        self as f32
    }
}

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {a:?} and {b:?}")]
    ShapeMismatch { op: &'static str, a: Vec<usize>, b: Vec<usize> },
    #[error("{op}: bad shape {shape:?} ({reason})")]
    BadShape { op: &'static str, shape: Vec<usize>, reason: String },
    #[error("{op}: index {index} out of range for size {size}")]
    IndexOutOfRange { op: &'static str, index: i64, size: usize },
    #[error("l2_normalize_rows: row {row} has zero norm")]
    ZeroNorm { row: usize },
    #[error("{op}: data length {len} does not match shape {shape:?}")]
    DataLength { op: &'static str, len: usize, shape: Vec<usize> },
}
