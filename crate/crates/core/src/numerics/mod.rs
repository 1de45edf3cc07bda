//! Minimal dense-tensor math with reverse-mode automatic differentiation.
//!
//! Everything learned in this crate runs on this module: a flat row-major
//! [`Tensor`], a Wengert-tape [`Graph`] that records exactly the operations
//! the networks need (no general broadcasting), an [`AdamState`] optimizer
//! and a binary checkpoint format.
//!
//! Kernels are generic over [`Scalar`] so the same code runs in 32-bit for
//! training/inference and in 64-bit for finite-difference gradient checks.
//! Forward and backward passes use fixed summation orders, so repeated runs
//! are bit-identical; parallelism (when enabled via [`set_threads`]) only
//! splits over disjoint output rows and does not change any arithmetic.

mod adam;
mod checkpoint;
mod graph;
mod kernels;
mod params;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState, EmaState};
pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use graph::{Graph, Src};
pub use params::{Grads, ParamId, ParamStore};
pub use tensor::{Scalar, Tensor};

use std::sync::OnceLock;
use thiserror::Error;

/// Errors produced by tensor construction, graph recording and optimization.
#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("{op}: dimension mismatch: {lhs:?} vs {rhs:?}")]
    DimMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: invalid shape {shape:?}: {reason}")]
    BadShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: &'static str,
    },
    #[error("conv: nonpositive output size for input {input:?}, kernel {kernel:?}, stride {stride}, padding {padding}")]
    BadConvGeometry {
        input: Vec<usize>,
        kernel: Vec<usize>,
        stride: usize,
        padding: usize,
    },
    #[error("training divergence: non-finite gradient for parameter `{name}`")]
    NonFiniteGrad { name: String },
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NumericsError>;

static THREADS: OnceLock<usize> = OnceLock::new();

/// Set the kernel thread count once per process (default 1).
///
/// Parallel kernels split work over disjoint output rows only, so the result
/// is bit-identical for every thread count; this merely trades wall clock.
pub fn set_threads(n: usize) {
    let _ = THREADS.set(n.max(1));
}

pub(crate) fn threads() -> usize {
    *THREADS.get().unwrap_or(&1)
}
