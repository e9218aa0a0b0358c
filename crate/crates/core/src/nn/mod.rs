//! Minimal dense-tensor network engine.
//!
//! Values live on a [`Tape`]; every op records what its backward pass needs
//! and [`Tape::backward`] runs reverse-mode accumulation from a scalar loss.
//! The engine is generic over [`Scalar`] so the same code runs in `f32` for
//! training and in `f64` for gradient verification.

mod adam;
mod checkpoint;
mod kernels;
mod layers;
mod model;
mod tape;
mod tensor;

pub use adam::{clip_global_norm, AdamState};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, FORMAT_VERSION};
pub use layers::{Blstm, BoundBlstm, BoundDense, BoundLstm, Dense, Direction, LstmLayer};
pub use model::{FeatureNorm, ModelConfig, ModelParams, ParamGrads, ParamGroup, ParamVars, NUM_PARAMS};
pub use tape::{Gradients, Tape, Var, LOG_PROB_FLOOR};
pub use tensor::Tensor;

use std::fmt::Debug;

/// Floating-point element type of tensors and tapes.
pub trait Scalar: num_traits::Float + Default + Debug + Send + Sync + 'static {
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

#[inline]
pub(crate) fn sigmoid<F: Scalar>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}
