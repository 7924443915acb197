//! CPU layer toolkit with analytic backward passes.
//!
//! Layers are generic over [`Scalar`] so that training runs in `f32` while
//! gradient checks run the very same code in `f64`.

mod checkpoint;
mod layers;
mod network;
mod optim;
mod schedule;
mod tensor;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;
use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use layers::{BatchNorm2d, Conv2d, Dense, Layer, LayerKind, MaxPool2d, Param, Relu, Softmax};
pub use network::{build_baseline, build_network, Network, NetworkSpec};
pub use optim::{Adam, AdamConfig};
pub use schedule::{early_stop, plateau_lr, EarlyStopper, PlateauHalver, StopDecision};
pub use tensor::Tensor4;

pub trait Scalar:
    Float + Default + Debug + Send + Sync + AddAssign + SubAssign + MulAssign + DivAssign + Sum + 'static
{
    fn of(v: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn of(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    Shape {
        context: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("{0}: backward called without a preceding training forward pass")]
    NoForward(&'static str),
    #[error("non-finite gradient in parameter `{0}`")]
    NonFinite(String),
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub(crate) fn shape_err(context: impl Into<String>, expected: &[usize], got: &[usize]) -> NnError {
    NnError::Shape {
        context: context.into(),
        expected: expected.to_vec(),
        got: got.to_vec(),
    }
}
