//! Dense tensor math, reverse-mode autodiff, optimizers, learning-rate
//! schedules and seeded random streams. Everything is f64 internally;
//! file formats downcast to f32 on serialization.

mod adam;
mod array;
pub mod fd;
pub mod nn;
mod rng;
mod schedule;
mod tape;

pub use adam::{adam_step, AdamState};
pub use array::Array;
pub use rng::RngStream;
pub use schedule::lr_schedule;
pub use tape::{Gradients, Tape, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value produced by `{op}`")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("invalid distribution parameters: {0}")]
    BadDistribution(String),
}
