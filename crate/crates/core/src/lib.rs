//! Gate functions with configurable order of saturation, the scalar
//! long-time-scale learning problem, and gated recurrent networks trained
//! by backpropagation through time on long-memory tasks.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`, which is what the training harness and
//! the CLI use.

pub mod dynamics;
pub mod gates;
pub mod nn;
pub mod scalar;
pub mod tasks;
pub mod train;

pub use gates::{GateKind, GateTag};
pub use scalar::Scalar;

/// Scalar used by the training harness and the CLI.
pub type Real = f64;

pub type ToyProblem64 = dynamics::ToyProblem<f64>;
pub type Trajectory64 = dynamics::Trajectory<f64>;
pub type Tensor64 = nn::Tensor<f64>;
pub type ModelParams64 = nn::ModelParams<f64>;
