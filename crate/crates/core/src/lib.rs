//! Ground-truth traces for classical graph algorithms and small message-passing
//! executors trained to imitate them.

pub mod config;
pub mod diff;
pub mod error;
pub mod executor;
pub mod experiment;
pub mod graphgen;
pub mod io;
pub mod metrics;
pub mod regimes;
pub mod scalar;
pub mod trace;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = diff::Tensor<f64>;
pub type Tensor32 = diff::Tensor<f32>;
pub type Trace64 = trace::Trace<f64>;
pub type Trace32 = trace::Trace<f32>;
pub type ExecutorParams64 = executor::ExecutorParams<f64>;
pub type ExecutorParams32 = executor::ExecutorParams<f32>;
pub type Checkpoint64 = executor::Checkpoint<f64>;
pub type Checkpoint32 = executor::Checkpoint<f32>;
