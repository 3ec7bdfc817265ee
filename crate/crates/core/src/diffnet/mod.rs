//! Minimal double-precision network substrate: tensors, layer kernels with
//! hand-written backward passes, identity losses, SGD, finite-difference
//! gradient checks and checkpoints.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod tensor;

pub use gradcheck::{grad_check, grad_check_sampled, GradCheckReport, Objective, Probe};
pub use layers::{ConvSpec, Layer, Network, Parameter, Tape};
pub use optim::{sgd_step, OptimConfig};
pub use tensor::Tensor;
