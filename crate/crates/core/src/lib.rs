//! Learnable anonymization of event-camera streams for privacy-preserving
//! person re-identification.
//!
//! The pipeline turns event windows into voxel grids, passes them through a
//! trainable anonymizer, and trains it jointly with a re-identification
//! embedder against a frozen image-reconstruction attacker. Encryption
//! baselines, attack evaluations and an inversion attack round it out.

pub mod baselines;
pub mod diffnet;
pub mod error;
pub mod event;
pub mod gradsuite;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod simulator;

pub use error::{Error, Result};
