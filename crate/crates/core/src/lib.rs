// SPDX-License-Identifier: MIT OR Apache-2.0

//! Discovery and validation of influential neuron paths in small Vision
//! Transformers.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: `f64` tensors with a reverse- and forward-mode tape.
//! - [`vit`]: the encoder, neuron interventions, checkpoints, toy data.
//! - [`attribution`]: joint attribution scores and path search, plus the
//!   activation and influence-pattern baselines.
//! - [`analysis`]: intervention metrics, class-level utilization,
//!   pruning and the cost benchmark.

pub mod analysis;
pub mod attribution;
mod error;
pub mod tensor;
pub mod verify;
pub mod vit;

pub use attribution::{CriterionSelector, IntegrationConfig, NeuronPath};
pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
pub use vit::{InterventionSpec, NeuronId, NeuronMode, OutputMode, Sample, TokenScope, VitConfig, VitModel};
