// SPDX-License-Identifier: MIT OR Apache-2.0

//! Library half of the `neuronpath` binary: argument definitions, run
//! manifests and the subcommand implementations.

pub mod args;
pub mod commands;
pub mod manifest;
