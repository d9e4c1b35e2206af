// SPDX-License-Identifier: MIT OR Apache-2.0

//! Inputs shared by the benchmarks: the committed toy checkpoint and one
//! held-out image.

use neuronpath::vit::{load_checkpoint, toy_split};
use neuronpath::{Sample, VitModel};

pub const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/fixtures/toy.ck");

/// The fixture model and held-out image `index`.
pub fn toy_inputs(index: usize) -> (VitModel, Sample) {
    let model = load_checkpoint(FIXTURE).expect("fixture checkpoint");
    let (_, test) = toy_split().expect("toy split");
    (model, test[index].clone())
}
