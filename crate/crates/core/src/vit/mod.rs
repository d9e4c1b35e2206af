// SPDX-License-Identifier: MIT OR Apache-2.0

//! Minimal Vision Transformer with neuron hooks, checkpoint I/O, a seeded
//! procedural dataset and a small trainer.

mod checkpoint;
mod config;
mod dataset;
mod intervention;
mod model;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use config::{VitConfig, DEFAULT_LAYER_NORM_EPS};
pub use dataset::{
    generate_toy_dataset, read_ndjson, toy_split, write_ndjson, Sample, TOY_CLASS_NAMES, TOY_DATA_SEED, TOY_TEST_COUNT,
    TOY_TRAIN_COUNT,
};
pub use intervention::{InterventionSpec, NeuronId, NeuronMode, TokenScope};
pub use model::{
    parameter_layout, patchify, ActivationSummary, ForwardOutput, NeuronGradients, OutputMode,
    VitModel,
};
pub use train::{accuracy, train_toy, train_with, EpochStats, TrainConfig, TrainReport, TOY_EPOCHS};

pub(crate) use model::{argmax, check_distinct_layers, ChannelOverride, Recipe};
