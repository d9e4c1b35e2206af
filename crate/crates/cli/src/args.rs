// SPDX-License-Identifier: MIT OR Apache-2.0

//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use neuronpath::analysis::Operation;
use neuronpath::{CriterionSelector, OutputMode, TokenScope};

#[derive(Debug, Parser, Serialize)]
#[command(name = "neuronpath", version, about = "Neuron-path attribution lab for a toy Vision Transformer")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Args, Serialize)]
pub struct Common {
    /// Model checkpoint.
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// NDJSON dataset; defaults to the held-out part of the toy split.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Seed; each subcommand logs the default it uses when omitted.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Riemann steps of the attribution integral.
    #[arg(long, global = true, default_value_t = 20)]
    pub m: usize,
    #[arg(long, global = true, value_enum, default_value_t = ScopeArg::AllTokens)]
    pub scope: ScopeArg,
    #[arg(long, global = true, value_enum, default_value_t = OutputModeArg::Prob)]
    pub output_mode: OutputModeArg,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, env = "NEURONPATH_THREADS")]
    pub threads: Option<usize>,
    /// Single dataset index to process.
    #[arg(long, global = true, conflicts_with = "limit")]
    pub image: Option<usize>,
    /// Process the first N dataset images.
    #[arg(long, global = true)]
    pub limit: Option<usize>,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Train the toy model and write a checkpoint.
    TrainToy {
        #[arg(long, default_value_t = neuronpath::vit::TOY_EPOCHS)]
        epochs: usize,
    },
    /// Write a procedural toy dataset as NDJSON.
    GenData {
        #[arg(long, default_value_t = neuronpath::vit::TOY_TRAIN_COUNT + neuronpath::vit::TOY_TEST_COUNT)]
        count: usize,
    },
    /// Locate neuron paths (or per-layer top-t sets) per image.
    FindPath {
        #[arg(long, value_enum, default_value_t = MethodArg::Jas)]
        method: MethodArg,
        /// Report the top-t channels per layer instead of a single path.
        #[arg(long)]
        topk: Option<usize>,
        /// Also write per-layer single-neuron attribution.
        #[arg(long)]
        knowledge: bool,
    },
    /// Mean attribution and intervention effects of every method.
    CompareMethods,
    /// Zero or double each image's path neurons and measure the change.
    Intervene {
        #[arg(long, value_enum, default_value_t = MethodArg::Jas)]
        method: MethodArg,
        #[arg(long, value_enum, default_value_t = OpArg::Zero)]
        op: OpArg,
    },
    /// Per-class neuron utilization matrices.
    Aggregate {
        #[arg(long, value_enum, default_value_t = MethodArg::Jas)]
        method: MethodArg,
        /// Reuse path records written by `find-path`.
        #[arg(long)]
        paths: Option<PathBuf>,
    },
    /// Cosine similarity between class utilization matrices.
    Similarity {
        /// Utilization NDJSON written by `aggregate`; computed when absent.
        #[arg(long)]
        utilization: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = MethodArg::Jas)]
        method: MethodArg,
        /// Fraction of the other classes listed as top and bottom neighbors.
        #[arg(long, default_value_t = 0.05)]
        q: f64,
    },
    /// Frequency-selected pruning over a grid of retained counts and mask fractions.
    Prune {
        #[arg(long, value_delimiter = ',', default_value = "1,5,10,30,50")]
        topk: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,0.5,1.0")]
        mask_frac: Vec<f64>,
        #[arg(long, default_value_t = 0.8)]
        probe_fraction: f64,
    },
    /// Time path location across step counts.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "64,128,256")]
        m_grid: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
    },
    /// Run the invariant suite and print a pass/fail table.
    Verify {
        #[arg(long, default_value_t = 100)]
        gradient_coords: usize,
        #[arg(long, default_value_t = 20)]
        completeness_paths: usize,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::TrainToy { .. } => "train-toy",
            Command::GenData { .. } => "gen-data",
            Command::FindPath { .. } => "find-path",
            Command::CompareMethods => "compare-methods",
            Command::Intervene { .. } => "intervene",
            Command::Aggregate { .. } => "aggregate",
            Command::Similarity { .. } => "similarity",
            Command::Prune { .. } => "prune",
            Command::Bench { .. } => "bench",
            Command::Verify { .. } => "verify",
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScopeArg {
    AllTokens,
    Cls,
}

impl From<ScopeArg> for TokenScope {
    fn from(s: ScopeArg) -> Self {
        match s {
            ScopeArg::AllTokens => TokenScope::AllTokens,
            ScopeArg::Cls => TokenScope::Cls,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputModeArg {
    Prob,
    Logit,
}

impl From<OutputModeArg> for OutputMode {
    fn from(m: OutputModeArg) -> Self {
        match m {
            OutputModeArg::Prob => OutputMode::Probability,
            OutputModeArg::Logit => OutputMode::Logit,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodArg {
    #[value(alias = "neuron_path", alias = "neuron-path")]
    Jas,
    Activation,
    #[value(name = "influence_pattern", alias = "influence-pattern")]
    InfluencePattern,
}

impl From<MethodArg> for CriterionSelector {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Jas => CriterionSelector::Jas,
            MethodArg::Activation => CriterionSelector::Activation,
            MethodArg::InfluencePattern => CriterionSelector::InfluencePattern,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OpArg {
    None,
    Zero,
    Double,
}

impl From<OpArg> for Operation {
    fn from(o: OpArg) -> Self {
        match o {
            OpArg::None => Operation::None,
            OpArg::Zero => Operation::Zero,
            OpArg::Double => Operation::Double,
        }
    }
}
