// SPDX-License-Identifier: MIT OR Apache-2.0

//! Intervention metrics, class-level utilization and similarity, pruning,
//! and the cost benchmark.

mod bench;
mod deviation;
mod export;
mod prune;
mod utilization;

pub use bench::{complexity_benchmark, ComplexityReport, RatioRow, TimingRow};
pub use deviation::{
    deviation_with_paths, intervene_and_measure, mean, median, DeviationReport, Operation, SampleDeviation,
};
pub use export::{prune_curve_svg, write_csv, write_frequency_csv, write_ndjson_records, write_prune_csv};
pub use prune::{
    prune_and_eval, prune_with_scans, pruning_mask, select_by_frequency, split_by_class, ClassSplit, PruneConfig,
    PruneReport, PruneRow, Selection, MIN_CLASS_SIZE,
};
pub use utilization::{build_utilization, class_similarity, Neighbors, SimilarityMatrix, UtilizationMatrix};
