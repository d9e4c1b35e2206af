// SPDX-License-Identifier: MIT OR Apache-2.0

//! Probability and accuracy deviation under path interventions.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{find_path, CriterionSelector, IntegrationConfig};
use crate::error::{Error, Result};
use crate::vit::{InterventionSpec, NeuronId, NeuronMode, Sample, TokenScope, VitModel};

/// What is done to every neuron of a path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operation {
    /// Leave the model untouched.
    None,
    /// Removal.
    Zero,
    /// Enhancement.
    Double,
}

impl Operation {
    pub fn as_str(self) -> &'static str {
        match self {
            Operation::None => "none",
            Operation::Zero => "zero",
            Operation::Double => "double",
        }
    }

    fn mode(self) -> Option<NeuronMode> {
        match self {
            Operation::None => None,
            Operation::Zero => Some(NeuronMode::Zero),
            Operation::Double => Some(NeuronMode::Double),
        }
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Operation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Operation::None),
            "zero" | "remove" | "removal" => Ok(Operation::Zero),
            "double" | "enhance" | "enhancement" => Ok(Operation::Double),
            other => Err(Error::Usage(format!(
                "unknown operation `{other}` (expected none, zero or double)"
            ))),
        }
    }
}

/// Ground-truth probability of one sample before and after the operation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleDeviation {
    pub sample_id: usize,
    pub label: usize,
    pub p_before: f64,
    pub p_after: f64,
    /// `(p_after - p_before) / p_before`; `None` when `p_before` is 0.
    pub ratio: Option<f64>,
    pub correct_before: bool,
    pub correct_after: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub method: String,
    pub operation: Operation,
    pub scope: TokenScope,
    pub samples: Vec<SampleDeviation>,
    /// Mean of the defined ratios (0 when none are defined).
    pub mean: f64,
    /// Median of the defined ratios (0 when none are defined).
    pub median: f64,
    pub accuracy_before: f64,
    pub accuracy_after: f64,
    /// `accuracy_after - accuracy_before`.
    pub delta_accuracy: f64,
    /// Samples whose original probability is exactly 0.
    pub excluded: usize,
}

impl DeviationReport {
    /// Aggregates per-sample records; also used to re-check stored reports.
    pub fn from_samples(method: &str, operation: Operation, scope: TokenScope, samples: Vec<SampleDeviation>) -> Self {
        let ratios: Vec<f64> = samples.iter().filter_map(|s| s.ratio).collect();
        let excluded = samples.len() - ratios.len();
        let n = samples.len().max(1) as f64;
        let before = samples.iter().filter(|s| s.correct_before).count() as f64 / n;
        let after = samples.iter().filter(|s| s.correct_after).count() as f64 / n;
        Self {
            method: method.to_string(),
            operation,
            scope,
            mean: mean(&ratios),
            median: median(&ratios),
            accuracy_before: before,
            accuracy_after: after,
            delta_accuracy: after - before,
            excluded,
            samples,
        }
    }
}

/// Sequential mean; 0 for an empty slice.
pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Midpoint median; 0 for an empty slice.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// Applies `operation` to each sample's own path and measures the change in
/// ground-truth probability and in accuracy. `paths[i]` belongs to
/// `samples[i]`; `ids[i]` is reported as its sample id.
pub fn deviation_with_paths(
    model: &VitModel,
    samples: &[Sample],
    ids: &[usize],
    paths: &[Vec<NeuronId>],
    operation: Operation,
    scope: TokenScope,
    method: &str,
) -> Result<DeviationReport> {
    if paths.len() != samples.len() || ids.len() != samples.len() {
        return Err(Error::Usage(format!(
            "{} samples, {} ids and {} paths",
            samples.len(),
            ids.len(),
            paths.len()
        )));
    }
    let records: Vec<SampleDeviation> = samples
        .par_iter()
        .zip(paths.par_iter())
        .zip(ids.par_iter())
        .map(|((sample, path), &sample_id)| {
            let before = model.forward(&sample.x, &InterventionSpec::new(scope))?;
            let spec = match operation.mode() {
                Some(mode) => InterventionSpec::uniform(scope, path.iter().copied(), mode)?,
                None => InterventionSpec::new(scope),
            };
            let after = model.forward(&sample.x, &spec)?;
            let (p_before, p_after) = (before.probs[sample.y], after.probs[sample.y]);
            Ok(SampleDeviation {
                sample_id,
                label: sample.y,
                p_before,
                p_after,
                ratio: (p_before > 0.0).then(|| (p_after - p_before) / p_before),
                correct_before: before.predicted() == sample.y,
                correct_after: after.predicted() == sample.y,
            })
        })
        .collect::<Result<_>>()?;
    Ok(DeviationReport::from_samples(method, operation, scope, records))
}

/// Locates every sample's path with `method`, then measures the deviation
/// caused by `operation`.
pub fn intervene_and_measure(
    model: &VitModel,
    samples: &[Sample],
    method: CriterionSelector,
    operation: Operation,
    integ: &IntegrationConfig,
) -> Result<DeviationReport> {
    let paths: Vec<Vec<NeuronId>> = samples
        .par_iter()
        .map(|s| Ok(find_path(model, s, integ, method)?.neurons))
        .collect::<Result<_>>()?;
    let ids: Vec<usize> = (0..samples.len()).collect();
    deviation_with_paths(model, samples, &ids, &paths, operation, integ.scope, method.method_name())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(p_before: f64, p_after: f64) -> SampleDeviation {
        SampleDeviation {
            sample_id: 0,
            label: 0,
            p_before,
            p_after,
            ratio: (p_before > 0.0).then(|| (p_after - p_before) / p_before),
            correct_before: true,
            correct_after: p_after > 0.3,
        }
    }

    #[test]
    fn halving_probability_is_minus_one_half() {
        assert_eq!(record(0.5, 0.25).ratio, Some(-0.5));
    }

    #[test]
    fn zero_probability_is_excluded_and_counted() {
        let r = DeviationReport::from_samples(
            "x",
            Operation::Zero,
            TokenScope::AllTokens,
            vec![record(0.0, 0.1), record(0.5, 0.25), record(0.4, 0.6)],
        );
        assert_eq!(r.excluded, 1);
        assert!((r.mean - (-0.5 + 0.5) / 2.0).abs() < 1e-15);
        assert!(r.median.abs() < 1e-15);
        assert!((r.delta_accuracy - (-2.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[]), 0.0);
    }

    #[test]
    fn operation_names() {
        for op in [Operation::None, Operation::Zero, Operation::Double] {
            assert_eq!(op.as_str().parse::<Operation>().unwrap(), op);
        }
        assert!("triple".parse::<Operation>().is_err());
    }
}
