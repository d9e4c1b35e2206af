// SPDX-License-Identifier: MIT OR Apache-2.0

//! Serializable attribution results.

use serde::{Deserialize, Serialize};

use super::{ranked, IntegrationConfig, NeuronPath, TopkLayer};
use crate::vit::NeuronId;

/// Number of neurons kept in a knowledge-attribution summary.
pub const TOP_NEURONS: usize = 5;

/// Single-neuron attribution scores of one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_id: Option<usize>,
    /// `scores[l-1][c]` for neuron `(l, c)`.
    pub scores: Vec<Vec<f64>>,
    /// The highest-scoring neurons, best first; ties go to the lower layer
    /// and then the lower channel.
    pub top: Vec<NeuronId>,
    /// How many of `top` fall in each layer.
    pub layer_histogram: Vec<usize>,
    pub config: IntegrationConfig,
}

impl AttributionReport {
    pub fn from_scores(scores: Vec<Vec<f64>>, config: IntegrationConfig) -> Self {
        let n = scores.first().map_or(0, Vec::len);
        let flat: Vec<f64> = scores.iter().flatten().copied().collect();
        let top: Vec<NeuronId> = ranked(&flat)
            .into_iter()
            .take(TOP_NEURONS)
            .map(|i| NeuronId::new(i / n + 1, i % n))
            .collect();
        let mut layer_histogram = vec![0; scores.len()];
        for t in &top {
            layer_histogram[t.layer - 1] += 1;
        }
        Self {
            sample_id: None,
            scores,
            top,
            layer_histogram,
            config,
        }
    }
}

/// One path-discovery result, one NDJSON line per (sample, method).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub sample_id: usize,
    pub method: String,
    pub path: Vec<NeuronId>,
    pub score: f64,
    pub config: IntegrationConfig,
}

impl PathRecord {
    pub fn new(sample_id: usize, path: &NeuronPath, config: IntegrationConfig) -> Self {
        Self {
            sample_id,
            method: path.criterion.method_name().to_string(),
            path: path.neurons.clone(),
            score: path.score,
            config,
        }
    }
}

/// Top-k scan result of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopkRecord {
    pub sample_id: usize,
    pub t: usize,
    pub layers: Vec<TopkLayer>,
    pub config: IntegrationConfig,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_five_are_distinct_and_counted() {
        let scores = vec![vec![0.1, 0.9, 0.3], vec![0.5, 0.5, 0.0], vec![0.7, 0.2, 0.95]];
        let r = AttributionReport::from_scores(scores, IntegrationConfig::default());
        assert_eq!(
            r.top,
            [
                NeuronId::new(3, 2),
                NeuronId::new(1, 1),
                NeuronId::new(3, 0),
                NeuronId::new(2, 0),
                NeuronId::new(2, 1)
            ]
        );
        assert_eq!(r.layer_histogram, [1, 2, 2]);
    }

    #[test]
    fn path_record_json_shape() {
        let path = NeuronPath {
            neurons: vec![NeuronId::new(1, 4), NeuronId::new(2, 0)],
            score: 0.25,
            criterion: super::super::CriterionSelector::Jas,
            criterion_value: 0.25,
        };
        let rec = PathRecord::new(7, &path, IntegrationConfig::default());
        let json = serde_json::to_string(&rec).unwrap();
        assert_eq!(
            json,
            r#"{"sample_id":7,"method":"neuron_path","path":[{"layer":1,"channel":4},{"layer":2,"channel":0}],"score":0.25,"config":{"m":20,"scope":"all-tokens","output_mode":"probability"}}"#
        );
    }
}
