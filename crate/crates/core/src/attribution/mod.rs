// SPDX-License-Identifier: MIT OR Apache-2.0

//! Neuron and path scoring: the joint attribution score, greedy
//! layer-progressive path search, its top-k variant, single-neuron
//! knowledge attribution, and the activation and influence-pattern
//! baselines.

mod baselines;
mod jas;
mod report;
mod scan;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vit::{NeuronId, OutputMode, Sample, TokenScope, VitModel};

pub use baselines::{activation_path, influence_pattern_path, influence_score, InfluenceTrace};
pub use jas::{jas, jas_under, riemann_right};
pub use report::{AttributionReport, PathRecord, TopkRecord, TOP_NEURONS};
pub use scan::{
    knowledge_attribution, locate_path, locate_topk, scan_layer, PathScan, TopkLayer,
};

/// Riemann integration settings shared by every integrated-gradient score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrationConfig {
    /// Number of right-endpoint steps.
    pub m: usize,
    pub scope: TokenScope,
    pub output_mode: OutputMode,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        Self {
            m: 20,
            scope: TokenScope::AllTokens,
            output_mode: OutputMode::Probability,
        }
    }
}

impl IntegrationConfig {
    pub fn with_m(m: usize) -> Self {
        Self {
            m,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidParameter {
                name: "m",
                detail: "the Riemann step count must be >= 1".into(),
            });
        }
        Ok(())
    }

    /// `k / m` for `k = 1..=m`.
    pub fn alphas(&self) -> impl Iterator<Item = f64> + '_ {
        (1..=self.m).map(move |k| k as f64 / self.m as f64)
    }
}

/// Criterion used to grow a path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionSelector {
    /// Greedy maximisation of the joint attribution score.
    Jas,
    /// Largest unmodified activation summary per layer.
    Activation,
    /// Greedy maximisation of the integrated neuron-to-neuron derivative
    /// product.
    InfluencePattern,
}

impl CriterionSelector {
    pub const ALL: [CriterionSelector; 3] = [
        CriterionSelector::Jas,
        CriterionSelector::InfluencePattern,
        CriterionSelector::Activation,
    ];

    /// Method label used in reports and tables.
    pub fn method_name(self) -> &'static str {
        match self {
            CriterionSelector::Jas => "neuron_path",
            CriterionSelector::Activation => "activation",
            CriterionSelector::InfluencePattern => "influence_pattern",
        }
    }
}

impl fmt::Display for CriterionSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.method_name())
    }
}

impl FromStr for CriterionSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jas" | "neuron_path" | "neuron-path" => Ok(CriterionSelector::Jas),
            "activation" => Ok(CriterionSelector::Activation),
            "influence_pattern" | "influence-pattern" => Ok(CriterionSelector::InfluencePattern),
            other => Err(Error::Usage(format!(
                "unknown method `{other}` (expected jas, activation or influence_pattern)"
            ))),
        }
    }
}

/// One neuron per layer `1..=N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronPath {
    pub neurons: Vec<NeuronId>,
    /// Joint attribution score of the whole path, whatever the criterion.
    pub score: f64,
    pub criterion: CriterionSelector,
    /// Value of the selecting criterion on the path: the JAS for
    /// [`CriterionSelector::Jas`], the summed activation summaries for
    /// [`CriterionSelector::Activation`] and the integrated derivative
    /// product for [`CriterionSelector::InfluencePattern`].
    pub criterion_value: f64,
}

impl NeuronPath {
    /// Checks that layers run `1, 2, ..., N` without gaps.
    pub fn validate(&self) -> Result<()> {
        for (i, n) in self.neurons.iter().enumerate() {
            if n.layer != i + 1 {
                return Err(Error::Usage(format!(
                    "path position {i} holds layer {}, expected {}",
                    n.layer,
                    i + 1
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.neurons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neurons.is_empty()
    }
}

/// Finds a path for `sample` with the chosen criterion.
pub fn find_path(
    model: &VitModel,
    sample: &Sample,
    integ: &IntegrationConfig,
    criterion: CriterionSelector,
) -> Result<NeuronPath> {
    match criterion {
        CriterionSelector::Jas => locate_path(model, sample, integ),
        CriterionSelector::Activation => activation_path(model, sample, integ),
        CriterionSelector::InfluencePattern => influence_pattern_path(model, sample, integ),
    }
}

/// Index of the largest value, lowest index on ties.
pub(crate) fn argmax(values: &[f64]) -> usize {
    crate::vit::argmax(values)
}

/// Indices sorted by descending value, ties by ascending index.
pub(crate) fn ranked(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_steps_rejected() {
        assert!(IntegrationConfig::with_m(0).validate().is_err());
        assert!(IntegrationConfig::with_m(1).validate().is_ok());
    }

    #[test]
    fn alphas_are_right_endpoints() {
        let a: Vec<f64> = IntegrationConfig::with_m(4).alphas().collect();
        assert_eq!(a, [0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn ranking_breaks_ties_by_index() {
        assert_eq!(ranked(&[0.5, 0.9, 0.5, 0.1]), [1, 0, 2, 3]);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn method_names_parse_back() {
        for c in CriterionSelector::ALL {
            assert_eq!(c.method_name().parse::<CriterionSelector>().unwrap(), c);
        }
        assert_eq!("jas".parse::<CriterionSelector>().unwrap(), CriterionSelector::Jas);
        assert!("beam".parse::<CriterionSelector>().is_err());
    }
}
