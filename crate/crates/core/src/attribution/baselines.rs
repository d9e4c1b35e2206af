// SPDX-License-Identifier: MIT OR Apache-2.0

//! Activation and influence-pattern baselines.
//!
//! The influence pattern scores a path by integrating, along the straight
//! line from the all-zero image to the input, the product of derivatives
//! between consecutive selected neurons. Each factor is the derivative of
//! the scope summary of the layer-`l` neuron with respect to a uniform
//! shift of the in-scope tokens of the layer-`l-1` neuron, which moves that
//! neuron's summary one-for-one. Layer 1 has no predecessor and is seeded
//! by the largest absolute activation summary on the real input.

use serde::{Deserialize, Serialize};

use super::{argmax, jas, riemann_right, CriterionSelector, IntegrationConfig, NeuronPath};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};
use crate::vit::{NeuronId, Recipe, Sample, TokenScope, VitModel};

/// Per layer, the channel with the largest unmodified activation summary.
///
/// `criterion_value` is the sum of the selected summaries; `score` is the
/// path's joint attribution score.
pub fn activation_path(model: &VitModel, sample: &Sample, integ: &IntegrationConfig) -> Result<NeuronPath> {
    integ.validate()?;
    let acts = model.neuron_activations(&sample.x)?;
    let summary = acts.summary(integ.scope);
    let mut neurons = Vec::with_capacity(summary.len());
    let mut value = 0.0;
    for (i, s) in summary.iter().enumerate() {
        let c = argmax(s);
        neurons.push(NeuronId::new(i + 1, c));
        value += s[c];
    }
    let score = jas(model, sample, &neurons, integ)?;
    Ok(NeuronPath {
        neurons,
        score,
        criterion: CriterionSelector::Activation,
        criterion_value: value,
    })
}

/// Greedy influence-pattern search with every intermediate score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceTrace {
    /// Layer 1 holds `|summary|` per channel; layer `l ≥ 2` holds the
    /// integrated product for the chain so far extended by each channel.
    pub scores: Vec<Vec<f64>>,
    pub path: NeuronPath,
}

impl InfluenceTrace {
    pub fn run(model: &VitModel, sample: &Sample, integ: &IntegrationConfig) -> Result<Self> {
        integ.validate()?;
        let acts = model.neuron_activations(&sample.x)?;
        let first: Vec<f64> = acts.summary(integ.scope)[0].iter().map(|v| v.abs()).collect();
        let mut chain = vec![NeuronId::new(1, argmax(&first))];
        let mut scores = vec![first];
        // running product of the chain's factors at each step
        let mut products = vec![1.0; integ.m];
        let mut value = 1.0;
        for layer in 2..=model.config().layers {
            let prev = *chain.last().expect("chain starts non-empty");
            let factors: Vec<Vec<f64>> = integ
                .alphas()
                .map(|alpha| layer_factors(model, &sample.x, alpha, prev, integ.scope))
                .collect::<Result<_>>()?;
            let n = model.config().ffn;
            let s: Vec<f64> = (0..n)
                .map(|c| riemann_right(integ.m, |k, _| Ok(products[k - 1] * factors[k - 1][c])))
                .collect::<Result<_>>()?;
            let best = argmax(&s);
            for (p, f) in products.iter_mut().zip(&factors) {
                *p *= f[best];
            }
            value = s[best];
            chain.push(NeuronId::new(layer, best));
            scores.push(s);
        }
        let score = jas(model, sample, &chain, integ)?;
        Ok(Self {
            scores,
            path: NeuronPath {
                neurons: chain,
                score,
                criterion: CriterionSelector::InfluencePattern,
                criterion_value: value,
            },
        })
    }
}

/// Greedy influence-pattern path.
pub fn influence_pattern_path(model: &VitModel, sample: &Sample, integ: &IntegrationConfig) -> Result<NeuronPath> {
    Ok(InfluenceTrace::run(model, sample, integ)?.path)
}

/// Integrated derivative product of a path `(1, c1), (2, c2), ...`.
/// A single-neuron path has the empty product, 1.
pub fn influence_score(model: &VitModel, sample: &Sample, neurons: &[NeuronId], integ: &IntegrationConfig) -> Result<f64> {
    integ.validate()?;
    for (i, n) in neurons.iter().enumerate() {
        n.validate(model.config())?;
        if n.layer != i + 1 {
            return Err(Error::Usage(format!(
                "influence path must list layers 1, 2, ... in order; position {i} has layer {}",
                n.layer
            )));
        }
    }
    riemann_right(integ.m, |_, alpha| {
        let mut product = 1.0;
        for pair in neurons.windows(2) {
            product *= layer_factors(model, &sample.x, alpha, pair[0], integ.scope)?[pair[1].channel];
        }
        Ok(product)
    })
}

/// Derivative of every layer-`prev.layer + 1` channel's summary with
/// respect to a uniform shift of `prev`, at input `alpha·x`.
fn layer_factors(model: &VitModel, image: &Tensor, alpha: f64, prev: NeuronId, scope: TokenScope) -> Result<Vec<f64>> {
    let config = model.config();
    let (t, n) = (config.seq_len(), config.ffn);
    let layer = prev.layer + 1;
    let scaled = Tensor::new(image.shape().to_vec(), image.data().iter().map(|v| alpha * v).collect())?;
    let mut tape = Tape::new();
    let params = model.bind(&mut tape, false);
    let recipe = Recipe {
        edits: &[],
        overrides: &[],
        probe: Some(prev),
        scope,
        stop_after: Some(layer),
    };
    let rec = model.record(&mut tape, &params, &scaled, recipe)?;
    let probe = rec.probe_leaf.expect("probe recorded");
    let act = *rec.acts.last().expect("layer recorded");
    let rows = scope.rows(t);
    let ones = vec![1.0; rows.len()];
    let tangents = tape.jvp(&[(probe, &ones)])?;
    let zeros;
    let dact = match tangents.get(act) {
        Some(d) => d,
        None => {
            zeros = vec![0.0; t * n];
            &zeros
        }
    };
    let factors: Vec<f64> = (0..n)
        .map(|c| {
            let column: Vec<f64> = rows.iter().map(|&r| dact[r * n + c]).collect();
            scope.summarize(&column)
        })
        .collect();
    if let Some(c) = factors.iter().position(|f| !f.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite influence factor {prev} -> L{layer}:{c} at alpha={alpha}"
        )));
    }
    Ok(factors)
}
