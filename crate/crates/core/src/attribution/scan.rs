// SPDX-License-Identifier: MIT OR Apache-2.0

//! Candidate scans for greedy path search and knowledge attribution.
//!
//! The JAS integrand `Σ_l ⟨w̄_l, ∂F/∂w_l⟩` at `α` is the directional
//! derivative `dF(α·w̄)/dα`, so one forward-mode pass per step gives it
//! exactly. A scan of layer `l` records the prefix up to layer `l` once per
//! step (with tangents seeded by the prefix's `w̄`), then for each
//! candidate channel replays only the remaining suffix with that channel
//! overridden. The reverse-mode [`super::jas`] is the reference this route
//! is tested against.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{argmax, ranked, riemann_right, AttributionReport, CriterionSelector, IntegrationConfig, NeuronPath};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};
use crate::vit::{check_distinct_layers, ChannelOverride, NeuronId, Recipe, Sample, VitModel};

/// State entering block `layer` at one integration step.
struct Front {
    h_mid: Tensor,
    h_tangent: Option<Vec<f64>>,
    act: Tensor,
    act_tangent: Option<Vec<f64>>,
}

/// `JAS(prefix ∪ {(layer, c)})` for every channel `c` of `layer`.
///
/// `prefix` neurons must sit in distinct layers below `layer`.
pub fn scan_layer(
    model: &VitModel,
    sample: &Sample,
    integ: &IntegrationConfig,
    prefix: &[NeuronId],
    layer: usize,
) -> Result<Vec<f64>> {
    integ.validate()?;
    let config = model.config();
    NeuronId::new(layer, 0).validate(config)?;
    check_distinct_layers(prefix)?;
    if let Some(bad) = prefix.iter().find(|p| p.layer >= layer) {
        return Err(Error::Usage(format!(
            "prefix neuron {bad} is not below scanned layer {layer}"
        )));
    }
    let (t, n) = (config.seq_len(), config.ffn);
    let rows = integ.scope.rows(t);
    let acts = model.neuron_activations(&sample.x)?;
    let mut sorted = prefix.to_vec();
    sorted.sort();
    let prefix_base: Vec<Vec<f64>> = sorted.iter().map(|&p| acts.scoped_values(p, integ.scope)).collect();

    // without a prefix the state entering the layer does not depend on α
    let fronts: Vec<Front> = if sorted.is_empty() {
        vec![front(model, sample, integ, &sorted, &prefix_base, 1.0, layer)?]
    } else {
        integ
            .alphas()
            .map(|alpha| front(model, sample, integ, &sorted, &prefix_base, alpha, layer))
            .collect::<Result<_>>()?
    };

    (0..n)
        .into_par_iter()
        .map(|c| {
            let base = acts.scoped_values(NeuronId::new(layer, c), integ.scope);
            riemann_right(integ.m, |k, alpha| {
                let f = &fronts[if fronts.len() == 1 { 0 } else { k - 1 }];
                let mut act = f.act.clone();
                let mut tangent = f.act_tangent.clone().unwrap_or_else(|| vec![0.0; t * n]);
                for (&r, &w) in rows.iter().zip(&base) {
                    act.data_mut()[r * n + c] = alpha * w;
                    tangent[r * n + c] = w;
                }
                let mut tape = Tape::new();
                let params = model.bind(&mut tape, false);
                let h = tape.leaf_ref(&f.h_mid, false);
                let a = tape.leaf(act, false);
                let logits = model.record_suffix(&mut tape, &params, layer, h, a, &[])?;
                let out = model.record_output(&mut tape, logits, sample.y, integ.output_mode)?;
                let mut seeds: Vec<(crate::tensor::Var, &[f64])> = vec![(a, &tangent)];
                if let Some(ht) = &f.h_tangent {
                    seeds.push((h, ht));
                }
                Ok(tape.jvp(&seeds)?.scalar(out))
            })
        })
        .collect()
}

/// Records the evaluation up to `layer` with the prefix set to `alpha·w̄`.
fn front(
    model: &VitModel,
    sample: &Sample,
    integ: &IntegrationConfig,
    prefix: &[NeuronId],
    prefix_base: &[Vec<f64>],
    alpha: f64,
    layer: usize,
) -> Result<Front> {
    let overrides: Vec<ChannelOverride> = prefix
        .iter()
        .zip(prefix_base)
        .map(|(&neuron, w)| ChannelOverride {
            neuron,
            values: w.iter().map(|v| alpha * v).collect(),
        })
        .collect();
    let mut tape = Tape::new();
    let params = model.bind(&mut tape, false);
    let recipe = Recipe {
        edits: &[],
        overrides: &overrides,
        probe: None,
        scope: integ.scope,
        stop_after: Some(layer),
    };
    let rec = model.record(&mut tape, &params, &sample.x, recipe)?;
    let h_mid = rec.h_mid.expect("stopped record keeps h_mid");
    let act = *rec.acts.last().expect("at least one layer recorded");
    let (h_tangent, act_tangent) = if prefix.is_empty() {
        (None, None)
    } else {
        let seeds: Vec<_> = rec
            .override_leaves
            .iter()
            .zip(prefix_base)
            .map(|(&leaf, w)| (leaf, w.as_slice()))
            .collect();
        let tangents = tape.jvp(&seeds)?;
        (
            tangents.get(h_mid).map(<[f64]>::to_vec),
            tangents.get(act).map(<[f64]>::to_vec),
        )
    };
    Ok(Front {
        h_mid: tape.value(h_mid)?.clone(),
        h_tangent,
        act: tape.value(act)?.clone(),
        act_tangent,
    })
}

/// Every layer's candidate scores along the greedy top-1 chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathScan {
    /// `scores[l-1][c]` is `JAS(chain[..l-1] ∪ {(l, c)})`.
    pub scores: Vec<Vec<f64>>,
    pub chain: Vec<NeuronId>,
}

/// The `t` best channels of one layer, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopkLayer {
    pub layer: usize,
    pub channels: Vec<usize>,
    pub scores: Vec<f64>,
}

impl PathScan {
    /// Greedy layer-progressive scan over all layers.
    pub fn run(model: &VitModel, sample: &Sample, integ: &IntegrationConfig) -> Result<Self> {
        let mut chain = Vec::with_capacity(model.config().layers);
        let mut scores = Vec::with_capacity(model.config().layers);
        for layer in 1..=model.config().layers {
            let s = scan_layer(model, sample, integ, &chain, layer)?;
            chain.push(NeuronId::new(layer, argmax(&s)));
            scores.push(s);
        }
        Ok(Self { scores, chain })
    }

    pub fn path(&self) -> NeuronPath {
        let score = self
            .chain
            .last()
            .map_or(0.0, |last| self.scores[last.layer - 1][last.channel]);
        NeuronPath {
            neurons: self.chain.clone(),
            score,
            criterion: CriterionSelector::Jas,
            criterion_value: score,
        }
    }

    /// Per layer, the `t` highest-scoring channels; ties keep the lower
    /// channel first.
    pub fn topk(&self, t: usize) -> Result<Vec<TopkLayer>> {
        let n = self.scores.first().map_or(0, Vec::len);
        if t == 0 || t > n {
            return Err(Error::Usage(format!("top-k size {t} outside 1..={n}")));
        }
        Ok(self
            .scores
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let channels: Vec<usize> = ranked(s).into_iter().take(t).collect();
                TopkLayer {
                    layer: i + 1,
                    scores: channels.iter().map(|&c| s[c]).collect(),
                    channels,
                }
            })
            .collect())
    }
}

/// Greedy path maximising the joint attribution score layer by layer.
pub fn locate_path(model: &VitModel, sample: &Sample, integ: &IntegrationConfig) -> Result<NeuronPath> {
    Ok(PathScan::run(model, sample, integ)?.path())
}

/// Per layer, the `t` channels with the highest `JAS(prefix ∪ {w})`, where
/// the prefix is the top-1 chain.
pub fn locate_topk(model: &VitModel, sample: &Sample, integ: &IntegrationConfig, t: usize) -> Result<Vec<TopkLayer>> {
    let n = model.config().ffn;
    if t == 0 || t > n {
        return Err(Error::Usage(format!("top-k size {t} outside 1..={n}")));
    }
    PathScan::run(model, sample, integ)?.topk(t)
}

/// Single-neuron integrated gradients for all `L × n` neurons.
pub fn knowledge_attribution(model: &VitModel, sample: &Sample, integ: &IntegrationConfig) -> Result<AttributionReport> {
    let scores = (1..=model.config().layers)
        .map(|layer| scan_layer(model, sample, integ, &[], layer))
        .collect::<Result<Vec<_>>>()?;
    Ok(AttributionReport::from_scores(scores, *integ))
}
