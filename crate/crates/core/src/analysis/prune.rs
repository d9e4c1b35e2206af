// SPDX-License-Identifier: MIT OR Apache-2.0

//! Top-k preservation pruning.
//!
//! Per class, the images are split into a probe part and a test part. The
//! probe images' top-k scans are pooled into per-layer selection counts,
//! the `t` most frequent channels of each layer are kept, and a fraction
//! `p` of the remaining channels is zeroed at every token while the test
//! images are classified.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{IntegrationConfig, PathScan};
use crate::error::{Error, Result};
use crate::vit::{InterventionSpec, NeuronId, NeuronMode, Sample, TokenScope, VitModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    /// Retained neurons per layer.
    pub t_values: Vec<usize>,
    /// Fractions of the non-retained neurons that are zeroed.
    pub p_values: Vec<f64>,
    pub split_seed: u64,
    /// Share of each class used to select neurons.
    pub probe_fraction: f64,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            t_values: vec![1, 5, 10, 30, 50],
            p_values: vec![0.1, 0.3, 0.5, 1.0],
            split_seed: 0,
            probe_fraction: 0.8,
        }
    }
}

impl PruneConfig {
    pub fn validate(&self, ffn: usize) -> Result<()> {
        if let Some(&t) = self.t_values.iter().find(|&&t| t == 0 || t > ffn) {
            return Err(Error::Usage(format!("retained count t={t} outside 1..={ffn}")));
        }
        if let Some(&p) = self.p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidParameter {
                name: "p",
                detail: format!("mask fraction {p} outside [0, 1]"),
            });
        }
        if !(self.probe_fraction > 0.0 && self.probe_fraction < 1.0) {
            return Err(Error::InvalidParameter {
                name: "probe_fraction",
                detail: format!("{} outside (0, 1)", self.probe_fraction),
            });
        }
        Ok(())
    }
}

/// Dataset indices of one class, split into probe and test parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSplit {
    pub class: usize,
    pub probe: Vec<usize>,
    pub test: Vec<usize>,
}

/// Smallest class size the split accepts.
pub const MIN_CLASS_SIZE: usize = 5;

/// Shuffles each class's indices with a per-class stream of `seed` and
/// puts the first `round(probe_fraction · count)` into the probe part.
pub fn split_by_class(labels: &[usize], classes: usize, seed: u64, probe_fraction: f64) -> Result<Vec<ClassSplit>> {
    (0..classes)
        .map(|class| {
            let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
            if idx.len() < MIN_CLASS_SIZE {
                return Err(Error::Usage(format!(
                    "class {class} has {} samples, pruning needs at least {MIN_CLASS_SIZE}",
                    idx.len()
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(class as u64);
            idx.shuffle(&mut rng);
            let probe = ((probe_fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
            let test = idx.split_off(probe);
            Ok(ClassSplit {
                class,
                probe: idx,
                test,
            })
        })
        .collect()
}

/// Per layer, the `t` channels most often present in the top-`t` sets of
/// the given scans; ties go to the lower channel.
pub fn select_by_frequency<'s>(scans: impl IntoIterator<Item = &'s PathScan>, layers: usize, n: usize, t: usize) -> Result<Vec<Vec<usize>>> {
    let mut counts = vec![vec![0u64; n]; layers];
    for scan in scans {
        for top in scan.topk(t)? {
            for c in top.channels {
                counts[top.layer - 1][c] += 1;
            }
        }
    }
    Ok(counts
        .iter()
        .map(|row| {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| row[b].cmp(&row[a]).then(a.cmp(&b)));
            order.truncate(t);
            order.sort_unstable();
            order
        })
        .collect())
}

/// Channel orders from which masks are cut, one per layer, drawn once per
/// `(class, p)`.
fn mask_orders(seed: u64, class: usize, p: f64, layers: usize, n: usize) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((class as u64) << 32) | (p * 1e6).round() as u64);
    (0..layers)
        .map(|_| {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            order
        })
        .collect()
}

/// Zeroes `round(p · (n - t))` non-retained channels per layer, taken in
/// the layer's drawn order.
pub fn pruning_mask(retained: &[Vec<usize>], orders: &[Vec<usize>], p: f64) -> Result<InterventionSpec> {
    let mut spec = InterventionSpec::new(TokenScope::AllTokens);
    for (i, (keep, order)) in retained.iter().zip(orders).enumerate() {
        let free: Vec<usize> = order.iter().copied().filter(|c| !keep.contains(c)).collect();
        let count = (p * free.len() as f64).round() as usize;
        for &c in &free[..count] {
            spec.push(NeuronId::new(i + 1, c), NeuronMode::Zero)?;
        }
    }
    Ok(spec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneRow {
    pub t: usize,
    pub p: f64,
    /// `None` for the pooled row over all classes.
    pub class: Option<usize>,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub class: usize,
    pub t: usize,
    /// Retained channels per layer, ascending.
    pub retained: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub config: PruneConfig,
    /// Unpruned accuracy over the pooled test parts.
    pub baseline: f64,
    pub rows: Vec<PruneRow>,
    pub selections: Vec<Selection>,
    pub splits: Vec<ClassSplit>,
}

impl PruneReport {
    /// Pooled accuracy at `(t, p)`.
    pub fn accuracy(&self, t: usize, p: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.class.is_none() && r.t == t && r.p == p)
            .map(|r| r.accuracy)
    }
}

/// Full protocol: scans every probe image, then evaluates the grid.
pub fn prune_and_eval(model: &VitModel, dataset: &[Sample], config: &PruneConfig, integ: &IntegrationConfig) -> Result<PruneReport> {
    config.validate(model.config().ffn)?;
    let labels: Vec<usize> = dataset.iter().map(|s| s.y).collect();
    let splits = split_by_class(&labels, model.config().classes, config.split_seed, config.probe_fraction)?;
    let mut wanted = vec![false; dataset.len()];
    for s in &splits {
        for &i in &s.probe {
            wanted[i] = true;
        }
    }
    let scans: Vec<Option<PathScan>> = dataset
        .par_iter()
        .zip(wanted.par_iter())
        .map(|(sample, &w)| w.then(|| PathScan::run(model, sample, integ)).transpose())
        .collect::<Result<_>>()?;
    prune_with_scans(model, dataset, &scans, config)
}

/// Evaluates the grid given precomputed scans; `scans[i]` must be present
/// for every probe image of the split drawn from `config.split_seed`.
pub fn prune_with_scans(model: &VitModel, dataset: &[Sample], scans: &[Option<PathScan>], config: &PruneConfig) -> Result<PruneReport> {
    let model_config = model.config();
    let (layers, n) = (model_config.layers, model_config.ffn);
    config.validate(n)?;
    if scans.len() != dataset.len() {
        return Err(Error::Usage(format!("{} scans for {} samples", scans.len(), dataset.len())));
    }
    let labels: Vec<usize> = dataset.iter().map(|s| s.y).collect();
    let splits = split_by_class(&labels, model_config.classes, config.split_seed, config.probe_fraction)?;

    let baseline_hits: Vec<Vec<bool>> = splits
        .iter()
        .map(|s| classify(model, dataset, &s.test, &InterventionSpec::default()))
        .collect::<Result<_>>()?;
    let test_total: usize = splits.iter().map(|s| s.test.len()).sum();
    let baseline = baseline_hits.iter().flatten().filter(|&&h| h).count() as f64 / test_total as f64;

    let mut rows = Vec::new();
    let mut selections = Vec::new();
    for &t in &config.t_values {
        let mut per_class = Vec::with_capacity(splits.len());
        for split in &splits {
            let probe_scans = split
                .probe
                .iter()
                .map(|&i| {
                    scans[i]
                        .as_ref()
                        .ok_or_else(|| Error::Usage(format!("missing scan for probe sample {i}")))
                })
                .collect::<Result<Vec<_>>>()?;
            let retained = select_by_frequency(probe_scans, layers, n, t)?;
            per_class.push(retained.clone());
            selections.push(Selection {
                class: split.class,
                t,
                retained,
            });
        }
        for &p in &config.p_values {
            let (mut correct, mut total) = (0, 0);
            for (split, retained) in splits.iter().zip(&per_class) {
                let orders = mask_orders(config.split_seed, split.class, p, layers, n);
                let spec = pruning_mask(retained, &orders, p)?;
                let hits = classify(model, dataset, &split.test, &spec)?;
                let c = hits.iter().filter(|&&h| h).count();
                rows.push(PruneRow {
                    t,
                    p,
                    class: Some(split.class),
                    correct: c,
                    total: hits.len(),
                    accuracy: c as f64 / hits.len() as f64,
                });
                correct += c;
                total += hits.len();
            }
            rows.push(PruneRow {
                t,
                p,
                class: None,
                correct,
                total,
                accuracy: correct as f64 / total as f64,
            });
        }
    }
    Ok(PruneReport {
        config: config.clone(),
        baseline,
        rows,
        selections,
        splits,
    })
}

fn classify(model: &VitModel, dataset: &[Sample], indices: &[usize], spec: &InterventionSpec) -> Result<Vec<bool>> {
    indices
        .par_iter()
        .map(|&i| Ok(model.forward(&dataset[i].x, spec)?.predicted() == dataset[i].y))
        .collect()
}
