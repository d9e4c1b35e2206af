// SPDX-License-Identifier: MIT OR Apache-2.0

//! Runtime invariant suite: gradient checks, completeness, oracle
//! agreement and structural identities, reported as a pass/fail table.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{build_utilization, class_similarity};
use crate::attribution::{
    influence_score, jas, knowledge_attribution, locate_topk, scan_layer, IntegrationConfig, InfluenceTrace,
    PathScan,
};
use crate::error::{Error, Result};
use crate::tensor::{central_difference, finite_difference_check, Tape, Tensor, Var};
use crate::vit::{
    read_checkpoint, write_checkpoint, InterventionSpec, NeuronId, NeuronMode, OutputMode, Sample, TokenScope,
    VitConfig, VitModel,
};

/// Outcome of one invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Measured quantity (error, residual, or 0/1 for identities).
    pub value: f64,
    /// Bound the value is compared against.
    pub bound: f64,
    pub detail: String,
}

impl CheckResult {
    fn at_most(name: &str, value: f64, bound: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed: value <= bound,
            value,
            bound,
            detail: detail.into(),
        }
    }

    fn holds(name: &str, ok: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed: ok,
            value: if ok { 0.0 } else { 1.0 },
            bound: 0.0,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Fixed-width text table, one line per check.
    pub fn table(&self) -> String {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&format!(
                "{:<4} {:<width$}  value={:<12.4e} bound={:<10.3e} {}\n",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.value,
                c.bound,
                c.detail
            ));
        }
        out
    }
}

// ----------------------------------------------------------------------
// primitive gradients
// ----------------------------------------------------------------------

type Builder = fn(&mut Tape<'_>, &[Var]) -> Result<Var>;

/// Max relative error between backward and central differences for one
/// primitive, contracted to a scalar with fixed random weights.
pub fn primitive_gradient_error(shapes: &[Vec<usize>], build: Builder, seed: u64, h: f64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes: Vec<usize> = shapes.iter().map(|s| s.iter().product()).collect();
    let point: Vec<f64> = (0..sizes.iter().sum::<usize>()).map(|_| rng.random_range(-2.0..2.0)).collect();
    let weights_seed = rng.random::<u64>();
    let eval = |flat: &[f64], want_grad: bool| -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new();
        let mut offset = 0;
        let mut inputs = Vec::with_capacity(shapes.len());
        for (shape, &size) in shapes.iter().zip(&sizes) {
            let t = Tensor::new(shape.clone(), flat[offset..offset + size].to_vec())?;
            inputs.push(tape.leaf(t, want_grad));
            offset += size;
        }
        let out = build(&mut tape, &inputs)?;
        let numel = tape.value(out)?.numel();
        let mut wr = ChaCha8Rng::seed_from_u64(weights_seed);
        let w: Vec<f64> = (0..numel).map(|_| wr.random_range(0.5..1.5)).collect();
        let w = tape.leaf(Tensor::new(tape.value(out)?.shape().to_vec(), w)?, false);
        let weighted = tape.mul(out, w)?;
        let scalar = tape.sum(weighted)?;
        let value = tape.value(scalar)?.item()?;
        if !want_grad {
            return Ok((value, Vec::new()));
        }
        tape.backward(scalar)?;
        let mut grad = Vec::with_capacity(flat.len());
        for &v in &inputs {
            grad.extend_from_slice(tape.grad(v)?.expect("requires_grad leaf").data());
        }
        Ok((value, grad))
    };
    let (_, analytic) = eval(&point, true)?;
    let coords: Vec<usize> = (0..point.len()).collect();
    finite_difference_check(|p| Ok(eval(p, false)?.0), &point, &analytic, h, &coords)
}

/// Every tape primitive with representative shapes.
pub fn primitive_cases() -> Vec<(&'static str, Vec<Vec<usize>>, Builder)> {
    vec![
        ("matmul", vec![vec![3, 4], vec![4, 2]], |t, v| t.matmul(v[0], v[1])),
        ("transpose", vec![vec![3, 4]], |t, v| t.transpose(v[0])),
        ("add_broadcast", vec![vec![3, 4], vec![4]], |t, v| t.add(v[0], v[1])),
        ("mul", vec![vec![3, 4], vec![3, 4]], |t, v| t.mul(v[0], v[1])),
        ("scale", vec![vec![5]], |t, v| t.scale(v[0], -1.5)),
        ("layer_norm", vec![vec![3, 5], vec![5], vec![5]], |t, v| {
            t.layer_norm(v[0], v[1], v[2], 1e-6)
        }),
        ("gelu", vec![vec![3, 4]], |t, v| t.gelu(v[0])),
        ("softmax_rows", vec![vec![3, 4]], |t, v| t.softmax(v[0], 1)),
        ("softmax_cols", vec![vec![3, 4]], |t, v| t.softmax(v[0], 0)),
        ("log_softmax", vec![vec![3, 4]], |t, v| t.log_softmax(v[0], 1)),
        ("index_select", vec![vec![3, 4]], |t, v| t.index_select(v[0], 1, &[0, 2, 2])),
        ("concat", vec![vec![2, 3], vec![1, 3]], |t, v| t.concat(&[v[0], v[1]], 0)),
        ("sum", vec![vec![2, 3]], |t, v| t.sum(v[0])),
    ]
}

// ----------------------------------------------------------------------
// model-level gradient checks
// ----------------------------------------------------------------------

/// One sampled coordinate of a gradient check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientProbe {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub probes: Vec<GradientProbe>,
}

/// Backward gradient of `F` with respect to every parameter.
pub fn parameter_gradients(model: &VitModel, sample: &Sample, mode: OutputMode) -> Result<Vec<Tensor>> {
    let mut tape = Tape::new();
    let params = model.bind(&mut tape, true);
    let rec = model.record(
        &mut tape,
        &params,
        &sample.x,
        crate::vit::Recipe {
            edits: &[],
            overrides: &[],
            probe: None,
            scope: TokenScope::AllTokens,
            stop_after: None,
        },
    )?;
    let f = model.record_output(&mut tape, rec.logits.expect("full record"), sample.y, mode)?;
    tape.backward(f)?;
    params
        .iter()
        .map(|&p| Ok(tape.grad(p)?.expect("trainable leaf").clone()))
        .collect()
}

/// Compares backward parameter gradients of `F` with central differences
/// at `coords` parameter coordinates drawn uniformly with `seed`.
pub fn parameter_gradient_check(
    model: &VitModel,
    sample: &Sample,
    mode: OutputMode,
    coords: usize,
    seed: u64,
    h: f64,
) -> Result<GradientCheck> {
    let grads = parameter_gradients(model, sample, mode)?;
    let names: Vec<String> = model.named_tensors().into_iter().map(|(n, _)| n).collect();
    let sizes: Vec<usize> = model.tensors().iter().map(Tensor::numel).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probes = Vec::with_capacity(coords);
    let mut worst = 0.0_f64;
    for _ in 0..coords {
        let mut flat = rng.random_range(0..total);
        let mut k = 0;
        while flat >= sizes[k] {
            flat -= sizes[k];
            k += 1;
        }
        let analytic = grads[k].data()[flat];
        let at = |delta: f64| -> Result<f64> {
            let mut probe = model.clone();
            probe.tensors_mut()[k].data_mut()[flat] += delta;
            probe.output(&sample.x, sample.y, &InterventionSpec::default(), mode)
        };
        let (plus, minus) = (at(h)?, at(-h)?);
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::OracleFailure(format!("non-finite probe of {}[{flat}]", names[k])));
        }
        let numeric = (plus - minus) / (2.0 * h);
        worst = worst.max((analytic - numeric).abs() / analytic.abs().max(1e-12));
        probes.push(GradientProbe {
            tensor: names[k].clone(),
            index: flat,
            analytic,
            numeric,
        });
    }
    Ok(GradientCheck {
        max_relative_error: worst,
        probes,
    })
}

/// Compares `∂F/∂w` at the `alpha`-scaled point with central differences
/// on the scaled forward, for every in-scope token of `neurons`. Returns
/// `max_c |analytic − fd| / max_c |analytic|`.
pub fn neuron_gradient_check(
    model: &VitModel,
    sample: &Sample,
    neurons: &[NeuronId],
    alpha: f64,
    integ: &IntegrationConfig,
    h: f64,
) -> Result<f64> {
    let g = model.grad_wrt_neurons(&sample.x, sample.y, neurons, alpha, integ.scope, integ.output_mode)?;
    let point: Vec<f64> = g.baseline.iter().flatten().map(|v| alpha * v).collect();
    let analytic: Vec<f64> = g.gradients.iter().flatten().copied().collect();
    let lens: Vec<usize> = g.baseline.iter().map(Vec::len).collect();
    let f = |p: &[f64]| -> Result<f64> {
        let mut spec = InterventionSpec::new(integ.scope);
        let mut offset = 0;
        for (&n, &len) in neurons.iter().zip(&lens) {
            spec.push(n, NeuronMode::SetTokens(p[offset..offset + len].to_vec()))?;
            offset += len;
        }
        model.output(&sample.x, sample.y, &spec, integ.output_mode)
    };
    // Normwise: coordinates far below the gradient's scale sit under the
    // difference quotient's rounding floor (about 1e-16·F/h).
    let mut f = f;
    let mut worst = 0.0_f64;
    for (c, a) in analytic.iter().enumerate() {
        worst = worst.max((a - central_difference(&mut f, &point, c, h)?).abs());
    }
    let scale = analytic.iter().map(|v| v.abs()).fold(0.0, f64::max);
    Ok(worst / scale.max(1e-12))
}

/// `(JAS, F(α=1) − F(α=0), |JAS − difference|)` for `neurons`.
pub fn completeness(model: &VitModel, sample: &Sample, neurons: &[NeuronId], integ: &IntegrationConfig) -> Result<(f64, f64, f64)> {
    let score = jas(model, sample, neurons, integ)?;
    let full = model.output(&sample.x, sample.y, &InterventionSpec::new(integ.scope), integ.output_mode)?;
    let zeroed = InterventionSpec::uniform(integ.scope, neurons.iter().copied(), NeuronMode::Zero)?;
    let empty = model.output(&sample.x, sample.y, &zeroed, integ.output_mode)?;
    let diff = full - empty;
    Ok((score, diff, (score - diff).abs()))
}

// ----------------------------------------------------------------------
// suite
// ----------------------------------------------------------------------

/// Options of [`run_suite`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Parameter coordinates in the model gradient check.
    pub gradient_coords: usize,
    /// Paths in the completeness check.
    pub completeness_paths: usize,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            gradient_coords: 100,
            completeness_paths: 3,
        }
    }
}

/// Micro model used for exhaustive oracle checks: two layers, six neurons.
pub fn micro_config() -> VitConfig {
    VitConfig {
        image_size: 8,
        patch_size: 4,
        channels: 1,
        layers: 2,
        hidden: 8,
        ffn: 6,
        heads: 2,
        classes: 3,
    }
}

/// Index of the sample whose true-class probability is closest to 0.5.
///
/// Saturated images have parameter gradients near 1e-7, where a central
/// difference with h=1e-5 cannot resolve a relative error of 1e-6.
pub fn well_conditioned_sample(model: &VitModel, samples: &[Sample]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in samples.iter().enumerate() {
        let p = model.forward(&s.x, &InterventionSpec::default())?.probs[s.y];
        let gap = (p - 0.5).abs();
        if best.is_none_or(|(_, g)| gap < g) {
            best = Some((i, gap));
        }
    }
    best.map(|(i, _)| i)
        .ok_or_else(|| Error::Usage("verify needs at least one sample".into()))
}

/// Runs every invariant against `model` and `samples` (at least one).
pub fn run_suite(model: &VitModel, samples: &[Sample], options: &SuiteOptions) -> Result<VerifyReport> {
    let sample = samples
        .first()
        .ok_or_else(|| Error::Usage("verify needs at least one sample".into()))?;
    let config = model.config().clone();
    let integ = IntegrationConfig::default();
    let mut checks = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);

    for (i, (name, shapes, build)) in primitive_cases().into_iter().enumerate() {
        let err = primitive_gradient_error(&shapes, build, options.seed + i as u64, 1e-5)?;
        checks.push(CheckResult::at_most(
            &format!("grad/{name}"),
            err,
            1e-7,
            "backward vs central difference",
        ));
    }

    // softmax normalisation and layer-norm moments on random rows
    {
        let mut tape = Tape::new();
        let x: Vec<f64> = (0..40).map(|_| rng.random_range(-30.0..30.0)).collect();
        let x = tape.leaf(Tensor::new(vec![4, 10], x)?, false);
        let s = tape.softmax(x, 1)?;
        let worst = (0..4)
            .map(|r| (tape.value(s).map(|t| t.row(r).iter().sum::<f64>()).unwrap_or(f64::NAN) - 1.0).abs())
            .fold(0.0, f64::max);
        checks.push(CheckResult::at_most("softmax/row-sum", worst, 1e-12, "|Σ row − 1|"));
    }

    {
        let mut tape = Tape::new();
        let x: Vec<f64> = (0..40).map(|_| rng.random_range(-2.0..2.0)).collect();
        let x = tape.leaf(Tensor::new(vec![4, 10], x)?, false);
        let g = tape.leaf(Tensor::full(&[10], 1.0), false);
        let b = tape.leaf(Tensor::zeros(&[10]), false);
        let y = tape.layer_norm(x, g, b, 1e-12)?;
        let (mut mean_err, mut var_err) = (0.0_f64, 0.0_f64);
        for r in 0..4 {
            let row = tape.value(y)?.row(r).to_vec();
            let m = row.iter().sum::<f64>() / row.len() as f64;
            let v = row.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / row.len() as f64;
            mean_err = mean_err.max(m.abs());
            var_err = var_err.max((v - 1.0).abs());
        }
        checks.push(CheckResult::at_most("layer_norm/mean", mean_err, 1e-10, "unit affine"));
        checks.push(CheckResult::at_most("layer_norm/variance", var_err, 1e-8, "unit affine, eps 1e-12"));
    }

    let pick = well_conditioned_sample(model, samples)?;
    let grad = parameter_gradient_check(
        model,
        &samples[pick],
        OutputMode::Probability,
        options.gradient_coords,
        options.seed,
        1e-5,
    )?;
    checks.push(CheckResult::at_most(
        "vit/parameter-gradient",
        grad.max_relative_error,
        1e-6,
        format!("{} coordinates, h=1e-5, sample {pick}", options.gradient_coords),
    ));

    let some_neurons: Vec<NeuronId> = (1..=config.layers)
        .map(|l| NeuronId::new(l, rng.random_range(0..config.ffn)))
        .collect();
    let neuron_err = neuron_gradient_check(model, &samples[pick], &some_neurons, 0.5, &integ, 1e-5)?;
    checks.push(CheckResult::at_most("vit/neuron-gradient", neuron_err, 1e-6, "normwise, alpha=0.5, h=1e-5"));

    // structural identities
    let plain = model.forward(&sample.x, &InterventionSpec::default())?;
    let unit = InterventionSpec::uniform(TokenScope::AllTokens, some_neurons.iter().copied(), NeuronMode::Scale(1.0))?;
    let again = model.forward(&sample.x, &unit)?;
    checks.push(CheckResult::holds(
        "intervention/identity",
        bits(&plain.probs) == bits(&again.probs),
        "scale(1) on every layer leaves the forward bit-identical",
    ));
    let prob_err = (plain.probs.iter().sum::<f64>() - 1.0).abs();
    checks.push(CheckResult::at_most("forward/probability-sum", prob_err, 1e-12, "plain forward"));

    let target = some_neurons[config.layers / 2];
    let out = |spec: InterventionSpec| model.forward(&sample.x, &spec);
    let one = |mode: NeuronMode| InterventionSpec::new(TokenScope::AllTokens).with(target, mode);
    let zero = out(one(NeuronMode::Zero)?)?;
    let scale0 = out(one(NeuronMode::Scale(0.0))?)?;
    let double = out(one(NeuronMode::Double)?)?;
    let scale2 = out(one(NeuronMode::Scale(2.0))?)?;
    let acts = model.neuron_activations(&sample.x)?;
    let doubled: Vec<f64> = acts
        .scoped_values(target, TokenScope::AllTokens)
        .iter()
        .map(|v| 2.0 * v)
        .collect();
    let set2 = out(one(NeuronMode::SetTokens(doubled))?)?;
    checks.push(CheckResult::holds(
        "intervention/zero-equals-scale0",
        bits(&zero.probs) == bits(&scale0.probs),
        format!("{target}"),
    ));
    checks.push(CheckResult::holds(
        "intervention/double-equals-scale2",
        bits(&double.probs) == bits(&scale2.probs),
        format!("{target}"),
    ));
    let set_err = max_abs_diff(&double.probs, &set2.probs);
    checks.push(CheckResult::at_most("intervention/double-equals-set", set_err, 1e-15, format!("{target}")));
    let locality = (0..target.layer - 1).all(|l| bits(zero.activations[l].data()) == bits(plain.activations[l].data()));
    checks.push(CheckResult::holds("intervention/locality", locality, format!("layers below {}", target.layer)));
    let worst_sum = [&zero, &double, &set2]
        .iter()
        .map(|o| (o.probs.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    checks.push(CheckResult::at_most("intervention/probability-sum", worst_sum, 1e-12, "after interventions"));

    let mut bytes = Vec::new();
    write_checkpoint(model, &mut bytes)?;
    let back = read_checkpoint(&bytes)?;
    let same = model
        .tensors()
        .iter()
        .zip(back.tensors())
        .all(|(a, b)| bits(a.data()) == bits(b.data()));
    checks.push(CheckResult::holds("checkpoint/round-trip", same, "bit-identical tensors"));

    // attribution
    let wide = IntegrationConfig::with_m(512);
    let narrow = IntegrationConfig::with_m(8);
    let mut worst_residual = 0.0_f64;
    let mut shrinks = true;
    for _ in 0..options.completeness_paths {
        let path: Vec<NeuronId> = (1..=config.layers)
            .map(|l| NeuronId::new(l, rng.random_range(0..config.ffn)))
            .collect();
        let (_, _, r512) = completeness(model, sample, &path, &wide)?;
        let (_, _, r8) = completeness(model, sample, &path, &narrow)?;
        worst_residual = worst_residual.max(r512);
        shrinks &= r512 < r8;
    }
    checks.push(CheckResult::at_most(
        "jas/completeness-m512",
        worst_residual,
        1e-3,
        format!("{} random paths", options.completeness_paths),
    ));
    checks.push(CheckResult::holds("jas/residual-shrinks", shrinks, "residual(512) < residual(8)"));

    let micro = VitModel::init(micro_config(), options.seed)?;
    let micro_sample = Sample {
        x: Tensor::new(
            micro_config().image_shape().to_vec(),
            (0..micro_config().image_size.pow(2)).map(|_| rng.random_range(0.0..1.0)).collect(),
        )?,
        y: 0,
    };
    let scan = PathScan::run(&micro, &micro_sample, &integ)?;
    let mut scan_err = 0.0_f64;
    for (i, scores) in scan.scores.iter().enumerate() {
        for (c, &s) in scores.iter().enumerate() {
            let mut path = scan.chain[..i].to_vec();
            path.push(NeuronId::new(i + 1, c));
            scan_err = scan_err.max((s - jas(&micro, &micro_sample, &path, &integ)?).abs());
        }
    }
    checks.push(CheckResult::at_most(
        "locate/scan-vs-reference",
        scan_err,
        1e-9,
        "micro model, every candidate",
    ));

    let full = scan_layer(model, sample, &integ, &[], 1)?;
    let knowledge = knowledge_attribution(model, sample, &integ)?;
    checks.push(CheckResult::holds(
        "knowledge/top5-distinct",
        knowledge.top.len() == 5 && {
            let mut t = knowledge.top.clone();
            t.sort();
            t.dedup();
            t.len() == 5
        },
        "five distinct neurons",
    ));
    checks.push(CheckResult::holds(
        "knowledge/layer1-matches-scan",
        bits(&knowledge.scores[0]) == bits(&full),
        "first layer equals an empty-prefix scan",
    ));

    let topk1 = locate_topk(&micro, &micro_sample, &integ, 1)?;
    let chain: Vec<NeuronId> = topk1.iter().map(|l| NeuronId::new(l.layer, l.channels[0])).collect();
    checks.push(CheckResult::holds("topk/t1-equals-path", chain == scan.chain, "micro model"));
    let again = PathScan::run(&micro, &micro_sample, &integ)?;
    checks.push(CheckResult::holds(
        "locate/deterministic",
        again == scan,
        "two runs are bit-identical",
    ));

    let trace = InfluenceTrace::run(&micro, &micro_sample, &integ)?;
    let recomputed = influence_score(&micro, &micro_sample, &trace.path.neurons, &integ)?;
    checks.push(CheckResult::at_most(
        "influence/score-recompute",
        (recomputed - trace.path.criterion_value).abs(),
        1e-9,
        "micro model",
    ));

    // utilization and similarity
    let mut by_class: BTreeMap<usize, Vec<Vec<NeuronId>>> = BTreeMap::new();
    by_class.entry(0).or_default().push(scan.chain.clone());
    by_class.entry(1).or_default().push(trace.path.neurons.clone());
    by_class.entry(1).or_default().push(scan.chain.clone());
    let matrices = build_utilization(&by_class, &micro_config())?;
    let row_err = matrices
        .iter()
        .flat_map(|m| m.normalized.iter().map(|r| (r.iter().sum::<f64>() - 1.0).abs()))
        .fold(0.0, f64::max);
    checks.push(CheckResult::at_most("utilization/row-sum", row_err, 1e-12, "non-empty layers"));
    let (sim, _) = class_similarity(&matrices, 0.5)?;
    let symmetric = (0..sim.values.len()).all(|i| (0..sim.values.len()).all(|j| sim.values[i][j] == sim.values[j][i]));
    let diag = sim.values.iter().enumerate().map(|(i, r)| (r[i] - 1.0).abs()).fold(0.0, f64::max);
    checks.push(CheckResult::holds("similarity/symmetric", symmetric, ""));
    checks.push(CheckResult::at_most("similarity/unit-diagonal", diag, 1e-12, ""));

    Ok(VerifyReport { checks })
}

fn bits(values: &[f64]) -> Vec<u64> {
    values.iter().map(|v| v.to_bits()).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_primitive_passes() {
        for (i, (name, shapes, build)) in primitive_cases().into_iter().enumerate() {
            let err = primitive_gradient_error(&shapes, build, 100 + i as u64, 1e-5).unwrap();
            assert!(err <= 1e-7, "{name}: {err}");
        }
    }

    #[test]
    fn table_marks_failures() {
        let r = VerifyReport {
            checks: vec![
                CheckResult::at_most("a", 0.5, 1.0, ""),
                CheckResult::holds("b", false, "broken"),
            ],
        };
        assert!(!r.all_passed());
        let t = r.table();
        assert!(t.lines().next().unwrap().starts_with("PASS"));
        assert!(t.lines().nth(1).unwrap().starts_with("FAIL"));
    }
}
