// SPDX-License-Identifier: MIT OR Apache-2.0

//! Reference joint attribution score through reverse-mode gradients.

use super::IntegrationConfig;
use crate::error::{Error, Result};
use crate::vit::{check_distinct_layers, InterventionSpec, NeuronId, Sample, VitModel};

/// `(1/m) Σ_{k=1..m} f(k/m)`, summed in step order.
///
/// An error from `f` at step `k` is returned as-is; non-finite values
/// become a numeric error naming `k`.
pub fn riemann_right(m: usize, mut f: impl FnMut(usize, f64) -> Result<f64>) -> Result<f64> {
    if m == 0 {
        return Err(Error::InvalidParameter {
            name: "m",
            detail: "the Riemann step count must be >= 1".into(),
        });
    }
    let mut total = 0.0;
    for k in 1..=m {
        let v = f(k, k as f64 / m as f64)?;
        if !v.is_finite() {
            return Err(Error::Numeric(format!("non-finite integrand at step k={k} of m={m}")));
        }
        total += v;
    }
    Ok(total / m as f64)
}

/// Joint attribution score of `neurons` on the unmodified model.
pub fn jas(model: &VitModel, sample: &Sample, neurons: &[NeuronId], integ: &IntegrationConfig) -> Result<f64> {
    jas_under(model, sample, neurons, integ, &InterventionSpec::new(integ.scope))
}

/// Joint attribution score with `base` applied to every evaluation.
///
/// The original values `w̄` are read from a forward pass under `base`; at
/// step `k` every listed neuron's in-scope tokens are set to `(k/m)·w̄` and
/// the integrand is `Σ_l ⟨w̄_l, ∂F/∂w_l⟩`.
pub fn jas_under(
    model: &VitModel,
    sample: &Sample,
    neurons: &[NeuronId],
    integ: &IntegrationConfig,
    base: &InterventionSpec,
) -> Result<f64> {
    integ.validate()?;
    check_distinct_layers(neurons)?;
    for n in neurons {
        n.validate(model.config())?;
    }
    if neurons.is_empty() {
        return Ok(0.0);
    }
    let acts = model.neuron_activations_under(&sample.x, base)?;
    let baseline: Vec<Vec<f64>> = neurons.iter().map(|&n| acts.scoped_values(n, integ.scope)).collect();
    riemann_right(integ.m, |k, alpha| {
        let (_, grads) = model
            .grad_at_values(&sample.x, sample.y, neurons, &baseline, alpha, base, integ.scope, integ.output_mode)
            .map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!("step k={k}: {msg}")),
                other => other,
            })?;
        let mut step = 0.0;
        for (w, g) in baseline.iter().zip(&grads) {
            step += dot(w, g);
        }
        Ok(step)
    })
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}
