// SPDX-License-Identifier: MIT OR Apache-2.0

//! Neuron coordinates and value overrides at the FFN intermediate.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::VitConfig;
use crate::error::{Error, Result};

/// A neuron: one channel of the post-GELU output of the first FFN linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NeuronId {
    /// 1-based block index.
    pub layer: usize,
    /// 0-based channel index.
    pub channel: usize,
}

impl NeuronId {
    pub const fn new(layer: usize, channel: usize) -> Self {
        Self { layer, channel }
    }

    pub fn validate(&self, config: &VitConfig) -> Result<()> {
        if self.layer == 0 || self.layer > config.layers || self.channel >= config.ffn {
            return Err(Error::Index(format!(
                "neuron {self} out of range for {} layers x {} channels",
                config.layers, config.ffn
            )));
        }
        Ok(())
    }
}

impl fmt::Display for NeuronId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}:{}", self.layer, self.channel)
    }
}

/// Which token positions a neuron intervention or summary touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TokenScope {
    /// Every token; scalar summaries are token means and attribution
    /// products are token-wise inner products.
    #[default]
    AllTokens,
    /// The class token only.
    Cls,
}

impl TokenScope {
    /// Token rows covered by the scope for a sequence of `seq_len` tokens.
    pub fn rows(self, seq_len: usize) -> Vec<usize> {
        match self {
            TokenScope::AllTokens => (0..seq_len).collect(),
            TokenScope::Cls => vec![0],
        }
    }

    /// Scalar summary of one channel's token column.
    pub fn summarize(self, column: &[f64]) -> f64 {
        match self {
            TokenScope::AllTokens => column.iter().sum::<f64>() / column.len() as f64,
            TokenScope::Cls => column[0],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TokenScope::AllTokens => "all-tokens",
            TokenScope::Cls => "cls",
        }
    }
}

impl fmt::Display for TokenScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How an intervened neuron's value is rewritten.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeuronMode {
    /// Multiply the value computed in this forward pass.
    Scale(f64),
    /// Removal.
    Zero,
    /// Enhancement.
    Double,
    /// Replace with a constant at every token in scope.
    Set(f64),
    /// Replace with one value per token in scope.
    SetTokens(Vec<f64>),
}

/// A set of per-neuron overrides sharing one token scope.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InterventionSpec {
    entries: Vec<(NeuronId, NeuronMode)>,
    scope: TokenScope,
}

impl InterventionSpec {
    pub fn new(scope: TokenScope) -> Self {
        Self {
            entries: Vec::new(),
            scope,
        }
    }

    /// Applies `mode` to every neuron in `neurons`.
    pub fn uniform(
        scope: TokenScope,
        neurons: impl IntoIterator<Item = NeuronId>,
        mode: NeuronMode,
    ) -> Result<Self> {
        let mut spec = Self::new(scope);
        for n in neurons {
            spec.push(n, mode.clone())?;
        }
        Ok(spec)
    }

    /// Adds an entry; a neuron may appear at most once.
    pub fn push(&mut self, neuron: NeuronId, mode: NeuronMode) -> Result<()> {
        if self.entries.iter().any(|(n, _)| *n == neuron) {
            return Err(Error::Usage(format!("neuron {neuron} already has an intervention")));
        }
        self.entries.push((neuron, mode));
        Ok(())
    }

    pub fn with(mut self, neuron: NeuronId, mode: NeuronMode) -> Result<Self> {
        self.push(neuron, mode)?;
        Ok(self)
    }

    pub fn entries(&self) -> &[(NeuronId, NeuronMode)] {
        &self.entries
    }

    pub fn scope(&self) -> TokenScope {
        self.scope
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_layer(&self) -> usize {
        self.entries.iter().map(|(n, _)| n.layer).max().unwrap_or(0)
    }

    /// Lowers the intervention to per-layer elementwise multiplier and additive
    /// `[T, n]` tables (`None` for untouched layers).
    pub(crate) fn compile(&self, config: &VitConfig) -> Result<Vec<LayerEdit>> {
        let (t, n) = (config.seq_len(), config.ffn);
        let rows = self.scope.rows(t);
        let mut layers: Vec<LayerEdit> = (0..config.layers).map(|_| LayerEdit::default()).collect();
        for (neuron, mode) in &self.entries {
            neuron.validate(config)?;
            let edit = &mut layers[neuron.layer - 1];
            let c = neuron.channel;
            let (factor, add): (f64, Option<Vec<f64>>) = match mode {
                NeuronMode::Scale(a) => (*a, None),
                NeuronMode::Zero => (0.0, None),
                NeuronMode::Double => (2.0, None),
                NeuronMode::Set(v) => (0.0, Some(vec![*v; rows.len()])),
                NeuronMode::SetTokens(vs) => {
                    if vs.len() != rows.len() {
                        return Err(Error::shape(
                            "intervention",
                            format!("{} token values for {} tokens in scope", vs.len(), rows.len()),
                        ));
                    }
                    (0.0, Some(vs.clone()))
                }
            };
            let mult = edit.multiplier.get_or_insert_with(|| vec![1.0; t * n]);
            for &r in &rows {
                mult[r * n + c] = factor;
            }
            if let Some(values) = add {
                let table = edit.additive.get_or_insert_with(|| vec![0.0; t * n]);
                for (&r, v) in rows.iter().zip(values) {
                    table[r * n + c] = v;
                }
            }
        }
        Ok(layers)
    }
}

/// Compiled elementwise edit of one layer's `[T, n]` activation.
#[derive(Debug, Clone, Default)]
pub(crate) struct LayerEdit {
    pub multiplier: Option<Vec<f64>>,
    pub additive: Option<Vec<f64>>,
}
