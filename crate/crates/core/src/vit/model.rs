// SPDX-License-Identifier: MIT OR Apache-2.0

//! Pre-norm ViT encoder recorded on a [`Tape`], with hooks at the FFN
//! intermediate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::intervention::LayerEdit;
use super::{InterventionSpec, NeuronId, TokenScope, VitConfig, DEFAULT_LAYER_NORM_EPS};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

const PATCH_W: usize = 0;
const PATCH_B: usize = 1;
const CLS_TOKEN: usize = 2;
const POS_EMBED: usize = 3;
const GLOBAL_PREFIX: usize = 4;
const PER_BLOCK: usize = 12;

// offsets inside one block
const NORM1_G: usize = 0;
const NORM1_B: usize = 1;
const QKV_W: usize = 2;
const QKV_B: usize = 3;
const PROJ_W: usize = 4;
const PROJ_B: usize = 5;
const NORM2_G: usize = 6;
const NORM2_B: usize = 7;
const FC1_W: usize = 8;
const FC1_B: usize = 9;
const FC2_W: usize = 10;
const FC2_B: usize = 11;

const BLOCK_NAMES: [&str; PER_BLOCK] = [
    "norm1.weight",
    "norm1.bias",
    "attn.qkv.weight",
    "attn.qkv.bias",
    "attn.proj.weight",
    "attn.proj.bias",
    "norm2.weight",
    "norm2.bias",
    "mlp.fc1.weight",
    "mlp.fc1.bias",
    "mlp.fc2.weight",
    "mlp.fc2.bias",
];

/// What the scalar model output `F` is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    /// Softmax probability of the label.
    #[default]
    Probability,
    /// Pre-softmax logit of the label.
    Logit,
}

impl OutputMode {
    pub fn as_str(self) -> &'static str {
        match self {
            OutputMode::Probability => "probability",
            OutputMode::Logit => "logit",
        }
    }
}

/// Canonical parameter names and shapes for a configuration, in storage
/// order.
pub fn parameter_layout(config: &VitConfig) -> Vec<(String, Vec<usize>)> {
    let (d, n, t) = (config.hidden, config.ffn, config.seq_len());
    let mut out = vec![
        ("patch_embed.weight".to_string(), vec![config.patch_dim(), d]),
        ("patch_embed.bias".to_string(), vec![d]),
        ("cls_token".to_string(), vec![1, d]),
        ("pos_embed".to_string(), vec![t, d]),
    ];
    for l in 0..config.layers {
        let shapes = [
            vec![d],
            vec![d],
            vec![d, 3 * d],
            vec![3 * d],
            vec![d, d],
            vec![d],
            vec![d],
            vec![d],
            vec![d, n],
            vec![n],
            vec![n, d],
            vec![d],
        ];
        for (name, shape) in BLOCK_NAMES.iter().zip(shapes) {
            out.push((format!("blocks.{l}.{name}"), shape));
        }
    }
    out.push(("norm.weight".to_string(), vec![d]));
    out.push(("norm.bias".to_string(), vec![d]));
    out.push(("head.weight".to_string(), vec![d, config.classes]));
    out.push(("head.bias".to_string(), vec![config.classes]));
    out
}

/// Splits a `[C, H, W]` image into `[(H/p)·(W/p), p·p·C]` patch rows, patches
/// in row-major order, each flattened channel-major.
pub fn patchify(image: &Tensor, config: &VitConfig) -> Result<Tensor> {
    let expected = config.image_shape();
    if image.shape() != expected {
        return Err(Error::shape(
            "patchify",
            format!("image shape {:?}, config expects {expected:?}", image.shape()),
        ));
    }
    let (p, side, s) = (config.patch_size, config.patches_per_side(), config.image_size);
    let mut data = Vec::with_capacity(image.numel());
    for pr in 0..side {
        for pc in 0..side {
            for ch in 0..config.channels {
                for i in 0..p {
                    let row = ch * s * s + (pr * p + i) * s + pc * p;
                    data.extend_from_slice(&image.data()[row..row + p]);
                }
            }
        }
    }
    Tensor::new(vec![config.num_patches(), config.patch_dim()], data)
}

/// A Vision Transformer classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct VitModel {
    config: VitConfig,
    layer_norm_eps: f64,
    tensors: Vec<Tensor>,
}

/// Result of a plain or intervened forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    /// Post-intervention FFN intermediates, one `[T, n]` tensor per layer.
    pub activations: Vec<Tensor>,
}

impl ForwardOutput {
    /// Arg-max class, lowest index on ties.
    pub fn predicted(&self) -> usize {
        argmax(&self.probs)
    }
}

/// Unmodified FFN intermediates of one input with per-channel summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSummary {
    /// `[T, n]` per layer.
    pub raw: Vec<Tensor>,
    /// Class-token value per layer and channel.
    pub cls: Vec<Vec<f64>>,
    /// Token mean per layer and channel.
    pub mean: Vec<Vec<f64>>,
}

impl ActivationSummary {
    pub fn summary(&self, scope: TokenScope) -> &[Vec<f64>] {
        match scope {
            TokenScope::AllTokens => &self.mean,
            TokenScope::Cls => &self.cls,
        }
    }

    /// The token values of `neuron` that lie in `scope`.
    pub fn scoped_values(&self, neuron: NeuronId, scope: TokenScope) -> Vec<f64> {
        let act = &self.raw[neuron.layer - 1];
        let n = act.shape()[1];
        scope
            .rows(act.shape()[0])
            .into_iter()
            .map(|r| act.data()[r * n + neuron.channel])
            .collect()
    }
}

/// Gradient of `F` with respect to a set of neurons at one scaled point.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronGradients {
    /// `F` at the scaled point.
    pub output: f64,
    /// Original (unscaled) in-scope token values per neuron.
    pub baseline: Vec<Vec<f64>>,
    /// `∂F/∂w` per neuron, one entry per in-scope token.
    pub gradients: Vec<Vec<f64>>,
}

/// Lowest index of the maximum; NaN-free input assumed.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Value override on one neuron's in-scope tokens, recorded as a leaf so
/// gradients and tangents can be attached to it.
#[derive(Debug, Clone)]
pub(crate) struct ChannelOverride {
    pub neuron: NeuronId,
    pub values: Vec<f64>,
}

/// What to record on a tape for one evaluation.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Recipe<'s> {
    pub edits: &'s [LayerEdit],
    pub overrides: &'s [ChannelOverride],
    /// Zero-valued additive leaf on this neuron's in-scope tokens.
    pub probe: Option<NeuronId>,
    pub scope: TokenScope,
    /// Stop after the hooked activation of this 1-based layer.
    pub stop_after: Option<usize>,
}

/// Handles into a recorded evaluation.
#[derive(Debug, Clone, Default)]
pub(crate) struct Recorded {
    /// Post-hook FFN activation per recorded layer.
    pub acts: Vec<Var>,
    /// Residual stream after attention of the last recorded layer.
    pub h_mid: Option<Var>,
    pub logits: Option<Var>,
    pub override_leaves: Vec<Var>,
    pub probe_leaf: Option<Var>,
}

impl VitModel {
    /// Seeded initialisation: Xavier-uniform matrices, zero biases, unit
    /// layer-norm gains, small uniform embeddings.
    pub fn init(config: VitConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = parameter_layout(&config)
            .into_iter()
            .map(|(name, shape)| {
                let numel: usize = shape.iter().product();
                let data: Vec<f64> = if name.ends_with("norm1.weight")
                    || name.ends_with("norm2.weight")
                    || name == "norm.weight"
                {
                    vec![1.0; numel]
                } else if name == "cls_token" || name == "pos_embed" {
                    (0..numel).map(|_| rng.random_range(-0.035..0.035)).collect()
                } else if shape.len() == 2 {
                    let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                    (0..numel).map(|_| rng.random_range(-limit..limit)).collect()
                } else {
                    vec![0.0; numel]
                };
                Tensor::from_parts(shape, data)
            })
            .collect();
        Ok(Self {
            config,
            layer_norm_eps: DEFAULT_LAYER_NORM_EPS,
            tensors,
        })
    }

    /// Every parameter zero except layer-norm gains (one).
    pub fn zeros(config: VitConfig) -> Result<Self> {
        config.validate()?;
        let tensors = parameter_layout(&config)
            .into_iter()
            .map(|(name, shape)| {
                let fill = if name.ends_with("norm1.weight")
                    || name.ends_with("norm2.weight")
                    || name == "norm.weight"
                {
                    1.0
                } else {
                    0.0
                };
                Tensor::full(&shape, fill)
            })
            .collect();
        Ok(Self {
            config,
            layer_norm_eps: DEFAULT_LAYER_NORM_EPS,
            tensors,
        })
    }

    /// Assembles a model from tensors in [`parameter_layout`] order.
    pub fn from_tensors(config: VitConfig, layer_norm_eps: f64, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        if !(layer_norm_eps > 0.0) {
            return Err(Error::InvalidParameter {
                name: "layer_norm_eps",
                detail: format!("must be > 0, got {layer_norm_eps}"),
            });
        }
        let layout = parameter_layout(&config);
        if layout.len() != tensors.len() {
            return Err(Error::Usage(format!(
                "expected {} tensors, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in layout.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(Error::CheckpointShape {
                    tensor: name.clone(),
                    found: t.shape().to_vec(),
                    expected: shape.clone(),
                });
            }
        }
        Ok(Self {
            config,
            layer_norm_eps,
            tensors,
        })
    }

    pub fn config(&self) -> &VitConfig {
        &self.config
    }

    pub fn layer_norm_eps(&self) -> f64 {
        self.layer_norm_eps
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// `(name, tensor)` pairs in storage order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        parameter_layout(&self.config)
            .into_iter()
            .map(|(name, _)| name)
            .zip(&self.tensors)
            .collect()
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.named_tensors()
            .into_iter()
            .find_map(|(n, t)| (n == name).then_some(t))
    }

    /// Replaces one named parameter, keeping its shape.
    pub fn set_tensor(&mut self, name: &str, value: Tensor) -> Result<()> {
        let layout = parameter_layout(&self.config);
        let index = layout
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::Usage(format!("unknown parameter `{name}`")))?;
        if value.shape() != layout[index].1.as_slice() {
            return Err(Error::shape(
                "set_tensor",
                format!("`{name}` needs shape {:?}, got {:?}", layout[index].1, value.shape()),
            ));
        }
        self.tensors[index] = value;
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    fn block_index(layer0: usize, offset: usize) -> usize {
        GLOBAL_PREFIX + PER_BLOCK * layer0 + offset
    }

    fn tail_index(&self, offset: usize) -> usize {
        GLOBAL_PREFIX + PER_BLOCK * self.config.layers + offset
    }

    // ------------------------------------------------------------------
    // tape recording
    // ------------------------------------------------------------------

    /// Puts every parameter on the tape, as trainable leaves or constants.
    pub(crate) fn bind<'a>(&'a self, tape: &mut Tape<'a>, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| tape.leaf_ref(t, trainable))
            .collect()
    }

    pub(crate) fn record_embed<'a>(&'a self, tape: &mut Tape<'a>, params: &[Var], image: &Tensor) -> Result<Var> {
        let patches = tape.leaf(patchify(image, &self.config)?, false);
        let emb = tape.matmul(patches, params[PATCH_W])?;
        let emb = tape.add(emb, params[PATCH_B])?;
        let seq = tape.concat(&[params[CLS_TOKEN], emb], 0)?;
        tape.add(seq, params[POS_EMBED])
    }

    /// Attention sub-block and FFN up-projection of 0-based `layer0`.
    /// Returns the post-attention residual and the post-GELU activation.
    pub(crate) fn record_block_front(&self, tape: &mut Tape<'_>, params: &[Var], layer0: usize, h: Var) -> Result<(Var, Var)> {
        let p = |k: usize| params[Self::block_index(layer0, k)];
        let eps = self.layer_norm_eps;
        let (d, dh) = (self.config.hidden, self.config.head_dim());
        let x = tape.layer_norm(h, p(NORM1_G), p(NORM1_B), eps)?;
        let qkv = tape.matmul(x, p(QKV_W))?;
        let qkv = tape.add(qkv, p(QKV_B))?;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.config.heads);
        for head in 0..self.config.heads {
            let cols = |base: usize| (base + head * dh..base + (head + 1) * dh).collect::<Vec<_>>();
            let q = tape.index_select(qkv, 1, &cols(0))?;
            let k = tape.index_select(qkv, 1, &cols(d))?;
            let v = tape.index_select(qkv, 1, &cols(2 * d))?;
            let kt = tape.transpose(k)?;
            let scores = tape.matmul(q, kt)?;
            let scores = tape.scale(scores, scale)?;
            let attn = tape.softmax(scores, 1)?;
            heads.push(tape.matmul(attn, v)?);
        }
        let merged = tape.concat(&heads, 1)?;
        let out = tape.matmul(merged, p(PROJ_W))?;
        let out = tape.add(out, p(PROJ_B))?;
        let h_mid = tape.add(h, out)?;
        let y = tape.layer_norm(h_mid, p(NORM2_G), p(NORM2_B), eps)?;
        let z = tape.matmul(y, p(FC1_W))?;
        let z = tape.add(z, p(FC1_B))?;
        let act = tape.gelu(z)?;
        Ok((h_mid, act))
    }

    /// FFN down-projection and residual add of 0-based `layer0`.
    pub(crate) fn record_block_back(&self, tape: &mut Tape<'_>, params: &[Var], layer0: usize, h_mid: Var, act: Var) -> Result<Var> {
        let out = tape.matmul(act, params[Self::block_index(layer0, FC2_W)])?;
        let out = tape.add(out, params[Self::block_index(layer0, FC2_B)])?;
        tape.add(h_mid, out)
    }

    /// Final norm on the class token and classifier; logits `[1, classes]`.
    pub(crate) fn record_head(&self, tape: &mut Tape<'_>, params: &[Var], h: Var) -> Result<Var> {
        let cls = tape.index_select(h, 0, &[0])?;
        let normed = tape.layer_norm(cls, params[self.tail_index(0)], params[self.tail_index(1)], self.layer_norm_eps)?;
        let logits = tape.matmul(normed, params[self.tail_index(2)])?;
        tape.add(logits, params[self.tail_index(3)])
    }

    /// Applies a compiled elementwise edit to a `[T, n]` activation.
    pub(crate) fn record_edit(&self, tape: &mut Tape<'_>, act: Var, edit: &LayerEdit) -> Result<Var> {
        let shape = [self.config.seq_len(), self.config.ffn];
        let mut act = act;
        if let Some(mult) = &edit.multiplier {
            let m = tape.leaf(Tensor::new(shape.to_vec(), mult.clone())?, false);
            act = tape.mul(act, m)?;
        }
        if let Some(add) = &edit.additive {
            let a = tape.leaf(Tensor::new(shape.to_vec(), add.clone())?, false);
            act = tape.add(act, a)?;
        }
        Ok(act)
    }

    /// `P · leaf · e_cᵀ`: scatters a `[rows, 1]` leaf into channel `channel`.
    fn scatter_column(&self, tape: &mut Tape<'_>, leaf: Var, channel: usize, rows: &[usize]) -> Result<Var> {
        let (t, n) = (self.config.seq_len(), self.config.ffn);
        let mut placement = vec![0.0; t * rows.len()];
        for (i, &r) in rows.iter().enumerate() {
            placement[r * rows.len() + i] = 1.0;
        }
        let mut unit = vec![0.0; n];
        unit[channel] = 1.0;
        let placement = tape.leaf(Tensor::new(vec![t, rows.len()], placement)?, false);
        let unit = tape.leaf(Tensor::new(vec![1, n], unit)?, false);
        let col = tape.matmul(leaf, unit)?;
        tape.matmul(placement, col)
    }

    /// Replaces channel `channel` at `rows` with a new leaf holding `values`.
    pub(crate) fn record_override(&self, tape: &mut Tape<'_>, act: Var, channel: usize, rows: &[usize], values: &[f64]) -> Result<(Var, Var)> {
        let (t, n) = (self.config.seq_len(), self.config.ffn);
        if values.len() != rows.len() {
            return Err(Error::shape(
                "override",
                format!("{} values for {} tokens in scope", values.len(), rows.len()),
            ));
        }
        let mut keep = vec![1.0; t * n];
        for &r in rows {
            keep[r * n + channel] = 0.0;
        }
        let keep = tape.leaf(Tensor::new(vec![t, n], keep)?, false);
        let leaf = tape.leaf(Tensor::new(vec![rows.len(), 1], values.to_vec())?, true);
        let kept = tape.mul(act, keep)?;
        let placed = self.scatter_column(tape, leaf, channel, rows)?;
        Ok((tape.add(kept, placed)?, leaf))
    }

    /// Adds a zero-valued leaf to channel `channel` at `rows`.
    pub(crate) fn record_probe(&self, tape: &mut Tape<'_>, act: Var, channel: usize, rows: &[usize]) -> Result<(Var, Var)> {
        let leaf = tape.leaf(Tensor::zeros(&[rows.len(), 1]), true);
        let placed = self.scatter_column(tape, leaf, channel, rows)?;
        Ok((tape.add(act, placed)?, leaf))
    }

    /// Records one evaluation from the image up to the logits (or up to
    /// `recipe.stop_after`).
    pub(crate) fn record<'a>(&'a self, tape: &mut Tape<'a>, params: &[Var], image: &Tensor, recipe: Recipe<'_>) -> Result<Recorded> {
        let rows = recipe.scope.rows(self.config.seq_len());
        for o in recipe.overrides {
            o.neuron.validate(&self.config)?;
        }
        if let Some(p) = recipe.probe {
            p.validate(&self.config)?;
        }
        let last = recipe.stop_after.unwrap_or(self.config.layers);
        let mut rec = Recorded::default();
        let mut h = self.record_embed(tape, params, image)?;
        for layer in 1..=last {
            let (h_mid, act) = self.record_block_front(tape, params, layer - 1, h)?;
            let mut act = match recipe.edits.get(layer - 1) {
                Some(edit) => self.record_edit(tape, act, edit)?,
                None => act,
            };
            for o in recipe.overrides.iter().filter(|o| o.neuron.layer == layer) {
                let (next, leaf) = self.record_override(tape, act, o.neuron.channel, &rows, &o.values)?;
                act = next;
                rec.override_leaves.push(leaf);
            }
            if let Some(p) = recipe.probe.filter(|p| p.layer == layer) {
                let (next, leaf) = self.record_probe(tape, act, p.channel, &rows)?;
                act = next;
                rec.probe_leaf = Some(leaf);
            }
            rec.acts.push(act);
            if Some(layer) == recipe.stop_after {
                rec.h_mid = Some(h_mid);
                return Ok(rec);
            }
            h = self.record_block_back(tape, params, layer - 1, h_mid, act)?;
        }
        rec.logits = Some(self.record_head(tape, params, h)?);
        Ok(rec)
    }

    /// Continues an evaluation from inside block `layer` (1-based): applies
    /// its down-projection to `act`, runs the remaining blocks with `edits`,
    /// and returns the logits.
    pub(crate) fn record_suffix(&self, tape: &mut Tape<'_>, params: &[Var], layer: usize, h_mid: Var, act: Var, edits: &[LayerEdit]) -> Result<Var> {
        let mut h = self.record_block_back(tape, params, layer - 1, h_mid, act)?;
        for next in layer + 1..=self.config.layers {
            let (h_mid, act) = self.record_block_front(tape, params, next - 1, h)?;
            let act = match edits.get(next - 1) {
                Some(edit) => self.record_edit(tape, act, edit)?,
                None => act,
            };
            h = self.record_block_back(tape, params, next - 1, h_mid, act)?;
        }
        self.record_head(tape, params, h)
    }

    /// Selects `F` from `[1, classes]` logits.
    pub(crate) fn record_output(&self, tape: &mut Tape<'_>, logits: Var, label: usize, mode: OutputMode) -> Result<Var> {
        if label >= self.config.classes {
            return Err(Error::Index(format!(
                "label {label} out of range for {} classes",
                self.config.classes
            )));
        }
        let source = match mode {
            OutputMode::Probability => tape.softmax(logits, 1)?,
            OutputMode::Logit => logits,
        };
        tape.index_select(source, 1, &[label])
    }

    // ------------------------------------------------------------------
    // public evaluation API
    // ------------------------------------------------------------------

    /// Forward pass under `intervention`.
    pub fn forward(&self, image: &Tensor, intervention: &InterventionSpec) -> Result<ForwardOutput> {
        self.forward_upto(image, intervention, self.config.layers)
    }

    /// Forward pass whose intervention may only touch layers `1..=upto`.
    pub fn forward_upto(&self, image: &Tensor, intervention: &InterventionSpec, upto: usize) -> Result<ForwardOutput> {
        if upto == 0 || upto > self.config.layers {
            return Err(Error::Index(format!(
                "upto layer {upto} out of range 1..={}",
                self.config.layers
            )));
        }
        if intervention.max_layer() > upto {
            return Err(Error::Index(format!(
                "intervention touches layer {} beyond upto = {upto}",
                intervention.max_layer()
            )));
        }
        let edits = intervention.compile(&self.config)?;
        let mut tape = Tape::new();
        let params = self.bind(&mut tape, false);
        let recipe = Recipe {
            edits: &edits,
            overrides: &[],
            probe: None,
            scope: intervention.scope(),
            stop_after: None,
        };
        let rec = self.record(&mut tape, &params, image, recipe)?;
        let logits_var = rec.logits.expect("full forward records logits");
        let probs_var = tape.softmax(logits_var, 1)?;
        let activations = rec
            .acts
            .iter()
            .map(|&a| tape.value(a).cloned())
            .collect::<Result<Vec<_>>>()?;
        let logits = tape.value(logits_var)?.data().to_vec();
        let probs = tape.value(probs_var)?.data().to_vec();
        if !probs.iter().all(|p| p.is_finite()) {
            return Err(Error::Numeric("non-finite class probabilities".into()));
        }
        Ok(ForwardOutput {
            logits,
            probs,
            activations,
        })
    }

    /// Scalar `F` (label probability or logit) under `intervention`.
    pub fn output(&self, image: &Tensor, label: usize, intervention: &InterventionSpec, mode: OutputMode) -> Result<f64> {
        if label >= self.config.classes {
            return Err(Error::Index(format!("label {label} out of range")));
        }
        let out = self.forward(image, intervention)?;
        Ok(match mode {
            OutputMode::Probability => out.probs[label],
            OutputMode::Logit => out.logits[label],
        })
    }

    /// Unmodified FFN intermediates and their per-channel summaries.
    pub fn neuron_activations(&self, image: &Tensor) -> Result<ActivationSummary> {
        self.neuron_activations_under(image, &InterventionSpec::default())
    }

    /// FFN intermediates under a base intervention.
    pub fn neuron_activations_under(&self, image: &Tensor, base: &InterventionSpec) -> Result<ActivationSummary> {
        let out = self.forward(image, base)?;
        let (t, n) = (self.config.seq_len(), self.config.ffn);
        let mut cls = Vec::with_capacity(self.config.layers);
        let mut mean = Vec::with_capacity(self.config.layers);
        for act in &out.activations {
            cls.push(act.data()[..n].to_vec());
            let mut m = vec![0.0; n];
            for r in 0..t {
                for (c, mv) in m.iter_mut().enumerate() {
                    *mv += act.data()[r * n + c];
                }
            }
            for mv in &mut m {
                *mv /= t as f64;
            }
            mean.push(m);
        }
        Ok(ActivationSummary {
            raw: out.activations,
            cls,
            mean,
        })
    }

    /// Gradient of `F(α·w̄)` with respect to each listed neuron, where every
    /// listed neuron's in-scope tokens are set to `α` times their original
    /// values. Neurons must sit in distinct layers.
    pub fn grad_wrt_neurons(
        &self,
        image: &Tensor,
        label: usize,
        neurons: &[NeuronId],
        alpha: f64,
        scope: TokenScope,
        mode: OutputMode,
    ) -> Result<NeuronGradients> {
        let base = InterventionSpec::new(scope);
        let acts = self.neuron_activations_under(image, &base)?;
        let baseline: Vec<Vec<f64>> = neurons
            .iter()
            .map(|&n| {
                n.validate(&self.config)?;
                Ok(acts.scoped_values(n, scope))
            })
            .collect::<Result<_>>()?;
        self.grad_at_values(image, label, neurons, &baseline, alpha, &base, scope, mode)
            .map(|(output, gradients)| NeuronGradients {
                output,
                baseline,
                gradients,
            })
    }

    /// `F` and `∂F/∂w` with each neuron's `scope` tokens set to
    /// `alpha · baseline`, on top of `base`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn grad_at_values(
        &self,
        image: &Tensor,
        label: usize,
        neurons: &[NeuronId],
        baseline: &[Vec<f64>],
        alpha: f64,
        base: &InterventionSpec,
        scope: TokenScope,
        mode: OutputMode,
    ) -> Result<(f64, Vec<Vec<f64>>)> {
        check_distinct_layers(neurons)?;
        let edits = base.compile(&self.config)?;
        let overrides: Vec<ChannelOverride> = neurons
            .iter()
            .zip(baseline)
            .map(|(&neuron, values)| ChannelOverride {
                neuron,
                values: values.iter().map(|v| alpha * v).collect(),
            })
            .collect();
        let mut tape = Tape::new();
        let params = self.bind(&mut tape, false);
        let recipe = Recipe {
            edits: &edits,
            overrides: &overrides,
            probe: None,
            scope,
            stop_after: None,
        };
        let rec = self.record(&mut tape, &params, image, recipe)?;
        let f = self.record_output(&mut tape, rec.logits.expect("full record"), label, mode)?;
        tape.backward(f)?;
        let value = tape.value(f)?.item()?;
        // leaves are recorded in layer order; map back to the caller's order
        let mut gradients = Vec::with_capacity(neurons.len());
        let mut layers_sorted: Vec<usize> = neurons.iter().map(|n| n.layer).collect();
        layers_sorted.sort_unstable();
        for n in neurons {
            let pos = layers_sorted.binary_search(&n.layer).expect("layer present");
            let g = tape
                .grad(rec.override_leaves[pos])?
                .map(|t| t.data().to_vec())
                .unwrap_or_default();
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient at neuron {n}")));
            }
            gradients.push(g);
        }
        Ok((value, gradients))
    }
}

/// Rejects neuron lists with two entries in one layer.
pub(crate) fn check_distinct_layers(neurons: &[NeuronId]) -> Result<()> {
    let mut layers: Vec<usize> = neurons.iter().map(|n| n.layer).collect();
    layers.sort_unstable();
    if layers.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Usage(format!(
            "neurons must come from distinct layers, got {neurons:?}"
        )));
    }
    Ok(())
}
