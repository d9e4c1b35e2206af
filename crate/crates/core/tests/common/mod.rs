// SPDX-License-Identifier: MIT OR Apache-2.0

//! Test-only oracles: a straight-line forward pass written with plain loops
//! and naive versions of the search algorithms built on it or on the
//! public gradient API.

#![allow(dead_code)]

use neuronpath::vit::{load_checkpoint, toy_split};
use neuronpath::{IntegrationConfig, NeuronId, Sample, TokenScope, VitModel};

pub const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/fixtures/toy.ck");

pub fn fixture_model() -> VitModel {
    load_checkpoint(FIXTURE).expect("fixture checkpoint loads")
}

pub fn toy_test_set() -> Vec<Sample> {
    toy_split().expect("toy split").1
}

/// Dense row-major matrix product `[r, k] x [k, c]`.
fn matmul(a: &[f64], b: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i * k + t] * b[t * c + j];
            }
            out[i * c + j] = s;
        }
    }
    out
}

fn layer_norm_rows(x: &[f64], d: usize, g: &[f64], b: &[f64], eps: f64) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (row, o) in x.chunks(d).zip(out.chunks_mut(d)) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for j in 0..d {
            o[j] = (row[j] - mean) * inv * g[j] + b[j];
        }
    }
    out
}

fn softmax(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Output of [`reference_forward`].
pub struct RefOutput {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    /// Post-hook `[T, n]` FFN intermediates, one per layer run.
    pub acts: Vec<Vec<f64>>,
}

/// Straight-line forward pass. `hook(layer, act)` may rewrite the `[T, n]`
/// post-GELU activation of 1-based `layer` before the down-projection.
pub fn reference_forward(model: &VitModel, image: &[f64], mut hook: impl FnMut(usize, &mut [f64])) -> RefOutput {
    let c = model.config();
    let (d, n, t, p) = (c.hidden, c.ffn, c.seq_len(), c.patch_size);
    let w = |name: &str| model.tensor(name).unwrap_or_else(|| panic!("no tensor {name}")).data().to_vec();
    let eps = model.layer_norm_eps();

    // patches in row-major patch order, each flattened channel-major
    let side = c.image_size / p;
    let s = c.image_size;
    let mut patches = Vec::new();
    for pr in 0..side {
        for pc in 0..side {
            for ch in 0..c.channels {
                for i in 0..p {
                    for j in 0..p {
                        patches.push(image[ch * s * s + (pr * p + i) * s + pc * p + j]);
                    }
                }
            }
        }
    }
    let np = side * side;
    let emb = matmul(&patches, &w("patch_embed.weight"), np, c.patch_dim(), d);
    let pb = w("patch_embed.bias");
    let pos = w("pos_embed");
    let mut h = w("cls_token");
    for i in 0..np {
        for j in 0..d {
            h.push(emb[i * d + j] + pb[j]);
        }
    }
    for (v, q) in h.iter_mut().zip(&pos) {
        *v += q;
    }

    let dh = d / c.heads;
    let mut acts = Vec::new();
    for l in 0..c.layers {
        let b = |name: &str| w(&format!("blocks.{l}.{name}"));
        let x = layer_norm_rows(&h, d, &b("norm1.weight"), &b("norm1.bias"), eps);
        let mut qkv = matmul(&x, &b("attn.qkv.weight"), t, d, 3 * d);
        let qb = b("attn.qkv.bias");
        for row in qkv.chunks_mut(3 * d) {
            for (v, bb) in row.iter_mut().zip(&qb) {
                *v += bb;
            }
        }
        let mut merged = vec![0.0; t * d];
        for head in 0..c.heads {
            for i in 0..t {
                let mut scores: Vec<f64> = (0..t)
                    .map(|j| {
                        (0..dh)
                            .map(|e| qkv[i * 3 * d + head * dh + e] * qkv[j * 3 * d + d + head * dh + e])
                            .sum::<f64>()
                            / (dh as f64).sqrt()
                    })
                    .collect();
                softmax(&mut scores);
                for e in 0..dh {
                    merged[i * d + head * dh + e] =
                        (0..t).map(|j| scores[j] * qkv[j * 3 * d + 2 * d + head * dh + e]).sum();
                }
            }
        }
        let proj = matmul(&merged, &b("attn.proj.weight"), t, d, d);
        let projb = b("attn.proj.bias");
        let h_mid: Vec<f64> = (0..t * d).map(|k| h[k] + proj[k] + projb[k % d]).collect();
        let y = layer_norm_rows(&h_mid, d, &b("norm2.weight"), &b("norm2.bias"), eps);
        let z = matmul(&y, &b("mlp.fc1.weight"), t, d, n);
        let b1 = b("mlp.fc1.bias");
        let mut act: Vec<f64> = (0..t * n).map(|k| gelu(z[k] + b1[k % n])).collect();
        hook(l + 1, &mut act);
        let down = matmul(&act, &b("mlp.fc2.weight"), t, n, d);
        let b2 = b("mlp.fc2.bias");
        h = (0..t * d).map(|k| h_mid[k] + down[k] + b2[k % d]).collect();
        acts.push(act);
    }
    let cls = layer_norm_rows(&h[..d], d, &w("norm.weight"), &w("norm.bias"), eps);
    let head = matmul(&cls, &w("head.weight"), 1, d, c.classes);
    let hb = w("head.bias");
    let logits: Vec<f64> = head.iter().zip(&hb).map(|(a, b)| a + b).collect();
    let mut probs = logits.clone();
    softmax(&mut probs);
    RefOutput { logits, probs, acts }
}

/// Five-point central derivative of `f` at 0.
pub fn stencil(h: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    (-f(2.0 * h) + 8.0 * f(h) - 8.0 * f(-h) + f(-2.0 * h)) / (12.0 * h)
}

fn summarize(act: &[f64], n: usize, channel: usize, scope: TokenScope) -> f64 {
    let rows = scope.rows(act.len() / n);
    let col: Vec<f64> = rows.iter().map(|&r| act[r * n + channel]).collect();
    scope.summarize(&col)
}

/// Joint attribution score from the public per-step gradient API; no
/// caching, no forward-mode tricks.
pub fn naive_jas(model: &VitModel, sample: &Sample, path: &[NeuronId], integ: &IntegrationConfig) -> f64 {
    let m = integ.m;
    let mut total = 0.0;
    for k in 1..=m {
        let g = model
            .grad_wrt_neurons(&sample.x, sample.y, path, k as f64 / m as f64, integ.scope, integ.output_mode)
            .expect("gradient");
        for (wbar, grad) in g.baseline.iter().zip(&g.gradients) {
            total += wbar.iter().zip(grad).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    total / m as f64
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Greedy layer-progressive search scoring every candidate with
/// [`naive_jas`]. Returns every layer's scores and the chain.
pub fn naive_locate(model: &VitModel, sample: &Sample, integ: &IntegrationConfig) -> (Vec<Vec<f64>>, Vec<NeuronId>) {
    let c = model.config();
    let mut chain = Vec::new();
    let mut all = Vec::new();
    for layer in 1..=c.layers {
        let scores: Vec<f64> = (0..c.ffn)
            .map(|ch| {
                let mut p = chain.clone();
                p.push(NeuronId::new(layer, ch));
                naive_jas(model, sample, &p, integ)
            })
            .collect();
        chain.push(NeuronId::new(layer, argmax(&scores)));
        all.push(scores);
    }
    (all, chain)
}

/// Derivative of the scope summary of `(prev.layer + 1, channel)` with
/// respect to a uniform shift of `prev`, at input `alpha·x`, by a
/// five-point stencil on the straight-line forward.
pub fn naive_factor(model: &VitModel, image: &[f64], alpha: f64, prev: NeuronId, channel: usize, scope: TokenScope) -> f64 {
    let n = model.config().ffn;
    let scaled: Vec<f64> = image.iter().map(|v| alpha * v).collect();
    let rows = scope.rows(model.config().seq_len());
    stencil(1e-3, |delta| {
        let out = reference_forward(model, &scaled, |layer, act| {
            if layer == prev.layer {
                for &r in &rows {
                    act[r * n + prev.channel] += delta;
                }
            }
        });
        summarize(&out.acts[prev.layer], n, channel, scope)
    })
}

/// Greedy influence-pattern search over stencil derivatives.
pub fn naive_influence(model: &VitModel, sample: &Sample, integ: &IntegrationConfig) -> (Vec<Vec<f64>>, Vec<NeuronId>) {
    let c = model.config();
    let n = c.ffn;
    let base = reference_forward(model, sample.x.data(), |_, _| {});
    let first: Vec<f64> = (0..n).map(|ch| summarize(&base.acts[0], n, ch, integ.scope).abs()).collect();
    let mut chain = vec![NeuronId::new(1, argmax(&first))];
    let mut all = vec![first];
    for layer in 2..=c.layers {
        let scores: Vec<f64> = (0..n)
            .map(|ch| {
                let mut total = 0.0;
                for k in 1..=integ.m {
                    let alpha = k as f64 / integ.m as f64;
                    let mut product = 1.0;
                    let mut full = chain.clone();
                    full.push(NeuronId::new(layer, ch));
                    for pair in full.windows(2) {
                        product *= naive_factor(model, sample.x.data(), alpha, pair[0], pair[1].channel, integ.scope);
                    }
                    total += product;
                }
                total / integ.m as f64
            })
            .collect();
        chain.push(NeuronId::new(layer, argmax(&scores)));
        all.push(scores);
    }
    (all, chain)
}
