// SPDX-License-Identifier: MIT OR Apache-2.0

//! Tape primitives against central finite differences, plus the
//! normalisation properties.

use neuronpath::{Error, Tape, Tensor, Var};
use proptest::prelude::*;

type Build = fn(&mut Tape, &[Var]) -> neuronpath::Result<Var>;

/// `Σ wᵢ·f(x)ᵢ` for fixed weights, so every output element contributes.
fn weighted(tape: &mut Tape, out: Var, weights: &[f64]) -> Var {
    let shape = tape.value(out).unwrap().shape().to_vec();
    let w = tape.leaf(Tensor::new(shape, weights[..weights.len()].to_vec()).unwrap(), false);
    let p = tape.mul(out, w).unwrap();
    tape.sum(p).unwrap()
}

fn evaluate(build: Build, inputs: &[Tensor], weights: &[f64]) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
    let out = build(&mut tape, &vars).unwrap();
    let n = tape.value(out).unwrap().numel();
    let f = weighted(&mut tape, out, &weights[..n]);
    tape.value(f).unwrap().item().unwrap()
}

/// Largest `|analytic − numeric| / max(1, |analytic|)` over every input
/// coordinate.
fn gradient_error(build: Build, inputs: &[Tensor], weights: &[f64]) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = build(&mut tape, &vars).unwrap();
    let n = tape.value(out).unwrap().numel();
    let f = weighted(&mut tape, out, &weights[..n]);
    tape.backward(f).unwrap();
    let h = 1e-5;
    let mut worst = 0.0_f64;
    for (i, v) in vars.iter().enumerate() {
        let analytic = tape.grad(*v).unwrap().map(|g| g.data().to_vec()).unwrap_or(vec![0.0; inputs[i].numel()]);
        for (j, a) in analytic.iter().enumerate() {
            let shifted = |delta: f64| {
                let mut xs = inputs.to_vec();
                let mut d = xs[i].data().to_vec();
                d[j] += delta;
                xs[i] = Tensor::new(xs[i].shape().to_vec(), d).unwrap();
                evaluate(build, &xs, weights)
            };
            let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
    }
    worst
}

fn tensor(shape: &[usize]) -> impl Strategy<Value = Tensor> {
    let shape = shape.to_vec();
    let n: usize = shape.iter().product();
    prop::collection::vec(-2.0..2.0f64, n).prop_map(move |d| Tensor::new(shape.clone(), d).unwrap())
}

fn weights() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, 64)
}

const BOUND: f64 = 1e-7;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn matmul_gradient(a in tensor(&[3, 4]), b in tensor(&[4, 2]), w in weights()) {
        prop_assert!(gradient_error(|t, v| t.matmul(v[0], v[1]), &[a, b], &w) <= BOUND);
    }

    #[test]
    fn transpose_and_scale_gradient(a in tensor(&[3, 4]), w in weights()) {
        let f: Build = |t, v| { let x = t.transpose(v[0])?; t.scale(x, -1.7) };
        prop_assert!(gradient_error(f, &[a], &w) <= BOUND);
    }

    #[test]
    fn broadcast_add_and_mul_gradient(a in tensor(&[3, 4]), b in tensor(&[4]), c in tensor(&[3, 4]), w in weights()) {
        let f: Build = |t, v| { let s = t.add(v[0], v[1])?; t.mul(s, v[2]) };
        prop_assert!(gradient_error(f, &[a, b, c], &w) <= BOUND);
    }

    #[test]
    fn layer_norm_gradient(x in tensor(&[3, 5]), g in tensor(&[5]), b in tensor(&[5]), w in weights()) {
        prop_assert!(gradient_error(|t, v| t.layer_norm(v[0], v[1], v[2], 1e-6), &[x, g, b], &w) <= BOUND);
    }

    #[test]
    fn gelu_gradient(x in tensor(&[2, 5]), w in weights()) {
        prop_assert!(gradient_error(|t, v| t.gelu(v[0]), &[x], &w) <= BOUND);
    }

    #[test]
    fn softmax_gradient_both_axes(x in tensor(&[3, 4]), w in weights()) {
        prop_assert!(gradient_error(|t, v| t.softmax(v[0], 1), &[x.clone()], &w) <= BOUND);
        prop_assert!(gradient_error(|t, v| t.softmax(v[0], 0), &[x.clone()], &w) <= BOUND);
        prop_assert!(gradient_error(|t, v| t.log_softmax(v[0], 1), &[x], &w) <= BOUND);
    }

    #[test]
    fn select_and_concat_gradient(a in tensor(&[3, 4]), b in tensor(&[2, 4]), w in weights()) {
        let f: Build = |t, v| {
            let s = t.index_select(v[0], 0, &[2, 0, 2])?;
            let c = t.concat(&[s, v[1]], 0)?;
            t.index_select(c, 1, &[3, 1])
        };
        prop_assert!(gradient_error(f, &[a, b], &w) <= BOUND);
    }

    #[test]
    fn softmax_rows_sum_to_one(x in prop::collection::vec(-50.0..50.0f64, 12)) {
        let mut tape = Tape::new();
        let v = tape.leaf(Tensor::new(vec![3, 4], x).unwrap(), false);
        let s = tape.softmax(v, 1).unwrap();
        let out = tape.value(s).unwrap();
        for r in 0..3 {
            prop_assert!((out.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn layer_norm_standardises_rows(x in prop::collection::vec(-2.0..2.0f64, 16)) {
        let mean = x.iter().sum::<f64>() / 16.0;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 16.0;
        prop_assume!(var > 1e-3);
        let mut tape = Tape::new();
        let v = tape.leaf(Tensor::new(vec![1, 16], x).unwrap(), false);
        let g = tape.leaf(Tensor::full(&[16], 1.0), false);
        let b = tape.leaf(Tensor::zeros(&[16]), false);
        let y = tape.layer_norm(v, g, b, 1e-12).unwrap();
        let row = tape.value(y).unwrap().row(0).to_vec();
        let m = row.iter().sum::<f64>() / 16.0;
        let s = row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 16.0;
        prop_assert!(m.abs() <= 1e-10);
        prop_assert!((s - 1.0).abs() <= 1e-8);
    }
}

#[test]
fn identity_gradient_is_one() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::scalar(4.2), true);
    let f = tape.sum(a).unwrap();
    tape.backward(f).unwrap();
    assert_eq!(tape.grad(a).unwrap().unwrap().data(), [1.0]);
}

#[test]
fn square_at_three_has_gradient_six() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::scalar(3.0), true);
    let sq = tape.mul(a, a).unwrap();
    let f = tape.sum(sq).unwrap();
    tape.backward(f).unwrap();
    assert_eq!(tape.grad(a).unwrap().unwrap().data(), [6.0]);
}

#[test]
fn identity_matmul_returns_the_operand() {
    let mut tape = Tape::new();
    let i = tape.leaf(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(), false);
    let m = Tensor::from_rows(&[vec![0.5, -3.0, 2.0], vec![7.0, 0.25, -1.0]]).unwrap();
    let mv = tape.leaf(m.clone(), false);
    let out = tape.matmul(i, mv).unwrap();
    assert_eq!(tape.value(out).unwrap(), &m);
}

#[test]
fn shape_mismatch_is_a_dimension_error() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::zeros(&[2, 3]), false);
    let b = tape.leaf(Tensor::zeros(&[2, 3]), false);
    assert!(matches!(tape.matmul(a, b), Err(Error::Shape { .. })));
}

#[test]
fn non_positive_epsilon_is_rejected() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::zeros(&[1, 3]), false);
    let g = tape.leaf(Tensor::zeros(&[3]), false);
    assert!(matches!(tape.layer_norm(x, g, g, 0.0), Err(Error::InvalidParameter { .. })));
}

#[test]
fn backward_from_a_foreign_tape_is_a_usage_error() {
    let mut one = Tape::new();
    let mut two = Tape::new();
    let a = one.leaf(Tensor::scalar(1.0), true);
    let f = one.sum(a).unwrap();
    let _ = two.leaf(Tensor::scalar(1.0), true);
    assert!(matches!(two.backward(f), Err(Error::Usage(_))));
}

#[test]
fn backward_is_bit_reproducible() {
    let run = || {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![2, 3], vec![0.3, -1.2, 0.7, 1.9, -0.4, 0.05]).unwrap(), true);
        let s = tape.softmax(x, 1).unwrap();
        let g = tape.gelu(s).unwrap();
        let f = tape.sum(g).unwrap();
        tape.backward(f).unwrap();
        tape.grad(x).unwrap().unwrap().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}
