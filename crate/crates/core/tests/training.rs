// SPDX-License-Identifier: MIT OR Apache-2.0

//! Toy dataset, trainer and the committed fixture checkpoint.

mod common;

use neuronpath::vit::{
    accuracy, generate_toy_dataset, toy_split, train_toy, train_with, write_checkpoint, TrainConfig, TOY_EPOCHS,
};
use neuronpath::{Error, Sample, VitConfig, VitModel};

fn bytes(model: &VitModel) -> Vec<u8> {
    let mut out = Vec::new();
    write_checkpoint(model, &mut out).unwrap();
    out
}

#[test]
fn fixture_reaches_ninety_percent_on_held_out_split() {
    let model = common::fixture_model();
    let acc = accuracy(&model, &common::toy_test_set()).unwrap();
    println!("fixture test accuracy {acc:.4}");
    assert!(acc >= 0.90, "{acc}");
}

/// The committed checkpoint is exactly what the trainer produces from the
/// reference split, seed 0.
#[test]
fn retraining_reproduces_the_fixture_bit_for_bit() {
    let (train, _) = toy_split().unwrap();
    let model = train_toy(&VitConfig::default(), &train, 0, TOY_EPOCHS).unwrap();
    let fixture = std::fs::read(common::FIXTURE).unwrap();
    assert!(bytes(&model) == fixture, "retrained weights differ from the fixture");
}

#[test]
fn zero_epochs_returns_the_initialisation() {
    let data = generate_toy_dataset(3, 40).unwrap();
    let model = train_toy(&VitConfig::default(), &data, 11, 0).unwrap();
    assert_eq!(model, VitModel::init(VitConfig::default(), 11).unwrap());
}

#[test]
fn same_seed_same_weights() {
    let data = generate_toy_dataset(3, 96).unwrap();
    let a = train_toy(&VitConfig::default(), &data, 5, 1).unwrap();
    let b = train_toy(&VitConfig::default(), &data, 5, 1).unwrap();
    assert!(bytes(&a) == bytes(&b));
    let c = train_toy(&VitConfig::default(), &data, 6, 1).unwrap();
    assert!(bytes(&a) != bytes(&c));
}

#[test]
fn empty_dataset_is_rejected() {
    assert!(matches!(
        train_toy(&VitConfig::default(), &[], 0, 1),
        Err(Error::InvalidParameter { .. })
    ));
}

#[test]
fn divergence_reports_the_epoch() {
    let data = generate_toy_dataset(3, 64).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        learning_rate: 1e300,
        ..TrainConfig::default()
    };
    match train_with(&VitConfig::default(), &data, &cfg, None) {
        Err(Error::Training { epoch, loss }) => assert!(epoch < 3 && !loss.is_finite(), "{epoch} {loss}"),
        other => panic!("expected a training error, got {:?}", other.map(|r| r.epochs)),
    }
}

/// Multinomial logistic regression on raw pixels, full-batch gradient
/// descent.
fn linear_probe(train: &[Sample], test: &[Sample], classes: usize) -> f64 {
    let dim = train[0].x.numel();
    let mut w = vec![0.0; dim * classes];
    let mut b = vec![0.0; classes];
    let lr = 0.5;
    for _ in 0..300 {
        let mut gw = vec![0.0; dim * classes];
        let mut gb = vec![0.0; classes];
        for s in train {
            let x = s.x.data();
            let mut z: Vec<f64> = (0..classes)
                .map(|c| b[c] + (0..dim).map(|i| x[i] * w[i * classes + c]).sum::<f64>())
                .collect();
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = z.iter_mut().map(|v| {
                *v = (*v - max).exp();
                *v
            }).sum();
            for c in 0..classes {
                let g = z[c] / sum - f64::from(u8::from(c == s.y));
                gb[c] += g;
                for i in 0..dim {
                    gw[i * classes + c] += g * x[i];
                }
            }
        }
        let scale = lr / train.len() as f64;
        for (wv, g) in w.iter_mut().zip(&gw) {
            *wv -= scale * g;
        }
        for (bv, g) in b.iter_mut().zip(&gb) {
            *bv -= scale * g;
        }
    }
    let hits = test
        .iter()
        .filter(|s| {
            let x = s.x.data();
            let z: Vec<f64> = (0..classes)
                .map(|c| b[c] + (0..dim).map(|i| x[i] * w[i * classes + c]).sum::<f64>())
                .collect();
            let best = (0..classes).fold(0, |best, c| if z[c] > z[best] { c } else { best });
            best == s.y
        })
        .count();
    hits as f64 / test.len() as f64
}

#[test]
fn linear_probe_on_pixels_scores_below_the_vit() {
    let (train, test) = toy_split().unwrap();
    let probe = linear_probe(&train, &test, 10);
    let vit = accuracy(&common::fixture_model(), &test).unwrap();
    println!("linear probe {probe:.4}, vit {vit:.4}");
    assert!(probe < vit);
}
