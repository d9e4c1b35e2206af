// SPDX-License-Identifier: MIT OR Apache-2.0

//! Properties of the path search: completeness, convergence in m, top-k
//! structure, greedy optimality and determinism.

mod common;

use neuronpath::attribution::{
    activation_path, influence_pattern_path, jas, knowledge_attribution, locate_path, locate_topk, PathScan,
};
use neuronpath::verify::{completeness, micro_config};
use neuronpath::{IntegrationConfig, NeuronId, Sample, Tensor, VitConfig, VitModel};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_path(rng: &mut ChaCha8Rng, cfg: &VitConfig) -> Vec<NeuronId> {
    let len = rng.random_range(1..=cfg.layers);
    (1..=len).map(|l| NeuronId::new(l, rng.random_range(0..cfg.ffn))).collect()
}

fn micro_sample(cfg: &VitConfig, seed: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = (0..cfg.image_size * cfg.image_size).map(|_| rng.random_range(0.0..1.0)).collect();
    Sample {
        x: Tensor::new(cfg.image_shape().to_vec(), x).unwrap(),
        y: (seed as usize) % cfg.classes,
    }
}

#[test]
fn completeness_residual_shrinks_with_m() {
    let model = common::fixture_model();
    let data = common::toy_test_set();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for i in 0..3 {
        let sample = &data[rng.random_range(0..data.len())];
        let path = random_path(&mut rng, model.config());
        let residuals: Vec<f64> = [8, 32, 128, 512]
            .into_iter()
            .map(|m| completeness(&model, sample, &path, &IntegrationConfig::with_m(m)).unwrap().2)
            .collect();
        println!("path {i} {path:?}: residuals {residuals:?}");
        assert!(residuals[3] <= 1e-3, "{residuals:?}");
        assert!(residuals[3] < residuals[0], "{residuals:?}");
    }
}

/// Right-endpoint sums converge as 1/m, so successive differences shrink.
#[test]
fn riemann_estimates_are_consistent_across_m() {
    let model = common::fixture_model();
    let sample = &common::toy_test_set()[11];
    let path = [NeuronId::new(1, 30), NeuronId::new(2, 54), NeuronId::new(3, 22)];
    let est: Vec<f64> = [8, 32, 128, 512]
        .into_iter()
        .map(|m| jas(&model, sample, &path, &IntegrationConfig::with_m(m)).unwrap())
        .collect();
    let gaps: Vec<f64> = est.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    println!("estimates {est:?}, gaps {gaps:?}");
    assert!(gaps.windows(2).all(|g| g[1] < g[0]), "{gaps:?}");
}

#[test]
fn single_neuron_completeness_at_high_resolution() {
    let model = common::fixture_model();
    let sample = &common::toy_test_set()[4];
    for neuron in [NeuronId::new(1, 7), NeuronId::new(3, 40), NeuronId::new(4, 63)] {
        let (_, _, residual) = completeness(&model, sample, &[neuron], &IntegrationConfig::with_m(512)).unwrap();
        assert!(residual <= 1e-3, "{neuron}: {residual}");
    }
}

#[test]
fn top_one_is_the_located_path() {
    let model = common::fixture_model();
    let sample = &common::toy_test_set()[2];
    let integ = IntegrationConfig::default();
    let path = locate_path(&model, sample, &integ).unwrap();
    let top = locate_topk(&model, sample, &integ, 1).unwrap();
    let channels: Vec<usize> = top.iter().map(|l| l.channels[0]).collect();
    assert_eq!(channels, path.neurons.iter().map(|n| n.channel).collect::<Vec<_>>());
}

#[test]
fn located_score_matches_a_fresh_evaluation() {
    let model = common::fixture_model();
    let sample = &common::toy_test_set()[9];
    let integ = IntegrationConfig::default();
    let path = locate_path(&model, sample, &integ).unwrap();
    let again = jas(&model, sample, &path.neurons, &integ).unwrap();
    assert!((again - path.score).abs() <= 1e-9, "{again} vs {}", path.score);
}

/// Each greedy step maximises the score given its prefix, checked by
/// rescoring every layer-2 candidate independently.
#[test]
fn greedy_step_is_optimal_on_the_toy_model() {
    let model = common::fixture_model();
    let sample = &common::toy_test_set()[1];
    let integ = IntegrationConfig::with_m(8);
    let scan = PathScan::run(&model, sample, &integ).unwrap();
    let prefix = scan.chain[0];
    let rescored: Vec<f64> = (0..model.config().ffn)
        .map(|c| jas(&model, sample, &[prefix, NeuronId::new(2, c)], &integ).unwrap())
        .collect();
    for (a, b) in rescored.iter().zip(&scan.scores[1]) {
        assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
    }
    let best = rescored.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(rescored[scan.chain[1].channel], best);
}

/// With one layer the influence pattern is seeded by `|summary|`; a large
/// positive up-projection bias makes every summary positive, so it agrees
/// with the activation baseline.
#[test]
fn single_layer_influence_equals_activation_maximum() {
    let cfg = VitConfig {
        layers: 1,
        ..micro_config()
    };
    let mut model = VitModel::init(cfg.clone(), 3).unwrap();
    model.set_tensor("blocks.0.mlp.fc1.bias", Tensor::full(&[cfg.ffn], 5.0)).unwrap();
    let integ = IntegrationConfig::default();
    for seed in 0..4 {
        let sample = micro_sample(&cfg, seed);
        let summary = model.neuron_activations(&sample.x).unwrap().summary(integ.scope)[0].clone();
        assert!(summary.iter().all(|&v| v > 0.0));
        let influence = influence_pattern_path(&model, &sample, &integ).unwrap();
        let activation = activation_path(&model, &sample, &integ).unwrap();
        assert_eq!(influence.neurons, activation.neurons);
        assert_eq!(influence.criterion_value, 1.0);
    }
}

#[test]
fn knowledge_scores_equal_single_neuron_scores() {
    let cfg = micro_config();
    let model = VitModel::init(cfg.clone(), 8).unwrap();
    let sample = micro_sample(&cfg, 8);
    let integ = IntegrationConfig::default();
    let report = knowledge_attribution(&model, &sample, &integ).unwrap();
    let n = NeuronId::new(2, 4);
    let direct = jas(&model, &sample, &[n], &integ).unwrap();
    assert!((report.scores[1][4] - direct).abs() <= 1e-12);
}

#[test]
fn scans_agree_across_thread_pools() {
    let model = common::fixture_model();
    let data = &common::toy_test_set()[..3];
    let integ = IntegrationConfig::with_m(4);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            data.iter()
                .map(|s| {
                    let scan = PathScan::run(&model, s, &integ).unwrap();
                    scan.scores.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>()
                })
                .collect::<Vec<_>>()
        })
    };
    assert_eq!(run(1), run(3));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn full_topk_ranks_every_channel(model_seed in 0u64..1000, image_seed in 0u64..1000) {
        let cfg = micro_config();
        let model = VitModel::init(cfg.clone(), model_seed).unwrap();
        let sample = micro_sample(&cfg, image_seed);
        let integ = IntegrationConfig::with_m(5);
        let scan = PathScan::run(&model, &sample, &integ).unwrap();
        let all = scan.topk(cfg.ffn).unwrap();
        for (layer, scores) in all.iter().zip(&scan.scores) {
            let mut seen = layer.channels.clone();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..cfg.ffn).collect::<Vec<_>>());
            prop_assert!(layer.scores.windows(2).all(|w| w[0] >= w[1]));
            prop_assert_eq!(layer.channels[0], scan.chain[layer.layer - 1].channel);
            for (c, s) in layer.channels.iter().zip(&layer.scores) {
                prop_assert_eq!(*s, scores[*c]);
            }
        }
        let path = scan.path();
        let again = jas(&model, &sample, &path.neurons, &integ).unwrap();
        prop_assert!((again - path.score).abs() <= 1e-9);
    }

    #[test]
    fn topk_outside_range_is_rejected(t in prop_oneof![Just(0usize), 7usize..20]) {
        let cfg = micro_config();
        let model = VitModel::init(cfg.clone(), 1).unwrap();
        let sample = micro_sample(&cfg, 1);
        prop_assert!(locate_topk(&model, &sample, &IntegrationConfig::with_m(2), t).is_err());
    }
}
