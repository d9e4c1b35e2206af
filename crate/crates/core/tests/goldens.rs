// SPDX-License-Identifier: MIT OR Apache-2.0

//! Regression values pinned from the committed toy checkpoint. Any change
//! to the numerics, the dataset generator or the search order shows up
//! here first.

mod common;

use std::collections::BTreeMap;

use neuronpath::analysis::{build_utilization, class_similarity, prune_and_eval, PruneConfig};
use neuronpath::attribution::{find_path, locate_topk};
use neuronpath::{CriterionSelector, IntegrationConfig, InterventionSpec, NeuronId};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn probability_snapshot() {
    let model = common::fixture_model();
    let sample = &common::toy_test_set()[0];
    let probs = model.forward(&sample.x, &InterventionSpec::default()).unwrap().probs;
    let golden = [
        0.9948876692816844,
        2.9126856900796e-5,
        0.001218460066825567,
        0.00046910468420655955,
        0.00020464630624247661,
        0.0004121764510794533,
        0.0014075120936320822,
        0.000850541873828657,
        4.604860177563373e-5,
        0.00047471378382435225,
    ];
    for (p, g) in probs.iter().zip(golden) {
        assert!(close(*p, g, 1e-12), "{p} vs {g}");
    }
}

#[test]
fn activation_summary_snapshot() {
    let model = common::fixture_model();
    let acts = model.neuron_activations(&common::toy_test_set()[0].x).unwrap();
    let mean = [0.4018325111002649, 0.04617372150704359, -0.006504693127248924, -0.07768248787674976];
    let cls = [-0.16547499920899003, -0.13857509230944012, -0.16508802372533696, -0.033336848580785186];
    for (a, g) in acts.mean[0].iter().zip(mean) {
        assert!(close(*a, g, 1e-12), "{a} vs {g}");
    }
    for (a, g) in acts.cls[3].iter().zip(cls) {
        assert!(close(*a, g, 1e-12), "{a} vs {g}");
    }
}

#[test]
fn paths_of_image_seven() {
    let model = common::fixture_model();
    let sample = &common::toy_test_set()[7];
    let integ = IntegrationConfig::default();
    let cases = [
        (CriterionSelector::Jas, [30, 54, 22, 56], 0.36875926419674704, 0.36875926419674704),
        (CriterionSelector::InfluencePattern, [58, 36, 37, 15], -0.1942111148724324, 0.0025723592891869753),
        (CriterionSelector::Activation, [58, 37, 35, 56], 0.010305230309620156, 6.342187000911862),
    ];
    for (method, channels, score, value) in cases {
        let p = find_path(&model, sample, &integ, method).unwrap();
        let got: Vec<usize> = p.neurons.iter().map(|n| n.channel).collect();
        assert_eq!(got, channels, "{method:?}");
        assert!(close(p.score, score, 1e-9), "{method:?} score {}", p.score);
        assert!(close(p.criterion_value, value, 1e-9), "{method:?} criterion {}", p.criterion_value);
    }
}

#[test]
fn top_five_of_image_seven() {
    let model = common::fixture_model();
    let layers = locate_topk(&model, &common::toy_test_set()[7], &IntegrationConfig::default(), 5).unwrap();
    let golden = [[30, 4, 57, 18, 54], [54, 35, 33, 55, 63], [22, 6, 58, 39, 20], [56, 55, 0, 28, 50]];
    for (l, g) in layers.iter().zip(golden) {
        assert_eq!(l.channels, g, "layer {}", l.layer);
        assert!(l.scores.windows(2).all(|w| w[0] >= w[1]));
    }
}

/// Activation-maximum paths of all 500 held-out images, 50 per class.
fn activation_utilization() -> Vec<neuronpath::analysis::UtilizationMatrix> {
    let model = common::fixture_model();
    let mut by_class: BTreeMap<usize, Vec<Vec<NeuronId>>> = BTreeMap::new();
    for s in common::toy_test_set() {
        let acts = model.neuron_activations(&s.x).unwrap();
        let path = acts
            .mean
            .iter()
            .enumerate()
            .map(|(l, row)| {
                let best = (0..row.len()).fold(0, |b, c| if row[c] > row[b] { c } else { b });
                NeuronId::new(l + 1, best)
            })
            .collect();
        by_class.entry(s.y).or_default().push(path);
    }
    assert!(by_class.values().all(|v| v.len() == 50));
    build_utilization(&by_class, model.config()).unwrap()
}

#[test]
fn class_zero_utilization_matrix() {
    let matrices = activation_utilization();
    let golden: [&[(usize, u64)]; 4] = [
        &[(5, 1), (6, 1), (10, 3), (18, 1), (28, 2), (35, 1), (42, 3), (45, 6), (50, 1), (58, 28), (59, 1), (62, 2)],
        &[(5, 3), (16, 2), (19, 1), (24, 1), (26, 10), (37, 17), (49, 1), (51, 15)],
        &[(4, 2), (5, 7), (6, 1), (15, 4), (19, 12), (23, 13), (32, 1), (35, 1), (37, 2), (44, 1), (45, 4), (46, 1), (47, 1)],
        &[(21, 1), (26, 5), (27, 1), (39, 4), (44, 3), (46, 35), (59, 1)],
    ];
    for (row, g) in matrices[0].counts.iter().zip(golden) {
        let nonzero: Vec<(usize, u64)> = row.iter().enumerate().filter(|(_, &c)| c > 0).map(|(i, &c)| (i, c)).collect();
        assert_eq!(nonzero, g);
        assert_eq!(row.iter().sum::<u64>(), 50);
    }
}

#[test]
fn ten_class_similarity_matrix() {
    let (sim, neighbors) = class_similarity(&activation_utilization(), 0.3).unwrap();
    let golden = [
        [1.000000, 0.266064, 0.158852, 0.124229, 0.350107, 0.475226, 0.346629, 0.228036, 0.186436, 0.191647],
        [0.266064, 1.000000, 0.096471, 0.371457, 0.620570, 0.668990, 0.282510, 0.333234, 0.289761, 0.253230],
        [0.158852, 0.096471, 1.000000, 0.137922, 0.163548, 0.127972, 0.100448, 0.226325, 0.269592, 0.138891],
        [0.124229, 0.371457, 0.137922, 1.000000, 0.549046, 0.240697, 0.101280, 0.294947, 0.468779, 0.483765],
        [0.350107, 0.620570, 0.163548, 0.549046, 1.000000, 0.504208, 0.203523, 0.328208, 0.471138, 0.262108],
        [0.475226, 0.668990, 0.127972, 0.240697, 0.504208, 1.000000, 0.522671, 0.304898, 0.245932, 0.271720],
        [0.346629, 0.282510, 0.100448, 0.101280, 0.203523, 0.522671, 1.000000, 0.201837, 0.130168, 0.262094],
        [0.228036, 0.333234, 0.226325, 0.294947, 0.328208, 0.304898, 0.201837, 1.000000, 0.232434, 0.259109],
        [0.186436, 0.289761, 0.269592, 0.468779, 0.471138, 0.245932, 0.130168, 0.232434, 1.000000, 0.273875],
        [0.191647, 0.253230, 0.138891, 0.483765, 0.262108, 0.271720, 0.262094, 0.259109, 0.273875, 1.000000],
    ];
    for (row, g) in sim.values.iter().zip(golden) {
        for (v, w) in row.iter().zip(g) {
            assert!(close(*v, w, 5e-7), "{v} vs {w}");
        }
    }
    assert_eq!(neighbors[0].top, [5, 4, 6]);
    assert_eq!(neighbors[0].bottom, [3, 2, 8]);
}

/// Reduced-cost curve: 80 images, m = 4.
#[test]
fn pruning_curve_snapshot() {
    let model = common::fixture_model();
    let data = common::toy_test_set();
    let report = prune_and_eval(&model, &data[..80], &PruneConfig::default(), &IntegrationConfig::with_m(4)).unwrap();
    assert_eq!(report.baseline, 0.95);
    let golden = [
        (1, [19, 18, 13, 8]),
        (5, [19, 19, 19, 17]),
        (10, [19, 19, 17, 19]),
        (30, [19, 19, 20, 20]),
        (50, [19, 19, 20, 20]),
    ];
    for (t, correct) in golden {
        for (p, c) in [0.1, 0.3, 0.5, 1.0].into_iter().zip(correct) {
            let row = report
                .rows
                .iter()
                .find(|r| r.class.is_none() && r.t == t && r.p == p)
                .unwrap();
            assert_eq!((row.correct, row.total), (c, 20), "t={t} p={p}");
        }
    }
}
