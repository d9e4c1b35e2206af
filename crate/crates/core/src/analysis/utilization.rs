// SPDX-License-Identifier: MIT OR Apache-2.0

//! Class-level neuron utilization and cosine similarity between classes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vit::{NeuronId, VitConfig};

/// How often each neuron was selected across one class's paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilizationMatrix {
    pub class: usize,
    /// `counts[l-1][c]`.
    pub counts: Vec<Vec<u64>>,
    /// Counts divided by the number of selections in the same layer.
    pub normalized: Vec<Vec<f64>>,
}

impl UtilizationMatrix {
    fn from_counts(class: usize, counts: Vec<Vec<u64>>) -> Self {
        let normalized = counts
            .iter()
            .map(|row| {
                let total: u64 = row.iter().sum();
                row.iter()
                    .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
                    .collect()
            })
            .collect();
        Self {
            class,
            counts,
            normalized,
        }
    }

    fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.normalized.iter().flatten().copied()
    }
}

/// One matrix per class from that class's paths. Every path must have
/// exactly one neuron per layer of `config`.
pub fn build_utilization(paths: &BTreeMap<usize, Vec<Vec<NeuronId>>>, config: &VitConfig) -> Result<Vec<UtilizationMatrix>> {
    let (layers, n) = (config.layers, config.ffn);
    paths
        .iter()
        .map(|(&class, class_paths)| {
            let mut counts = vec![vec![0u64; n]; layers];
            for path in class_paths {
                if path.len() != layers {
                    return Err(Error::Usage(format!(
                        "class {class}: path of length {} in a {layers}-layer model",
                        path.len()
                    )));
                }
                for (i, neuron) in path.iter().enumerate() {
                    neuron.validate(config)?;
                    if neuron.layer != i + 1 {
                        return Err(Error::Usage(format!(
                            "class {class}: path position {i} holds layer {}",
                            neuron.layer
                        )));
                    }
                    counts[i][neuron.channel] += 1;
                }
            }
            Ok(UtilizationMatrix::from_counts(class, counts))
        })
        .collect()
}

/// Pairwise cosine similarity of flattened utilization matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub classes: Vec<usize>,
    pub values: Vec<Vec<f64>>,
    /// Classes whose matrix is all zero; their similarities are set to 0.
    pub zero_norm: Vec<usize>,
}

/// Most and least similar other classes of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbors {
    pub class: usize,
    /// Most similar first.
    pub top: Vec<usize>,
    /// Least similar first.
    pub bottom: Vec<usize>,
}

/// Cosine similarities plus, per class, the top and bottom `q` fraction of
/// the other classes (at least one each). Ties order by class id.
pub fn class_similarity(matrices: &[UtilizationMatrix], q: f64) -> Result<(SimilarityMatrix, Vec<Neighbors>)> {
    if matrices.len() < 2 {
        return Err(Error::Usage("similarity needs at least two classes".into()));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::InvalidParameter {
            name: "q",
            detail: format!("neighbor fraction {q} outside (0, 1]"),
        });
    }
    let norms: Vec<f64> = matrices.iter().map(|m| m.flat().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let zero_norm: Vec<usize> = matrices
        .iter()
        .zip(&norms)
        .filter(|(_, &n)| n == 0.0)
        .map(|(m, _)| m.class)
        .collect();
    for class in &zero_norm {
        log::warn!("class {class} has an all-zero utilization matrix; its similarities are 0");
    }
    let k = matrices.len();
    let mut values = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i..k {
            let s = if norms[i] == 0.0 || norms[j] == 0.0 {
                0.0
            } else if i == j {
                1.0
            } else {
                let dot: f64 = matrices[i].flat().zip(matrices[j].flat()).map(|(a, b)| a * b).sum();
                (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0)
            };
            values[i][j] = s;
            values[j][i] = s;
        }
    }
    let count = ((q * (k - 1) as f64).ceil() as usize).clamp(1, k - 1);
    let neighbors = (0..k)
        .map(|i| {
            let mut others: Vec<usize> = (0..k).filter(|&j| j != i).collect();
            others.sort_by(|&a, &b| values[i][b].total_cmp(&values[i][a]).then(a.cmp(&b)));
            let top = others.iter().take(count).map(|&j| matrices[j].class).collect();
            others.sort_by(|&a, &b| values[i][a].total_cmp(&values[i][b]).then(a.cmp(&b)));
            let bottom = others.iter().take(count).map(|&j| matrices[j].class).collect();
            Neighbors {
                class: matrices[i].class,
                top,
                bottom,
            }
        })
        .collect();
    Ok((
        SimilarityMatrix {
            classes: matrices.iter().map(|m| m.class).collect(),
            values,
            zero_norm,
        },
        neighbors,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> VitConfig {
        VitConfig {
            layers: 2,
            ffn: 3,
            ..VitConfig::default()
        }
    }

    fn path(a: usize, b: usize) -> Vec<NeuronId> {
        vec![NeuronId::new(1, a), NeuronId::new(2, b)]
    }

    #[test]
    fn single_path_is_one_hot() {
        let paths = BTreeMap::from([(0, vec![path(2, 0)])]);
        let m = &build_utilization(&paths, &tiny()).unwrap()[0];
        assert_eq!(m.normalized, [vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]]);
    }

    #[test]
    fn duplicated_paths_normalize_identically() {
        let one = BTreeMap::from([(0, vec![path(1, 2)])]);
        let two = BTreeMap::from([(0, vec![path(1, 2), path(1, 2)])]);
        let a = &build_utilization(&one, &tiny()).unwrap()[0];
        let b = &build_utilization(&two, &tiny()).unwrap()[0];
        assert_eq!(a.normalized, b.normalized);
        assert_eq!(b.counts[0], [0, 2, 0]);
    }

    #[test]
    fn mixed_length_paths_rejected() {
        let paths = BTreeMap::from([(0, vec![path(0, 0), vec![NeuronId::new(1, 0)]])]);
        assert!(matches!(build_utilization(&paths, &tiny()), Err(Error::Usage(_))));
    }

    #[test]
    fn identical_and_disjoint_similarities() {
        let paths = BTreeMap::from([
            (0, vec![path(0, 0)]),
            (1, vec![path(0, 0)]),
            (2, vec![path(1, 1)]),
        ]);
        let ms = build_utilization(&paths, &tiny()).unwrap();
        let (s, nb) = class_similarity(&ms, 0.5).unwrap();
        assert!((s.values[0][1] - 1.0).abs() <= 1e-12);
        assert_eq!(s.values[0][2], 0.0);
        assert!((s.values[2][2] - 1.0).abs() <= 1e-12);
        assert_eq!(nb[0].top, [1]);
        assert_eq!(nb[0].bottom, [2]);
    }

    #[test]
    fn zero_matrix_is_flagged() {
        let paths = BTreeMap::from([(0, vec![path(0, 0)]), (1, vec![])]);
        let ms = build_utilization(&paths, &tiny()).unwrap();
        let (s, _) = class_similarity(&ms, 0.3).unwrap();
        assert_eq!(s.zero_norm, [1]);
        assert_eq!(s.values[1][1], 0.0);
        assert_eq!(s.values[0][0], 1.0);
    }
}
