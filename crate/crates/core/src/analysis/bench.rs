// SPDX-License-Identifier: MIT OR Apache-2.0

//! Wall-clock cost of path location as a function of the step count.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attribution::{locate_path, IntegrationConfig};
use crate::error::{Error, Result};
use crate::vit::{Sample, VitModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub model: usize,
    pub layers: usize,
    pub ffn: usize,
    pub seq_len: usize,
    pub hidden: usize,
    pub m: usize,
    /// Fastest of the repeats.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub model: usize,
    pub m_from: usize,
    pub m_to: usize,
    pub measured: f64,
    /// `m_to / m_from`, the ratio a cost linear in `m` predicts.
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub timings: Vec<TimingRow>,
    pub ratios: Vec<RatioRow>,
}

/// Times `locate_path` on `sample` for every model and step count and
/// compares successive timings with the linear-in-`m` prediction.
pub fn complexity_benchmark(
    models: &[VitModel],
    sample: &Sample,
    m_grid: &[usize],
    integ: &IntegrationConfig,
    repeats: usize,
) -> Result<ComplexityReport> {
    if let Some(&m) = m_grid.iter().find(|&&m| m == 0) {
        return Err(Error::InvalidParameter {
            name: "m",
            detail: format!("step count {m} in the benchmark grid must be >= 1"),
        });
    }
    if repeats == 0 {
        return Err(Error::InvalidParameter {
            name: "repeats",
            detail: "must be >= 1".into(),
        });
    }
    let mut grid = m_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let mut timings = Vec::new();
    let mut ratios = Vec::new();
    for (index, model) in models.iter().enumerate() {
        let c = model.config();
        let mut previous: Option<(usize, f64)> = None;
        for &m in &grid {
            let cfg = IntegrationConfig { m, ..*integ };
            let mut best = f64::INFINITY;
            for _ in 0..repeats {
                let start = Instant::now();
                locate_path(model, sample, &cfg)?;
                best = best.min(start.elapsed().as_secs_f64());
            }
            log::info!("model {index}: m={m} took {best:.3}s");
            if let Some((m0, t0)) = previous {
                ratios.push(RatioRow {
                    model: index,
                    m_from: m0,
                    m_to: m,
                    measured: best / t0,
                    predicted: m as f64 / m0 as f64,
                });
            }
            previous = Some((m, best));
            timings.push(TimingRow {
                model: index,
                layers: c.layers,
                ffn: c.ffn,
                seq_len: c.seq_len(),
                hidden: c.hidden,
                m,
                seconds: best,
            });
        }
    }
    Ok(ComplexityReport { timings, ratios })
}
