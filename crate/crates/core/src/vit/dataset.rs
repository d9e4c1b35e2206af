// SPDX-License-Identifier: MIT OR Apache-2.0

//! Seeded procedural 16×16 images in ten shape and texture classes.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const SIDE: usize = 16;
/// Isolated bright pixels sprinkled over every image.
const DISTRACTORS: usize = 5;

pub const TOY_CLASS_NAMES: [&str; 10] = [
    "thin-horizontal-bar",
    "thin-vertical-bar",
    "thick-horizontal-bar",
    "thick-vertical-bar",
    "cross",
    "diagonal",
    "anti-diagonal",
    "square-outline",
    "disk",
    "checker-patch",
];

/// A labelled input image.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `[channels, size, size]` image.
    pub x: Tensor,
    pub y: usize,
}

#[derive(Serialize, Deserialize)]
struct SampleRecord {
    y: usize,
    x: Vec<f64>,
}

/// `count` samples; sample `i` has class `i % 10`, so every prefix of a
/// multiple of ten is exactly balanced. Identical seeds give identical
/// datasets.
pub fn generate_toy_dataset(seed: u64, count: usize) -> Result<Vec<Sample>> {
    if count == 0 {
        return Err(Error::InvalidParameter {
            name: "count",
            detail: "dataset must contain at least one sample".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let y = i % TOY_CLASS_NAMES.len();
            let pixels = draw(&mut rng, y);
            Ok(Sample {
                x: Tensor::new(vec![1, SIDE, SIDE], pixels)?,
                y,
            })
        })
        .collect()
}

fn draw(rng: &mut ChaCha8Rng, class: usize) -> Vec<f64> {
    let mut img: Vec<f64> = (0..SIDE * SIDE).map(|_| rng.random_range(0.0..0.25)).collect();
    for _ in 0..DISTRACTORS {
        let at = rng.random_range(0..SIDE * SIDE);
        img[at] = rng.random_range(0.25..0.8);
    }
    let ink = rng.random_range(0.5..1.0);
    let mut put = |r: usize, c: usize| {
        if r < SIDE && c < SIDE {
            img[r * SIDE + c] = ink;
        }
    };
    match class {
        0 | 1 | 2 | 3 => {
            let thickness = if class < 2 { 1 } else { 3 };
            let len = rng.random_range(6..=10);
            let across = rng.random_range(0..=SIDE - thickness);
            let along = rng.random_range(0..=SIDE - len);
            for t in 0..thickness {
                for k in 0..len {
                    if class % 2 == 0 {
                        put(across + t, along + k);
                    } else {
                        put(along + k, across + t);
                    }
                }
            }
        }
        4 => {
            let (cy, cx) = (rng.random_range(3..=12), rng.random_range(3..=12));
            let arm = rng.random_range(2..=3);
            for k in cx - arm..=cx + arm {
                put(cy, k);
            }
            for k in cy - arm..=cy + arm {
                put(k, cx);
            }
        }
        5 | 6 => {
            let len = rng.random_range(6..=10);
            let (r0, c0) = (rng.random_range(0..=SIDE - len), rng.random_range(0..=SIDE - len));
            for k in 0..len {
                let c = if class == 5 { c0 + k } else { c0 + len - 1 - k };
                put(r0 + k, c);
            }
        }
        7 => {
            let size = rng.random_range(5..=8);
            let (r0, c0) = (rng.random_range(0..=SIDE - size), rng.random_range(0..=SIDE - size));
            for k in 0..size {
                put(r0, c0 + k);
                put(r0 + size - 1, c0 + k);
                put(r0 + k, c0);
                put(r0 + k, c0 + size - 1);
            }
        }
        8 => {
            let (cy, cx) = (rng.random_range(3..=12), rng.random_range(3..=12));
            let radius: f64 = rng.random_range(2.0..3.0);
            for r in 0..SIDE {
                for c in 0..SIDE {
                    let (dy, dx) = (r as f64 - cy as f64, c as f64 - cx as f64);
                    if dy * dy + dx * dx <= radius * radius {
                        put(r, c);
                    }
                }
            }
        }
        _ => {
            let (r0, c0) = (rng.random_range(0..=SIDE - 6), rng.random_range(0..=SIDE - 6));
            for r in 0..6 {
                for c in 0..6 {
                    if (r + c) % 2 == 0 {
                        put(r0 + r, c0 + c);
                    }
                }
            }
        }
    }
    img
}

/// Seed of the reference toy dataset.
pub const TOY_DATA_SEED: u64 = 1;
/// Training images in the reference toy split.
pub const TOY_TRAIN_COUNT: usize = 2000;
/// Held-out images in the reference toy split.
pub const TOY_TEST_COUNT: usize = 500;

/// The reference split: the first [`TOY_TRAIN_COUNT`] samples of seed
/// [`TOY_DATA_SEED`] for training and the next [`TOY_TEST_COUNT`] for
/// testing.
pub fn toy_split() -> Result<(Vec<Sample>, Vec<Sample>)> {
    let mut all = generate_toy_dataset(TOY_DATA_SEED, TOY_TRAIN_COUNT + TOY_TEST_COUNT)?;
    let test = all.split_off(TOY_TRAIN_COUNT);
    Ok((all, test))
}

/// One `{"y": label, "x": [pixels]}` object per line.
pub fn write_ndjson<W: Write>(samples: &[Sample], mut out: W) -> Result<()> {
    for s in samples {
        let line = serde_json::to_string(&SampleRecord {
            y: s.y,
            x: s.x.data().to_vec(),
        })?;
        writeln!(out, "{line}").map_err(|e| Error::io("<ndjson writer>", e))?;
    }
    Ok(())
}

/// Reads samples written by [`write_ndjson`] as `[1, side, side]` images.
pub fn read_ndjson<R: BufRead>(input: R) -> Result<Vec<Sample>> {
    let mut samples = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<ndjson reader>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord = serde_json::from_str(&line)?;
        let side = (rec.x.len() as f64).sqrt() as usize;
        if side * side != rec.x.len() {
            return Err(Error::shape(
                "read_ndjson",
                format!("line {}: {} pixels is not a square image", i + 1, rec.x.len()),
            ));
        }
        samples.push(Sample {
            x: Tensor::new(vec![1, side, side], rec.x)?,
            y: rec.y,
        });
    }
    Ok(samples)
}
