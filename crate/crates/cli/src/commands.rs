// SPDX-License-Identifier: MIT OR Apache-2.0

//! One function per subcommand.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, Cursor};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use neuronpath::analysis::{
    build_utilization, class_similarity, complexity_benchmark, deviation_with_paths, mean, median, prune_and_eval,
    prune_curve_svg, write_csv, write_frequency_csv, write_ndjson_records, write_prune_csv, DeviationReport, Operation,
    PruneConfig, UtilizationMatrix,
};
use neuronpath::attribution::{find_path, knowledge_attribution, locate_topk, PathRecord, TopkRecord};
use neuronpath::verify::{run_suite, SuiteOptions};
use neuronpath::vit::{
    generate_toy_dataset, read_checkpoint, read_ndjson, toy_split, train_with, write_checkpoint, write_ndjson,
    TrainConfig, TOY_DATA_SEED, TOY_TRAIN_COUNT,
};
use neuronpath::{CriterionSelector, IntegrationConfig, NeuronId, NeuronPath, Sample, VitConfig, VitModel};

use crate::args::{Cli, Command, Common, MethodArg};
use crate::manifest::{sha256_hex, unix_ms, DataSource, OutDir, RunManifest};

/// Images processed by the per-image commands when neither `--image` nor
/// `--limit` is given.
pub const DEFAULT_LIMIT: usize = 200;
/// Samples handed to `verify` by default.
pub const VERIFY_LIMIT: usize = 50;

/// Outcome of a completed run.
pub enum Status {
    Ok,
    /// The command ran to completion but a check failed.
    Failed,
}

struct Run<'a> {
    common: &'a Common,
    out: OutDir,
    manifest: RunManifest,
}

pub fn execute(cli: &Cli) -> Result<(Status, RunManifest)> {
    let manifest = RunManifest {
        subcommand: cli.command.name().to_string(),
        flags: serde_json::to_value(cli)?,
        seed: 0,
        checkpoint_sha256: None,
        data: None,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        threads: rayon::current_num_threads(),
        started_unix_ms: unix_ms(),
        finished_unix_ms: 0,
        outputs: Vec::new(),
    };
    let mut run = Run {
        common: &cli.common,
        out: OutDir::create(&cli.common.out)?,
        manifest,
    };
    let status = match &cli.command {
        Command::TrainToy { epochs } => run.train_toy(*epochs)?,
        Command::GenData { count } => run.gen_data(*count)?,
        Command::FindPath { method, topk, knowledge } => run.find_path(*method, *topk, *knowledge)?,
        Command::CompareMethods => run.compare_methods()?,
        Command::Intervene { method, op } => run.intervene(*method, (*op).into())?,
        Command::Aggregate { method, paths } => run.aggregate(*method, paths.as_deref())?,
        Command::Similarity { utilization, method, q } => run.similarity(utilization.as_deref(), *method, *q)?,
        Command::Prune {
            topk,
            mask_frac,
            probe_fraction,
        } => run.prune(topk, mask_frac, *probe_fraction)?,
        Command::Bench { m_grid, repeats } => run.bench(m_grid, *repeats)?,
        Command::Verify {
            gradient_coords,
            completeness_paths,
        } => run.verify(*gradient_coords, *completeness_paths)?,
    };
    let manifest = run.out.finish(run.manifest)?;
    Ok((status, manifest))
}

impl Run<'_> {
    fn seed(&mut self, default: u64) -> u64 {
        let seed = match self.common.seed {
            Some(s) => s,
            None => {
                log::info!("no --seed given; using default {default}");
                default
            }
        };
        self.manifest.seed = seed;
        seed
    }

    fn integ(&self) -> Result<IntegrationConfig> {
        let integ = IntegrationConfig {
            m: self.common.m,
            scope: self.common.scope.into(),
            output_mode: self.common.output_mode.into(),
        };
        integ.validate()?;
        Ok(integ)
    }

    fn model(&mut self) -> Result<VitModel> {
        let Some(path) = &self.common.checkpoint else {
            bail!(neuronpath::Error::Usage(format!(
                "{} needs --checkpoint <file> (create one with `neuronpath train-toy`)",
                self.manifest.subcommand
            )));
        };
        let bytes = fs::read(path).map_err(|e| neuronpath::Error::io(path, e))?;
        self.manifest.checkpoint_sha256 = Some(sha256_hex(&bytes));
        read_checkpoint(&bytes).with_context(|| format!("reading checkpoint {}", path.display()))
    }

    fn data(&mut self) -> Result<Vec<Sample>> {
        let (samples, source) = match &self.common.data {
            Some(path) => {
                let bytes = fs::read(path).map_err(|e| neuronpath::Error::io(path, e))?;
                let samples =
                    read_ndjson(Cursor::new(&bytes)).with_context(|| format!("reading dataset {}", path.display()))?;
                let source = DataSource {
                    source: path.display().to_string(),
                    sha256: Some(sha256_hex(&bytes)),
                    samples: samples.len(),
                };
                (samples, source)
            }
            None => {
                let (_, test) = toy_split()?;
                let source = DataSource {
                    source: format!("toy seed {TOY_DATA_SEED}, held-out samples from index {TOY_TRAIN_COUNT}"),
                    sha256: None,
                    samples: test.len(),
                };
                (test, source)
            }
        };
        self.manifest.data = Some(source);
        Ok(samples)
    }

    /// Dataset indices and samples picked by `--image` / `--limit`.
    fn selected(&mut self, default_limit: usize) -> Result<(Vec<usize>, Vec<Sample>)> {
        let mut data = self.data()?;
        let ids: Vec<usize> = match (self.common.image, self.common.limit) {
            (Some(i), _) => {
                if i >= data.len() {
                    bail!(neuronpath::Error::Index(format!(
                        "--image {i} but the dataset has {} samples",
                        data.len()
                    )));
                }
                vec![i]
            }
            (None, limit) => (0..limit.unwrap_or(default_limit).min(data.len())).collect(),
        };
        if ids.is_empty() {
            bail!(neuronpath::Error::Usage("no samples selected".into()));
        }
        let samples = if ids.len() == 1 {
            vec![data.swap_remove(ids[0])]
        } else {
            data.truncate(ids.len());
            data
        };
        log::info!("processing {} sample(s)", samples.len());
        Ok((ids, samples))
    }

    fn train_toy(&mut self, epochs: usize) -> Result<Status> {
        let seed = self.seed(0);
        let (train, eval) = match &self.common.data {
            Some(_) => (self.data()?, None),
            None => {
                let (train, test) = toy_split()?;
                self.manifest.data = Some(DataSource {
                    source: format!("toy seed {TOY_DATA_SEED}, first {TOY_TRAIN_COUNT} samples"),
                    sha256: None,
                    samples: train.len(),
                });
                (train, Some(test))
            }
        };
        let train = match self.common.limit {
            Some(n) => train[..n.min(train.len())].to_vec(),
            None => train,
        };
        let config = TrainConfig {
            epochs,
            seed,
            ..TrainConfig::default()
        };
        let report = train_with(&VitConfig::default(), &train, &config, eval.as_deref())?;
        for e in &report.epochs {
            log::info!(
                "epoch {}: loss {:.4}, train acc {:.3}, eval acc {}",
                e.epoch,
                e.mean_loss,
                e.train_accuracy,
                e.eval_accuracy.map_or("-".into(), |a| format!("{a:.3}"))
            );
        }
        self.out.write("toy.ck", |w| write_checkpoint(&report.model, w))?;
        self.out.write("train.ndjson", |w| write_ndjson_records(&report.epochs, w))?;
        Ok(Status::Ok)
    }

    fn gen_data(&mut self, count: usize) -> Result<Status> {
        let seed = self.seed(TOY_DATA_SEED);
        let samples = generate_toy_dataset(seed, count)?;
        self.out.write("data.ndjson", |w| write_ndjson(&samples, w))?;
        Ok(Status::Ok)
    }

    fn paths_for(
        &self,
        model: &VitModel,
        samples: &[Sample],
        method: CriterionSelector,
        integ: &IntegrationConfig,
    ) -> Result<Vec<NeuronPath>> {
        Ok(samples
            .par_iter()
            .map(|s| find_path(model, s, integ, method))
            .collect::<neuronpath::Result<_>>()?)
    }

    fn find_path(&mut self, method: MethodArg, topk: Option<usize>, knowledge: bool) -> Result<Status> {
        self.seed(0);
        let model = self.model()?;
        let integ = self.integ()?;
        let (ids, samples) = self.selected(DEFAULT_LIMIT)?;
        let method = CriterionSelector::from(method);
        if let Some(t) = topk {
            if method != CriterionSelector::Jas {
                bail!(neuronpath::Error::Usage("--topk applies to the jas method only".into()));
            }
            let records: Vec<TopkRecord> = samples
                .par_iter()
                .zip(ids.par_iter())
                .map(|(s, &id)| {
                    Ok(TopkRecord {
                        sample_id: id,
                        t,
                        layers: locate_topk(&model, s, &integ, t)?,
                        config: integ,
                    })
                })
                .collect::<neuronpath::Result<_>>()?;
            self.out.write("topk.ndjson", |w| write_ndjson_records(&records, w))?;
        } else {
            let paths = self.paths_for(&model, &samples, method, &integ)?;
            let records: Vec<PathRecord> = ids.iter().zip(&paths).map(|(&id, p)| PathRecord::new(id, p, integ)).collect();
            let path = self.out.write("paths.ndjson", |w| write_ndjson_records(&records, w))?;
            if records.len() == 1 {
                print!("{}", fs::read_to_string(path)?);
            }
        }
        if knowledge {
            let reports = samples
                .par_iter()
                .zip(ids.par_iter())
                .map(|(s, &id)| {
                    let mut r = knowledge_attribution(&model, s, &integ)?;
                    r.sample_id = Some(id);
                    Ok(r)
                })
                .collect::<neuronpath::Result<Vec<_>>>()?;
            self.out.write("knowledge.ndjson", |w| write_ndjson_records(&reports, w))?;
        }
        Ok(Status::Ok)
    }

    fn compare_methods(&mut self) -> Result<Status> {
        self.seed(0);
        let model = self.model()?;
        let integ = self.integ()?;
        let (ids, samples) = self.selected(DEFAULT_LIMIT)?;
        let mut summary = Vec::new();
        let mut per_sample = Vec::new();
        let mut records = Vec::new();
        for method in CriterionSelector::ALL {
            let paths = self.paths_for(&model, &samples, method, &integ)?;
            let neurons: Vec<Vec<NeuronId>> = paths.iter().map(|p| p.neurons.clone()).collect();
            let name = method.method_name();
            let removal = deviation_with_paths(&model, &samples, &ids, &neurons, Operation::Zero, integ.scope, name)?;
            let enhancement =
                deviation_with_paths(&model, &samples, &ids, &neurons, Operation::Double, integ.scope, name)?;
            let scores: Vec<f64> = paths.iter().map(|p| p.score).collect();
            log::info!(
                "{name}: mean JAS {:.4}, removal mean {:.4} dAcc {:.4}, enhancement mean {:.4} dAcc {:.4}",
                mean(&scores),
                removal.mean,
                removal.delta_accuracy,
                enhancement.mean,
                enhancement.delta_accuracy
            );
            summary.push(CompareRow {
                method: name,
                samples: samples.len(),
                mean_jas: mean(&scores),
                median_jas: median(&scores),
                removal_mean: removal.mean,
                removal_median: removal.median,
                removal_delta_acc: removal.delta_accuracy,
                enhancement_mean: enhancement.mean,
                enhancement_median: enhancement.median,
                enhancement_delta_acc: enhancement.delta_accuracy,
                excluded: removal.excluded,
            });
            for (i, p) in paths.iter().enumerate() {
                per_sample.push(CompareSampleRow {
                    sample_id: ids[i],
                    method: name,
                    path: p.neurons.iter().map(ToString::to_string).collect::<Vec<_>>().join(" "),
                    score: p.score,
                    criterion_value: p.criterion_value,
                    removal_ratio: removal.samples[i].ratio,
                    enhancement_ratio: enhancement.samples[i].ratio,
                });
                records.push(PathRecord::new(ids[i], p, integ));
            }
        }
        self.out.write("compare.csv", |w| write_csv(&summary, w))?;
        self.out.write("compare_samples.csv", |w| write_csv(&per_sample, w))?;
        self.out.write("paths.ndjson", |w| write_ndjson_records(&records, w))?;
        Ok(Status::Ok)
    }

    fn intervene(&mut self, method: MethodArg, op: Operation) -> Result<Status> {
        self.seed(0);
        let model = self.model()?;
        let integ = self.integ()?;
        let (ids, samples) = self.selected(DEFAULT_LIMIT)?;
        let method = CriterionSelector::from(method);
        // `none` leaves the forward pass untouched, so the paths are not needed.
        let neurons: Vec<Vec<NeuronId>> = if op == Operation::None {
            vec![Vec::new(); samples.len()]
        } else {
            self.paths_for(&model, &samples, method, &integ)?
                .into_iter()
                .map(|p| p.neurons)
                .collect()
        };
        let report =
            deviation_with_paths(&model, &samples, &ids, &neurons, op, integ.scope, method.method_name())?;
        log::info!(
            "{} {}: mean {:.4}, median {:.4}, dAcc {:.4}, excluded {}",
            report.method,
            op.as_str(),
            report.mean,
            report.median,
            report.delta_accuracy,
            report.excluded
        );
        self.out.write("deviation.csv", |w| write_csv(&report.samples, w))?;
        self.out.write("deviation.ndjson", |w| write_ndjson_records(&[DeviationSummary::from(&report)], w))?;
        Ok(Status::Ok)
    }

    fn utilization(&mut self, model: &VitModel, method: MethodArg, paths: Option<&std::path::Path>) -> Result<Vec<UtilizationMatrix>> {
        let integ = self.integ()?;
        let mut by_class: BTreeMap<usize, Vec<Vec<NeuronId>>> = BTreeMap::new();
        match paths {
            Some(file) => {
                let data = self.data()?;
                let text = fs::read(file).map_err(|e| neuronpath::Error::io(file, e))?;
                for (n, line) in Cursor::new(text).lines().enumerate() {
                    let line = line?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let record: PathRecord = serde_json::from_str(&line)
                        .map_err(|e| neuronpath::Error::Usage(format!("{}:{}: {e}", file.display(), n + 1)))?;
                    let sample = data.get(record.sample_id).ok_or_else(|| {
                        neuronpath::Error::Index(format!("path record for sample {} outside the dataset", record.sample_id))
                    })?;
                    by_class.entry(sample.y).or_default().push(record.path);
                }
            }
            None => {
                let (_, samples) = self.selected(DEFAULT_LIMIT)?;
                let found = self.paths_for(model, &samples, method.into(), &integ)?;
                for (s, p) in samples.iter().zip(found) {
                    by_class.entry(s.y).or_default().push(p.neurons);
                }
            }
        }
        Ok(build_utilization(&by_class, model.config())?)
    }

    fn aggregate(&mut self, method: MethodArg, paths: Option<&std::path::Path>) -> Result<Status> {
        self.seed(0);
        let model = self.model()?;
        let matrices = self.utilization(&model, method, paths)?;
        self.out.write("utilization.ndjson", |w| write_ndjson_records(&matrices, w))?;
        self.out.write("frequency.csv", |w| write_frequency_csv(&matrices, w))?;
        Ok(Status::Ok)
    }

    fn similarity(&mut self, utilization: Option<&std::path::Path>, method: MethodArg, q: f64) -> Result<Status> {
        self.seed(0);
        let matrices: Vec<UtilizationMatrix> = match utilization {
            Some(file) => {
                let bytes = fs::read(file).map_err(|e| neuronpath::Error::io(file, e))?;
                Cursor::new(bytes)
                    .lines()
                    .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
                    .map(|l| {
                        let l = l?;
                        serde_json::from_str(&l)
                            .map_err(|e| anyhow::Error::new(neuronpath::Error::Usage(format!("{}: {e}", file.display()))))
                    })
                    .collect::<Result<_>>()?
            }
            None => {
                let model = self.model()?;
                self.utilization(&model, method, None)?
            }
        };
        let (sim, neighbors) = class_similarity(&matrices, q)?;
        let mut rows = Vec::new();
        for (i, &a) in sim.classes.iter().enumerate() {
            for (j, &b) in sim.classes.iter().enumerate() {
                rows.push(SimilarityRow {
                    class_a: a,
                    class_b: b,
                    similarity: sim.values[i][j],
                });
            }
        }
        self.out.write("similarity.csv", |w| write_csv(&rows, w))?;
        self.out.write("neighbors.ndjson", |w| write_ndjson_records(&neighbors, w))?;
        Ok(Status::Ok)
    }

    fn prune(&mut self, topk: &[usize], mask_frac: &[f64], probe_fraction: f64) -> Result<Status> {
        let split_seed = self.seed(0);
        let model = self.model()?;
        let integ = self.integ()?;
        let (_, samples) = self.selected(DEFAULT_LIMIT)?;
        let config = PruneConfig {
            t_values: topk.to_vec(),
            p_values: mask_frac.to_vec(),
            split_seed,
            probe_fraction,
        };
        let report = prune_and_eval(&model, &samples, &config, &integ)?;
        log::info!("unpruned baseline accuracy {:.4}", report.baseline);
        for r in report.rows.iter().filter(|r| r.class.is_none()) {
            log::info!("t={} p={}: accuracy {:.4}", r.t, r.p, r.accuracy);
        }
        self.out.write("prune.csv", |w| write_prune_csv(&report, w))?;
        self.out.write_bytes("prune.svg", prune_curve_svg(&report).as_bytes())?;
        self.out
            .write("selections.ndjson", |w| write_ndjson_records(&report.selections, w))?;
        Ok(Status::Ok)
    }

    fn bench(&mut self, m_grid: &[usize], repeats: usize) -> Result<Status> {
        self.seed(0);
        let model = self.model()?;
        let integ = self.integ()?;
        let image = self.common.image.unwrap_or(0);
        let data = self.data()?;
        let sample = data
            .get(image)
            .ok_or_else(|| neuronpath::Error::Index(format!("--image {image} but the dataset has {} samples", data.len())))?;
        let report = complexity_benchmark(std::slice::from_ref(&model), sample, m_grid, &integ, repeats)?;
        for r in &report.ratios {
            log::info!("m {} -> {}: time ratio {:.3} (linear {:.3})", r.m_from, r.m_to, r.measured, r.predicted);
        }
        self.out.write("bench_timings.csv", |w| write_csv(&report.timings, w))?;
        self.out.write("bench_ratios.csv", |w| write_csv(&report.ratios, w))?;
        Ok(Status::Ok)
    }

    fn verify(&mut self, gradient_coords: usize, completeness_paths: usize) -> Result<Status> {
        let seed = self.seed(0);
        let model = self.model()?;
        let (_, samples) = self.selected(VERIFY_LIMIT)?;
        let options = SuiteOptions {
            seed,
            gradient_coords,
            completeness_paths,
        };
        let report = run_suite(&model, &samples, &options)?;
        print!("{}", report.table());
        self.out.write("verify.csv", |w| write_csv(&report.checks, w))?;
        let failed = report.checks.iter().filter(|c| !c.passed).count();
        if failed > 0 {
            log::error!("{failed} of {} checks failed", report.checks.len());
            return Ok(Status::Failed);
        }
        log::info!("all {} checks passed", report.checks.len());
        Ok(Status::Ok)
    }
}

#[derive(Serialize)]
struct CompareRow {
    method: &'static str,
    samples: usize,
    mean_jas: f64,
    median_jas: f64,
    removal_mean: f64,
    removal_median: f64,
    removal_delta_acc: f64,
    enhancement_mean: f64,
    enhancement_median: f64,
    enhancement_delta_acc: f64,
    excluded: usize,
}

#[derive(Serialize)]
struct CompareSampleRow {
    sample_id: usize,
    method: &'static str,
    path: String,
    score: f64,
    criterion_value: f64,
    removal_ratio: Option<f64>,
    enhancement_ratio: Option<f64>,
}

/// The aggregate part of a [`DeviationReport`]; per-sample values go to CSV.
#[derive(Serialize)]
struct DeviationSummary<'a> {
    method: &'a str,
    operation: &'static str,
    scope: &'static str,
    samples: usize,
    mean: f64,
    median: f64,
    accuracy_before: f64,
    accuracy_after: f64,
    delta_accuracy: f64,
    excluded: usize,
}

impl<'a> From<&'a DeviationReport> for DeviationSummary<'a> {
    fn from(r: &'a DeviationReport) -> Self {
        Self {
            method: &r.method,
            operation: r.operation.as_str(),
            scope: r.scope.as_str(),
            samples: r.samples.len(),
            mean: r.mean,
            median: r.median,
            accuracy_before: r.accuracy_before,
            accuracy_after: r.accuracy_after,
            delta_accuracy: r.delta_accuracy,
            excluded: r.excluded,
        }
    }
}

#[derive(Serialize)]
struct SimilarityRow {
    class_a: usize,
    class_b: usize,
    similarity: f64,
}
