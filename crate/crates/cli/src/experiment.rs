//! The cohort × method grid.
//!
//! Every cohort is preprocessed once, then every method runs on its feature
//! matrix. Ground-truth labels are split off before any fit and used only for
//! scoring. Methods that share an autoencoder architecture, training schedule
//! and seed share one pretraining run; the pretraining time is charged to each
//! of them. A method failure is recorded and the grid continues.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use tabclust_core::autoencoder::AutoencoderModel;
use tabclust_core::data::{
    apply_bounds, ehr_feature_schema, filter_missing_rate, generate_synthetic, impute_median, load_csv,
    load_schema, standardize, stratified_subsample, CsvOptions, Dataset,
};
use tabclust_core::deepcluster::{finetune, DeepClusterConfig};
use tabclust_core::ensemble::{dimension_ensemble, majority_vote, run_dimension_sweep, sweep_dims};
use tabclust_core::labels::{LabelMatrix, LabelVector};
use tabclust_core::metrics::{average_rank, RankSummary, ScoreReport};
use tabclust_core::seed::derive_seed;
use tabclust_core::traditional::{gmm_fit, gmm_predict, kmeans_fit, kmeans_predict};

use crate::config::{
    AutoencoderSettings, CohortSpec, DataSource, ExperimentConfig, PreprocessConfig, ResolvedMethod, SubsampleSpec,
    TrainKey,
};
use crate::io;
use crate::CliError;

/// Methods of the original comparison that are not implemented.
pub const OMITTED_METHODS: [&str; 4] = ["DKM", "AE-CM", "DEPICT", "DynAE"];
const OMITTED_REASON: &str =
    "image-oriented deep clustering baselines; out of scope for tabular data, columns absent from all reports";

#[derive(Debug, Clone, Serialize)]
pub struct CohortSummary {
    pub name: String,
    pub seed: u64,
    pub source_rows: usize,
    pub rows_after_filter: usize,
    pub rows_after_missing_filter: usize,
    pub n_samples: usize,
    pub n_features: usize,
    pub class_counts: Vec<usize>,
    pub subsample: Option<SubsampleSpec>,
}

/// A preprocessed cohort: standardized features plus held-out labels.
#[derive(Debug, Clone)]
pub struct PreparedCohort {
    pub x: Array2<f64>,
    pub truth: LabelVector,
    pub summary: CohortSummary,
}

/// Bounds, missing-rate filter and median imputation, each optional step per `cfg`.
pub fn clean(ds: &Dataset, cfg: &PreprocessConfig) -> Result<Dataset, CliError> {
    let bounded = if cfg.apply_bounds { apply_bounds(ds) } else { ds.clone() };
    let filtered = filter_missing_rate(&bounded, cfg.max_missing_rate)?;
    Ok(impute_median(&filtered)?)
}

fn cohort_seed(config: &ExperimentConfig, index: usize) -> u64 {
    derive_seed(config.seed, index as u64)
}

fn load_source(config: &ExperimentConfig, cohort: &CohortSpec) -> Result<Dataset, CliError> {
    match &config.data {
        DataSource::Synthetic(spec) => {
            let mut spec = spec.clone();
            if let Some(s) = cohort.synthetic_seed {
                spec.seed = s;
            }
            Ok(generate_synthetic(&spec)?)
        }
        DataSource::Csv {
            path,
            schema,
            label_column,
        } => {
            let specs = match schema {
                Some(p) => load_schema(p)?,
                None => ehr_feature_schema(),
            };
            load_csv(path, &specs, Some(label_column), &CsvOptions::default()).map_err(|e| match e {
                tabclust_core::data::DataError::Io(io) => CliError::Runtime(format!("{}: {io}", path.display())),
                other => CliError::Validation(format!("{}: {other}", path.display())),
            })
        }
    }
}

pub fn prepare_cohort(config: &ExperimentConfig, index: usize) -> Result<PreparedCohort, CliError> {
    let cohort = &config.cohorts[index];
    let seed = cohort_seed(config, index);
    let path = format!("cohorts[{index}]");
    let source = load_source(config, cohort)?;
    let source_rows = source.n_samples();
    let grouped = match &cohort.filter {
        Some(f) => {
            let col = source
                .feature_specs()
                .iter()
                .position(|s| s.name == f.column)
                .ok_or_else(|| CliError::Validation(format!("{path}.filter.column: no feature `{}`", f.column)))?;
            let rows: Vec<usize> = (0..source.n_samples())
                .filter(|&i| !source.missing()[[i, col]] && source.x()[[i, col]] == f.equals)
                .collect();
            if rows.is_empty() {
                return Err(CliError::Validation(format!("{path}.filter: no rows match")));
            }
            source.select_rows(&rows)
        }
        None => source,
    };
    let rows_after_filter = grouped.n_samples();
    let cleaned = clean(&grouped, &config.preprocess)?;
    let rows_after_missing_filter = cleaned.n_samples();
    let cap = config.epochs_profile.defaults().max_cohort_samples;
    let subsample = match (&cohort.subsample, cap) {
        (Some(s), _) => Some(s.clone()),
        (None, Some(cap)) if cleaned.n_samples() > cap => {
            let labels = cleaned
                .labels()
                .ok_or_else(|| CliError::Validation(format!("{path}: cohort has no labels")))?;
            let ones = labels.iter().filter(|&&l| l == 1).count();
            let zeros = labels.len() - ones;
            Some(SubsampleSpec {
                n_samples: cap,
                class_ratio: ones.min(zeros) as f64 / ones.max(zeros) as f64,
            })
        }
        _ => None,
    };
    let sampled = match &subsample {
        Some(s) => stratified_subsample(&cleaned, s.n_samples, s.class_ratio, derive_seed(seed, 1))
            .map_err(|e| CliError::Validation(format!("{path}.subsample: {e}")))?,
        None => cleaned,
    };
    let ready = if config.preprocess.standardize {
        standardize(&sampled)?.0
    } else {
        sampled
    };
    let labels = ready
        .labels()
        .ok_or_else(|| CliError::Validation(format!("{path}: cohort has no labels")))?
        .to_vec();
    let truth = LabelVector::from_labels(labels);
    let mut class_counts = vec![0; truth.k()];
    for &l in truth.as_slice() {
        class_counts[l] += 1;
    }
    let summary = CohortSummary {
        name: cohort.name.clone(),
        seed,
        source_rows,
        rows_after_filter,
        rows_after_missing_filter,
        n_samples: ready.n_samples(),
        n_features: ready.n_features(),
        class_counts,
        subsample,
    };
    Ok(PreparedCohort {
        x: ready.x().clone(),
        truth,
        summary,
    })
}

/// Everything one method produced on one cohort.
#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub labels: LabelVector,
    pub seconds: f64,
    /// `(file stem, embedding)` pairs.
    pub embeddings: Vec<(String, Array2<f64>)>,
    pub history: Option<Value>,
    pub sweep: Option<LabelMatrix>,
    pub seeds: BTreeMap<String, u64>,
}

struct Pretrained {
    model: AutoencoderModel,
    history: Vec<f64>,
    seconds: f64,
}

/// Per-cohort training context with the shared pretraining cache.
pub struct MethodRunner<'a> {
    x: ArrayView2<'a, f64>,
    k: usize,
    seed: u64,
    cache: HashMap<AutoencoderSettings, Pretrained>,
}

impl<'a> MethodRunner<'a> {
    pub fn new(x: ArrayView2<'a, f64>, k: usize, seed: u64) -> Self {
        Self {
            x,
            k,
            seed,
            cache: HashMap::new(),
        }
    }

    fn pretrained(&mut self, ae: &AutoencoderSettings) -> Result<&Pretrained, String> {
        if !self.cache.contains_key(ae) {
            let start = Instant::now();
            let mut model = AutoencoderModel::build(self.x.ncols(), ae.embed_dim, &ae.hidden, ae.activation, self.seed)
                .map_err(|e| e.to_string())?;
            let history = model
                .pretrain(self.x, &ae.train.to_config(self.seed))
                .map_err(|e| e.to_string())?;
            let seconds = start.elapsed().as_secs_f64();
            self.cache.insert(ae.clone(), Pretrained { model, history, seconds });
        }
        Ok(&self.cache[ae])
    }

    fn seeds(&self) -> BTreeMap<String, u64> {
        BTreeMap::from([("seed".to_string(), self.seed)])
    }

    /// Run one non-ensemble-of-methods kind. `Kgg` is handled by the grid.
    pub fn run(&mut self, method: &ResolvedMethod) -> Result<MethodOutcome, String> {
        let (x, k, seed) = (self.x, self.k, self.seed);
        match method {
            ResolvedMethod::KMeansX(s) => {
                let start = Instant::now();
                let m = kmeans_fit(x, k, seed, &s.config()).map_err(|e| e.to_string())?;
                let labels = kmeans_predict(&m, x).map_err(|e| e.to_string())?;
                Ok(self.simple(labels, start.elapsed().as_secs_f64()))
            }
            ResolvedMethod::GmmX(s) => {
                let start = Instant::now();
                let m = gmm_fit(x, k, seed, &s.config()).map_err(|e| e.to_string())?;
                let labels = gmm_predict(&m, x).map_err(|e| e.to_string())?.0;
                Ok(self.simple(labels, start.elapsed().as_secs_f64()))
            }
            ResolvedMethod::KMeansZ { ae, kmeans } => {
                let pre = self.pretrained(ae)?;
                let start = Instant::now();
                let z = pre.model.encode(x).map_err(|e| e.to_string())?;
                let m = kmeans_fit(z.view(), k, seed, &kmeans.config()).map_err(|e| e.to_string())?;
                let labels = kmeans_predict(&m, z.view()).map_err(|e| e.to_string())?;
                let seconds = pre.seconds + start.elapsed().as_secs_f64();
                let history = json!({ "pretrain_loss": pre.history });
                Ok(self.hybrid(labels, seconds, z, history))
            }
            ResolvedMethod::GmmZ { ae, gmm } => {
                let pre = self.pretrained(ae)?;
                let start = Instant::now();
                let z = pre.model.encode(x).map_err(|e| e.to_string())?;
                let m = gmm_fit(z.view(), k, seed, &gmm.config()).map_err(|e| e.to_string())?;
                let labels = gmm_predict(&m, z.view()).map_err(|e| e.to_string())?.0;
                let seconds = pre.seconds + start.elapsed().as_secs_f64();
                let history = json!({ "pretrain_loss": pre.history });
                Ok(self.hybrid(labels, seconds, z, history))
            }
            ResolvedMethod::Deep(cfg) => {
                let mut cfg = cfg.clone();
                cfg.train.seed = seed;
                let ae = AutoencoderSettings {
                    embed_dim: cfg.embed_dim,
                    hidden: cfg.hidden.clone(),
                    activation: cfg.activation,
                    train: TrainKey::from_config(&cfg.train),
                };
                let pre = self.pretrained(&ae)?;
                let (model, pre_seconds) = (pre.model.clone(), pre.seconds);
                let pretrain_loss = pre.history.clone();
                let start = Instant::now();
                let dcm = finetune(model, x, k, &cfg).map_err(|e| e.to_string())?;
                let labels = dcm.assign(x).map_err(|e| e.to_string())?;
                let seconds = pre_seconds + start.elapsed().as_secs_f64();
                let z = dcm.embed(x).map_err(|e| e.to_string())?;
                let history = json!({
                    "pretrain_loss": pretrain_loss,
                    "finetune": dcm.history,
                    "collapses": dcm.collapses,
                });
                Ok(self.hybrid(labels, seconds, z, history))
            }
            ResolvedMethod::Sweep { base, dims } => {
                let dims = if dims.is_empty() {
                    sweep_dims(2, 3, x.ncols())
                } else {
                    dims.clone()
                };
                let base = DeepClusterConfig {
                    train: tabclust_core::autoencoder::TrainConfig { seed, ..base.train.clone() },
                    ..base.clone()
                };
                let start = Instant::now();
                let outcome = run_dimension_sweep(x, k, &dims, &base).map_err(|e| e.to_string())?;
                let matrix = outcome.label_matrix().map_err(|e| e.to_string())?;
                let labels = dimension_ensemble(&matrix).map_err(|e| e.to_string())?;
                let seconds = start.elapsed().as_secs_f64();
                let mut seeds = self.seeds();
                let mut history = serde_json::Map::new();
                let mut embeddings = Vec::new();
                for run in &outcome.runs {
                    let name = format!("d{}", run.dim);
                    seeds.insert(name.clone(), run.seed);
                    history.insert(
                        name.clone(),
                        json!({
                            "seconds": run.seconds,
                            "pretrain_loss": run.pretrain_history,
                            "finetune": run.model.history,
                            "collapses": run.model.collapses,
                        }),
                    );
                    embeddings.push((name, run.model.embed(x).map_err(|e| e.to_string())?));
                }
                Ok(MethodOutcome {
                    labels,
                    seconds,
                    embeddings,
                    history: Some(Value::Object(history)),
                    sweep: Some(matrix),
                    seeds,
                })
            }
            ResolvedMethod::Kgg { .. } => Err("kgg is evaluated after its voters".into()),
        }
    }

    fn simple(&self, labels: LabelVector, seconds: f64) -> MethodOutcome {
        MethodOutcome {
            labels,
            seconds,
            embeddings: Vec::new(),
            history: None,
            sweep: None,
            seeds: self.seeds(),
        }
    }

    fn hybrid(&self, labels: LabelVector, seconds: f64, z: Array2<f64>, history: Value) -> MethodOutcome {
        MethodOutcome {
            embeddings: vec![(String::new(), z)],
            history: Some(history),
            ..self.simple(labels, seconds)
        }
    }
}

/// Majority vote of three voter outcomes; time is the voters' plus the vote's.
pub fn kgg_vote(voters: &[(&str, &MethodOutcome)]) -> Result<MethodOutcome, String> {
    let start = Instant::now();
    let matrix = LabelMatrix::with_names(
        voters.iter().map(|(_, o)| o.labels.clone()).collect(),
        voters.iter().map(|(n, _)| n.to_string()).collect(),
    )
    .map_err(|e| e.to_string())?;
    let labels = majority_vote(&matrix).map_err(|e| e.to_string())?;
    let seconds = voters.iter().map(|(_, o)| o.seconds).sum::<f64>() + start.elapsed().as_secs_f64();
    Ok(MethodOutcome {
        labels,
        seconds,
        embeddings: Vec::new(),
        history: None,
        sweep: Some(matrix),
        seeds: BTreeMap::new(),
    })
}

/// One cohort's results in method order.
pub struct CohortRun {
    pub summary: CohortSummary,
    pub truth: LabelVector,
    pub cells: Vec<(String, Result<MethodOutcome, String>)>,
}

pub fn run_cohort(config: &ExperimentConfig, resolved: &[ResolvedMethod], index: usize) -> Result<CohortRun, CliError> {
    let cohort = prepare_cohort(config, index)?;
    let mut runner = MethodRunner::new(cohort.x.view(), config.k, cohort.summary.seed);
    let mut results: BTreeMap<usize, Result<MethodOutcome, String>> = BTreeMap::new();
    for (i, r) in resolved.iter().enumerate() {
        if !matches!(r, ResolvedMethod::Kgg { .. }) {
            results.insert(i, runner.run(r));
        }
    }
    drop(runner);
    for (i, r) in resolved.iter().enumerate() {
        if let ResolvedMethod::Kgg { voters } = r {
            let mut found = Vec::new();
            let mut missing = Vec::new();
            for v in voters {
                let j = config.methods.iter().position(|m| &m.name == v).expect("validated voter");
                match &results[&j] {
                    Ok(o) => found.push((v.as_str(), o)),
                    Err(_) => missing.push(v.as_str()),
                }
            }
            let outcome = if missing.is_empty() {
                kgg_vote(&found)
            } else {
                Err(format!("voter(s) failed: {}", missing.join(", ")))
            };
            results.insert(i, outcome);
        }
    }
    let cells = config
        .methods
        .iter()
        .zip(results.into_values())
        .map(|(m, r)| (m.name.clone(), r))
        .collect();
    Ok(CohortRun {
        summary: cohort.summary,
        truth: cohort.truth,
        cells,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    pub cohort: String,
    pub method: String,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub output_dir: PathBuf,
    pub scores: Vec<ScoreReport>,
    pub ranks: Vec<RankSummary>,
    pub failures: Vec<Failure>,
}

impl ExperimentReport {
    pub fn score(&self, method: &str, cohort: &str) -> Option<&ScoreReport> {
        self.scores.iter().find(|s| s.method == method && s.cohort == cohort)
    }
}

fn write_with<F>(path: &Path, f: F) -> Result<(), CliError>
where
    F: FnOnce(&mut std::io::BufWriter<std::fs::File>) -> Result<(), CliError>,
{
    let mut w = io::create(path)?;
    f(&mut w)?;
    use std::io::Write;
    w.flush()?;
    Ok(())
}

fn epochs_of(r: &ResolvedMethod) -> Value {
    match r {
        ResolvedMethod::KMeansZ { ae, .. } | ResolvedMethod::GmmZ { ae, .. } => {
            json!({ "pretrain": ae.train.epochs, "finetune": 0 })
        }
        ResolvedMethod::Deep(c) | ResolvedMethod::Sweep { base: c, .. } => {
            json!({ "pretrain": c.train.epochs, "finetune": c.finetune_epochs })
        }
        _ => Value::Null,
    }
}

/// Validate, run the full grid and write every report under `output_dir`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport, CliError> {
    let resolved = config.validate()?;
    let out = config.output_dir.clone();
    std::fs::create_dir_all(&out).map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;

    let runs = (0..config.cohorts.len())
        .into_par_iter()
        .map(|i| run_cohort(config, &resolved, i))
        .collect::<Result<Vec<_>, _>>()?;

    let mut scores = Vec::new();
    let mut failures = Vec::new();
    let mut cells = Vec::new();
    for run in &runs {
        let cohort = &run.summary.name;
        write_with(&out.join("truth").join(format!("{cohort}.csv")), |w| Ok(run.truth.write_csv(w)?))?;
        for (method, result) in &run.cells {
            let scored = result.as_ref().map_err(Clone::clone).and_then(|o| {
                ScoreReport::compute(method, cohort, &run.truth, &o.labels, o.seconds)
                    .map(|s| (o, s))
                    .map_err(|e| e.to_string())
            });
            match scored {
                Ok((o, s)) => {
                    write_outcome(&out, cohort, method, o)?;
                    cells.push(json!({
                        "cohort": cohort, "method": method, "status": "ok",
                        "wall_clock_seconds": o.seconds, "seeds": o.seeds,
                    }));
                    scores.push(s);
                }
                Err(error) => {
                    cells.push(json!({ "cohort": cohort, "method": method, "status": "failed", "error": error }));
                    failures.push(Failure {
                        cohort: cohort.clone(),
                        method: method.clone(),
                        error,
                    });
                }
            }
        }
    }

    // Ranks need a complete grid, so only methods that succeeded everywhere count.
    let complete: Vec<&str> = config
        .methods
        .iter()
        .map(|m| m.name.as_str())
        .filter(|m| failures.iter().all(|f| f.method != *m))
        .collect();
    let rankable: Vec<ScoreReport> = scores
        .iter()
        .filter(|s| complete.contains(&s.method.as_str()))
        .cloned()
        .collect();
    let ranks = if rankable.is_empty() {
        Vec::new()
    } else {
        average_rank(&rankable).map_err(CliError::runtime)?
    };

    write_with(&out.join("scores.csv"), |w| io::write_scores_csv(&scores, w))?;
    write_with(&out.join("timings.csv"), |w| io::write_timings_csv(&scores, w))?;
    write_with(&out.join("ranks.csv"), |w| io::write_ranks_csv(&ranks, w))?;
    write_with(&out.join("scores.json"), |w| {
        ScoreReport::write_json(&scores, w).map_err(CliError::runtime)
    })?;

    let config_json = serde_json::to_vec(config).map_err(CliError::runtime)?;
    let methods: Vec<Value> = config
        .methods
        .iter()
        .zip(&resolved)
        .map(|(m, r)| json!({ "name": m.name, "kind": m.kind, "resolved": r, "epochs": epochs_of(r) }))
        .collect();
    let manifest = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "config_sha256": io::sha256_hex(&config_json),
        "config": config,
        "seed": config.seed,
        "k": config.k,
        "epochs_profile": config.epochs_profile,
        "profile_defaults": config.epochs_profile.defaults(),
        "cohorts": runs.iter().map(|r| &r.summary).collect::<Vec<_>>(),
        "methods": methods,
        "cells": cells,
        "failures": failures,
        "ranked_methods": complete,
        "omitted_methods": { "methods": OMITTED_METHODS, "reason": OMITTED_REASON },
    });
    write_with(&out.join("manifest.json"), |w| {
        serde_json::to_writer_pretty(&mut *w, &manifest).map_err(CliError::runtime)
    })?;

    Ok(ExperimentReport {
        output_dir: out,
        scores,
        ranks,
        failures,
    })
}

fn write_outcome(out: &Path, cohort: &str, method: &str, o: &MethodOutcome) -> Result<(), CliError> {
    write_with(&out.join("labels").join(cohort).join(format!("{method}.csv")), |w| {
        Ok(o.labels.write_csv(w)?)
    })?;
    if let Some(m) = &o.sweep {
        write_with(&out.join("members").join(cohort).join(format!("{method}.csv")), |w| {
            Ok(m.write_csv(w)?)
        })?;
    }
    for (stem, z) in &o.embeddings {
        let path = if stem.is_empty() {
            out.join("embeddings").join(cohort).join(format!("{method}.csv"))
        } else {
            out.join("embeddings").join(cohort).join(method).join(format!("{stem}.csv"))
        };
        write_with(&path, |w| io::write_matrix_csv(z, w))?;
    }
    if let Some(h) = &o.history {
        write_with(&out.join("histories").join(cohort).join(format!("{method}.json")), |w| {
            serde_json::to_writer(&mut *w, h).map_err(CliError::runtime)
        })?;
    }
    Ok(())
}
