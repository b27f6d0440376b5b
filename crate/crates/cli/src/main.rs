use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use tabclust_cli::config::{CohortSpec, DataSource, MethodSpec, PreprocessConfig};
use tabclust_cli::experiment::{clean, run_experiment, MethodRunner};
use tabclust_cli::{io, CliError, ExperimentConfig, MethodKind, Profile};
use tabclust_core::data::{ehr_feature_schema, generate_synthetic, load_csv, load_schema, standardize, CsvOptions, SyntheticSpec};
use tabclust_core::ensemble::{dimension_ensemble, majority_vote};
use tabclust_core::labels::{LabelMatrix, LabelVector};
use tabclust_core::metrics::{average_rank, ScoreReport};

#[derive(Parser)]
#[command(name = "tabclust", version, about = "Clustering benchmark for tabular patient data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a synthetic two-class cohort to CSV.
    Generate {
        /// Synthetic spec JSON.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV file.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "label")]
        label_column: String,
    },
    /// Apply bounds, the missing-rate filter, median imputation and standardization.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Preprocessing options JSON; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Feature bounds JSON. Without it the built-in 33-feature schema is used.
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long, default_value = "label")]
        label_column: String,
        #[arg(long)]
        max_missing_rate: Option<f64>,
        #[arg(long)]
        no_bounds: bool,
        #[arg(long)]
        no_standardize: bool,
    },
    /// Run one method on a preprocessed CSV and write its labels.
    Cluster {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        method: MethodKind,
        /// Parameter overrides as a JSON object.
        #[arg(long)]
        params: Option<String>,
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Profile::Desk)]
        profile: Profile,
        /// Column excluded from the features.
        #[arg(long)]
        label_column: Option<String>,
        /// Output labels CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Combine label files into one labelling.
    Ensemble {
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = EnsembleMode::Vote)]
        mode: EnsembleMode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predicted labels against ground truth.
    Evaluate {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, default_value = "method")]
        method: String,
        #[arg(long, default_value = "cohort")]
        cohort: String,
        /// Scores CSV; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full cohort × method grid from an experiment config.
    Benchmark {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; overrides the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        profile: Option<Profile>,
    },
    /// Average mid-rank of each method over every (cohort, metric) cell.
    Rank {
        #[arg(long)]
        input: PathBuf,
        /// Ranks CSV; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EnsembleMode {
    /// Majority vote with ties to label 1.
    Vote,
    /// Thresholded mean of aligned runs.
    Dimension,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn read_labels(path: &Path) -> Result<LabelVector, CliError> {
    let f = std::fs::File::open(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    LabelVector::read_csv(f).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn output(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> Result<(), CliError>) -> Result<(), CliError> {
    match path {
        Some(p) => {
            let mut w = io::create(p)?;
            f(&mut w)?;
            w.flush()?;
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            f(&mut stdout)?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate {
            config,
            seed,
            out,
            label_column,
        } => {
            let mut spec: SyntheticSpec = read_json(&config)?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            let ds = generate_synthetic(&spec)?;
            output(Some(&out), |w| Ok(ds.write_csv(w, Some(&label_column), &CsvOptions::default())?))
        }
        Command::Preprocess {
            input,
            out,
            config,
            schema,
            label_column,
            max_missing_rate,
            no_bounds,
            no_standardize,
        } => {
            let mut cfg: PreprocessConfig = match &config {
                Some(p) => read_json(p)?,
                None => PreprocessConfig::default(),
            };
            if let Some(r) = max_missing_rate {
                cfg.max_missing_rate = r;
            }
            cfg.apply_bounds &= !no_bounds;
            cfg.standardize &= !no_standardize;
            if !(0.0..=1.0).contains(&cfg.max_missing_rate) {
                return Err(CliError::Validation("max_missing_rate: must be in [0, 1]".into()));
            }
            let specs = match &schema {
                Some(p) => load_schema(p)?,
                None => ehr_feature_schema(),
            };
            let ds = load_csv(&input, &specs, Some(&label_column), &CsvOptions::default())?;
            let mut ds = clean(&ds, &cfg)?;
            if cfg.standardize {
                ds = standardize(&ds)?.0;
            }
            output(Some(&out), |w| Ok(ds.write_csv(w, Some(&label_column), &CsvOptions::default())?))
        }
        Command::Cluster {
            input,
            method,
            params,
            k,
            seed,
            profile,
            label_column,
            out,
        } => {
            if method == MethodKind::Kgg {
                return Err(CliError::Validation(
                    "method: kgg needs voter label files; use `ensemble --mode vote`".into(),
                ));
            }
            let params = match params {
                Some(p) => serde_json::from_str(&p).map_err(|e| CliError::Validation(format!("params: {e}")))?,
                None => Default::default(),
            };
            let config = ExperimentConfig {
                seed,
                output_dir: PathBuf::new(),
                epochs_profile: profile,
                data: DataSource::Csv {
                    path: input.clone(),
                    schema: None,
                    label_column: label_column.clone().unwrap_or_else(|| "label".into()),
                },
                preprocess: PreprocessConfig::default(),
                cohorts: vec![CohortSpec {
                    name: "input".into(),
                    filter: None,
                    subsample: None,
                    synthetic_seed: None,
                }],
                methods: vec![MethodSpec {
                    name: method.name().into(),
                    kind: method,
                    params,
                }],
                k,
            };
            let resolved = config.validate()?;
            let ds = io::read_features_csv(&input, label_column.as_deref())?;
            if ds.missing_count() > 0 {
                return Err(CliError::Validation(format!(
                    "{}: {} missing cells; run `preprocess` first",
                    input.display(),
                    ds.missing_count()
                )));
            }
            let mut runner = MethodRunner::new(ds.x().view(), k, seed);
            let outcome = runner.run(&resolved[0]).map_err(CliError::Runtime)?;
            output(Some(&out), |w| Ok(outcome.labels.write_csv(w)?))
        }
        Command::Ensemble { inputs, mode, out } => {
            let runs = inputs.iter().map(|p| read_labels(p)).collect::<Result<Vec<_>, _>>()?;
            let names = inputs
                .iter()
                .enumerate()
                .map(|(i, p)| format!("{i}:{}", p.display()))
                .collect();
            let matrix = LabelMatrix::with_names(runs, names)?;
            let labels = match mode {
                EnsembleMode::Vote => majority_vote(&matrix),
                EnsembleMode::Dimension => dimension_ensemble(&matrix),
            }
            .map_err(|e| CliError::Validation(e.to_string()))?;
            output(Some(&out), |w| Ok(labels.write_csv(w)?))
        }
        Command::Evaluate {
            truth,
            pred,
            method,
            cohort,
            out,
        } => {
            let (t, p) = (read_labels(&truth)?, read_labels(&pred)?);
            let report =
                ScoreReport::compute(method, cohort, &t, &p, 0.0).map_err(|e| CliError::Validation(e.to_string()))?;
            output(out.as_deref(), |w| io::write_scores_csv(&[report], w))
        }
        Command::Benchmark {
            config,
            seed,
            out,
            profile,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            if let Some(p) = profile {
                cfg.epochs_profile = p;
            }
            let report = run_experiment(&cfg)?;
            for f in &report.failures {
                eprintln!("failed: {}/{}: {}", f.cohort, f.method, f.error);
            }
            eprintln!(
                "wrote {} score rows to {}",
                report.scores.len(),
                report.output_dir.display()
            );
            Ok(())
        }
        Command::Rank { input, out } => {
            let f = std::fs::File::open(&input).map_err(|e| CliError::Validation(format!("{}: {e}", input.display())))?;
            let scores = ScoreReport::read_csv(f).map_err(|e| CliError::Validation(format!("{}: {e}", input.display())))?;
            let ranks = average_rank(&scores).map_err(|e| CliError::Validation(e.to_string()))?;
            output(out.as_deref(), |w| io::write_ranks_csv(&ranks, w))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
