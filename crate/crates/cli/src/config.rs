//! Experiment configuration: one JSON document describing the data, the
//! cohorts, the method roster and the training profile.

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use tabclust_core::autoencoder::{Activation, TrainConfig};
use tabclust_core::data::SyntheticSpec;
use tabclust_core::deepcluster::{DeepClusterConfig, Variant};
use tabclust_core::traditional::{CovarianceType, GmmConfig, KMeansConfig};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Reduced architecture and epochs sized for a laptop CPU.
    #[default]
    Desk,
    /// Full-size architecture and long training.
    Paper,
}

/// Defaults a profile contributes to every deep method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileDefaults {
    pub hidden: Vec<usize>,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    /// Cohorts larger than this are stratified down to it.
    pub max_cohort_samples: Option<usize>,
}

impl Profile {
    pub fn defaults(self) -> ProfileDefaults {
        match self {
            Profile::Desk => ProfileDefaults {
                hidden: vec![32, 32, 128],
                pretrain_epochs: 200,
                finetune_epochs: 100,
                max_cohort_samples: Some(2000),
            },
            Profile::Paper => ProfileDefaults {
                hidden: vec![500, 500, 2000],
                pretrain_epochs: 1000,
                finetune_epochs: 1000,
                max_cohort_samples: None,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Csv {
        path: PathBuf,
        /// Feature bounds JSON; the built-in 33-feature EHR schema when absent.
        #[serde(default)]
        schema: Option<PathBuf>,
        label_column: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    #[serde(default = "yes")]
    pub apply_bounds: bool,
    #[serde(default = "default_missing_rate")]
    pub max_missing_rate: f64,
    #[serde(default = "yes")]
    pub standardize: bool,
}

fn yes() -> bool {
    true
}

fn default_missing_rate() -> f64 {
    0.05
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            apply_bounds: true,
            max_missing_rate: default_missing_rate(),
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortFilter {
    pub column: String,
    pub equals: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsampleSpec {
    pub n_samples: usize,
    /// Minority:majority ratio.
    pub class_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortSpec {
    pub name: String,
    /// Keep rows whose feature `column` equals `equals` (CSV sources).
    #[serde(default)]
    pub filter: Option<CohortFilter>,
    #[serde(default)]
    pub subsample: Option<SubsampleSpec>,
    /// Regenerate the synthetic source with this seed (synthetic sources).
    #[serde(default)]
    pub synthetic_seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum MethodKind {
    KmeansX,
    GmmX,
    KmeansZ,
    GmmZ,
    DeepStudentT,
    DeepStudentTRecon,
    DeepGaussian,
    DeepGaussianSweep,
    Kgg,
}

impl MethodKind {
    pub fn name(self) -> &'static str {
        match self {
            MethodKind::KmeansX => "kmeans_x",
            MethodKind::GmmX => "gmm_x",
            MethodKind::KmeansZ => "kmeans_z",
            MethodKind::GmmZ => "gmm_z",
            MethodKind::DeepStudentT => "deep_student_t",
            MethodKind::DeepStudentTRecon => "deep_student_t_recon",
            MethodKind::DeepGaussian => "deep_gaussian",
            MethodKind::DeepGaussianSweep => "deep_gaussian_sweep",
            MethodKind::Kgg => "kgg",
        }
    }

    fn allowed_params(self) -> &'static [&'static str] {
        const KMEANS: &[&str] = &["n_init", "max_iter", "tol"];
        const GMM: &[&str] = &["n_init", "max_iter", "tol", "cov_type", "reg_covar"];
        const AE_KMEANS: &[&str] = &[
            "embed_dim", "hidden", "activation", "pretrain_epochs", "learning_rate", "batch_size", "n_init",
            "max_iter", "tol",
        ];
        const AE_GMM: &[&str] = &[
            "embed_dim", "hidden", "activation", "pretrain_epochs", "learning_rate", "batch_size", "n_init",
            "max_iter", "tol", "cov_type", "reg_covar",
        ];
        const DEEP: &[&str] = &[
            "embed_dim", "hidden", "activation", "pretrain_epochs", "finetune_epochs", "learning_rate",
            "batch_size", "gamma", "target_update_interval", "reg_covar",
        ];
        const SWEEP: &[&str] = &[
            "dims", "hidden", "activation", "pretrain_epochs", "finetune_epochs", "learning_rate", "batch_size",
            "gamma", "target_update_interval", "reg_covar",
        ];
        match self {
            MethodKind::KmeansX => KMEANS,
            MethodKind::GmmX => GMM,
            MethodKind::KmeansZ => AE_KMEANS,
            MethodKind::GmmZ => AE_GMM,
            MethodKind::DeepStudentT | MethodKind::DeepStudentTRecon | MethodKind::DeepGaussian => DEEP,
            MethodKind::DeepGaussianSweep => SWEEP,
            MethodKind::Kgg => &["voters"],
        }
    }

    pub fn needs_autoencoder(self) -> bool {
        !matches!(self, MethodKind::KmeansX | MethodKind::GmmX | MethodKind::Kgg)
    }
}

/// Hyperparameter overrides; which keys apply depends on the method kind.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodParams {
    pub n_init: Option<usize>,
    pub max_iter: Option<usize>,
    pub tol: Option<f64>,
    pub cov_type: Option<CovarianceType>,
    pub reg_covar: Option<f64>,
    pub embed_dim: Option<usize>,
    pub hidden: Option<Vec<usize>>,
    pub activation: Option<Activation>,
    pub pretrain_epochs: Option<usize>,
    pub finetune_epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub gamma: Option<f64>,
    pub target_update_interval: Option<usize>,
    pub dims: Option<Vec<usize>>,
    pub voters: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub name: String,
    pub kind: MethodKind,
    #[serde(default)]
    pub params: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub epochs_profile: Profile,
    pub data: DataSource,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default = "default_cohorts")]
    pub cohorts: Vec<CohortSpec>,
    pub methods: Vec<MethodSpec>,
    #[serde(default = "default_k")]
    pub k: usize,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

fn default_cohorts() -> Vec<CohortSpec> {
    vec![CohortSpec {
        name: "all".into(),
        filter: None,
        subsample: None,
        synthetic_seed: None,
    }]
}

fn default_k() -> usize {
    2
}

fn invalid(path: impl Into<String>, message: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("{}: {message}", path.into()))
}

/// A method with its overrides merged into concrete configurations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ResolvedMethod {
    KMeansX(KMeansSettings),
    GmmX(GmmSettings),
    KMeansZ { ae: AutoencoderSettings, kmeans: KMeansSettings },
    GmmZ { ae: AutoencoderSettings, gmm: GmmSettings },
    Deep(DeepClusterConfig),
    Sweep { base: DeepClusterConfig, dims: Vec<usize> },
    Kgg { voters: [String; 3] },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KMeansSettings {
    pub n_init: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl KMeansSettings {
    pub fn config(&self) -> KMeansConfig {
        KMeansConfig {
            n_init: self.n_init,
            max_iter: self.max_iter,
            tol: self.tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GmmSettings {
    pub cov_type: CovarianceType,
    pub max_iter: usize,
    pub tol: f64,
    pub reg_covar: f64,
    pub n_init: usize,
}

impl GmmSettings {
    pub fn config(&self) -> GmmConfig {
        GmmConfig {
            cov_type: self.cov_type,
            max_iter: self.max_iter,
            tol: self.tol,
            reg_covar: self.reg_covar,
            kmeans: KMeansConfig {
                n_init: self.n_init,
                ..KMeansConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Hash, Eq)]
pub struct AutoencoderSettings {
    pub embed_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub train: TrainKey,
}

/// `TrainConfig` fields in a hashable form (floats by bit pattern).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct TrainKey {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate_bits: u64,
}

impl TrainKey {
    pub fn from_config(c: &TrainConfig) -> Self {
        Self {
            epochs: c.epochs,
            batch_size: c.batch_size,
            learning_rate_bits: c.learning_rate.to_bits(),
        }
    }

    pub fn to_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: f64::from_bits(self.learning_rate_bits),
            seed,
            ..TrainConfig::default()
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let value: Value = serde_json::from_str(text).map_err(|e| invalid("config", e))?;
        serde_json::from_value(value).map_err(|e| invalid("config", e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(path.display().to_string(), e))?;
        let mut config = Self::from_json(&text)?;
        // data paths are relative to the config file
        let base = path.parent().unwrap_or(std::path::Path::new(""));
        if let DataSource::Csv { path, schema, .. } = &mut config.data {
            if path.is_relative() {
                *path = base.join(&*path);
            }
            if let Some(s) = schema.as_mut().filter(|s| s.is_relative()) {
                *s = base.join(&*s);
            }
        }
        Ok(config)
    }

    /// Structural checks plus resolution of every method's parameters.
    pub fn validate(&self) -> Result<Vec<ResolvedMethod>, CliError> {
        if self.k < 2 {
            return Err(invalid("k", "must be >= 2"));
        }
        if self.methods.is_empty() {
            return Err(invalid("methods", "at least one method is required"));
        }
        if self.cohorts.is_empty() {
            return Err(invalid("cohorts", "at least one cohort is required"));
        }
        if !(0.0..=1.0).contains(&self.preprocess.max_missing_rate) {
            return Err(invalid("preprocess.max_missing_rate", "must be in [0, 1]"));
        }
        match &self.data {
            DataSource::Synthetic(spec) => spec.validate().map_err(|e| invalid("data.synthetic", e))?,
            DataSource::Csv { label_column, .. } if label_column.is_empty() => {
                return Err(invalid("data.csv.label_column", "must not be empty"));
            }
            DataSource::Csv { .. } => {}
        }
        let mut names = BTreeSet::new();
        for (i, c) in self.cohorts.iter().enumerate() {
            let path = format!("cohorts[{i}]");
            check_name(&c.name, &format!("{path}.name"))?;
            if !names.insert(c.name.as_str()) {
                return Err(invalid(format!("{path}.name"), format!("duplicate cohort name {:?}", c.name)));
            }
            if let Some(s) = &c.subsample {
                if !(s.class_ratio > 0.0 && s.class_ratio <= 1.0) {
                    return Err(invalid(format!("{path}.subsample.class_ratio"), "must be in (0, 1]"));
                }
                if s.n_samples < self.k {
                    return Err(invalid(format!("{path}.subsample.n_samples"), "must be at least k"));
                }
            }
            let synthetic = matches!(self.data, DataSource::Synthetic(_));
            if c.filter.is_some() && synthetic {
                return Err(invalid(format!("{path}.filter"), "only applies to csv data"));
            }
            if c.synthetic_seed.is_some() && !synthetic {
                return Err(invalid(format!("{path}.synthetic_seed"), "only applies to synthetic data"));
            }
        }

        let mut method_names = BTreeSet::new();
        for (i, m) in self.methods.iter().enumerate() {
            check_name(&m.name, &format!("methods[{i}].name"))?;
            if !method_names.insert(m.name.as_str()) {
                return Err(invalid(format!("methods[{i}].name"), format!("duplicate method name {:?}", m.name)));
            }
        }
        let resolved = self
            .methods
            .iter()
            .enumerate()
            .map(|(i, m)| self.resolve(i, m))
            .collect::<Result<Vec<_>, _>>()?;
        for (i, (m, r)) in self.methods.iter().zip(&resolved).enumerate() {
            if let ResolvedMethod::Kgg { voters } = r {
                let expected = [MethodKind::KmeansX, MethodKind::GmmX, MethodKind::DeepGaussianSweep];
                for (voter, kind) in voters.iter().zip(expected) {
                    let found = self.methods.iter().find(|o| &o.name == voter);
                    match found {
                        Some(o) if o.kind == kind => {}
                        Some(o) => {
                            return Err(invalid(
                                format!("methods[{i}].params.voters"),
                                format!("{voter:?} is {}, expected {}", o.kind.name(), kind.name()),
                            ))
                        }
                        None => {
                            return Err(invalid(
                                format!("methods[{i}]"),
                                format!("{} requires a {} method ({voter:?} not found)", m.name, kind.name()),
                            ))
                        }
                    }
                }
            }
            if matches!(r, ResolvedMethod::Sweep { .. } | ResolvedMethod::Kgg { .. }) && self.k != 2 {
                return Err(invalid(format!("methods[{i}].kind"), "ensembles require k = 2"));
            }
        }
        Ok(resolved)
    }

    fn resolve(&self, i: usize, m: &MethodSpec) -> Result<ResolvedMethod, CliError> {
        let path = format!("methods[{i}].params");
        let allowed = m.kind.allowed_params();
        for key in m.params.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(invalid(
                    format!("{path}.{key}"),
                    format!("not a parameter of {} (allowed: {})", m.kind.name(), allowed.join(", ")),
                ));
            }
        }
        let p: MethodParams =
            serde_json::from_value(Value::Object(m.params.clone())).map_err(|e| invalid(&path, e))?;
        let profile = self.epochs_profile.defaults();
        let kmeans = || -> Result<KMeansSettings, CliError> {
            let d = KMeansConfig::default();
            let s = KMeansSettings {
                n_init: p.n_init.unwrap_or(d.n_init),
                max_iter: p.max_iter.unwrap_or(d.max_iter),
                tol: p.tol.unwrap_or(d.tol),
            };
            positive(s.n_init as f64, &format!("{path}.n_init"))?;
            positive(s.max_iter as f64, &format!("{path}.max_iter"))?;
            non_negative(s.tol, &format!("{path}.tol"))?;
            Ok(s)
        };
        let gmm = || -> Result<GmmSettings, CliError> {
            let d = GmmConfig::default();
            let s = GmmSettings {
                cov_type: p.cov_type.unwrap_or(d.cov_type),
                max_iter: p.max_iter.unwrap_or(d.max_iter),
                tol: p.tol.unwrap_or(d.tol),
                reg_covar: p.reg_covar.unwrap_or(d.reg_covar),
                n_init: p.n_init.unwrap_or(d.kmeans.n_init),
            };
            positive(s.reg_covar, &format!("{path}.reg_covar"))?;
            positive(s.n_init as f64, &format!("{path}.n_init"))?;
            non_negative(s.tol, &format!("{path}.tol"))?;
            Ok(s)
        };
        let train = || -> Result<TrainConfig, CliError> {
            let t = TrainConfig {
                epochs: p.pretrain_epochs.unwrap_or(profile.pretrain_epochs),
                learning_rate: p.learning_rate.unwrap_or(TrainConfig::default().learning_rate),
                batch_size: p.batch_size.unwrap_or(TrainConfig::default().batch_size),
                seed: self.seed,
                ..TrainConfig::default()
            };
            t.validate().map_err(|e| invalid(&path, e))?;
            Ok(t)
        };
        let hidden = || -> Result<Vec<usize>, CliError> {
            let h = p.hidden.clone().unwrap_or_else(|| profile.hidden.clone());
            if h.contains(&0) {
                return Err(invalid(format!("{path}.hidden"), "layer widths must be >= 1"));
            }
            Ok(h)
        };
        let embed_dim = p.embed_dim.unwrap_or(10);
        if embed_dim == 0 {
            return Err(invalid(format!("{path}.embed_dim"), "must be >= 1"));
        }
        let ae = || -> Result<AutoencoderSettings, CliError> {
            Ok(AutoencoderSettings {
                embed_dim,
                hidden: hidden()?,
                activation: p.activation.unwrap_or(Activation::Relu),
                train: TrainKey::from_config(&train()?),
            })
        };
        let deep = |variant: Variant, reconstruction: bool| -> Result<DeepClusterConfig, CliError> {
            let c = DeepClusterConfig {
                variant,
                gamma: p.gamma.unwrap_or(0.1),
                embed_dim,
                hidden: hidden()?,
                activation: p.activation.unwrap_or(Activation::Relu),
                finetune_epochs: p.finetune_epochs.unwrap_or(profile.finetune_epochs),
                target_update_interval: p.target_update_interval.unwrap_or(10),
                reconstruction,
                reg_covar: p.reg_covar.unwrap_or(1e-6),
                train: train()?,
            };
            c.validate().map_err(|e| invalid(&path, e))?;
            Ok(c)
        };
        Ok(match m.kind {
            MethodKind::KmeansX => ResolvedMethod::KMeansX(kmeans()?),
            MethodKind::GmmX => ResolvedMethod::GmmX(gmm()?),
            MethodKind::KmeansZ => ResolvedMethod::KMeansZ {
                ae: ae()?,
                kmeans: kmeans()?,
            },
            MethodKind::GmmZ => ResolvedMethod::GmmZ { ae: ae()?, gmm: gmm()? },
            MethodKind::DeepStudentT => ResolvedMethod::Deep(deep(Variant::StudentT, false)?),
            MethodKind::DeepStudentTRecon => ResolvedMethod::Deep(deep(Variant::StudentT, true)?),
            MethodKind::DeepGaussian => ResolvedMethod::Deep(deep(Variant::Gaussian, true)?),
            MethodKind::DeepGaussianSweep => {
                let dims = p.dims.clone().unwrap_or_default();
                if p.dims.is_some() && dims.is_empty() {
                    return Err(invalid(format!("{path}.dims"), "must not be empty"));
                }
                if dims.contains(&0) {
                    return Err(invalid(format!("{path}.dims"), "dimensions must be >= 1"));
                }
                ResolvedMethod::Sweep {
                    base: deep(Variant::Gaussian, true)?,
                    dims,
                }
            }
            MethodKind::Kgg => {
                let voters = match &p.voters {
                    Some(v) if v.len() == 3 => [v[0].clone(), v[1].clone(), v[2].clone()],
                    Some(v) => {
                        return Err(invalid(format!("{path}.voters"), format!("expected 3 voters, got {}", v.len())))
                    }
                    None => {
                        let first = |kind: MethodKind| {
                            self.methods
                                .iter()
                                .find(|o| o.kind == kind)
                                .map(|o| o.name.clone())
                                .ok_or_else(|| {
                                    invalid(
                                        format!("methods[{i}]"),
                                        format!("kgg requires a {} method", kind.name()),
                                    )
                                })
                        };
                        [
                            first(MethodKind::KmeansX)?,
                            first(MethodKind::GmmX)?,
                            first(MethodKind::DeepGaussianSweep)?,
                        ]
                    }
                };
                ResolvedMethod::Kgg { voters }
            }
        })
    }
}

fn check_name(name: &str, path: &str) -> Result<(), CliError> {
    let ok = !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.')
        && !name.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(invalid(path, format!("{name:?} must be non-empty and use only [A-Za-z0-9_.-]")))
    }
}

fn positive(v: f64, path: &str) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(path, "must be positive"))
    }
}

fn non_negative(v: f64, path: &str) -> Result<(), CliError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(path, "must be >= 0"))
    }
}
