//! Joint fine-tuning of a pretrained autoencoder with a KL clustering loss.
//!
//! Two soft-assignment families are supported:
//!
//! * [`Variant::StudentT`]: `s_ij ∝ (1 + ||z_i - mu_j||²)^-1`, the DEC/IDEC
//!   kernel with one degree of freedom. Centres are trained by gradient.
//! * [`Variant::Gaussian`]: `s_ij ∝ pi_j N(z_i; mu_j, Sigma_j)`. Mixture
//!   parameters are refreshed by one EM step on the current embedding at each
//!   target refresh and held fixed in between.
//!
//! Both use the same sharpened target `t_ij ∝ s_ij² / f_j`, `f_j = Σ_i s_ij`,
//! recomputed every `target_update_interval` epochs and frozen between
//! refreshes. The objective per mini-batch is
//! `recon + gamma * mean_i KL(t_i || s_i)`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autoencoder::{
    adam_update, reconstruction_grad, reconstruction_loss, Activation, AutoencoderModel, Gradients,
    ModelError, TrainConfig,
};
use crate::labels::LabelVector;
use crate::seed;
use crate::serde_arrays;
use crate::traditional::{
    argmax_rows, gmm_fit, gmm_m_step, kmeans_fit, nearest_centroid, ClusterError, CovarianceType,
    GaussianComponents, GmmConfig, KMeansConfig,
};

/// Floor applied to soft assignments so `log s` stays finite.
const MIN_ASSIGNMENT: f64 = f64::MIN_POSITIVE;

#[derive(Debug, Error)]
pub enum DeepClusterError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("clustering loss became non-finite at epoch {0}")]
    NonFiniteLoss(usize),
    #[error("invalid soft assignment: {0}")]
    InvalidAssignment(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    StudentT,
    Gaussian,
}

/// Cluster parameters in embedding space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    #[serde(with = "serde_arrays::matrix")]
    pub mu: Array2<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_matrix_list")]
    pub sigma: Option<Vec<Array2<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_vector")]
    pub pi: Option<Array1<f64>>,
}

mod opt_matrix_list {
    use ndarray::Array2;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<Array2<f64>>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(ms) => crate::serde_arrays::matrix_list::serialize(ms, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<Array2<f64>>>, D::Error> {
        let raw = Option::<Vec<Vec<Vec<f64>>>>::deserialize(d)?;
        raw.map(|all| {
            all.into_iter()
                .map(|rows| crate::serde_arrays::matrix::from_rows(rows).map_err(serde::de::Error::custom))
                .collect()
        })
        .transpose()
    }
}

mod opt_vector {
    use ndarray::Array1;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Array1<f64>>, s: S) -> Result<S::Ok, S::Error> {
        v.as_ref().map(|a| a.to_vec()).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Array1<f64>>, D::Error> {
        Ok(Option::<Vec<f64>>::deserialize(d)?.map(Array1::from))
    }
}

impl ClusterParams {
    pub fn k(&self) -> usize {
        self.mu.nrows()
    }

    pub fn dim(&self) -> usize {
        self.mu.ncols()
    }

    fn gaussian_components(&self) -> Result<GaussianComponents, DeepClusterError> {
        let (sigma, pi) = match (&self.sigma, &self.pi) {
            (Some(s), Some(p)) => (s, p),
            _ => {
                return Err(DeepClusterError::InvalidConfig(
                    "Gaussian assignment needs sigma and pi".into(),
                ))
            }
        };
        Ok(GaussianComponents::new(pi.view(), self.mu.view(), sigma)?)
    }
}

/// Row-stochastic cluster membership matrix (`M x K`).
#[derive(Debug, Clone, PartialEq)]
pub struct SoftAssignment(Array2<f64>);

impl SoftAssignment {
    /// Validates entries in `[0, 1]` and rows summing to 1 within 1e-9.
    pub fn new(m: Array2<f64>) -> Result<Self, DeepClusterError> {
        for (i, row) in m.rows().into_iter().enumerate() {
            if row.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(DeepClusterError::InvalidAssignment(format!("row {i} has entries outside [0, 1]")));
            }
            let s = row.sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(DeepClusterError::InvalidAssignment(format!("row {i} sums to {s}")));
            }
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> Array2<f64> {
        self.0
    }

    pub fn rows(&self, idx: &[usize]) -> SoftAssignment {
        SoftAssignment(self.0.select(Axis(0), idx))
    }

    /// Per-row argmax, ties to the lowest index.
    pub fn labels(&self) -> Vec<usize> {
        argmax_rows(self.0.view())
    }
}

fn check_dim(z: ArrayView2<f64>, params: &ClusterParams) -> Result<(), DeepClusterError> {
    if z.ncols() != params.dim() {
        return Err(DeepClusterError::DimensionMismatch(format!(
            "embedding has {} columns, centres have {}",
            z.ncols(),
            params.dim()
        )));
    }
    Ok(())
}

fn normalize_rows(mut m: Array2<f64>) -> Array2<f64> {
    for mut row in m.rows_mut() {
        let s = row.sum();
        row.mapv_inplace(|v| (v / s).max(MIN_ASSIGNMENT));
    }
    m
}

/// Initial cluster parameters from the pretrained embedding: k-means centres
/// for Student-t, a full-covariance GMM for the Gaussian variant.
pub fn init_clusters(
    z: ArrayView2<f64>,
    k: usize,
    variant: Variant,
    seed: u64,
    reg_covar: f64,
) -> Result<ClusterParams, DeepClusterError> {
    match variant {
        Variant::StudentT => {
            let km = kmeans_fit(z, k, seed, &KMeansConfig::default())?;
            Ok(ClusterParams {
                mu: km.centroids,
                sigma: None,
                pi: None,
            })
        }
        Variant::Gaussian => {
            let cfg = GmmConfig {
                reg_covar,
                ..GmmConfig::default()
            };
            let g = gmm_fit(z, k, seed, &cfg)?;
            Ok(ClusterParams {
                mu: g.means,
                sigma: Some(g.covariances),
                pi: Some(g.weights),
            })
        }
    }
}

/// Unnormalised Student-t kernel `(1 + ||z_i - mu_j||²)^-1`.
fn student_t_kernel(z: ArrayView2<f64>, mu: ArrayView2<f64>) -> Array2<f64> {
    Array2::from_shape_fn((z.nrows(), mu.nrows()), |(i, j)| {
        let d2: f64 = z.row(i).iter().zip(mu.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
        1.0 / (1.0 + d2)
    })
}

pub fn soft_assign_student_t(z: ArrayView2<f64>, params: &ClusterParams) -> Result<SoftAssignment, DeepClusterError> {
    check_dim(z, params)?;
    Ok(SoftAssignment(normalize_rows(student_t_kernel(z, params.mu.view()))))
}

/// Posterior responsibilities under the mixture, via log-sum-exp.
pub fn soft_assign_gaussian(z: ArrayView2<f64>, params: &ClusterParams) -> Result<SoftAssignment, DeepClusterError> {
    check_dim(z, params)?;
    let (resp, _) = params.gaussian_components()?.responsibilities(z)?;
    Ok(SoftAssignment(resp.mapv(|v| v.max(MIN_ASSIGNMENT))))
}

pub fn soft_assign(z: ArrayView2<f64>, params: &ClusterParams, variant: Variant) -> Result<SoftAssignment, DeepClusterError> {
    match variant {
        Variant::StudentT => soft_assign_student_t(z, params),
        Variant::Gaussian => soft_assign_gaussian(z, params),
    }
}

/// Sharpened, frequency-normalised target `t_ij ∝ s_ij² / f_j`.
pub fn target_distribution(s: &SoftAssignment) -> SoftAssignment {
    let f = s.0.sum_axis(Axis(0));
    let mut t = s.0.clone();
    for mut row in t.rows_mut() {
        for (v, fj) in row.iter_mut().zip(f.iter()) {
            *v = *v * *v / fj;
        }
        let norm = row.sum();
        row.mapv_inplace(|v| v / norm);
    }
    SoftAssignment(t)
}

/// `Σ_ij t_ij ln(t_ij / s_ij)`, with `0 ln 0 = 0`.
pub fn kl_loss(t: &SoftAssignment, s: &SoftAssignment) -> f64 {
    t.0.iter()
        .zip(s.0.iter())
        .map(|(&tv, &sv)| if tv > 0.0 { tv * (tv / sv).ln() } else { 0.0 })
        .sum()
}

/// `recon + gamma * KL / M`.
pub fn joint_loss(
    x: ArrayView2<f64>,
    xhat: ArrayView2<f64>,
    t: &SoftAssignment,
    s: &SoftAssignment,
    gamma: f64,
) -> Result<f64, DeepClusterError> {
    let recon = reconstruction_loss(x, xhat)?;
    if gamma == 0.0 {
        return Ok(recon);
    }
    let m = t.0.nrows().max(1) as f64;
    Ok(recon + gamma * kl_loss(t, s) / m)
}

/// Gradients of `mean_i KL(t_i || s_i)` with respect to Z and the centres.
///
/// With `s_ij = k_ij / Σ_l k_il`, `∂KL/∂ln k_ij = -(t_ij - s_ij)/M`; the
/// variants differ only in `∂ln k_ij/∂z_i`: `-2 (z_i - mu_j) / (1 + d²)` for
/// Student-t and `-Sigma_j^{-1} (z_i - mu_j)` for the Gaussian.
pub fn clustering_loss_gradients(
    z: ArrayView2<f64>,
    t: &SoftAssignment,
    params: &ClusterParams,
    variant: Variant,
) -> Result<(f64, Array2<f64>, Array2<f64>), DeepClusterError> {
    check_dim(z, params)?;
    if t.0.dim() != (z.nrows(), params.k()) {
        return Err(DeepClusterError::DimensionMismatch(format!(
            "target is {:?}, expected {:?}",
            t.0.dim(),
            (z.nrows(), params.k())
        )));
    }
    let m = z.nrows().max(1) as f64;
    let s = soft_assign(z, params, variant)?;
    let kl = kl_loss(t, &s) / m;
    let mut dz = Array2::<f64>::zeros(z.dim());
    let mut dmu = Array2::<f64>::zeros(params.mu.dim());
    let gaussian = match variant {
        Variant::Gaussian => Some(params.gaussian_components()?),
        Variant::StudentT => None,
    };
    for i in 0..z.nrows() {
        for j in 0..params.k() {
            let coeff = (t.0[[i, j]] - s.0[[i, j]]) / m;
            if coeff == 0.0 {
                continue;
            }
            let diff = &z.row(i) - &params.mu.row(j);
            let direction: Array1<f64> = match &gaussian {
                None => {
                    let d2 = diff.dot(&diff);
                    diff * (2.0 / (1.0 + d2))
                }
                Some(c) => c.precision_times(j, diff.view()),
            };
            dz.row_mut(i).scaled_add(coeff, &direction);
            dmu.row_mut(j).scaled_add(-coeff, &direction);
        }
    }
    Ok((kl, dz, dmu))
}

/// Joint objective value and its gradients on one batch.
#[derive(Debug, Clone)]
pub struct JointGradients {
    pub loss: f64,
    pub recon: f64,
    pub kl: f64,
    pub model: Gradients,
    pub mu: Array2<f64>,
}

/// Evaluate the joint objective on `x` with a fixed target `t` and
/// backpropagate through decoder and encoder.
///
/// When `reconstruction` is false the objective is `gamma * KL` alone and
/// decoder gradients are zero.
pub fn joint_loss_gradients(
    model: &AutoencoderModel,
    x: ArrayView2<f64>,
    t: &SoftAssignment,
    params: &ClusterParams,
    variant: Variant,
    gamma: f64,
    reconstruction: bool,
) -> Result<JointGradients, DeepClusterError> {
    let (z, xhat, cache) = model.forward(x)?;
    let recon = reconstruction_loss(x, xhat.view())?;
    let (kl, dz, dmu) = clustering_loss_gradients(z.view(), t, params, variant)?;
    let d_xhat = if reconstruction {
        reconstruction_grad(x, xhat.view())
    } else {
        Array2::zeros(xhat.dim())
    };
    let dz = dz * gamma;
    let grads = model.backward(&cache, d_xhat.view(), Some(dz.view()))?;
    let loss = if reconstruction { recon } else { 0.0 } + gamma * kl;
    Ok(JointGradients {
        loss,
        recon,
        kl,
        model: grads,
        mu: dmu * gamma,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepClusterConfig {
    pub variant: Variant,
    /// Weight of the clustering loss. Zero reduces to hybrid clustering.
    pub gamma: f64,
    pub embed_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub finetune_epochs: usize,
    pub target_update_interval: usize,
    /// Include the reconstruction term (IDEC-style). DEC-style training
    /// drops it and only the encoder is updated.
    pub reconstruction: bool,
    pub reg_covar: f64,
    /// Optimiser settings shared by pretraining and fine-tuning; `epochs` is
    /// the pretraining length.
    pub train: TrainConfig,
}

impl Default for DeepClusterConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Gaussian,
            gamma: 0.1,
            embed_dim: 10,
            hidden: vec![500, 500, 2000],
            activation: Activation::Relu,
            finetune_epochs: 100,
            target_update_interval: 10,
            reconstruction: true,
            reg_covar: 1e-6,
            train: TrainConfig::default(),
        }
    }
}

impl DeepClusterConfig {
    pub fn validate(&self) -> Result<(), DeepClusterError> {
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(DeepClusterError::InvalidConfig(format!("gamma {} must be >= 0", self.gamma)));
        }
        if self.target_update_interval == 0 {
            return Err(DeepClusterError::InvalidConfig("target_update_interval must be >= 1".into()));
        }
        if !(self.reg_covar > 0.0) {
            return Err(DeepClusterError::InvalidConfig("reg_covar must be positive".into()));
        }
        self.train.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinetuneRecord {
    pub epoch: usize,
    pub recon_loss: f64,
    pub kl_loss: f64,
    pub joint_loss: f64,
}

/// A cluster whose soft mass fell below one sample; its centre was reseeded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterCollapse {
    pub epoch: usize,
    pub cluster: usize,
    pub mass: f64,
    pub reseeded_at: usize,
}

#[derive(Debug, Clone)]
pub struct DeepClusterModel {
    pub autoencoder: AutoencoderModel,
    pub params: ClusterParams,
    pub variant: Variant,
    pub history: Vec<FinetuneRecord>,
    pub collapses: Vec<ClusterCollapse>,
}

impl DeepClusterModel {
    pub fn k(&self) -> usize {
        self.params.k()
    }

    pub fn embed(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, DeepClusterError> {
        Ok(self.autoencoder.encode(x)?)
    }

    pub fn soft_assign(&self, x: ArrayView2<f64>) -> Result<SoftAssignment, DeepClusterError> {
        soft_assign(self.embed(x)?.view(), &self.params, self.variant)
    }

    /// Hard labels: argmax of the soft assignment, ties to the lowest index.
    pub fn assign(&self, x: ArrayView2<f64>) -> Result<LabelVector, DeepClusterError> {
        let z = self.embed(x)?;
        assign_embedding(z.view(), &self.params, self.variant)
    }
}

/// Argmax of the variant's soft assignment for already-embedded points.
///
/// For Student-t the kernel is strictly decreasing in distance, so the argmax
/// is taken on the squared distance itself, which avoids rounding ties.
pub fn assign_embedding(
    z: ArrayView2<f64>,
    params: &ClusterParams,
    variant: Variant,
) -> Result<LabelVector, DeepClusterError> {
    check_dim(z, params)?;
    let labels = match variant {
        Variant::StudentT => z
            .rows()
            .into_iter()
            .map(|r| nearest_centroid(r, params.mu.view()).0)
            .collect(),
        Variant::Gaussian => {
            let (resp, _) = params.gaussian_components()?.responsibilities(z)?;
            argmax_rows(resp.view())
        }
    };
    Ok(LabelVector::new(labels, params.k()).expect("argmax is in range"))
}

fn em_refresh(z: ArrayView2<f64>, params: &ClusterParams, reg_covar: f64) -> Result<ClusterParams, DeepClusterError> {
    let (resp, _) = params.gaussian_components()?.responsibilities(z)?;
    let (pi, mu, sigma) = gmm_m_step(z, resp.view(), CovarianceType::Full, reg_covar);
    Ok(ClusterParams {
        mu,
        sigma: Some(sigma),
        pi: Some(pi),
    })
}

fn covariance(z: ArrayView2<f64>, reg_covar: f64) -> Array2<f64> {
    let mean = z.mean_axis(Axis(0)).expect("non-empty");
    let centred = &z - &mean;
    let mut c = centred.t().dot(&centred) / z.nrows() as f64;
    c.diag_mut().mapv_inplace(|v| v + reg_covar);
    c
}

/// Reseed every cluster whose soft mass is under one sample at the point
/// with the lowest maximum responsibility.
fn handle_collapse(
    epoch: usize,
    z: ArrayView2<f64>,
    s: &SoftAssignment,
    params: &mut ClusterParams,
    reg_covar: f64,
    events: &mut Vec<ClusterCollapse>,
) -> bool {
    let mass = s.0.sum_axis(Axis(0));
    let mut used: Vec<usize> = Vec::new();
    for j in 0..params.k() {
        if mass[j] >= 1.0 {
            continue;
        }
        let max_resp: Vec<f64> = s.0.rows().into_iter().map(|r| r.fold(0.0, |a: f64, &b| a.max(b))).collect();
        let Some(point) = (0..z.nrows())
            .filter(|i| !used.contains(i))
            .min_by(|&a, &b| max_resp[a].total_cmp(&max_resp[b]).then(a.cmp(&b)))
        else {
            continue;
        };
        used.push(point);
        params.mu.row_mut(j).assign(&z.row(point));
        if let (Some(sigma), Some(pi)) = (params.sigma.as_mut(), params.pi.as_mut()) {
            sigma[j] = covariance(z, reg_covar);
            pi[j] = 1.0 / pi.len() as f64;
            let total = pi.sum();
            pi.mapv_inplace(|v| v / total);
        }
        events.push(ClusterCollapse {
            epoch,
            cluster: j,
            mass: mass[j],
            reseeded_at: point,
        });
    }
    !used.is_empty()
}

fn epoch_record(
    epoch: usize,
    model: &AutoencoderModel,
    x: ArrayView2<f64>,
    t: &SoftAssignment,
    params: &ClusterParams,
    config: &DeepClusterConfig,
) -> Result<FinetuneRecord, DeepClusterError> {
    let (z, xhat, _) = model.forward(x)?;
    let s = soft_assign(z.view(), params, config.variant)?;
    let recon = reconstruction_loss(x, xhat.view())?;
    let kl = kl_loss(t, &s) / x.nrows() as f64;
    let joint = if config.reconstruction { recon } else { 0.0 } + config.gamma * kl;
    Ok(FinetuneRecord {
        epoch,
        recon_loss: recon,
        kl_loss: kl,
        joint_loss: joint,
    })
}

/// Fine-tune a pretrained autoencoder jointly with cluster parameters.
///
/// `gamma == 0` skips fine-tuning entirely: the result is the hybrid
/// baseline (k-means or GMM on the pretrained embedding with the same seed).
pub fn finetune(
    mut model: AutoencoderModel,
    x: ArrayView2<f64>,
    k: usize,
    config: &DeepClusterConfig,
) -> Result<DeepClusterModel, DeepClusterError> {
    config.validate()?;
    let train = &config.train;
    let z = model.encode(x)?;
    let mut params = init_clusters(z.view(), k, config.variant, train.seed, config.reg_covar)?;
    let mut history = Vec::new();
    let mut collapses = Vec::new();
    if config.gamma == 0.0 || config.finetune_epochs == 0 {
        return Ok(DeepClusterModel {
            autoencoder: model,
            params,
            variant: config.variant,
            history,
            collapses,
        });
    }

    model.reset_optimizer();
    let mut mu_m = Array2::<f64>::zeros(params.mu.dim());
    let mut mu_v = Array2::<f64>::zeros(params.mu.dim());
    let mut mu_step = 0u64;
    let mut rng = seed::rng(seed::derive_seed(train.seed, 0xF1E7));
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let mut target = None;

    for epoch in 0..config.finetune_epochs {
        if epoch % config.target_update_interval == 0 {
            let z = model.encode(x)?;
            if epoch > 0 && config.variant == Variant::Gaussian {
                params = em_refresh(z.view(), &params, config.reg_covar)?;
            }
            let mut s = soft_assign(z.view(), &params, config.variant)?;
            if handle_collapse(epoch, z.view(), &s, &mut params, config.reg_covar, &mut collapses) {
                s = soft_assign(z.view(), &params, config.variant)?;
            }
            target = Some(target_distribution(&s));
        }
        let t = target.as_ref().expect("refreshed at epoch 0");

        order.shuffle(&mut rng);
        for chunk in order.chunks(train.batch_size) {
            let batch = x.select(Axis(0), chunk);
            let t_batch = t.rows(chunk);
            let g = joint_loss_gradients(
                &model,
                batch.view(),
                &t_batch,
                &params,
                config.variant,
                config.gamma,
                config.reconstruction,
            )?;
            model.adam_step(&g.model, train)?;
            if config.variant == Variant::StudentT {
                mu_step += 1;
                adam_update(&mut params.mu, &g.mu, &mut mu_m, &mut mu_v, mu_step, train);
            }
        }

        let rec = epoch_record(epoch, &model, x, t, &params, config)?;
        if !rec.joint_loss.is_finite() || !model.all_finite() || params.mu.iter().any(|v| !v.is_finite()) {
            return Err(DeepClusterError::NonFiniteLoss(epoch));
        }
        history.push(rec);
    }

    if config.variant == Variant::Gaussian {
        let z = model.encode(x)?;
        params = em_refresh(z.view(), &params, config.reg_covar)?;
    }
    Ok(DeepClusterModel {
        autoencoder: model,
        params,
        variant: config.variant,
        history,
        collapses,
    })
}

/// Pretrain a fresh autoencoder on `x`, then fine-tune it.
pub fn pretrain_and_finetune(
    x: ArrayView2<f64>,
    k: usize,
    config: &DeepClusterConfig,
) -> Result<(DeepClusterModel, Vec<f64>), DeepClusterError> {
    config.validate()?;
    let mut model = AutoencoderModel::build(
        x.ncols(),
        config.embed_dim,
        &config.hidden,
        config.activation,
        config.train.seed,
    )?;
    let pretrain_history = model.pretrain(x, &config.train)?;
    let dcm = finetune(model, x, k, config)?;
    Ok((dcm, pretrain_history))
}

/// Row `i` of `z` as a view, for callers working sample by sample.
pub fn row(z: &Array2<f64>, i: usize) -> ArrayView1<'_, f64> {
    z.row(i)
}
