//! K-means and Gaussian mixture clustering on raw features or embeddings.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::LabelVector;
use crate::linalg;
use crate::seed;
use crate::serde_arrays;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("dimension mismatch: expected {expected} columns, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("covariance of component {0} is not positive definite")]
    SingularCovariance(usize),
}

fn check_input(x: ArrayView2<f64>, k: usize, strict: bool) -> Result<(), ClusterError> {
    if k < 2 {
        return Err(ClusterError::DegenerateInput(format!("k = {k}, need k >= 2")));
    }
    let n = x.nrows();
    if n < k || (strict && n == k) {
        return Err(ClusterError::DegenerateInput(format!(
            "{n} samples for k = {k}"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ClusterError::DegenerateInput("non-finite input".into()));
    }
    Ok(())
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid by squared Euclidean distance; ties go to the lowest index.
pub fn nearest_centroid(point: ArrayView1<f64>, centroids: ArrayView2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansConfig {
    pub n_init: usize,
    pub max_iter: usize,
    /// Convergence threshold on the summed squared centroid shift.
    pub tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            n_init: 10,
            max_iter: 300,
            tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansModel {
    #[serde(with = "serde_arrays::matrix")]
    pub centroids: Array2<f64>,
    /// Sum of squared distances to the nearest final centroid.
    pub inertia: f64,
    pub n_iter: usize,
    /// Assignment-step inertia of every Lloyd iteration of the winning restart.
    pub inertia_history: Vec<f64>,
}

impl KMeansModel {
    pub fn k(&self) -> usize {
        self.centroids.nrows()
    }
}

/// Lloyd's algorithm with k-means++ seeding, best of `n_init` restarts.
///
/// Restart `r` is seeded from `(seed, r)` only. Empty clusters are reseeded
/// at the point farthest from its assigned centroid.
pub fn kmeans_fit(
    x: ArrayView2<f64>,
    k: usize,
    seed: u64,
    config: &KMeansConfig,
) -> Result<KMeansModel, ClusterError> {
    check_input(x, k, false)?;
    let mut best: Option<KMeansModel> = None;
    for restart in 0..config.n_init.max(1) {
        let mut rng = seed::rng(seed::derive_seed(seed, restart as u64));
        let init = kmeans_plus_plus(x, k, &mut rng);
        let model = lloyd(x, init, config);
        if best.as_ref().is_none_or(|b| model.inertia < b.inertia) {
            best = Some(model);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn kmeans_plus_plus(x: ArrayView2<f64>, k: usize, rng: &mut impl Rng) -> Array2<f64> {
    let n = x.nrows();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut dist: Vec<f64> = x.rows().into_iter().map(|r| sq_dist(r, x.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 && total.is_finite() {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &d) in dist.iter().enumerate() {
                if d > 0.0 {
                    pick = Some(i);
                    if target < d {
                        break;
                    }
                    target -= d;
                }
            }
            pick.expect("positive total implies a positive weight")
        } else {
            // every remaining point coincides with a centre
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, row) in x.rows().into_iter().enumerate() {
            dist[i] = dist[i].min(sq_dist(row, x.row(next)));
        }
    }
    x.select(Axis(0), &chosen)
}

fn assign(x: ArrayView2<f64>, centroids: ArrayView2<f64>) -> (Vec<usize>, Vec<f64>) {
    x.rows().into_iter().map(|r| nearest_centroid(r, centroids)).unzip()
}

fn lloyd(x: ArrayView2<f64>, mut centroids: Array2<f64>, config: &KMeansConfig) -> KMeansModel {
    let (k, d) = centroids.dim();
    let mut history = Vec::new();
    let mut n_iter = 0;
    for _ in 0..config.max_iter {
        let (labels, dists) = assign(x, centroids.view());
        history.push(dists.iter().sum());
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (row, &l) in x.rows().into_iter().zip(&labels) {
            sums.row_mut(l).scaled_add(1.0, &row);
            counts[l] += 1;
        }
        let mut updated = centroids.clone();
        let mut taken: Vec<usize> = Vec::new();
        for c in 0..k {
            if counts[c] > 0 {
                let mean = &sums.row(c) / counts[c] as f64;
                updated.row_mut(c).assign(&mean);
            } else {
                let far = (0..x.nrows())
                    .filter(|i| !taken.contains(i))
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .expect("n >= k");
                taken.push(far);
                updated.row_mut(c).assign(&x.row(far));
            }
        }
        let shift: f64 = (&updated - &centroids).iter().map(|v| v * v).sum();
        centroids = updated;
        n_iter += 1;
        if shift <= config.tol {
            break;
        }
    }
    let (_, dists) = assign(x, centroids.view());
    let inertia = dists.iter().sum();
    history.push(inertia);
    KMeansModel {
        centroids,
        inertia,
        n_iter,
        inertia_history: history,
    }
}

pub fn kmeans_predict(model: &KMeansModel, x: ArrayView2<f64>) -> Result<LabelVector, ClusterError> {
    let expected = model.centroids.ncols();
    if x.ncols() != expected {
        return Err(ClusterError::DimensionMismatch {
            expected,
            found: x.ncols(),
        });
    }
    let (labels, _) = assign(x, model.centroids.view());
    Ok(LabelVector::new(labels, model.k()).expect("nearest centroid is in range"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceType {
    Diagonal,
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmConfig {
    pub cov_type: CovarianceType,
    pub max_iter: usize,
    /// Stop once the mean log-likelihood improves by less than this.
    pub tol: f64,
    pub reg_covar: f64,
    /// Restarts of the k-means initialisation feeding EM.
    pub kmeans: KMeansConfig,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            cov_type: CovarianceType::Full,
            max_iter: 300,
            tol: 1e-3,
            reg_covar: 1e-6,
            kmeans: KMeansConfig::default(),
        }
    }
}

/// Fitted mixture. Covariances are stored as full `d x d` matrices; the
/// diagonal type simply keeps off-diagonal entries at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    #[serde(with = "serde_arrays::vector")]
    pub weights: Array1<f64>,
    #[serde(with = "serde_arrays::matrix")]
    pub means: Array2<f64>,
    #[serde(with = "serde_arrays::matrix_list")]
    pub covariances: Vec<Array2<f64>>,
    pub cov_type: CovarianceType,
    /// Mean per-sample log-likelihood of the parameters at each iteration.
    pub log_likelihood_history: Vec<f64>,
    pub n_iter: usize,
    pub converged: bool,
}

/// Precomputed Cholesky factors for evaluating Gaussian mixture posteriors.
#[derive(Debug, Clone)]
pub struct GaussianComponents {
    log_weights: Vec<f64>,
    means: Array2<f64>,
    chol: Vec<Array2<f64>>,
    log_norm: Vec<f64>,
}

impl GaussianComponents {
    pub fn new(
        weights: ArrayView1<f64>,
        means: ArrayView2<f64>,
        covariances: &[Array2<f64>],
    ) -> Result<Self, ClusterError> {
        let d = means.ncols() as f64;
        let mut chol = Vec::with_capacity(covariances.len());
        let mut log_norm = Vec::with_capacity(covariances.len());
        for (j, cov) in covariances.iter().enumerate() {
            let l = linalg::cholesky(cov.view()).ok_or(ClusterError::SingularCovariance(j))?;
            log_norm.push(-0.5 * (d * (2.0 * std::f64::consts::PI).ln() + linalg::log_det_from_cholesky(l.view())));
            chol.push(l);
        }
        Ok(Self {
            log_weights: weights.iter().map(|w| w.ln()).collect(),
            means: means.to_owned(),
            chol,
            log_norm,
        })
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    /// `log pi_j + log N(x_i; mu_j, Sigma_j)` for every sample and component.
    pub fn log_joint(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, ClusterError> {
        if x.ncols() != self.dim() {
            return Err(ClusterError::DimensionMismatch {
                expected: self.dim(),
                found: x.ncols(),
            });
        }
        let k = self.log_weights.len();
        let mut out = Array2::<f64>::zeros((x.nrows(), k));
        for j in 0..k {
            let mu = self.means.row(j);
            for (i, row) in x.rows().into_iter().enumerate() {
                let diff = &row - &mu;
                let y = linalg::solve_lower(self.chol[j].view(), diff.view());
                out[[i, j]] = self.log_weights[j] + self.log_norm[j] - 0.5 * y.dot(&y);
            }
        }
        Ok(out)
    }

    /// Posterior responsibilities and the per-sample log-likelihoods.
    pub fn responsibilities(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>), ClusterError> {
        let mut lj = self.log_joint(x)?;
        let mut ll = Array1::<f64>::zeros(x.nrows());
        for (i, mut row) in lj.rows_mut().into_iter().enumerate() {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            ll[i] = lse;
            row.mapv_inplace(|v| (v - lse).exp());
        }
        Ok((lj, ll))
    }

    /// Solve `Sigma_j^{-1} v`.
    pub fn precision_times(&self, j: usize, v: ArrayView1<f64>) -> Array1<f64> {
        let y = linalg::solve_lower(self.chol[j].view(), v);
        linalg::solve_upper_transposed(self.chol[j].view(), y.view())
    }
}

/// First index of the row maximum.
pub fn argmax_rows(m: ArrayView2<f64>) -> Vec<usize> {
    m.rows()
        .into_iter()
        .map(|r| {
            let mut best = 0;
            for (j, &v) in r.iter().enumerate() {
                if v > r[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Closed-form M-step: mixing weights, means and regularised covariances.
pub fn gmm_m_step(
    x: ArrayView2<f64>,
    resp: ArrayView2<f64>,
    cov_type: CovarianceType,
    reg_covar: f64,
) -> (Array1<f64>, Array2<f64>, Vec<Array2<f64>>) {
    let (n, d) = x.dim();
    let k = resp.ncols();
    let nk: Array1<f64> = resp.sum_axis(Axis(0)).mapv(|v| v + 10.0 * f64::EPSILON);
    let weights = &nk / nk.sum();
    let means = resp.t().dot(&x) / &nk.view().insert_axis(Axis(1));
    let mut covariances = Vec::with_capacity(k);
    for j in 0..k {
        let mut cov = Array2::<f64>::zeros((d, d));
        let mu = means.row(j);
        for i in 0..n {
            let r = resp[[i, j]];
            if r == 0.0 {
                continue;
            }
            let diff = &x.row(i) - &mu;
            match cov_type {
                CovarianceType::Full => {
                    for a in 0..d {
                        let ra = r * diff[a];
                        for b in 0..=a {
                            cov[[a, b]] += ra * diff[b];
                        }
                    }
                }
                CovarianceType::Diagonal => {
                    for a in 0..d {
                        cov[[a, a]] += r * diff[a] * diff[a];
                    }
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                cov[[b, a]] = cov[[a, b]];
            }
        }
        cov /= nk[j];
        for a in 0..d {
            cov[[a, a]] += reg_covar;
        }
        covariances.push(cov);
    }
    (weights, means, covariances)
}

/// EM for a Gaussian mixture, initialised from k-means hard assignments.
pub fn gmm_fit(
    x: ArrayView2<f64>,
    k: usize,
    seed: u64,
    config: &GmmConfig,
) -> Result<GmmModel, ClusterError> {
    check_input(x, k, true)?;
    if !(config.reg_covar > 0.0) {
        return Err(ClusterError::DegenerateInput("reg_covar must be positive".into()));
    }
    let km = kmeans_fit(x, k, seed, &config.kmeans)?;
    let hard = kmeans_predict(&km, x)?;
    let mut resp = Array2::<f64>::zeros((x.nrows(), k));
    for (i, &l) in hard.as_slice().iter().enumerate() {
        resp[[i, l]] = 1.0;
    }
    let (mut weights, mut means, mut covariances) =
        gmm_m_step(x, resp.view(), config.cov_type, config.reg_covar);

    let mut history = Vec::new();
    let mut converged = false;
    let mut n_iter = 0;
    loop {
        let comps = GaussianComponents::new(weights.view(), means.view(), &covariances)?;
        let (r, ll) = comps.responsibilities(x)?;
        let mean_ll = ll.mean().expect("n > k");
        if let Some(&prev) = history.last() {
            if mean_ll - prev < config.tol {
                converged = true;
            }
        }
        history.push(mean_ll);
        if converged || n_iter >= config.max_iter {
            break;
        }
        (weights, means, covariances) = gmm_m_step(x, r.view(), config.cov_type, config.reg_covar);
        n_iter += 1;
    }
    Ok(GmmModel {
        weights,
        means,
        covariances,
        cov_type: config.cov_type,
        log_likelihood_history: history,
        n_iter,
        converged,
    })
}

impl GmmModel {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn components(&self) -> Result<GaussianComponents, ClusterError> {
        GaussianComponents::new(self.weights.view(), self.means.view(), &self.covariances)
    }
}

/// Posterior responsibilities and their argmax labels (ties to lowest index).
pub fn gmm_predict(
    model: &GmmModel,
    x: ArrayView2<f64>,
) -> Result<(LabelVector, Array2<f64>), ClusterError> {
    let (resp, _) = model.components()?.responsibilities(x)?;
    let labels = argmax_rows(resp.view());
    Ok((
        LabelVector::new(labels, model.k()).expect("argmax is in range"),
        resp,
    ))
}
