//! Label alignment, the embedding-dimension ensemble and majority voting.
//!
//! Independent clustering runs name their clusters arbitrarily, so every
//! ensemble first relabels each run to agree as much as possible with a
//! reference run. Binary votes are then averaged and thresholded at 0.5
//! inclusive, so exact ties go to label 1.
//!
//! The reference is the medoid run (largest total agreement with the others,
//! ties broken on content), which makes the voted partition independent of
//! run order. The output is finally named to match the first run; when every
//! run already agrees with the first on most samples this is the same as
//! aligning everything to the first run.

use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use thiserror::Error;

use crate::deepcluster::{pretrain_and_finetune, DeepClusterConfig, DeepClusterError, DeepClusterModel, Variant};
pub use crate::labels::{LabelError, LabelMatrix, LabelVector};
use crate::metrics::hungarian_max;
use crate::seed;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("label vectors have {0} and {1} samples")]
    LengthMismatch(usize, usize),
    #[error("ensembles need binary labels, got k = {0}")]
    UnsupportedK(usize),
    #[error("no runs to ensemble")]
    EmptyRuns,
    #[error("invalid dimension {dim}: {reason}")]
    InvalidDimension { dim: usize, reason: String },
    #[error("training at embedding dimension {dim} failed: {source}")]
    Training {
        dim: usize,
        #[source]
        source: DeepClusterError,
    },
    #[error(transparent)]
    Labels(#[from] LabelError),
}

/// Relabel `candidate` by the permutation maximising agreement with
/// `reference`. Ties go to the lexicographically smallest permutation, so an
/// already-agreeing candidate is returned unchanged.
pub fn align_labels(reference: &LabelVector, candidate: &LabelVector) -> Result<LabelVector, EnsembleError> {
    if reference.len() != candidate.len() {
        return Err(EnsembleError::LengthMismatch(reference.len(), candidate.len()));
    }
    let k = reference.k().max(candidate.k());
    // rows: candidate labels, columns: reference labels
    let mut w = Array2::<f64>::zeros((k, k));
    for (&r, &c) in reference.as_slice().iter().zip(candidate.as_slice()) {
        w[[c, r]] += 1.0;
    }
    let perm = hungarian_max(&w).expect("square by construction");
    let relabeled = candidate.as_slice().iter().map(|&c| perm[c]).collect();
    Ok(LabelVector::new(relabeled, k).expect("permutation stays in range"))
}

fn as_binary(runs: &LabelMatrix) -> Result<Vec<LabelVector>, EnsembleError> {
    if runs.runs().is_empty() {
        return Err(EnsembleError::EmptyRuns);
    }
    if runs.k() > 2 {
        return Err(EnsembleError::UnsupportedK(runs.k()));
    }
    Ok(runs
        .runs()
        .iter()
        .map(|r| LabelVector::new(r.as_slice().to_vec(), 2).expect("k <= 2"))
        .collect())
}

/// Polarity-normalised copy: the first sample always carries label 0.
fn canonical(v: &LabelVector) -> Vec<usize> {
    let flip = v.as_slice().first() == Some(&1);
    v.as_slice().iter().map(|&l| if flip { 1 - l } else { l }).collect()
}

/// Index of the run with the largest total aligned agreement with all runs.
/// Ties go to the smallest canonical label vector, so the choice depends on
/// run contents only, never on their order.
fn medoid(runs: &[LabelVector]) -> usize {
    let n = runs[0].len();
    let score = |r: &LabelVector| -> usize {
        runs.iter()
            .map(|o| {
                let a = r.agreement(o);
                a.max(n - a)
            })
            .sum()
    };
    let scored: Vec<(usize, Vec<usize>)> = runs.iter().map(|r| (score(r), canonical(r))).collect();
    (0..runs.len())
        .min_by(|&a, &b| scored[b].0.cmp(&scored[a].0).then_with(|| scored[a].1.cmp(&scored[b].1)))
        .expect("non-empty")
}

/// Align every run to an order-independent reference, apply `decide` to the
/// per-sample count of ones, then name the result to best match `runs[0]`.
fn vote(runs: &LabelMatrix, decide: impl Fn(usize, usize) -> bool) -> Result<LabelVector, EnsembleError> {
    let binary = as_binary(runs)?;
    let reference = binary[medoid(&binary)].clone();
    let aligned = binary
        .iter()
        .map(|r| align_labels(&reference, r))
        .collect::<Result<Vec<_>, _>>()?;
    let total = aligned.len();
    let labels = (0..reference.len())
        .map(|i| {
            let ones = aligned.iter().filter(|r| r.as_slice()[i] == 1).count();
            usize::from(decide(ones, total))
        })
        .collect();
    let out = LabelVector::new(labels, 2).expect("binary");
    align_labels(&binary[0], &out)
}

/// Average the aligned binary labels per sample and emit 1 iff the mean is
/// at least 0.5.
pub fn dimension_ensemble(runs: &LabelMatrix) -> Result<LabelVector, EnsembleError> {
    vote(runs, |ones, total| 2 * ones >= total)
}

/// Per-sample majority over aligned voters; exact ties resolve to 1.
///
/// For binary labels this is the same decision rule as
/// [`dimension_ensemble`].
pub fn majority_vote(voters: &LabelMatrix) -> Result<LabelVector, EnsembleError> {
    vote(voters, |ones, total| ones >= total - ones)
}

/// `start, start + step, ...` up to and including `end`.
pub fn sweep_dims(start: usize, step: usize, end: usize) -> Vec<usize> {
    assert!(step > 0, "step must be positive");
    (start..=end).step_by(step).collect()
}

/// Seed used for the run at embedding dimension `dim`.
pub fn dimension_seed(base_seed: u64, dim: usize) -> u64 {
    seed::derive_seed(base_seed, dim as u64)
}

#[derive(Debug, Clone)]
pub struct SweepRun {
    pub dim: usize,
    pub seed: u64,
    pub labels: LabelVector,
    pub pretrain_history: Vec<f64>,
    pub model: DeepClusterModel,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub runs: Vec<SweepRun>,
}

impl SweepOutcome {
    /// Labels in sweep order, columns named `d<dim>`.
    pub fn label_matrix(&self) -> Result<LabelMatrix, EnsembleError> {
        let labels = self.runs.iter().map(|r| r.labels.clone()).collect();
        let names = self.runs.iter().map(|r| format!("d{}", r.dim)).collect();
        Ok(LabelMatrix::with_names(labels, names)?)
    }

    pub fn total_seconds(&self) -> f64 {
        self.runs.iter().map(|r| r.seconds).sum()
    }
}

/// Train one Gaussian-variant model per embedding dimension, in parallel.
///
/// Each run gets `embed_dim = d` and a seed derived from the base seed and
/// `d` alone, so results do not depend on scheduling.
pub fn run_dimension_sweep(
    x: ArrayView2<f64>,
    k: usize,
    dims: &[usize],
    base: &DeepClusterConfig,
) -> Result<SweepOutcome, EnsembleError> {
    if dims.is_empty() {
        return Err(EnsembleError::EmptyRuns);
    }
    for &dim in dims {
        if dim == 0 || dim > x.ncols() {
            return Err(EnsembleError::InvalidDimension {
                dim,
                reason: format!("must be in 1..={}", x.ncols()),
            });
        }
    }
    let runs = dims
        .par_iter()
        .map(|&dim| train_at_dim(x, k, dim, base))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SweepOutcome { runs })
}

/// One sweep member: Gaussian variant at embedding dimension `dim`.
pub fn train_at_dim(x: ArrayView2<f64>, k: usize, dim: usize, base: &DeepClusterConfig) -> Result<SweepRun, EnsembleError> {
    let start = Instant::now();
    let seed = dimension_seed(base.train.seed, dim);
    let mut config = base.clone();
    config.variant = Variant::Gaussian;
    config.embed_dim = dim;
    config.train.seed = seed;
    let wrap = |source| EnsembleError::Training { dim, source };
    let (model, pretrain_history) = pretrain_and_finetune(x, k, &config).map_err(wrap)?;
    let labels = model.assign(x).map_err(wrap)?;
    Ok(SweepRun {
        dim,
        seed,
        labels,
        pretrain_history,
        model,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lv(v: &[usize]) -> LabelVector {
        LabelVector::new(v.to_vec(), 2).unwrap()
    }

    fn lm(rows: &[&[usize]]) -> LabelMatrix {
        LabelMatrix::new(rows.iter().map(|r| lv(r)).collect()).unwrap()
    }

    #[test]
    fn align_examples() {
        let r = lv(&[0, 0, 1, 1]);
        assert_eq!(align_labels(&r, &lv(&[1, 1, 0, 0])).unwrap(), r);
        assert_eq!(align_labels(&r, &r).unwrap(), r);
        assert_eq!(align_labels(&r, &lv(&[0, 1, 0, 1])).unwrap(), lv(&[0, 1, 0, 1]));
        assert!(matches!(align_labels(&r, &lv(&[0])), Err(EnsembleError::LengthMismatch(4, 1))));
    }

    #[test]
    fn align_three_clusters() {
        let r = LabelVector::new(vec![0, 0, 1, 1, 2, 2], 3).unwrap();
        let c = LabelVector::new(vec![2, 2, 0, 0, 1, 1], 3).unwrap();
        assert_eq!(align_labels(&r, &c).unwrap(), r);
    }

    #[test]
    fn ensemble_votes() {
        // per-sample votes (1,1,0), (0,0,0), (1,1,1)
        let runs = lm(&[&[1, 0, 1, 0, 0], &[1, 0, 1, 0, 0], &[0, 0, 1, 0, 0]]);
        assert_eq!(dimension_ensemble(&runs).unwrap().as_slice(), &[1, 0, 1, 0, 0]);
        assert_eq!(majority_vote(&runs).unwrap().as_slice(), &[1, 0, 1, 0, 0]);
    }

    #[test]
    fn half_vote_goes_to_one() {
        // aligned, the second run disagrees only on sample 0
        let runs = lm(&[&[0, 0, 0, 1, 1, 1], &[1, 0, 0, 1, 1, 1]]);
        assert_eq!(dimension_ensemble(&runs).unwrap().as_slice(), &[1, 0, 0, 1, 1, 1]);
        assert_eq!(majority_vote(&runs).unwrap().as_slice(), &[1, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn single_and_repeated_runs() {
        let v = lv(&[0, 1, 1, 0, 1]);
        assert_eq!(dimension_ensemble(&lm(&[v.as_slice()])).unwrap(), v);
        assert_eq!(majority_vote(&lm(&[v.as_slice(); 3])).unwrap(), v);
    }

    #[test]
    fn flipped_run_is_aligned_before_voting() {
        let runs = lm(&[&[0, 0, 1, 1], &[1, 1, 0, 0], &[0, 0, 1, 0]]);
        assert_eq!(dimension_ensemble(&runs).unwrap().as_slice(), &[0, 0, 1, 1]);
    }

    #[test]
    fn rejects_multiclass() {
        let runs = LabelMatrix::new(vec![LabelVector::new(vec![0, 1, 2], 3).unwrap()]).unwrap();
        assert!(matches!(dimension_ensemble(&runs), Err(EnsembleError::UnsupportedK(3))));
        assert!(matches!(majority_vote(&runs), Err(EnsembleError::UnsupportedK(3))));
    }

    #[test]
    fn sweep_grid() {
        assert_eq!(sweep_dims(2, 3, 33), vec![2, 5, 8, 11, 14, 17, 20, 23, 26, 29, 32]);
        assert_eq!(sweep_dims(10, 3, 10), vec![10]);
    }

    #[test]
    fn sweep_rejects_bad_dims() {
        let x = Array2::<f64>::zeros((10, 3));
        let cfg = DeepClusterConfig::default();
        assert!(matches!(run_dimension_sweep(x.view(), 2, &[], &cfg), Err(EnsembleError::EmptyRuns)));
        assert!(matches!(
            run_dimension_sweep(x.view(), 2, &[4], &cfg),
            Err(EnsembleError::InvalidDimension { dim: 4, .. })
        ));
    }
}
