//! Shared fixtures for the benchmarks.

use ndarray::Array2;
use tabclust_core::data::{generate_synthetic, standardize, ClusterShape, SyntheticSpec};
use tabclust_core::labels::LabelVector;

/// Standardized two-class cohort with its labels.
pub fn cohort(n_samples: usize, n_features: usize, seed: u64) -> (Array2<f64>, LabelVector) {
    let ds = generate_synthetic(&SyntheticSpec {
        n_samples,
        n_features,
        class_ratio: 1.0 / 1.9,
        separation: 2.75,
        cluster_shape: ClusterShape::Correlated,
        missing_rate: 0.0,
        seed,
    })
    .expect("valid spec");
    let labels = LabelVector::from_labels(ds.labels().expect("synthetic labels").to_vec());
    let (ds, _) = standardize(&ds).expect("no missing cells");
    (ds.x().clone(), labels)
}

/// Labels of `truth` with every `period`-th entry flipped.
pub fn noisy(truth: &LabelVector, period: usize, offset: usize) -> LabelVector {
    let v = truth
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, &l)| if (i + offset) % period == 0 { 1 - l } else { l })
        .collect();
    LabelVector::new(v, 2).expect("binary")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_have_requested_shape() {
        let (x, y) = cohort(100, 5, 1);
        assert_eq!(x.dim(), (100, 5));
        assert_eq!(y.len(), 100);
        assert_eq!(noisy(&y, 10, 0).agreement(&y), 90);
    }
}
