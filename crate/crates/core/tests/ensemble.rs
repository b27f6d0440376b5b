use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use tabclust_core::autoencoder::{Activation, TrainConfig};
use tabclust_core::data::{generate_synthetic, standardize, ClusterShape, SyntheticSpec};
use tabclust_core::deepcluster::{DeepClusterConfig, Variant};
use tabclust_core::ensemble::{
    align_labels, dimension_ensemble, majority_vote, run_dimension_sweep, sweep_dims, LabelMatrix, LabelVector,
};
use tabclust_core::metrics::acc;
use tabclust_core::seed;

fn lv(v: Vec<usize>) -> LabelVector {
    LabelVector::new(v, 2).unwrap()
}

fn flip_at(truth: &[usize], idx: impl IntoIterator<Item = usize>) -> Vec<usize> {
    let mut v = truth.to_vec();
    for i in idx {
        v[i] = 1 - v[i];
    }
    v
}

#[test]
fn disjoint_error_voters_give_perfect_ensemble() {
    let truth: Vec<usize> = (0..30).map(|i| usize::from(i % 3 == 0)).collect();
    let voters = vec![
        lv(flip_at(&truth, 0..5)),
        // second voter uses swapped label names
        lv(flip_at(&truth, 10..15).into_iter().map(|l| 1 - l).collect()),
        lv(flip_at(&truth, 20..25)),
    ];
    let m = LabelMatrix::new(voters).unwrap();
    assert_eq!(majority_vote(&m).unwrap().as_slice(), truth.as_slice());
    assert_eq!(dimension_ensemble(&m).unwrap().as_slice(), truth.as_slice());
}

/// Runs that each agree with `truth` on well over half the samples.
fn consistent_runs(n_runs: usize, s: u64) -> Vec<LabelVector> {
    let mut rng = seed::rng(s);
    let truth: Vec<usize> = (0..40).map(|_| rng.random_range(0..2)).collect();
    (0..n_runs)
        .map(|_| {
            let idx: Vec<usize> = (0..40).filter(|_| rng.random::<f64>() < 0.15).collect();
            lv(flip_at(&truth, idx))
        })
        .collect()
}

#[test]
fn ensembles_invariant_to_order_of_consistent_runs() {
    for s in 0..20 {
        let mut runs = consistent_runs(2 + (s as usize % 5), s);
        let base = dimension_ensemble(&LabelMatrix::new(runs.clone()).unwrap()).unwrap();
        let vote = majority_vote(&LabelMatrix::new(runs.clone()).unwrap()).unwrap();
        let mut rng = seed::rng(s + 100);
        for _ in 0..5 {
            runs.shuffle(&mut rng);
            let m = LabelMatrix::new(runs.clone()).unwrap();
            assert_eq!(dimension_ensemble(&m).unwrap(), base);
            assert_eq!(majority_vote(&m).unwrap(), vote);
        }
    }
}

#[test]
fn ensemble_partition_invariant_to_order_of_arbitrary_runs() {
    let mut rng = seed::rng(77);
    for trial in 0..60 {
        let n_runs = 2 + trial % 5;
        let runs: Vec<LabelVector> = (0..n_runs).map(|_| lv((0..25).map(|_| rng.random_range(0..2)).collect())).collect();
        let base = dimension_ensemble(&LabelMatrix::new(runs.clone()).unwrap()).unwrap();
        let mut shuffled = runs.clone();
        shuffled.shuffle(&mut rng);
        let other = dimension_ensemble(&LabelMatrix::new(shuffled).unwrap()).unwrap();
        assert_eq!(acc(&base, &other).unwrap(), 1.0);
    }
}

proptest! {
    #[test]
    fn alignment_never_loses_agreement(
        r in prop::collection::vec(0usize..2, 1..40),
        c in prop::collection::vec(0usize..2, 40),
    ) {
        let r = lv(r);
        let c = lv(c[..r.len()].to_vec());
        let a = align_labels(&r, &c).unwrap();
        prop_assert!(a.agreement(&r) >= c.agreement(&r));
        // binary relabelling is either identity or a flip, both involutions
        let flipped = c.as_slice().iter().zip(a.as_slice()).all(|(x, y)| x != y);
        let same = c == a;
        prop_assert!(flipped || same);
        if 2 * c.agreement(&r) > r.len() {
            prop_assert!(same);
        }
    }

    #[test]
    fn triple_vote_of_one_voter_is_identity(v in prop::collection::vec(0usize..2, 1..50)) {
        let v = lv(v);
        let m = LabelMatrix::new(vec![v.clone(), v.clone(), v.clone()]).unwrap();
        prop_assert_eq!(majority_vote(&m).unwrap(), v.clone());
        prop_assert_eq!(dimension_ensemble(&m).unwrap(), v);
    }
}

fn sweep_config() -> DeepClusterConfig {
    DeepClusterConfig {
        variant: Variant::Gaussian,
        gamma: 0.1,
        embed_dim: 10,
        hidden: vec![8],
        activation: Activation::Relu,
        finetune_epochs: 4,
        target_update_interval: 2,
        reconstruction: true,
        reg_covar: 1e-6,
        train: TrainConfig {
            epochs: 5,
            batch_size: 32,
            seed: 9,
            ..TrainConfig::default()
        },
    }
}

#[test]
fn dimension_sweep_is_deterministic_and_ordered() {
    let ds = generate_synthetic(&SyntheticSpec {
        n_samples: 120,
        n_features: 9,
        class_ratio: 0.5,
        separation: 4.0,
        cluster_shape: ClusterShape::Diagonal,
        missing_rate: 0.0,
        seed: 1,
    })
    .unwrap();
    let (ds, _) = standardize(&ds).unwrap();
    let dims = sweep_dims(2, 3, 9);
    assert_eq!(dims, vec![2, 5, 8]);
    let a = run_dimension_sweep(ds.x().view(), 2, &dims, &sweep_config()).unwrap();
    let b = run_dimension_sweep(ds.x().view(), 2, &dims, &sweep_config()).unwrap();
    let (ma, mb) = (a.label_matrix().unwrap(), b.label_matrix().unwrap());
    assert_eq!(ma, mb);
    assert_eq!(ma.names(), &["d2", "d5", "d8"]);
    for (run, &d) in a.runs.iter().zip(&dims) {
        assert_eq!(run.dim, d);
        assert_eq!(run.model.autoencoder.embed_dim(), d);
        assert!(run.seconds > 0.0);
    }
    // single-run sweep equals the same member trained alone
    let single = run_dimension_sweep(ds.x().view(), 2, &[5], &sweep_config()).unwrap();
    assert_eq!(single.runs[0].labels, a.runs[1].labels);
}

#[test]
fn label_matrix_csv_round_trip() {
    let m = LabelMatrix::with_names(
        vec![lv(vec![0, 1, 1]), lv(vec![1, 1, 0])],
        vec!["d2".into(), "d5".into()],
    )
    .unwrap();
    let mut buf = Vec::new();
    m.write_csv(&mut buf).unwrap();
    assert_eq!(String::from_utf8(buf.clone()).unwrap(), "d2,d5\n0,1\n1,1\n1,0\n");
    assert_eq!(LabelMatrix::read_csv(buf.as_slice()).unwrap(), m);
}
