//! Central finite-difference checks of the hand-written backward passes.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use tabclust_core::autoencoder::{reconstruction_grad, reconstruction_loss, Activation, AutoencoderModel};
use tabclust_core::deepcluster::{
    joint_loss_gradients, soft_assign, target_distribution, ClusterParams, SoftAssignment, Variant,
};
use tabclust_core::seed;

const H: f64 = 1e-5;
const MAX_REL: f64 = 1e-4;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

/// Compare `analytic` with central differences of `loss` over every model
/// parameter. Returns the worst relative error.
fn check_model_params(
    model: &AutoencoderModel,
    analytic: &tabclust_core::autoencoder::Gradients,
    loss: impl Fn(&AutoencoderModel) -> f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    for l in 0..model.layers().len() {
        let (rows, cols) = model.layers()[l].weight.dim();
        for r in 0..rows {
            for c in 0..cols {
                let mut plus = model.clone();
                plus.layers_mut()[l].weight[[r, c]] += H;
                let mut minus = model.clone();
                minus.layers_mut()[l].weight[[r, c]] -= H;
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * H);
                worst = worst.max(rel_err(analytic.weights[l][[r, c]], numeric));
            }
        }
        for b in 0..model.layers()[l].bias.len() {
            let mut plus = model.clone();
            plus.layers_mut()[l].bias[b] += H;
            let mut minus = model.clone();
            minus.layers_mut()[l].bias[b] -= H;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * H);
            worst = worst.max(rel_err(analytic.biases[l][b], numeric));
        }
    }
    worst
}

fn reconstruction_case(hidden: &[usize], activation: Activation, seed_value: u64) -> f64 {
    let mut rng = seed::rng(seed_value);
    let model = AutoencoderModel::build(4, 2, hidden, activation, seed_value).unwrap();
    let x = random_matrix(8, 4, &mut rng);
    let (_, xhat, cache) = model.forward(x.view()).unwrap();
    let g = model
        .backward(&cache, reconstruction_grad(x.view(), xhat.view()).view(), None)
        .unwrap();
    check_model_params(&model, &g, |m| m.loss(x.view()).unwrap())
}

#[test]
fn reconstruction_gradients_match_finite_differences() {
    for hidden in [vec![], vec![5], vec![5, 3]] {
        for s in 0..3 {
            let worst = reconstruction_case(&hidden, Activation::Tanh, s);
            assert!(worst < MAX_REL, "hidden {hidden:?} seed {s}: {worst}");
        }
    }
}

fn params_for(z: ArrayView2<f64>, variant: Variant, rng: &mut impl Rng) -> ClusterParams {
    let d = z.ncols();
    let mu = random_matrix(2, d, rng);
    match variant {
        Variant::StudentT => ClusterParams { mu, sigma: None, pi: None },
        Variant::Gaussian => {
            let sigma = (0..2)
                .map(|_| {
                    let a = random_matrix(d, d, rng) * 0.5;
                    a.t().dot(&a) + Array2::<f64>::eye(d)
                })
                .collect();
            ClusterParams {
                mu,
                sigma: Some(sigma),
                pi: Some(ndarray::array![0.4, 0.6]),
            }
        }
    }
}

fn joint_value(
    model: &AutoencoderModel,
    x: ArrayView2<f64>,
    t: &SoftAssignment,
    params: &ClusterParams,
    variant: Variant,
    gamma: f64,
    reconstruction: bool,
) -> f64 {
    let (z, xhat, _) = model.forward(x).unwrap();
    let s = soft_assign(z.view(), params, variant).unwrap();
    let kl = tabclust_core::deepcluster::kl_loss(t, &s) / x.nrows() as f64;
    let recon = if reconstruction {
        reconstruction_loss(x, xhat.view()).unwrap()
    } else {
        0.0
    };
    recon + gamma * kl
}

fn joint_case(hidden: &[usize], variant: Variant, reconstruction: bool, seed_value: u64) -> f64 {
    let mut rng = seed::rng(seed_value ^ 0xABCD);
    let model = AutoencoderModel::build(4, 2, hidden, Activation::Tanh, seed_value).unwrap();
    let x = random_matrix(8, 4, &mut rng);
    let z = model.encode(x.view()).unwrap();
    let params = params_for(z.view(), variant, &mut rng);
    // frozen target from a perturbed model, as during training
    let t = target_distribution(&soft_assign((&z + 0.1).view(), &params, variant).unwrap());
    let gamma = 0.7;
    let g = joint_loss_gradients(&model, x.view(), &t, &params, variant, gamma, reconstruction).unwrap();
    let value = |m: &AutoencoderModel, p: &ClusterParams| joint_value(m, x.view(), &t, p, variant, gamma, reconstruction);
    assert!((g.loss - value(&model, &params)).abs() < 1e-12);

    let mut worst = check_model_params(&model, &g.model, |m| value(m, &params));
    for j in 0..2 {
        for c in 0..2 {
            let mut plus = params.clone();
            plus.mu[[j, c]] += H;
            let mut minus = params.clone();
            minus.mu[[j, c]] -= H;
            let numeric = (value(&model, &plus) - value(&model, &minus)) / (2.0 * H);
            worst = worst.max(rel_err(g.mu[[j, c]], numeric));
        }
    }
    worst
}

#[test]
fn joint_gradients_match_finite_differences() {
    for variant in [Variant::StudentT, Variant::Gaussian] {
        for reconstruction in [true, false] {
            for hidden in [vec![], vec![3], vec![5, 3]] {
                for s in 0..3 {
                    let worst = joint_case(&hidden, variant, reconstruction, s);
                    assert!(
                        worst < MAX_REL,
                        "{variant:?} recon={reconstruction} hidden {hidden:?} seed {s}: {worst}"
                    );
                }
            }
        }
    }
}

#[test]
fn kl_only_objective_leaves_decoder_untouched() {
    let mut rng = seed::rng(11);
    let model = AutoencoderModel::build(4, 2, &[3], Activation::Relu, 11).unwrap();
    let x = random_matrix(6, 4, &mut rng);
    let z = model.encode(x.view()).unwrap();
    let params = params_for(z.view(), Variant::StudentT, &mut rng);
    let t = target_distribution(&soft_assign(z.view(), &params, Variant::StudentT).unwrap());
    let g = joint_loss_gradients(&model, x.view(), &t, &params, Variant::StudentT, 1.0, false).unwrap();
    let depth = model.encoder_depth();
    for l in depth..model.layers().len() {
        assert!(g.model.weights[l].iter().all(|&v| v == 0.0));
        assert!(g.model.biases[l].iter().all(|&v| v == 0.0));
    }
}
