//! Sample-path forecasting: Monte Carlo moments, the multi-stage pmf, span
//! quantiles and the final-state posterior.

mod common;

use common::pinned::{level, pinned_model, pinned_stage};
use common::{dense_condition, dense_prior, DenseLinearModel};
use latent_state::forecast::{
    order_statistic, path_rng, sample_count, sample_paths, ForecastSamples, LatentSampler,
};
use latent_state::issm::{compose, make_level, Bounds, TimeRange};
use latent_state::likelihood::{
    sigmoid, transfer_eval, transfer_inverse, GaussianizedObservation, Likelihood, TransferFunction,
};
use latent_state::mode::Observations;
use latent_state::params::Decoded;
use latent_state::srif::SqrtGaussian;
use latent_state::training::Criterion;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{DiscreteCDF, Poisson};

#[test]
fn degenerate_model_gives_identical_constant_paths() {
    let model = pinned_model(vec![pinned_stage(
        Likelihood::Gaussian { variance: 0.0 },
        0.0,
        2.5,
        0.0,
    )]);
    let s = sample_paths(&model, &model.horizon_range(10), &[], 20, 1, "a").unwrap();
    for p in &s.paths {
        assert_eq!(p, &vec![2.5; 10]);
    }
}

#[test]
fn poisson_paths_have_the_pinned_mean() {
    let tf = TransferFunction::default();
    let y = transfer_inverse(tf, 3.0).unwrap();
    let model = pinned_model(vec![pinned_stage(
        Likelihood::Poisson { transfer: tf },
        0.0,
        y,
        0.0,
    )]);
    let s = sample_paths(&model, &model.horizon_range(4), &[], 100_000, 2, "a").unwrap();
    for t in 0..4 {
        let mean = s.paths.iter().map(|p| p[t]).sum::<f64>() / 1e5;
        assert!((mean - 3.0).abs() < 0.05, "step {t}: {mean}");
    }
}

#[test]
fn spread_grows_with_the_horizon() {
    let model = pinned_model(vec![pinned_stage(
        Likelihood::poisson_twice_logistic(0.01),
        0.3,
        1.0,
        0.1,
    )]);
    let s = sample_paths(&model, &model.horizon_range(12), &[], 20_000, 3, "a").unwrap();
    let mut last = 0.0;
    for h in 1..=12 {
        let sums = s.span_sums(0, h).unwrap();
        let m = sums.iter().sum::<f64>() / sums.len() as f64;
        let v = sums.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / sums.len() as f64;
        assert!(v > last, "h={h}: {v} <= {last}");
        last = v;
    }
}

#[test]
fn multi_stage_paths_follow_the_count_pmf() {
    let tf = TransferFunction::Exponential;
    let y = [0.0, 0.0, 0.0];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 1_000_000;
    let mut zeros = 0;
    let mut ones = 0;
    let mut big = (0.0, 0);
    for _ in 0..n {
        match sample_count(y, tf, &mut rng) {
            0.0 => zeros += 1,
            1.0 => ones += 1,
            z => {
                big.0 += z;
                big.1 += 1;
            }
        }
    }
    assert!((zeros as f64 / n as f64 - 0.5).abs() < 0.002);
    assert!((ones as f64 / n as f64 - 0.25).abs() < 0.002);
    assert!((big.0 / big.1 as f64 - 3.0).abs() < 0.01);
}

#[test]
fn certain_zero_stage_gives_zero_paths() {
    let tf = TransferFunction::default();
    let model = pinned_model(vec![
        pinned_stage(Likelihood::Bernoulli, 0.0, 60.0, 0.0),
        pinned_stage(Likelihood::Bernoulli, 0.0, 0.0, 0.0),
        pinned_stage(Likelihood::Poisson { transfer: tf }, 0.0, 2.0, 0.0),
    ]);
    let s = sample_paths(&model, &model.horizon_range(7), &[], 1000, 5, "a").unwrap();
    assert!(s.paths.iter().flatten().all(|&z| z == 0.0));
}

#[test]
fn bernoulli_paths_are_zero_one() {
    let model = pinned_model(vec![pinned_stage(Likelihood::Bernoulli, 0.2, 0.0, 1.0)]);
    let s = sample_paths(&model, &model.horizon_range(7), &[], 500, 6, "a").unwrap();
    assert!(s.paths.iter().flatten().all(|&z| z == 0.0 || z == 1.0));
    assert!(s.paths.iter().flatten().any(|&z| z == 1.0));
}

#[test]
fn paths_are_reproducible_and_item_specific() {
    let model = pinned_model(vec![pinned_stage(
        Likelihood::poisson_twice_logistic(0.01),
        0.2,
        1.0,
        0.3,
    )]);
    let range = model.horizon_range(9);
    let a = sample_paths(&model, &range, &[], 50, 7, "x").unwrap();
    let b = sample_paths(&model, &range, &[], 50, 7, "x").unwrap();
    let c = sample_paths(&model, &range, &[], 50, 7, "y").unwrap();
    let more = sample_paths(&model, &range, &[], 80, 7, "x").unwrap();
    assert_eq!(a, b);
    assert_ne!(a.paths, c.paths);
    // Path k does not depend on how many paths are drawn.
    assert_eq!(a.paths[..], more.paths[..50]);
    let mut r1 = path_rng(7, "x", 3);
    let mut r2 = path_rng(7, "x", 3);
    assert_eq!(r1.random::<u64>(), r2.random::<u64>());
}

#[test]
fn order_statistic_index() {
    let mut v: Vec<f64> = (1..=100).rev().map(f64::from).collect();
    assert_eq!(order_statistic(&mut v, 0.5).unwrap(), 50.0);
    assert_eq!(order_statistic(&mut v, 0.9).unwrap(), 90.0);
    assert_eq!(order_statistic(&mut v, 0.001).unwrap(), 1.0);
    assert!(order_statistic(&mut v, 1.0).is_err());
    assert!(order_statistic(&mut [], 0.5).is_err());
}

#[test]
fn identical_paths_give_the_common_sum() {
    let s = ForecastSamples {
        start: 0,
        horizon: 5,
        paths: vec![vec![1.0, 2.0, 0.0, 4.0, 1.0]; 30],
    };
    for rho in [0.05, 0.5, 0.95] {
        assert_eq!(s.span_quantile(1, 3, rho).unwrap(), 6.0);
    }
    assert!(s.span_quantile(3, 3, 0.5).is_err());
}

#[test]
fn span_quantile_of_poisson_sums() {
    let tf = TransferFunction::Exponential;
    let model = pinned_model(vec![pinned_stage(
        Likelihood::Poisson { transfer: tf },
        0.0,
        2f64.ln(),
        0.0,
    )]);
    let s = sample_paths(&model, &model.horizon_range(7), &[], 100_000, 8, "a").unwrap();
    // The sum over 7 steps is Poisson(14).
    let exact = Poisson::new(14.0).unwrap().inverse_cdf(0.9) as f64;
    let q = s.span_quantile(0, 7, 0.9).unwrap();
    assert!((q - exact).abs() <= 2.0, "{q} vs {exact}");
}

#[test]
fn sampler_rejects_bad_features() {
    let issm = compose(vec![make_level(Bounds::default()).unwrap()], 1).unwrap();
    let post = SqrtGaussian::diagonal(&[0.0], &[1.0]);
    let range = TimeRange::new(10, 3);
    assert!(LatentSampler::new(&issm, &[0.1], &[1.0], post.clone(), &range, &[1.0, 2.0]).is_err());
    assert!(LatentSampler::new(
        &issm,
        &[0.1],
        &[1.0],
        post.clone(),
        &range,
        &[1.0, f64::NAN, 2.0]
    )
    .is_err());
    assert!(LatentSampler::new(&issm, &[0.1], &[1.0], post, &range, &[1.0, 0.0, 2.0]).is_ok());
}

fn gaussian_final_state(targets: &[f64], active: &[bool], raw: &[f64]) -> (SqrtGaussian, Decoded) {
    let issm = level();
    let t = targets.len();
    let weights = vec![1.0; t];
    let obs = Observations {
        targets,
        active,
        weights: &weights,
    };
    let crit = Criterion::new(
        &issm,
        &TimeRange::new(0, t),
        Likelihood::Gaussian { variance: 1.0 },
        &[],
        obs,
    )
    .unwrap();
    let params = crit.layout().decode(raw);
    (crit.final_state_posterior(raw).unwrap().0, params)
}

#[test]
fn final_state_matches_dense_posterior() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..10 {
        let t = rng.random_range(2..=10);
        let targets: Vec<f64> = (0..t).map(|_| rng.random_range(-2.0..2.0)).collect();
        let active: Vec<bool> = (0..t).map(|_| rng.random::<f64>() > 0.2).collect();
        let raw = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-0.5..0.5),
            rng.random_range(-1.0..0.0),
        ];
        let (post, params) = gaussian_final_state(&targets, &active, &raw);

        let traj = level()
            .trajectory(&TimeRange::new(0, t), &params.strengths)
            .unwrap();
        let lm = DenseLinearModel::build(&traj, None);
        let (mu, cov) = dense_prior(&lm, &params.prior_mean, &params.prior_sd, None);
        let v = params.likelihood[0];
        let obs: Vec<GaussianizedObservation> = (0..t)
            .map(|i| {
                if active[i] {
                    GaussianizedObservation::observed(targets[i], v)
                } else {
                    GaussianizedObservation::missing()
                }
            })
            .collect();
        let dense = dense_condition(&lm, &mu, &cov, &obs, &vec![0.0; t]);
        let s_t = &lm.states[t];
        let g = DVector::from_row_slice(traj.g(t - 1));
        let mean = s_t * &dense.mean;
        let var: DMatrix<f64> = s_t * &dense.cov * s_t.transpose() + &g * g.transpose();
        let got_mean = post.mean_vector()[0];
        let got_var = post.covariance()[0];
        assert!((got_mean - mean[0]).abs() < 1e-8 * mean[0].abs().max(1.0));
        assert!((got_var - var[(0, 0)]).abs() < 1e-8 * var[(0, 0)]);
    }
}

#[test]
fn no_observations_push_the_prior_forward() {
    let raw = [0.0, -0.4, 1.5, 0.2];
    let t = 6;
    let (post, params) = gaussian_final_state(&vec![0.0; t], &vec![false; t], &raw);
    let alpha = params.strengths[0];
    let sd = params.prior_sd[0];
    // Random walk: the mean stays, the variance grows by α² per step.
    assert!((post.mean_vector()[0] - params.prior_mean[0]).abs() < 1e-12);
    let want = sd * sd + t as f64 * alpha * alpha;
    assert!((post.covariance()[0] - want).abs() < 1e-12 * want);
}

#[test]
fn sharper_last_observation_shrinks_the_final_variance() {
    let issm = level();
    let t = 8;
    let range = TimeRange::new(0, t);
    let targets = vec![1.0; t];
    let active = vec![true; t];
    let mut last = f64::INFINITY;
    for w in [1e-4, 1e-3, 1e-2, 0.1, 1.0] {
        let mut weights = vec![1.0; t];
        weights[t - 1] = w;
        let obs = Observations {
            targets: &targets,
            active: &active,
            weights: &weights,
        };
        let crit = Criterion::new(
            &issm,
            &range,
            Likelihood::Gaussian { variance: 1.0 },
            &[],
            obs,
        )
        .unwrap();
        let raw = crit.layout().default_center();
        let (post, _) = crit.final_state_posterior(&raw).unwrap();
        let traj = issm
            .trajectory(&range, &crit.layout().decode(&raw).strengths)
            .unwrap();
        // What remains is the last innovation α² and the shrinking
        // uncertainty of the last observed state.
        let alpha2 = traj.g(t - 1)[0].powi(2);
        let v = post.covariance()[0] - alpha2;
        assert!(v < last, "weight {w}: {v} >= {last}");
        // Never worse than the last observation alone.
        assert!(v < crit.layout().decode(&raw).likelihood[0] / w);
        last = v;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn count_samples_are_nonnegative_integers(y0 in -8.0f64..8.0, y1 in -8.0f64..8.0, y2 in -5.0f64..5.0, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..50 {
            let z = sample_count([y0, y1, y2], TransferFunction::default(), &mut rng);
            prop_assert!(z >= 0.0 && z.fract() == 0.0);
        }
    }

    #[test]
    fn count_pmf_sums_to_one(y0 in -8.0f64..8.0, y1 in -8.0f64..8.0, y2 in -5.0f64..3.0) {
        let lambda = transfer_eval(TransferFunction::default(), y2).lambda;
        let p0 = sigmoid(y0);
        let p1 = (1.0 - p0) * sigmoid(y1);
        let rest: f64 = (0..200)
            .map(|k| {
                let lp = k as f64 * lambda.ln() - lambda - latent_state::likelihood::ln_factorial(k as f64);
                (1.0 - p0) * (1.0 - sigmoid(y1)) * lp.exp()
            })
            .sum();
        prop_assert!((p0 + p1 + rest - 1.0).abs() < 1e-9);
    }
}
