//! Dense reference implementations shared by the integration tests.
//!
//! Everything here is written in plain covariance form with nalgebra so it
//! can serve as an independent oracle for the square-root smoother.

#![allow(dead_code)]

pub mod gradient;
pub mod newton;
pub mod pinned;

use latent_state::issm::{
    compose, make_level, make_level_trend, make_seasonality, Bounds, CompositeIssm, Damping,
    SeasonalityPattern, TimeRange, Trajectory,
};
use latent_state::likelihood::GaussianizedObservation;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// Linear map from the stacked latent vector `u = [ε (T-1), l0 (d), w (p)]`
/// to every state `state[i]` and every `y_i`.
pub struct DenseLinearModel {
    pub t: usize,
    pub d: usize,
    pub p: usize,
    /// `state[i] = S_i u` for `i = 0..=T` (the last one without its own
    /// innovation, which is added separately).
    pub states: Vec<DMatrix<f64>>,
    /// Rows `y_i = H_i u` (offset excluded).
    pub h: DMatrix<f64>,
}

impl DenseLinearModel {
    pub fn n(&self) -> usize {
        self.t - 1 + self.d + self.p
    }

    pub fn build(traj: &Trajectory, features: Option<(&[f64], usize)>) -> Self {
        let (t, d) = (traj.len(), traj.dim());
        let p = features.map_or(0, |f| f.1);
        let n = t - 1 + d + p;
        let f = DMatrix::from_row_slice(d, d, &traj.transition().to_dense());
        let mut states = Vec::with_capacity(t + 1);
        let mut s0 = DMatrix::zeros(d, n);
        for j in 0..d {
            s0[(j, t - 1 + j)] = 1.0;
        }
        states.push(s0);
        for i in 0..t {
            let mut next = &f * &states[i];
            if i + 1 < t {
                for j in 0..d {
                    next[(j, i)] += traj.g(i)[j];
                }
            }
            states.push(next);
        }
        let mut h = DMatrix::zeros(t, n);
        for i in 0..t {
            let a = DVector::from_row_slice(traj.a(i));
            let row = a.transpose() * &states[i];
            h.row_mut(i).copy_from(&row);
            if let Some((x, p)) = features {
                for k in 0..p {
                    h[(i, t - 1 + d + k)] = x[i * p + k];
                }
            }
        }
        Self { t, d, p, states, h }
    }
}

/// Dense Gaussian posterior over `u` given a subset of observations.
pub struct DensePosterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub log_marginal: f64,
}

pub fn dense_prior(
    lm: &DenseLinearModel,
    prior_mean: &[f64],
    prior_sd: &[f64],
    w_prior: Option<(&[f64], &[f64])>,
) -> (DVector<f64>, DMatrix<f64>) {
    let n = lm.n();
    let mut mu = DVector::zeros(n);
    let mut var = DVector::from_element(n, 1.0);
    for j in 0..lm.d {
        mu[lm.t - 1 + j] = prior_mean[j];
        var[lm.t - 1 + j] = prior_sd[j] * prior_sd[j];
    }
    if let Some((m, s)) = w_prior {
        for k in 0..lm.p {
            mu[lm.t - 1 + lm.d + k] = m[k];
            var[lm.t - 1 + lm.d + k] = s[k] * s[k];
        }
    }
    (mu, DMatrix::from_diagonal(&var))
}

/// Conditions the prior on observed `z̃` (missing entries skipped).
pub fn dense_condition(
    lm: &DenseLinearModel,
    mu: &DVector<f64>,
    cov: &DMatrix<f64>,
    obs: &[GaussianizedObservation],
    offset: &[f64],
) -> DensePosterior {
    let observed: Vec<usize> = (0..lm.t).filter(|&i| !obs[i].missing).collect();
    if observed.is_empty() {
        return DensePosterior {
            mean: mu.clone(),
            cov: cov.clone(),
            log_marginal: 0.0,
        };
    }
    let m = observed.len();
    let mut h = DMatrix::zeros(m, lm.n());
    let mut z = DVector::zeros(m);
    let mut noise = DMatrix::zeros(m, m);
    for (r, &i) in observed.iter().enumerate() {
        h.row_mut(r).copy_from(&lm.h.row(i));
        z[r] = obs[i].z_tilde - offset[i];
        noise[(r, r)] = obs[i].sigma_sq;
    }
    let s = &h * cov * h.transpose() + noise;
    let s_chol = s.clone().cholesky().expect("innovation covariance not SPD");
    let resid = &z - &h * mu;
    let alpha = s_chol.solve(&resid);
    let log_det: f64 = 2.0 * s_chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let log_marginal =
        -0.5 * (m as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + resid.dot(&alpha));
    let k = cov * h.transpose() * s_chol.inverse();
    let mean = mu + &k * resid;
    let post_cov = cov - &k * &h * cov;
    DensePosterior {
        mean,
        cov: post_cov,
        log_marginal,
    }
}

/// Random composite model with total dimension at most `max_dim`.
pub fn random_issm<R: Rng>(rng: &mut R, max_dim: usize, feature_dim: usize) -> CompositeIssm {
    loop {
        let mut comps = Vec::new();
        let mut dim = 0;
        let n_comp = rng.random_range(1..=3);
        for _ in 0..n_comp {
            match rng.random_range(0..3) {
                0 => {
                    comps.push(make_level(Bounds::default()).unwrap());
                    dim += 1;
                }
                1 => {
                    let damping = if rng.random::<bool>() {
                        Some(Damping {
                            level: rng.random_range(0.8..1.0),
                            slope: rng.random_range(0.5..1.0),
                        })
                    } else {
                        None
                    };
                    comps.push(
                        make_level_trend(Bounds::default(), Bounds::default(), damping).unwrap(),
                    );
                    dim += 2;
                }
                _ => {
                    let period = rng.random_range(2..=5);
                    let mut pattern = SeasonalityPattern::new(
                        period,
                        None,
                        latent_state::issm::CalendarSource::Periodic {
                            period,
                            step: rng.random_range(1..=2),
                            phase: rng.random_range(0..period),
                        },
                    )
                    .unwrap();
                    if period > 2 && rng.random::<bool>() {
                        let mut grouping: Vec<usize> = (0..period).collect();
                        grouping[period - 1] = 0;
                        pattern = pattern.with_grouping(grouping).unwrap();
                    }
                    dim += pattern.num_groups();
                    comps.push(make_seasonality(Bounds::default(), pattern).unwrap());
                }
            }
        }
        if dim <= max_dim {
            return compose(comps, feature_dim).unwrap();
        }
    }
}

pub fn random_trajectory<R: Rng>(rng: &mut R, issm: &CompositeIssm, t: usize) -> Trajectory {
    let strengths: Vec<f64> = (0..issm.num_strengths())
        .map(|_| rng.random_range(0.05..0.9))
        .collect();
    issm.trajectory(&TimeRange::new(rng.random_range(0..50), t), &strengths)
        .unwrap()
}

pub fn random_obs<R: Rng>(rng: &mut R, t: usize, p_missing: f64) -> Vec<GaussianizedObservation> {
    (0..t)
        .map(|_| {
            if rng.random::<f64>() < p_missing {
                GaussianizedObservation::missing()
            } else {
                GaussianizedObservation::observed(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(0.1..2.0),
                )
            }
        })
        .collect()
}
