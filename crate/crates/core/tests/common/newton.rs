//! Random mode-finding instances and a dense Newton step.

use latent_state::issm::Trajectory;
use latent_state::likelihood::{Likelihood, CURVATURE_FLOOR};
use latent_state::mode::{LatentPath, ModeProblem, Observations};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use super::{random_issm, random_trajectory, DenseLinearModel};

pub struct Instance {
    pub traj: Trajectory,
    pub prior_mean: Vec<f64>,
    pub prior_sd: Vec<f64>,
    pub offset: Vec<f64>,
    pub likelihood: Likelihood,
    pub targets: Vec<f64>,
    pub active: Vec<bool>,
    pub weights: Vec<f64>,
}

impl Instance {
    pub fn random(rng: &mut ChaCha8Rng, t: usize, likelihood: Likelihood, p_missing: f64) -> Self {
        let issm = random_issm(rng, 6, 0);
        let traj = random_trajectory(rng, &issm, t);
        let d = traj.dim();
        let mut targets = vec![0.0; t];
        let mut active = vec![true; t];
        let mut weights = vec![1.0; t];
        for i in 0..t {
            active[i] = rng.random::<f64>() >= p_missing;
            if rng.random::<f64>() < 0.3 {
                weights[i] = rng.random_range(0.2..1.0);
            }
            targets[i] = match likelihood {
                Likelihood::Poisson { .. } => Poisson::new(rng.random_range(0.5..6.0))
                    .unwrap()
                    .sample(rng),
                Likelihood::Bernoulli => {
                    if rng.random::<bool>() {
                        1.0
                    } else {
                        -1.0
                    }
                }
                Likelihood::Gaussian { .. } => rng.random_range(-3.0..3.0),
            };
        }
        Self {
            traj,
            prior_mean: (0..d).map(|_| rng.random_range(-0.5..0.5)).collect(),
            prior_sd: (0..d).map(|_| rng.random_range(0.3..1.5)).collect(),
            offset: (0..t).map(|_| rng.random_range(-0.3..0.3)).collect(),
            likelihood,
            targets,
            active,
            weights,
        }
    }

    pub fn problem(&self) -> ModeProblem<'_> {
        ModeProblem {
            trajectory: &self.traj,
            prior_mean: &self.prior_mean,
            prior_sd: &self.prior_sd,
            offset: &self.offset,
            likelihood: self.likelihood,
            obs: Observations {
                targets: &self.targets,
                active: &self.active,
                weights: &self.weights,
            },
        }
    }

    pub fn random_path(&self, rng: &mut ChaCha8Rng, scale: f64) -> LatentPath {
        let t = self.traj.len();
        let v: Vec<f64> = (0..t - 1 + self.traj.dim())
            .map(|_| rng.random_range(-scale..scale))
            .collect();
        LatentPath::from_slice(&v, t)
    }
}

/// `s − H⁻¹ ∇F(s)` with `H` and `∇F` assembled densely. Days whose curvature
/// is below the floor are left out entirely.
pub fn dense_newton(inst: &Instance, s: &LatentPath) -> DVector<f64> {
    let p = inst.problem();
    let lm = DenseLinearModel::build(&inst.traj, None);
    let n = lm.n();
    let t = inst.traj.len();
    let y = p.y_of(s);
    let derivs = p.derivs_at(&y);
    let sv = DVector::from_vec(s.to_vec());

    let mut grad = DVector::zeros(n);
    let mut hess = DMatrix::zeros(n, n);
    for i in 0..n {
        if i < t - 1 {
            grad[i] = sv[i];
            hess[(i, i)] = 1.0;
        } else {
            let j = i - (t - 1);
            let v = inst.prior_sd[j] * inst.prior_sd[j];
            grad[i] = (sv[i] - inst.prior_mean[j]) / v;
            hess[(i, i)] = 1.0 / v;
        }
    }
    for i in 0..t {
        if !inst.active[i] || derivs[i].d2 < CURVATURE_FLOOR {
            continue;
        }
        let row = lm.h.row(i).transpose();
        grad += &row * derivs[i].d1;
        hess += &row * row.transpose() * derivs[i].d2;
    }
    let step = hess.cholesky().expect("Hessian not SPD").solve(&grad);
    sv - step
}

pub fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs() / scale))
}
