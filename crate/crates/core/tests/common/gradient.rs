//! Random Laplace criteria and a finite-difference gradient check.

use latent_state::issm::{CompositeIssm, TimeRange};
use latent_state::likelihood::Likelihood;
use latent_state::mode::{ModeOptions, Observations};
use latent_state::training::Criterion;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use super::random_issm;

pub struct Case {
    pub issm: CompositeIssm,
    pub range: TimeRange,
    pub likelihood: Likelihood,
    pub features: Vec<f64>,
    pub targets: Vec<f64>,
    pub active: Vec<bool>,
    pub weights: Vec<f64>,
}

impl Case {
    pub fn random(rng: &mut ChaCha8Rng, likelihood: Likelihood, p: usize, p_missing: f64) -> Self {
        let t = 40;
        let issm = random_issm(rng, 6, p);
        let range = TimeRange::new(rng.random_range(0..30), t);
        let features: Vec<f64> = (0..t * p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut targets = vec![0.0; t];
        let mut active = vec![true; t];
        let mut weights = vec![1.0; t];
        for i in 0..t {
            if rng.random::<f64>() < p_missing {
                active[i] = false;
                continue;
            }
            if rng.random::<f64>() < 0.2 {
                weights[i] = rng.random_range(0.3..1.0);
            }
            let level = 2.0 + 1.5 * (i as f64 * 0.4).sin();
            targets[i] = match likelihood {
                Likelihood::Gaussian { .. } => level + rng.random_range(-1.0..1.0),
                Likelihood::Bernoulli => {
                    if rng.random::<f64>() < 0.3 {
                        1.0
                    } else {
                        -1.0
                    }
                }
                Likelihood::Poisson { .. } => {
                    if i % 9 < 3 {
                        0.0
                    } else {
                        Poisson::new(level).unwrap().sample(rng)
                    }
                }
            };
        }
        Self {
            issm,
            range,
            likelihood,
            features,
            targets,
            active,
            weights,
        }
    }

    pub fn criterion(&self) -> Criterion<'_> {
        let mut c = Criterion::new(
            &self.issm,
            &self.range,
            self.likelihood,
            &self.features,
            Observations {
                targets: &self.targets,
                active: &self.active,
                weights: &self.weights,
            },
        )
        .unwrap();
        c.mode_options = ModeOptions {
            rel_tolerance: 0.0,
            step_tolerance: 1e-13,
            ..ModeOptions::default()
        };
        c
    }
}

pub fn random_raw(rng: &mut ChaCha8Rng, crit: &Criterion) -> Vec<f64> {
    crit.layout()
        .default_center()
        .iter()
        .map(|c| c + rng.random_range(-0.5..0.5))
        .collect()
}

/// Worst relative error between the analytic gradient and central
/// differences with step `h`, per coordinate.
pub fn gradient_error(crit: &Criterion, raw: &[f64], h: f64) -> (f64, usize) {
    let g = crit.evaluate(raw, true).unwrap().gradient.unwrap();
    let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut worst = (0.0, 0);
    for i in 0..raw.len() {
        let mut plus = raw.to_vec();
        let mut minus = raw.to_vec();
        plus[i] += h;
        minus[i] -= h;
        let fd = (crit.psi(&plus).unwrap() - crit.psi(&minus).unwrap()) / (2.0 * h);
        let err = (g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-3 * scale).max(1e-6);
        if err > worst.0 {
            worst = (err, i);
        }
    }
    worst
}
