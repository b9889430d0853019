//! Sample-path forecasts: draw the state after the training range from its
//! posterior, push it through the model with fresh innovations, and sample
//! targets from the likelihood at every step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::issm::{dot, CompositeIssm, TimeRange, Trajectory};
use crate::likelihood::{sample_poisson, sigmoid, transfer_eval, Likelihood, TransferFunction};
use crate::mode::{ModeOptions, Observations};
use crate::srif::SqrtGaussian;
use crate::training::{Criterion, TrainedModel, TrainedStage};

/// Number of sample paths used when none is configured.
pub const DEFAULT_NUM_PATHS: usize = 100;

/// Sampled future targets, `paths[path][step]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSamples {
    pub start: i64,
    pub horizon: usize,
    pub paths: Vec<Vec<f64>>,
}

impl ForecastSamples {
    pub fn num_paths(&self) -> usize {
        self.paths.len()
    }

    /// Per-path sums over `[lead, lead + span)`.
    pub fn span_sums(&self, lead: usize, span: usize) -> Result<Vec<f64>> {
        if span == 0 || lead + span > self.horizon {
            return Err(Error::Range(format!(
                "span [{lead}, {}) outside the horizon {}",
                lead + span,
                self.horizon
            )));
        }
        Ok(self
            .paths
            .iter()
            .map(|p| p[lead..lead + span].iter().sum())
            .collect())
    }

    /// `ρ`-quantile of the span sum.
    pub fn span_quantile(&self, lead: usize, span: usize, rho: f64) -> Result<f64> {
        let mut sums = self.span_sums(lead, span)?;
        order_statistic(&mut sums, rho)
    }

    /// Pointwise `ρ`-quantile at every step.
    pub fn step_quantiles(&self, rho: f64) -> Result<Vec<f64>> {
        (0..self.horizon)
            .map(|t| self.span_quantile(t, 1, rho))
            .collect()
    }
}

/// Sorts `values` and returns the order statistic at 1-based index
/// `⌈ρ n⌉` (at least 1).
pub fn order_statistic(values: &mut [f64], rho: f64) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::Range(format!(
            "quantile level must lie in (0, 1), got {rho}"
        )));
    }
    if values.is_empty() {
        return Err(Error::Empty("no samples to take a quantile of".into()));
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let k = ((rho * values.len() as f64).ceil() as usize).clamp(1, values.len());
    Ok(values[k - 1])
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Random stream of one path: `splitmix(splitmix(seed ^ fnv1a(item)) ^ path)`
/// seeds a ChaCha8 generator, so paths and items are independent of the
/// order in which they are drawn.
pub fn path_rng(seed: u64, item: &str, path: usize) -> ChaCha8Rng {
    let s = splitmix64(splitmix64(seed ^ fnv1a(item)) ^ path as u64);
    ChaCha8Rng::seed_from_u64(s)
}

/// Draws latent paths `y` of one stage over a horizon.
#[derive(Debug, Clone)]
pub struct LatentSampler {
    trajectory: Trajectory,
    offset: Vec<f64>,
    posterior: SqrtGaussian,
}

impl LatentSampler {
    /// `features` is row-major `range.len × feature_dim`.
    pub fn new(
        issm: &CompositeIssm,
        strengths: &[f64],
        weights: &[f64],
        posterior: SqrtGaussian,
        range: &TimeRange,
        features: &[f64],
    ) -> Result<Self> {
        let p = issm.feature_dim();
        if features.len() != range.len * p {
            return Err(Error::Data(format!(
                "expected {} feature values for a horizon of {}, got {}",
                range.len * p,
                range.len,
                features.len()
            )));
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite feature at horizon step {}",
                i / p.max(1)
            )));
        }
        if posterior.dim != issm.total_dim() || !posterior.is_valid() {
            return Err(Error::Config("invalid final-state posterior".into()));
        }
        let trajectory = issm.trajectory(range, strengths)?;
        let offset = (0..range.len)
            .map(|t| {
                if p == 0 {
                    0.0
                } else {
                    dot(&features[t * p..(t + 1) * p], weights)
                }
            })
            .collect();
        Ok(Self {
            trajectory,
            offset,
            posterior,
        })
    }

    pub fn for_stage(
        issm: &CompositeIssm,
        stage: &TrainedStage,
        range: &TimeRange,
        features: &[f64],
    ) -> Result<Self> {
        Self::new(
            issm,
            &stage.params.strengths,
            &stage.params.weights,
            stage.final_state.clone(),
            range,
            features,
        )
    }

    pub fn horizon(&self) -> usize {
        self.trajectory.len()
    }

    /// One latent path: a state draw followed by a forward pass with
    /// standard normal innovations.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let l0 = self.posterior.sample(rng);
        let eps: Vec<f64> = (0..self.horizon().saturating_sub(1))
            .map(|_| rng.sample(rand_distr::StandardNormal))
            .collect();
        self.trajectory.forward_pass(&eps, &l0, Some(&self.offset))
    }
}

/// One draw of the count model at latent values `(y⁰, y¹, y²)`: zero with
/// probability `σ(y⁰)`, otherwise one with probability `σ(y¹)`, otherwise
/// `2 + Poisson(λ(y²))`.
pub fn sample_count<R: Rng + ?Sized>(y: [f64; 3], transfer: TransferFunction, rng: &mut R) -> f64 {
    if rng.random::<f64>() < sigmoid(y[0]) {
        0.0
    } else if rng.random::<f64>() < sigmoid(y[1]) {
        1.0
    } else {
        2.0 + sample_poisson(transfer_eval(transfer, y[2]).lambda, rng)
    }
}

/// Draws `n_paths` forecast paths over `range` for one item.
///
/// Single-stage Bernoulli samples are reported as 1 (`+1`) and 0 (`-1`).
pub fn sample_paths(
    model: &TrainedModel,
    range: &TimeRange,
    features: &[f64],
    n_paths: usize,
    seed: u64,
    item: &str,
) -> Result<ForecastSamples> {
    let issm = model.issm()?;
    let samplers = model
        .stages
        .iter()
        .map(|s| LatentSampler::for_stage(&issm, s, range, features))
        .collect::<Result<Vec<_>>>()?;
    let mut paths = Vec::with_capacity(n_paths);
    for path in 0..n_paths {
        let mut rng = path_rng(seed, item, path);
        let z = if model.multi_stage {
            let transfer = match model.stages[2].likelihood {
                Likelihood::Poisson { transfer } => transfer,
                other => {
                    return Err(Error::Config(format!(
                        "count stage must be Poisson, found {other:?}"
                    )))
                }
            };
            let y: Vec<Vec<f64>> = samplers.iter().map(|s| s.sample(&mut rng)).collect();
            (0..range.len)
                .map(|t| sample_count([y[0][t], y[1][t], y[2][t]], transfer, &mut rng))
                .collect()
        } else {
            let lik = model.stages[0].likelihood;
            let y = samplers[0].sample(&mut rng);
            y.iter()
                .map(|&yt| match lik {
                    Likelihood::Bernoulli => 0.5 * (lik.sample(yt, &mut rng) + 1.0),
                    _ => lik.sample(yt, &mut rng),
                })
                .collect()
        };
        paths.push(z);
    }
    Ok(ForecastSamples {
        start: range.start,
        horizon: range.len,
        paths,
    })
}

/// Recomputes the posterior over the state after the training range for
/// one stage at its trained parameters.
pub fn final_state_posterior(
    issm: &CompositeIssm,
    range: &TimeRange,
    stage: &TrainedStage,
    features: &[f64],
    obs: Observations,
    options: &ModeOptions,
) -> Result<SqrtGaussian> {
    let base = match stage.likelihood {
        Likelihood::Gaussian { .. } => Likelihood::Gaussian { variance: 1.0 },
        other => other,
    };
    let mut crit = Criterion::new(issm, range, base, features, obs)?;
    crit.mode_options = *options;
    Ok(crit.final_state_posterior(&stage.raw)?.0)
}
