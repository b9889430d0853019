//! Synthetic series drawn from the generative model, with optional
//! features, out-of-stock windows and drifting seasonal amplitude.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::{path_rng, sample_count};
use crate::issm::{dot, TimeRange};
use crate::likelihood::Likelihood;

use super::config::{build_issm, ComponentConfig, LikelihoodConfig};
use super::series::{ItemSeries, SeriesSet};

/// Steps `[start, start + len)` forced out of stock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start: usize,
    pub len: usize,
}

/// Deterministic seasonal term `amplitude(t) · shape[t mod period]` with the
/// amplitude moving linearly from `amplitude_start` to `amplitude_end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonalDrift {
    pub shape: Vec<f64>,
    pub amplitude_start: f64,
    pub amplitude_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub n_items: usize,
    pub length: usize,
    #[serde(default)]
    pub start: i64,
    pub components: Vec<ComponentConfig>,
    /// One value per innovation strength of the composed model.
    pub strengths: Vec<f64>,
    /// Initial state mean per latent dimension (zeros when absent).
    #[serde(default)]
    pub prior_mean: Option<Vec<f64>>,
    /// Initial state sd per prior slot (zeros when absent).
    #[serde(default)]
    pub prior_sd: Option<Vec<f64>>,
    pub likelihood: LikelihoodConfig,
    /// Added to the latent path of each count stage.
    #[serde(default)]
    pub stage_offsets: [f64; 3],
    /// Standard normal features with these true weights.
    #[serde(default)]
    pub weights: Vec<f64>,
    #[serde(default)]
    pub stockouts: Vec<Window>,
    #[serde(default)]
    pub seasonal_drift: Option<SeasonalDrift>,
    #[serde(default = "default_prefix")]
    pub item_prefix: String,
}

fn default_prefix() -> String {
    "item".into()
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_items == 0 || self.length == 0 {
            return Err(Error::Config(
                "simulation needs items and a positive length".into(),
            ));
        }
        let issm = build_issm(&self.components, self.weights.len())?;
        if self.strengths.len() != issm.num_strengths() {
            return Err(Error::Config(format!(
                "simulation needs {} strengths, got {}",
                issm.num_strengths(),
                self.strengths.len()
            )));
        }
        if self.strengths.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::Config(
                "simulation strengths must be nonnegative".into(),
            ));
        }
        if let Some(m) = &self.prior_mean {
            if m.len() != issm.total_dim() {
                return Err(Error::Config(format!(
                    "prior_mean needs {} values",
                    issm.total_dim()
                )));
            }
        }
        if let Some(s) = &self.prior_sd {
            if s.len() != issm.num_prior_sd() || s.iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::Config(format!(
                    "prior_sd needs {} nonnegative values",
                    issm.num_prior_sd()
                )));
            }
        }
        if let Some(d) = &self.seasonal_drift {
            if d.shape.is_empty() {
                return Err(Error::Config("seasonal drift needs a shape".into()));
            }
        }
        if self.stockouts.iter().any(|w| w.start + w.len > self.length) {
            return Err(Error::Config("stockout window beyond the series".into()));
        }
        self.likelihood.validate()
    }
}

/// Ground truth of one simulated item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemTruth {
    pub item_id: String,
    /// Latent path per stage (one for single-stage likelihoods).
    pub latent: Vec<Vec<f64>>,
    /// Targets before out-of-stock masking.
    pub demand: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTruth {
    pub config: SimulationConfig,
    pub items: Vec<ItemTruth>,
}

/// Draws `config.n_items` series. Item `k` uses its own random stream, so
/// each series depends only on `seed` and its id.
pub fn simulate(config: &SimulationConfig, seed: u64) -> Result<(SeriesSet, SimulationTruth)> {
    config.validate()?;
    let p = config.weights.len();
    let issm = build_issm(&config.components, p)?;
    let d = issm.total_dim();
    let range = TimeRange::new(config.start, config.length);
    let traj = issm.trajectory(&range, &config.strengths)?;
    let prior_mean = config.prior_mean.clone().unwrap_or_else(|| vec![0.0; d]);
    let prior_sd = issm.expand_prior_sd(
        &config
            .prior_sd
            .clone()
            .unwrap_or_else(|| vec![0.0; issm.num_prior_sd()]),
    );
    let n_stages = if config.likelihood.single().is_some() {
        1
    } else {
        3
    };
    let width = (config.n_items.max(1) - 1).to_string().len();

    let mut items = BTreeMap::new();
    let mut truth = Vec::with_capacity(config.n_items);
    for k in 0..config.n_items {
        let item_id = format!("{}{:0width$}", config.item_prefix, k);
        let mut rng = path_rng(seed, &item_id, 0);
        let features: Vec<f64> = (0..config.length * p)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let base: Vec<f64> = (0..config.length)
            .map(|t| {
                let b = if p == 0 {
                    0.0
                } else {
                    dot(&features[t * p..(t + 1) * p], &config.weights)
                };
                let drift = config.seasonal_drift.as_ref().map_or(0.0, |s| {
                    let frac = if config.length > 1 {
                        t as f64 / (config.length - 1) as f64
                    } else {
                        0.0
                    };
                    let amp = s.amplitude_start + frac * (s.amplitude_end - s.amplitude_start);
                    let idx = (config.start + t as i64).rem_euclid(s.shape.len() as i64) as usize;
                    amp * s.shape[idx]
                });
                b + drift
            })
            .collect();

        let latent: Vec<Vec<f64>> = (0..n_stages)
            .map(|stage| {
                let l0: Vec<f64> = prior_mean
                    .iter()
                    .zip(&prior_sd)
                    .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let eps: Vec<f64> = (0..config.length - 1)
                    .map(|_| rng.sample(StandardNormal))
                    .collect();
                let shift = if n_stages == 3 {
                    config.stage_offsets[stage]
                } else {
                    0.0
                };
                traj.forward_pass(&eps, &l0, Some(&base))
                    .into_iter()
                    .map(|y| y + shift)
                    .collect()
            })
            .collect();

        let demand: Vec<f64> = (0..config.length)
            .map(|t| match config.likelihood {
                LikelihoodConfig::MultiStage { transfer } => sample_count(
                    [latent[0][t], latent[1][t], latent[2][t]],
                    transfer,
                    &mut rng,
                ),
                other => {
                    let lik = other.single().unwrap();
                    let z = lik.sample(latent[0][t], &mut rng);
                    match lik {
                        Likelihood::Bernoulli => 0.5 * (z + 1.0),
                        _ => z,
                    }
                }
            })
            .collect();

        let mut z: Vec<Option<f64>> = demand.iter().map(|&v| Some(v)).collect();
        let mut availability = vec![1.0; config.length];
        for w in &config.stockouts {
            for t in w.start..w.start + w.len {
                availability[t] = 0.0;
                // Sales during a stockout are recorded as zero.
                z[t] = Some(0.0);
            }
        }
        items.insert(
            item_id.clone(),
            ItemSeries {
                item_id: item_id.clone(),
                start: config.start,
                z,
                availability,
                features,
                calendar: BTreeMap::new(),
            },
        );
        truth.push(ItemTruth {
            item_id,
            latent,
            demand,
        });
    }
    Ok((
        SeriesSet {
            feature_names: (0..p).map(|j| format!("x{j}")).collect(),
            calendar_names: Vec::new(),
            items,
        },
        SimulationTruth {
            config: config.clone(),
            items: truth,
        },
    ))
}
