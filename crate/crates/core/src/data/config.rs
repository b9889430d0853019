//! JSON run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::EvaluationSpec;
use crate::forecast::DEFAULT_NUM_PATHS;
use crate::issm::{
    compose, make_level, make_level_trend, make_seasonality, Bounds, CompositeIssm, Damping,
    IssmComponent, SeasonalityPattern,
};
use crate::likelihood::{Likelihood, TransferFunction};
use crate::training::TrainingConfig;

use super::simulate::SimulationConfig;

/// Seasonality layout: a named preset or an explicit pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PatternConfig {
    Preset {
        preset: String,
        #[serde(default)]
        phase: usize,
    },
    Custom(SeasonalityPattern),
}

impl PatternConfig {
    pub fn build(&self) -> Result<SeasonalityPattern> {
        match self {
            PatternConfig::Custom(p) => {
                p.validate()?;
                Ok(p.clone())
            }
            PatternConfig::Preset { preset, phase } => {
                let p = match preset.as_str() {
                    "day_of_week" => SeasonalityPattern::day_of_week(),
                    "hour_of_day" => SeasonalityPattern::hour_of_day(),
                    "day_of_week_hourly" => SeasonalityPattern::day_of_week_hourly(),
                    "hour_of_week" => SeasonalityPattern::hour_of_week(),
                    "hour_of_week_workdays_grouped" => {
                        SeasonalityPattern::hour_of_week_workdays_grouped()
                    }
                    other => {
                        return Err(Error::Config(format!(
                            "unknown seasonality preset {other:?}"
                        )))
                    }
                };
                Ok(p.with_phase(*phase))
            }
        }
    }
}

/// One model component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ComponentConfig {
    Level {
        #[serde(default)]
        alpha: Bounds,
    },
    LevelTrend {
        #[serde(default)]
        alpha: Bounds,
        #[serde(default)]
        beta: Bounds,
        #[serde(default)]
        damping: Option<Damping>,
    },
    Seasonality {
        #[serde(default)]
        gamma: Bounds,
        pattern: PatternConfig,
    },
}

impl ComponentConfig {
    pub fn build(&self) -> Result<IssmComponent> {
        match self {
            ComponentConfig::Level { alpha } => make_level(*alpha),
            ComponentConfig::LevelTrend {
                alpha,
                beta,
                damping,
            } => make_level_trend(*alpha, *beta, *damping),
            ComponentConfig::Seasonality { gamma, pattern } => {
                make_seasonality(*gamma, pattern.build()?)
            }
        }
    }
}

pub fn build_issm(components: &[ComponentConfig], feature_dim: usize) -> Result<CompositeIssm> {
    let comps = components
        .iter()
        .map(ComponentConfig::build)
        .collect::<Result<Vec<_>>>()?;
    compose(comps, feature_dim)
}

/// Likelihood selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LikelihoodConfig {
    Gaussian {
        #[serde(default = "unit")]
        variance: f64,
    },
    Bernoulli,
    Poisson {
        #[serde(default)]
        transfer: TransferFunction,
    },
    /// Zero / one / `2 + Poisson` stages.
    MultiStage {
        #[serde(default)]
        transfer: TransferFunction,
    },
}

fn unit() -> f64 {
    1.0
}

impl Default for LikelihoodConfig {
    fn default() -> Self {
        LikelihoodConfig::MultiStage {
            transfer: TransferFunction::default(),
        }
    }
}

impl LikelihoodConfig {
    /// The single-stage likelihood, or `None` for the multi-stage model.
    pub fn single(&self) -> Option<Likelihood> {
        match *self {
            LikelihoodConfig::Gaussian { variance } => Some(Likelihood::Gaussian { variance }),
            LikelihoodConfig::Bernoulli => Some(Likelihood::Bernoulli),
            LikelihoodConfig::Poisson { transfer } => Some(Likelihood::Poisson { transfer }),
            LikelihoodConfig::MultiStage { .. } => None,
        }
    }

    /// Whether targets are counts (nonnegative integers).
    pub fn counts(&self) -> bool {
        matches!(
            self,
            LikelihoodConfig::Poisson { .. } | LikelihoodConfig::MultiStage { .. }
        )
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LikelihoodConfig::MultiStage { transfer } => Likelihood::Poisson {
                transfer: *transfer,
            }
            .validate(),
            other => other.single().unwrap().validate(),
        }
    }
}

/// Forecast settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastConfig {
    pub horizon: usize,
    pub n_paths: usize,
    pub seed: u64,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            horizon: 14,
            n_paths: DEFAULT_NUM_PATHS,
            seed: 0,
        }
    }
}

/// Everything a run needs. Paths are resolved relative to the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub components: Vec<ComponentConfig>,
    #[serde(default)]
    pub likelihood: LikelihoodConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub forecast: ForecastConfig,
    #[serde(default)]
    pub evaluation: EvaluationSpec,
    /// Worker threads; all cores when absent.
    #[serde(default)]
    pub parallelism: Option<usize>,
    /// Series CSV for `pipeline` (and the default for `train`).
    #[serde(default)]
    pub data: Option<PathBuf>,
    /// Synthetic data for `pipeline` when no CSV is given, and the
    /// generator for `simulate`.
    #[serde(default)]
    pub simulation: Option<SimulationConfig>,
    /// Output directory for `pipeline`.
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: RunConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    /// Reads and validates a config, resolving relative paths against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut c = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut c.data, &mut c.out].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(c)
    }

    /// Schema-level checks that need no data.
    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::Config("at least one component is required".into()));
        }
        build_issm(&self.components, 0)?;
        self.likelihood.validate()?;
        self.evaluation.validate()?;
        if self.forecast.horizon == 0 || self.forecast.n_paths == 0 {
            return Err(Error::Config("horizon and n_paths must be positive".into()));
        }
        if self.parallelism == Some(0) {
            return Err(Error::Config("parallelism must be at least 1".into()));
        }
        let t = &self.training;
        if !(t.fd_step > 0.0) || t.optimizer.memory == 0 {
            return Err(Error::Config("invalid optimizer settings".into()));
        }
        let r = &t.regularization;
        if [
            r.weights,
            r.strengths,
            r.prior_mean,
            r.prior_sd,
            r.likelihood,
        ]
        .iter()
        .any(|v| !(*v >= 0.0 && v.is_finite()))
        {
            return Err(Error::Config(
                "regularization strengths must be nonnegative".into(),
            ));
        }
        if !(t.center.prior_sd > 0.0 && t.center.variance > 0.0) {
            return Err(Error::Config(
                "center prior_sd and variance must be positive".into(),
            ));
        }
        if let Some(s) = &self.simulation {
            s.validate()?;
        }
        Ok(())
    }
}
