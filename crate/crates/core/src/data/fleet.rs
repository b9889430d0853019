//! Per-item training, forecasting and evaluation over a worker pool.
//!
//! Items share only read-only configuration and data. A failing item (an
//! error or a panic) is recorded and does not affect any other item.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalItem, EvaluationSpec, MetricRecord};
use crate::forecast::{order_statistic, sample_paths, ForecastSamples};
use crate::issm::CompositeIssm;
use crate::likelihood::multi_stage_decompose;
use crate::mode::Observations;
use crate::training::{
    fit, model_from, single_stage_observations, stage_likelihoods, TrainedModel,
};

use super::config::{build_issm, LikelihoodConfig, RunConfig};
use super::series::{
    save_series, write_quantiles, write_samples, ItemSeries, QuantileRow, SeriesSet,
};
use super::simulate::simulate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub item_id: String,
    pub error: String,
}

/// P5/P50/P95 wall-clock seconds of one phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub phase: String,
    pub n: usize,
    pub p5: f64,
    pub p50: f64,
    pub p95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetSummary {
    pub n_items: usize,
    pub n_succeeded: usize,
    pub n_failed: usize,
    /// Items with at least one stage left at the fallback parameters.
    pub n_fallback: usize,
    pub failures: Vec<FailureRecord>,
    pub timings: Vec<TimingReport>,
}

impl FleetSummary {
    pub fn all_failed(&self) -> bool {
        self.n_items > 0 && self.n_failed == self.n_items
    }
}

pub fn build_pool(parallelism: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = parallelism {
        b = b.num_threads(n);
    }
    b.build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))
}

/// Runs `job` on every item in the pool, turning errors and panics into
/// failure messages. Results come back in item order.
fn run_items<T: Send, F>(
    pool: &rayon::ThreadPool,
    ids: &[&String],
    job: F,
) -> Vec<std::result::Result<T, String>>
where
    F: Fn(&str) -> Result<T> + Sync,
{
    pool.install(|| {
        ids.par_iter()
            .map(|id| match catch_unwind(AssertUnwindSafe(|| job(id))) {
                Ok(Ok(v)) => Ok(v),
                Ok(Err(e)) => Err(e.to_string()),
                Err(p) => Err(p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panic".into())),
            })
            .collect()
    })
}

/// Trains one item, returning the model and per-stage seconds.
pub fn train_item(
    issm: &CompositeIssm,
    series: &ItemSeries,
    config: &RunConfig,
) -> Result<(TrainedModel, Vec<f64>)> {
    let range = series.range()?;
    let mut seconds = Vec::new();
    let model = match config.likelihood {
        LikelihoodConfig::MultiStage { transfer } => {
            let data = multi_stage_decompose(&series.z, &series.availability)?;
            let mut stages = Vec::with_capacity(3);
            for (sd, lik) in data.iter().zip(stage_likelihoods(transfer)) {
                let started = Instant::now();
                let obs = Observations {
                    targets: &sd.targets,
                    active: &sd.active,
                    weights: &sd.weights,
                };
                stages.push(fit(
                    issm,
                    &range,
                    lik,
                    &series.features,
                    obs,
                    &config.training,
                )?);
                seconds.push(started.elapsed().as_secs_f64());
            }
            model_from(issm, &range, true, stages)
        }
        single => {
            let lik = single.single().unwrap();
            let started = Instant::now();
            let (targets, active, weights) =
                single_stage_observations(&lik, &series.z, &series.availability)?;
            let obs = Observations {
                targets: &targets,
                active: &active,
                weights: &weights,
            };
            let stage = fit(issm, &range, lik, &series.features, obs, &config.training)?;
            seconds.push(started.elapsed().as_secs_f64());
            model_from(issm, &range, false, vec![stage])
        }
    };
    Ok((model, seconds))
}

fn percentiles(phase: String, mut v: Vec<f64>) -> Option<TimingReport> {
    if v.is_empty() {
        return None;
    }
    let n = v.len();
    Some(TimingReport {
        phase,
        n,
        p5: order_statistic(&mut v, 0.05).ok()?,
        p50: order_statistic(&mut v, 0.5).ok()?,
        p95: order_statistic(&mut v, 0.95).ok()?,
    })
}

/// Trained models keyed by item, with the run summary.
#[derive(Debug, Clone)]
pub struct FleetTraining {
    pub models: BTreeMap<String, TrainedModel>,
    pub summary: FleetSummary,
}

pub fn train_fleet(set: &SeriesSet, config: &RunConfig) -> Result<FleetTraining> {
    let issm = build_issm(&config.components, set.num_features())?;
    let pool = build_pool(config.parallelism)?;
    let ids: Vec<&String> = set.items.keys().collect();
    let results = run_items(&pool, &ids, |id| train_item(&issm, &set.items[id], config));

    let mut models = BTreeMap::new();
    let mut failures = Vec::new();
    let mut stage_times: Vec<Vec<f64>> = Vec::new();
    for (id, r) in ids.iter().zip(results) {
        match r {
            Ok((m, secs)) => {
                for (k, s) in secs.into_iter().enumerate() {
                    if stage_times.len() <= k {
                        stage_times.push(Vec::new());
                    }
                    stage_times[k].push(s);
                }
                models.insert((*id).clone(), m);
            }
            Err(e) => {
                warn!("item {id} failed: {e}");
                failures.push(FailureRecord {
                    item_id: (*id).clone(),
                    error: e,
                });
            }
        }
    }
    let timings = stage_times
        .into_iter()
        .enumerate()
        .filter_map(|(k, v)| percentiles(format!("train/stage{k}"), v))
        .collect();
    let summary = FleetSummary {
        n_items: ids.len(),
        n_succeeded: models.len(),
        n_failed: failures.len(),
        n_fallback: models.values().filter(|m| m.fallback).count(),
        failures,
        timings,
    };
    Ok(FleetTraining { models, summary })
}

/// Forecasts every model. `horizon_data` supplies features and calendar
/// columns for the horizon when the model needs them.
pub fn forecast_fleet(
    models: &BTreeMap<String, TrainedModel>,
    horizon_data: Option<&SeriesSet>,
    horizon: usize,
    n_paths: usize,
    seed: u64,
    parallelism: Option<usize>,
) -> Result<(
    BTreeMap<String, ForecastSamples>,
    Vec<FailureRecord>,
    Option<TimingReport>,
)> {
    let pool = build_pool(parallelism)?;
    let ids: Vec<&String> = models.keys().collect();
    let results = run_items(&pool, &ids, |id| {
        let model = &models[id];
        let started = Instant::now();
        let mut range = model.horizon_range(horizon);
        let mut features = Vec::new();
        if let Some(item) = horizon_data.and_then(|h| h.items.get(id)) {
            if item.start != range.start || item.len() < horizon {
                return Err(Error::Data(format!(
                    "item {id}: horizon data must cover t={}..{}",
                    range.start,
                    range.start + horizon as i64
                )));
            }
            let item = item.slice(0, horizon)?;
            range = item.range()?;
            features = item.features;
        } else if model.feature_dim > 0 {
            return Err(Error::Data(format!(
                "item {id}: no features for the horizon"
            )));
        }
        let s = sample_paths(model, &range, &features, n_paths, seed, id)?;
        Ok((s, started.elapsed().as_secs_f64()))
    });
    let mut samples = BTreeMap::new();
    let mut failures = Vec::new();
    let mut times = Vec::new();
    for (id, r) in ids.iter().zip(results) {
        match r {
            Ok((s, secs)) => {
                samples.insert((*id).clone(), s);
                times.push(secs);
            }
            Err(e) => failures.push(FailureRecord {
                item_id: (*id).clone(),
                error: e,
            }),
        }
    }
    Ok((samples, failures, percentiles("forecast".into(), times)))
}

/// Quantile rows for every step and every configured span that fits.
pub fn quantile_rows(
    samples: &BTreeMap<String, ForecastSamples>,
    spec: &EvaluationSpec,
) -> Result<Vec<QuantileRow>> {
    let mut rows = Vec::new();
    for (id, s) in samples {
        let spans = (0..s.horizon).map(|t| (t, 1)).chain(
            spec.spans
                .iter()
                .map(|sp| (sp.lead, sp.span))
                .filter(|&(l, n)| n > 1 && l + n <= s.horizon),
        );
        for (lead, span) in spans {
            for &rho in &spec.quantiles {
                rows.push(QuantileRow {
                    item_id: id.clone(),
                    lead,
                    span,
                    rho,
                    value: s.span_quantile(lead, span, rho)?,
                });
            }
        }
    }
    Ok(rows)
}

/// Metrics of sample paths against actual series aligned with the forecast
/// start. Unobserved actual days count as out of stock.
pub fn evaluate_fleet(
    samples: &BTreeMap<String, ForecastSamples>,
    actuals: &SeriesSet,
    spec: &EvaluationSpec,
) -> Result<Vec<MetricRecord>> {
    let mut aligned = Vec::new();
    for (id, s) in samples {
        let Some(a) = actuals.items.get(id) else {
            return Err(Error::Data(format!("no actuals for item {id}")));
        };
        let offset = s.start - a.start;
        if offset < 0 || offset as usize + s.horizon > a.len() {
            return Err(Error::Data(format!(
                "actuals of item {id} do not cover the forecast"
            )));
        }
        let a = a.slice(offset as usize, s.horizon)?;
        let availability: Vec<f64> =
            a.z.iter()
                .zip(&a.availability)
                .map(|(z, &p)| if z.is_some() { p } else { 0.0 })
                .collect();
        aligned.push((a.targets_or_zero(), availability, s));
    }
    let items: Vec<EvalItem> = aligned
        .iter()
        .map(|(z, p, s)| EvalItem {
            actuals: z,
            availability: p,
            samples: s,
        })
        .collect();
    evaluate(&items, spec)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(f, value)?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    Ok(serde_json::from_reader(f)?)
}

/// Loads the configured CSV or simulates the configured data.
pub fn load_or_simulate(config: &RunConfig) -> Result<SeriesSet> {
    if let Some(path) = &config.data {
        return super::series::load_series(path);
    }
    match &config.simulation {
        Some(sim) => Ok(simulate(sim, config.forecast.seed)?.0),
        None => Err(Error::Config(
            "config needs either data or simulation".into(),
        )),
    }
}

/// Train on all but the last `horizon` steps of every series, forecast the
/// held-out steps and score them. Writes `model.json`, `samples.csv`,
/// `quantiles.csv`, `metrics.json` and `summary.json` to `out`.
pub fn run_pipeline(config: &RunConfig, set: &SeriesSet, out: &Path) -> Result<FleetSummary> {
    let h = config.forecast.horizon;
    if config.evaluation.required_horizon() > h {
        return Err(Error::Config(format!(
            "evaluation spans need a horizon of {}, configured {h}",
            config.evaluation.required_horizon()
        )));
    }
    std::fs::create_dir_all(out)?;
    let mut train = SeriesSet {
        feature_names: set.feature_names.clone(),
        calendar_names: set.calendar_names.clone(),
        items: BTreeMap::new(),
    };
    let mut test = train.clone();
    let mut failures = Vec::new();
    for (id, s) in &set.items {
        if s.len() <= h {
            failures.push(FailureRecord {
                item_id: id.clone(),
                error: format!(
                    "series of length {} is not longer than the horizon {h}",
                    s.len()
                ),
            });
            continue;
        }
        train.items.insert(id.clone(), s.slice(0, s.len() - h)?);
        test.items.insert(id.clone(), s.slice(s.len() - h, h)?);
    }

    let trained = train_fleet(&train, config)?;
    let (samples, fc_failures, fc_timing) = forecast_fleet(
        &trained.models,
        Some(&test),
        h,
        config.forecast.n_paths,
        config.forecast.seed,
        config.parallelism,
    )?;
    let metrics = if samples.is_empty() {
        Vec::new()
    } else {
        evaluate_fleet(&samples, &test, &config.evaluation)?
    };

    write_json(&trained.models, &out.join("model.json"))?;
    write_samples(
        samples.iter().map(|(k, v)| (k.as_str(), v)),
        std::io::BufWriter::new(std::fs::File::create(out.join("samples.csv"))?),
    )?;
    write_quantiles(
        &quantile_rows(&samples, &config.evaluation)?,
        std::io::BufWriter::new(std::fs::File::create(out.join("quantiles.csv"))?),
    )?;
    write_json(&metrics, &out.join("metrics.json"))?;
    if config.data.is_none() {
        save_series(set, &out.join("data.csv"))?;
    }

    failures.extend(trained.summary.failures);
    failures.extend(fc_failures);
    failures.sort_by(|a, b| a.item_id.cmp(&b.item_id));
    let n_failed = {
        let mut ids: Vec<&String> = failures.iter().map(|f| &f.item_id).collect();
        ids.dedup();
        ids.len()
    };
    let mut timings = trained.summary.timings;
    timings.extend(fc_timing);
    let summary = FleetSummary {
        n_items: set.items.len(),
        n_succeeded: set.items.len() - n_failed,
        n_failed,
        n_fallback: trained.summary.n_fallback,
        failures,
        timings,
    };
    write_json(&summary, &out.join("summary.json"))?;
    info!(
        "pipeline finished: {} of {} items succeeded",
        summary.n_succeeded, summary.n_items
    );
    Ok(summary)
}
