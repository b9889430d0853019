//! Trains the three-stage count model on an intermittent series and prints
//! per-day forecast quantiles.

use latent_state::data::{simulate, SimulationConfig};
use latent_state::forecast::sample_paths;
use latent_state::issm::{
    compose, make_level, make_seasonality, Bounds, SeasonalityPattern, TimeRange,
};
use latent_state::likelihood::TransferFunction;
use latent_state::training::{fit_multi_stage, TrainingConfig};
use serde_json::json;

fn main() -> latent_state::Result<()> {
    let sim: SimulationConfig = serde_json::from_value(json!({
        "n_items": 1,
        "length": 180,
        "components": [
            { "kind": "level" },
            { "kind": "seasonality", "pattern": { "preset": "day_of_week" } }
        ],
        "strengths": [0.05, 0.05],
        "prior_mean": [-0.5, 0.0, 0.0, 0.0, 0.0, 0.3, 0.8, 0.8],
        "prior_sd": [0.0, 0.0],
        "likelihood": { "kind": "multi_stage" },
        "stage_offsets": [0.0, 0.3, 0.5]
    }))
    .expect("valid simulation config");
    let (set, _) = simulate(&sim, 9)?;
    let series = set.items.values().next().expect("one item");
    let zeros = series.z.iter().filter(|z| **z == Some(0.0)).count();
    println!("{} days, {zeros} zeros", series.len());

    let issm = compose(
        vec![
            make_level(Bounds::default())?,
            make_seasonality(Bounds::default(), SeasonalityPattern::day_of_week())?,
        ],
        0,
    )?;
    let range = TimeRange::new(series.start, series.len());
    let model = fit_multi_stage(
        &issm,
        &range,
        TransferFunction::default(),
        &[],
        &series.z,
        &series.availability,
        &TrainingConfig::default(),
    )?;
    for (k, stage) in model.stages.iter().enumerate() {
        println!(
            "stage {k}: {} observed days, strengths {:.3?}, fallback {}",
            stage.observed_days, stage.params.strengths, stage.fallback
        );
    }

    let fc = sample_paths(
        &model,
        &model.horizon_range(14),
        &[],
        1000,
        3,
        &series.item_id,
    )?;
    let (p50, p90) = (fc.step_quantiles(0.5)?, fc.step_quantiles(0.9)?);
    let p_zero: Vec<f64> = (0..14)
        .map(|t| fc.paths.iter().filter(|p| p[t] == 0.0).count() as f64 / fc.paths.len() as f64)
        .collect();
    println!("day  P(0)  P50  P90");
    for t in 0..14 {
        println!("{t:>3} {:>5.2} {:>4} {:>4}", p_zero[t], p50[t], p90[t]);
    }
    Ok(())
}
