//! A stock-out zeroes the last weeks of sales. Training with the
//! availability mask ignores those days; treating them as real zeros drags
//! the forecast down.

use latent_state::data::simulate::Window;
use latent_state::data::{simulate, SimulationConfig};
use latent_state::forecast::sample_paths;
use latent_state::issm::{compose, make_level, Bounds, TimeRange};
use latent_state::likelihood::Likelihood;
use latent_state::training::{fit_single_stage, TrainingConfig};
use serde_json::json;

fn main() -> latent_state::Result<()> {
    let mut sim: SimulationConfig = serde_json::from_value(json!({
        "n_items": 1,
        "length": 120,
        "components": [{ "kind": "level" }],
        "strengths": [0.02],
        "prior_mean": [1.6],
        "prior_sd": [0.0],
        "likelihood": { "kind": "poisson" }
    }))
    .expect("valid simulation config");
    sim.stockouts = vec![Window {
        start: 100,
        len: 20,
    }];
    let (set, truth) = simulate(&sim, 5)?;
    let series = set.items.values().next().expect("one item");

    let issm = compose(vec![make_level(Bounds::default())?], 0)?;
    let range = TimeRange::new(series.start, series.len());
    let lik = Likelihood::poisson_twice_logistic(0.01);
    let true_rate = lik.mean(truth.items[0].latent[0][119]);
    let config = TrainingConfig::default();
    let ignore_mask = vec![1.0; series.len()];
    for (label, availability) in [("masked", &series.availability), ("unmasked", &ignore_mask)] {
        let model = fit_single_stage(&issm, &range, lik, &[], &series.z, availability, &config)?;
        let fc = sample_paths(&model, &model.horizon_range(7), &[], 500, 2, "x")?;
        let mean = fc.paths.iter().flatten().sum::<f64>() / (7 * fc.paths.len()) as f64;
        println!("{label:>8}: forecast mean {mean:.2} per day");
    }
    println!("   truth: {true_rate:.2} per day at the end of training");
    Ok(())
}
