//! Scores a trained forecast against a flat baseline with span P50 and P90
//! risk.

use latent_state::data::{simulate, SimulationConfig};
use latent_state::evaluation::{evaluate, EvalItem, EvaluationSpec, Span};
use latent_state::forecast::{sample_paths, ForecastSamples};
use latent_state::issm::{compose, make_level, Bounds, TimeRange};
use latent_state::likelihood::Likelihood;
use latent_state::training::{fit_single_stage, TrainingConfig};
use serde_json::json;

fn main() -> latent_state::Result<()> {
    let (train, horizon) = (100, 14);
    let sim: SimulationConfig = serde_json::from_value(json!({
        "n_items": 10,
        "length": train + horizon,
        "components": [{ "kind": "level" }],
        "strengths": [0.15],
        "prior_mean": [1.0],
        "prior_sd": [0.5],
        "likelihood": { "kind": "poisson" }
    }))
    .expect("valid simulation config");
    let (set, _) = simulate(&sim, 17)?;
    let issm = compose(vec![make_level(Bounds::default())?], 0)?;
    let lik = Likelihood::poisson_twice_logistic(0.01);

    let mut trained = Vec::new();
    let mut flat = Vec::new();
    for (id, s) in &set.items {
        let head = s.slice(0, train)?;
        let range = TimeRange::new(head.start, train);
        let model = fit_single_stage(
            &issm,
            &range,
            lik,
            &[],
            &head.z,
            &head.availability,
            &TrainingConfig::default(),
        )?;
        trained.push(sample_paths(
            &model,
            &model.horizon_range(horizon),
            &[],
            300,
            4,
            id,
        )?);
        // Baseline: the training mean, repeated.
        let mean = head.z.iter().flatten().sum::<f64>() / train as f64;
        flat.push(ForecastSamples {
            start: range.start + train as i64,
            horizon,
            paths: vec![vec![mean; horizon]],
        });
    }
    let actuals: Vec<Vec<f64>> = set
        .items
        .values()
        .map(|s| s.z[train..].iter().map(|z| z.unwrap_or(0.0)).collect())
        .collect();
    let availability: Vec<&[f64]> = set
        .items
        .values()
        .map(|s| &s.availability[train..])
        .collect();

    let spec = EvaluationSpec {
        spans: vec![Span { lead: 0, span: 7 }, Span { lead: 7, span: 7 }],
        quantiles: vec![0.5, 0.9],
        ..EvaluationSpec::default()
    };
    for (label, samples) in [("latent", &trained), ("flat", &flat)] {
        let items: Vec<EvalItem> = (0..actuals.len())
            .map(|i| EvalItem {
                actuals: &actuals[i],
                availability: availability[i],
                samples: &samples[i],
            })
            .collect();
        println!("{label}");
        for r in evaluate(&items, &spec)? {
            println!("  {}", serde_json::to_string(&r).expect("serializable"));
        }
    }
    Ok(())
}
