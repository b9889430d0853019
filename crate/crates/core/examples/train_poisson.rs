//! Simulates Poisson counts from a level model and recovers the smoothing
//! strength by Laplace-approximate maximum likelihood.

use latent_state::data::{simulate, SimulationConfig};
use latent_state::forecast::sample_paths;
use latent_state::issm::{compose, make_level, Bounds, TimeRange};
use latent_state::likelihood::{Likelihood, TransferFunction};
use latent_state::training::{fit_single_stage, TrainingConfig};
use serde_json::json;

fn main() -> latent_state::Result<()> {
    let sim: SimulationConfig = serde_json::from_value(json!({
        "n_items": 3,
        "length": 300,
        "components": [{ "kind": "level" }],
        "strengths": [0.1],
        "prior_mean": [1.5],
        "prior_sd": [0.0],
        "likelihood": { "kind": "poisson", "transfer": { "kind": "exponential" } }
    }))
    .expect("valid simulation config");
    let (set, _) = simulate(&sim, 42)?;

    let issm = compose(vec![make_level(Bounds::default())?], 0)?;
    let lik = Likelihood::Poisson {
        transfer: TransferFunction::Exponential,
    };
    for (id, series) in &set.items {
        let range = TimeRange::new(series.start, series.len());
        let model = fit_single_stage(
            &issm,
            &range,
            lik,
            &[],
            &series.z,
            &series.availability,
            &TrainingConfig::default(),
        )?;
        let stage = &model.stages[0];
        let opt = stage.optimizer.as_ref().expect("trained stage");
        println!(
            "{id}: alpha {:.3} (true 0.1), {} iterations, {:?}",
            stage.params.strengths[0], opt.iterations, opt.termination
        );
        let fc = sample_paths(&model, &model.horizon_range(14), &[], 400, 1, id)?;
        println!(
            "  next 14 days: P10 {:.0}, P50 {:.0}, P90 {:.0}",
            fc.span_quantile(0, 14, 0.1)?,
            fc.span_quantile(0, 14, 0.5)?,
            fc.span_quantile(0, 14, 0.9)?
        );
    }
    Ok(())
}
