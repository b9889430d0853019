//! Hand-built trained models with pinned final states.

use latent_state::issm::{compose, make_level, Bounds, CompositeIssm, TimeRange};
use latent_state::likelihood::Likelihood;
use latent_state::params::Decoded;
use latent_state::srif::SqrtGaussian;
use latent_state::training::{model_from, TrainedModel, TrainedStage};

pub fn level() -> CompositeIssm {
    compose(vec![make_level(Bounds::default()).unwrap()], 0).unwrap()
}

/// A stage with the given strength whose final state is `N(mean, sd²)`.
pub fn pinned_stage(likelihood: Likelihood, strength: f64, mean: f64, sd: f64) -> TrainedStage {
    TrainedStage {
        likelihood,
        raw: vec![],
        params: Decoded {
            weights: vec![],
            strengths: vec![strength],
            prior_mean: vec![mean],
            prior_sd: vec![sd],
            likelihood: likelihood.params(),
        },
        fallback: false,
        observed_days: 0,
        psi: None,
        objective: None,
        optimizer: None,
        mode_iterations: 0,
        mode_converged: true,
        final_state: SqrtGaussian::diagonal(&[mean], &[sd]),
        error: None,
        mode: None,
    }
}

pub fn pinned_model(stages: Vec<TrainedStage>) -> TrainedModel {
    let multi = stages.len() == 3;
    model_from(&level(), &TimeRange::new(0, 50), multi, stages)
}
