//! Newton mode finding for a Poisson level model on a sparse count series.

use latent_state::issm::{compose, make_level, Bounds, TimeRange};
use latent_state::likelihood::Likelihood;
use latent_state::mode::{find_mode, ModeOptions, ModeProblem, Observations};

fn main() -> latent_state::Result<()> {
    let z = [
        0.0, 0.0, 3.0, 0.0, 1.0, 0.0, 0.0, 7.0, 2.0, 0.0, 0.0, 0.0, 1.0, 0.0, 4.0,
    ];
    let t = z.len();
    let issm = compose(vec![make_level(Bounds::default())?], 0)?;
    let traj = issm.trajectory(&TimeRange::new(0, t), &[0.1])?;
    let (active, weights, offset) = (vec![true; t], vec![1.0; t], vec![0.0; t]);
    let problem = ModeProblem {
        trajectory: &traj,
        prior_mean: &[0.0],
        prior_sd: &[1.0],
        offset: &offset,
        likelihood: Likelihood::poisson_twice_logistic(0.01),
        obs: Observations {
            targets: &z,
            active: &active,
            weights: &weights,
        },
    };
    let mode = find_mode(&problem, &ModeOptions::default())?;
    println!(
        "converged {} after {} iterations",
        mode.converged, mode.iterations
    );
    println!("objective trace {:.4?}", mode.f_trace);
    let rates: Vec<f64> = mode
        .y_hat
        .iter()
        .map(|&y| problem.likelihood.mean(y))
        .collect();
    println!("rate at the mode {:.2?}", rates);
    Ok(())
}
