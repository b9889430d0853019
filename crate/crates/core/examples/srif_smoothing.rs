//! Smooths a Gaussian level model through a gap of missing observations.

use latent_state::issm::{compose, make_level, Bounds, TimeRange};
use latent_state::likelihood::GaussianizedObservation;
use latent_state::srif::{smooth, GaussianModel};

fn main() -> latent_state::Result<()> {
    let issm = compose(vec![make_level(Bounds::default())?], 0)?;
    let t = 20;
    let traj = issm.trajectory(&TimeRange::new(0, t), &[0.4])?;
    let obs: Vec<GaussianizedObservation> = (0..t)
        .map(|i| {
            if (8..13).contains(&i) {
                GaussianizedObservation::missing()
            } else {
                let z = if i < 8 { 1.0 } else { 3.0 };
                GaussianizedObservation::observed(z, 0.25)
            }
        })
        .collect();
    let model = GaussianModel::new(&traj, &[0.0], &[2.0]);
    let res = smooth(&model, &obs)?;
    println!("log likelihood {:.4}", res.log_likelihood);
    println!(" t   observed      mean     sd");
    for i in 0..t {
        let z = if obs[i].missing {
            "-".to_string()
        } else {
            format!("{:.1}", obs[i].z_tilde)
        };
        println!(
            "{i:>2} {z:>10} {:>9.3} {:>6.3}",
            res.y_mean[i],
            res.y_var[i].sqrt()
        );
    }
    Ok(())
}
