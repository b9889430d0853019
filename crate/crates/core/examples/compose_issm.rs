//! Builds a level-trend plus day-of-week model and runs one deterministic
//! path through it.

use latent_state::issm::{
    compose, make_level_trend, make_seasonality, Bounds, SeasonalityPattern, TimeRange,
};

fn main() -> latent_state::Result<()> {
    let issm = compose(
        vec![
            make_level_trend(Bounds::default(), Bounds::default(), None)?,
            make_seasonality(Bounds::default(), SeasonalityPattern::day_of_week())?,
        ],
        0,
    )?;
    println!(
        "state dim {}, {} strengths, {} prior sd slots",
        issm.total_dim(),
        issm.num_strengths(),
        issm.num_prior_sd()
    );
    for (c, l) in issm.components().iter().zip(issm.layout()) {
        println!("  {:<12} {:?}", c.name(), l);
    }

    let t = 14;
    let traj = issm.trajectory(&TimeRange::new(0, t), &[0.2, 0.05, 0.3])?;
    // Level 1, slope 0.1, a weekend bump on days 5 and 6.
    let mut l0 = vec![1.0, 0.1];
    l0.extend([0.0, 0.0, 0.0, 0.0, 0.0, 0.5, 0.5]);
    let quiet = vec![0.0; t - 1];
    let y = traj.forward_pass(&quiet, &l0, None);
    println!("without innovations: {:.2?}", y);

    let mut shock = quiet.clone();
    shock[3] = 1.0;
    let y = traj.forward_pass(&shock, &l0, None);
    println!("one shock at t=3:    {:.2?}", y);
    Ok(())
}
