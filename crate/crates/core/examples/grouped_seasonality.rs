//! Hour-of-week seasonality with and without tying the workdays together,
//! plus a custom pattern read from a calendar column.

use latent_state::issm::{
    compose, make_level, make_seasonality, Bounds, CalendarSource, SeasonalityPattern, TimeRange,
};

fn main() -> latent_state::Result<()> {
    for (name, pattern) in [
        ("hour of week", SeasonalityPattern::hour_of_week()),
        (
            "workdays grouped",
            SeasonalityPattern::hour_of_week_workdays_grouped(),
        ),
    ] {
        let counts = pattern.usage_counts();
        let issm = compose(
            vec![
                make_level(Bounds::default())?,
                make_seasonality(Bounds::default(), pattern)?,
            ],
            0,
        )?;
        println!(
            "{name:>16}: {} factors, state dim {}, uses per week min {} max {}",
            counts.len(),
            issm.total_dim(),
            counts.iter().min().unwrap(),
            counts.iter().max().unwrap()
        );
    }

    // Two factors switched by a promotion flag supplied with the data.
    let promo = SeasonalityPattern::new(
        2,
        None,
        CalendarSource::Column {
            name: "promo".into(),
        },
    )?;
    let issm = compose(
        vec![
            make_level(Bounds::default())?,
            make_seasonality(Bounds::default(), promo)?,
        ],
        0,
    )?;
    let flags = vec![0, 0, 1, 1, 0, 0, 0, 1, 0, 0];
    let range = TimeRange::new(0, flags.len()).with_column("promo", flags.clone())?;
    let traj = issm.trajectory(&range, &[0.1, 0.3])?;
    println!("\n t promo  a_t              g_t");
    for (i, f) in flags.iter().enumerate() {
        println!("{i:>2} {f:>5}  {:.2?}  {:.3?}", traj.a(i), traj.g(i));
    }
    Ok(())
}
