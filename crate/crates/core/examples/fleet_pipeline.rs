//! Runs the full simulate, train, forecast and evaluate pipeline from a JSON
//! config. Pass a config path and an output directory, or run without
//! arguments to use the bundled intermittent-demand config.

use std::path::PathBuf;

use latent_state::data::fleet::{load_or_simulate, read_json, run_pipeline};
use latent_state::data::RunConfig;

fn main() -> latent_state::Result<()> {
    let mut args = std::env::args().skip(1);
    let config = args.next().map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/configs/intermittent.json")
    });
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("latent-state-fleet"));

    let config = RunConfig::load(&config)?;
    let set = load_or_simulate(&config)?;
    let summary = run_pipeline(&config, &set, &out)?;
    println!(
        "{} items: {} trained, {} failed, {} on fallback parameters",
        summary.n_items, summary.n_succeeded, summary.n_failed, summary.n_fallback
    );
    for t in &summary.timings {
        println!(
            "  {:<14} P5 {:.3}s  P50 {:.3}s  P95 {:.3}s",
            t.phase, t.p5, t.p50, t.p95
        );
    }
    let metrics: serde_json::Value = read_json(&out.join("metrics.json"))?;
    println!("metrics: {metrics}");
    println!("artifacts in {}", out.display());
    Ok(())
}
