//! Data ingestion, run configuration, synthetic data and the fleet runner.

pub mod config;
pub mod fleet;
pub mod series;
pub mod simulate;

pub use config::{ComponentConfig, ForecastConfig, LikelihoodConfig, PatternConfig, RunConfig};
pub use series::{load_series, read_series, save_series, write_series, ItemSeries, SeriesSet};
pub use simulate::{simulate, SimulationConfig, SimulationTruth};
