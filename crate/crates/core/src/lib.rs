//! Latent state forecasting for intermittent count time series.
//!
//! Composable innovation state space models ([`issm`]) with non-Gaussian
//! likelihoods ([`likelihood`]), Laplace-approximate maximum likelihood
//! training ([`training`]) whose inner Newton steps and outer gradients all
//! run through a square-root information smoother ([`srif`]), and sample
//! path forecasting ([`forecast`]) with quantile-loss evaluation
//! ([`evaluation`]). The [`data`] module holds CSV/JSON I/O, synthetic data
//! and the parallel fleet runner behind the `latent-state` binary.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod forecast;
pub mod issm;
pub mod lbfgs;
pub mod likelihood;
pub mod mode;
pub mod params;
pub mod srif;
pub mod training;

pub use error::{Error, Result};
