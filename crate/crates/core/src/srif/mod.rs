//! Square-root information filtering and smoothing.
//!
//! All Gaussian inference runs on unit upper triangular stochastic equation
//! systems with per-row standard deviations. Costs are linear in the series
//! length and cubic in the latent dimension.

mod filter;
mod system;

pub use filter::{
    backward_smooth, forward_filter, smooth, EpsConditional, ForwardState, GaussianModel,
    SmoothingResult, WeightModel,
};
pub use system::{eliminate, EquationSystem, Row, SqrtGaussian};
