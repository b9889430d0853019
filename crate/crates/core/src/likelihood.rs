//! Observation likelihoods `P(z | y)` written as potentials
//! `φ(y) = -log P(z | y)` with analytic derivatives up to third order.
//!
//! Supported families are Gaussian, Bernoulli with logistic link and Poisson
//! with an exponential, logistic or twice-logistic transfer function. All of
//! them are log-concave, so `φ'' > 0` everywhere.

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Observations whose curvature `φ''` falls below this are dropped for the
/// current Newton iteration.
pub const CURVATURE_FLOOR: f64 = 1e-10;

/// Default `κ` of the twice-logistic transfer.
pub const DEFAULT_KAPPA: f64 = 0.01;

/// Largest accepted twice-logistic `κ`. Beyond about 0.3088 the log rate
/// stops being concave near `y = -0.4`, and the Poisson potential loses
/// convexity for large counts.
pub const MAX_KAPPA: f64 = 0.3;

/// `log(1 + e^u)` without overflow or cancellation.
pub fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

/// Logistic sigmoid `1 / (1 + e^{-u})`.
pub fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`softplus`] for `x > 0`.
pub fn softplus_inverse(x: f64) -> f64 {
    if x > 30.0 {
        x + (-(-x).exp()).ln_1p()
    } else {
        x.exp_m1().ln()
    }
}

/// Map from latent value to Poisson rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransferFunction {
    /// `λ(y) = e^y`.
    Exponential,
    /// `λ(y) = log(1 + e^y)`.
    Logistic,
    /// `λ(y) = g(y (1 + κ g(y)))` with `g` the softplus.
    TwiceLogistic {
        #[serde(default = "default_kappa")]
        kappa: f64,
    },
}

fn default_kappa() -> f64 {
    DEFAULT_KAPPA
}

impl Default for TransferFunction {
    fn default() -> Self {
        TransferFunction::TwiceLogistic {
            kappa: DEFAULT_KAPPA,
        }
    }
}

/// `λ` and its first three derivatives at one point, plus the ratios
/// `λ^{(k)} / λ` evaluated without dividing by an underflowed rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferEval {
    pub lambda: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub log_lambda: f64,
    pub ratio1: f64,
    pub ratio2: f64,
    pub ratio3: f64,
}

/// Evaluates the transfer function and its derivatives at `y`.
pub fn transfer_eval(tf: TransferFunction, y: f64) -> TransferEval {
    match tf {
        TransferFunction::Exponential => {
            let e = y.exp();
            TransferEval {
                lambda: e,
                d1: e,
                d2: e,
                d3: e,
                log_lambda: y,
                ratio1: 1.0,
                ratio2: 1.0,
                ratio3: 1.0,
            }
        }
        TransferFunction::Logistic => softplus_chain(y, 1.0, 0.0, 0.0),
        TransferFunction::TwiceLogistic { kappa } => {
            let g = softplus(y);
            let s = sigmoid(y);
            let s1 = s * sigmoid(-y);
            let s2 = s1 * (1.0 - 2.0 * s);
            let u = y * (1.0 + kappa * g);
            let u1 = 1.0 + kappa * g + kappa * y * s;
            let u2 = 2.0 * kappa * s + kappa * y * s1;
            let u3 = 3.0 * kappa * s1 + kappa * y * s2;
            softplus_chain(u, u1, u2, u3)
        }
    }
}

/// Derivatives of `softplus(u(y))` given `u` and `u', u'', u'''`.
fn softplus_chain(u: f64, u1: f64, u2: f64, u3: f64) -> TransferEval {
    let lambda = softplus(u);
    let s = sigmoid(u);
    let s1 = s * sigmoid(-u);
    let s2 = s1 * (1.0 - 2.0 * s);
    let d1 = s * u1;
    let d2 = s1 * u1 * u1 + s * u2;
    let d3 = s2 * u1 * u1 * u1 + 3.0 * s1 * u1 * u2 + s * u3;
    if u < -30.0 {
        // softplus(u) = e^u (1 - e^u / 2 + ...): ratios of the exponential.
        let e = u.exp();
        TransferEval {
            lambda,
            d1,
            d2,
            d3,
            log_lambda: u + (-0.5 * e).ln_1p(),
            ratio1: u1,
            ratio2: u1 * u1 + u2,
            ratio3: u1 * u1 * u1 + 3.0 * u1 * u2 + u3,
        }
    } else {
        TransferEval {
            lambda,
            d1,
            d2,
            d3,
            log_lambda: lambda.ln(),
            ratio1: d1 / lambda,
            ratio2: d2 / lambda,
            ratio3: d3 / lambda,
        }
    }
}

/// Solves `λ(y) = rate` for `y`.
pub fn transfer_inverse(tf: TransferFunction, rate: f64) -> Result<f64> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::Range(format!(
            "transfer inverse needs a positive rate, got {rate}"
        )));
    }
    match tf {
        TransferFunction::Exponential => Ok(rate.ln()),
        TransferFunction::Logistic => Ok(softplus_inverse(rate)),
        TransferFunction::TwiceLogistic { .. } => {
            // λ is increasing; bracket then bisect on y.
            let f = |y: f64| transfer_eval(tf, y).log_lambda - rate.ln();
            let (mut lo, mut hi) = (-1.0, 1.0);
            while f(lo) > 0.0 {
                lo *= 2.0;
                if lo < -1e6 {
                    return Err(Error::Range(format!(
                        "cannot invert transfer at rate {rate}"
                    )));
                }
            }
            while f(hi) < 0.0 {
                hi *= 2.0;
                if hi > 1e6 {
                    return Err(Error::Range(format!(
                        "cannot invert transfer at rate {rate}"
                    )));
                }
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if f(mid) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-15 * hi.abs().max(1.0) {
                    break;
                }
            }
            Ok(0.5 * (lo + hi))
        }
    }
}

/// Likelihood family of a single stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Likelihood {
    /// `N(z | y, variance)`.
    Gaussian { variance: f64 },
    /// `P(z̃ | y) = σ(z̃ y)` for targets `z̃ ∈ {-1, +1}`.
    Bernoulli,
    /// `Poisson(z | λ(y))`.
    Poisson {
        #[serde(default)]
        transfer: TransferFunction,
    },
}

/// `φ` and its first three derivatives in `y`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PhiDerivs {
    pub phi: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

impl PhiDerivs {
    fn scaled(self, w: f64) -> Self {
        Self {
            phi: w * self.phi,
            d1: w * self.d1,
            d2: w * self.d2,
            d3: w * self.d3,
        }
    }
}

/// Gaussian stand-in `N(z̃ | y, σ²)` matching a potential's first two
/// derivatives at the expansion point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianizedObservation {
    pub z_tilde: f64,
    pub sigma_sq: f64,
    pub missing: bool,
}

impl GaussianizedObservation {
    pub fn observed(z_tilde: f64, sigma_sq: f64) -> Self {
        Self {
            z_tilde,
            sigma_sq,
            missing: false,
        }
    }

    pub fn missing() -> Self {
        Self {
            z_tilde: 0.0,
            sigma_sq: f64::INFINITY,
            missing: true,
        }
    }
}

impl Likelihood {
    pub fn poisson_twice_logistic(kappa: f64) -> Self {
        Likelihood::Poisson {
            transfer: TransferFunction::TwiceLogistic { kappa },
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Likelihood::Gaussian { variance } if !(*variance > 0.0 && variance.is_finite()) => {
                Err(Error::Config(format!(
                    "Gaussian variance must be positive, got {variance}"
                )))
            }
            Likelihood::Poisson {
                transfer: TransferFunction::TwiceLogistic { kappa },
            } if !(*kappa >= 0.0 && *kappa <= MAX_KAPPA) => Err(Error::Config(format!(
                "twice-logistic kappa must lie in [0, {MAX_KAPPA}], got {kappa}"
            ))),
            _ => Ok(()),
        }
    }

    /// Checks that `z` is a valid target for this family.
    pub fn check_target(&self, z: f64) -> Result<()> {
        if !z.is_finite() {
            return Err(Error::Data(format!("non-finite target {z}")));
        }
        match self {
            Likelihood::Gaussian { .. } => Ok(()),
            Likelihood::Bernoulli if z == 1.0 || z == -1.0 => Ok(()),
            Likelihood::Bernoulli => Err(Error::Data(format!(
                "Bernoulli target must be +1 or -1, got {z}"
            ))),
            Likelihood::Poisson { .. } if z >= 0.0 => Ok(()),
            Likelihood::Poisson { .. } => Err(Error::Data(format!(
                "Poisson target must be nonnegative, got {z}"
            ))),
        }
    }

    /// `ρ φ(y)` and derivatives for target `z` and availability weight `ρ`.
    pub fn phi_derivs(&self, z: f64, y: f64, weight: f64) -> Result<PhiDerivs> {
        self.check_target(z)?;
        Ok(self.phi_derivs_unchecked(z, y).scaled(weight))
    }

    pub(crate) fn phi_derivs_unchecked(&self, z: f64, y: f64) -> PhiDerivs {
        match *self {
            Likelihood::Gaussian { variance } => {
                let r = y - z;
                PhiDerivs {
                    phi: 0.5 * (std::f64::consts::TAU * variance).ln() + 0.5 * r * r / variance,
                    d1: r / variance,
                    d2: 1.0 / variance,
                    d3: 0.0,
                }
            }
            Likelihood::Bernoulli => {
                let d2 = sigmoid(y) * sigmoid(-y);
                PhiDerivs {
                    phi: softplus(-z * y),
                    d1: -z * sigmoid(-z * y),
                    d2,
                    d3: d2 * (1.0 - 2.0 * sigmoid(y)),
                }
            }
            Likelihood::Poisson {
                transfer: TransferFunction::Exponential,
            } => {
                let e = y.exp();
                PhiDerivs {
                    phi: e - z * y + ln_factorial(z),
                    d1: e - z,
                    d2: e,
                    d3: e,
                }
            }
            Likelihood::Poisson { transfer } => {
                let t = transfer_eval(transfer, y);
                let (r1, r2, r3) = (t.ratio1, t.ratio2, t.ratio3);
                PhiDerivs {
                    phi: t.lambda - z * t.log_lambda + ln_factorial(z),
                    d1: t.d1 - z * r1,
                    d2: t.d2 - z * r2 + z * r1 * r1,
                    d3: t.d3 - z * r3 + 3.0 * z * r1 * r2 - 2.0 * z * r1 * r1 * r1,
                }
            }
        }
    }

    /// Second-order Taylor fit of `ρ φ` at `y`, written as a Gaussian
    /// potential. Curvature below [`CURVATURE_FLOOR`] yields a missing
    /// observation.
    pub fn gaussianize(&self, z: f64, y: f64, weight: f64) -> Result<GaussianizedObservation> {
        let d = self.phi_derivs(z, y, weight)?;
        Ok(gaussianize_derivs(y, &d))
    }

    /// Number of learnable likelihood parameters (the Gaussian variance).
    pub fn num_params(&self) -> usize {
        match self {
            Likelihood::Gaussian { .. } => 1,
            _ => 0,
        }
    }

    /// Learnable parameters in constrained form.
    pub fn params(&self) -> Vec<f64> {
        match self {
            Likelihood::Gaussian { variance } => vec![*variance],
            _ => vec![],
        }
    }

    pub fn with_params(&self, params: &[f64]) -> Self {
        match self {
            Likelihood::Gaussian { .. } => Likelihood::Gaussian {
                variance: params[0],
            },
            other => *other,
        }
    }

    /// Derivatives of `(φ, φ', φ'')` with respect to each likelihood
    /// parameter, unweighted.
    pub fn param_derivs(&self, z: f64, y: f64) -> Vec<[f64; 3]> {
        match *self {
            Likelihood::Gaussian { variance: v } => {
                let r = y - z;
                vec![[
                    0.5 / v - 0.5 * r * r / (v * v),
                    -r / (v * v),
                    -1.0 / (v * v),
                ]]
            }
            _ => vec![],
        }
    }

    /// Latent value `ȳ` whose distribution mean matches the sample mean of
    /// `targets`, or `None` when the estimate is degenerate.
    pub fn matching_latent(&self, targets: &[f64]) -> Option<f64> {
        if targets.len() < 2 {
            return None;
        }
        let mean = targets.iter().sum::<f64>() / targets.len() as f64;
        match *self {
            Likelihood::Gaussian { .. } => Some(mean),
            Likelihood::Bernoulli => {
                let p = 0.5 * (mean + 1.0);
                if p <= 0.0 || p >= 1.0 {
                    None
                } else {
                    Some((p / (1.0 - p)).ln())
                }
            }
            Likelihood::Poisson { transfer } => {
                if mean > 0.0 {
                    transfer_inverse(transfer, mean).ok()
                } else {
                    None
                }
            }
        }
    }

    /// Starting latent value used when [`Likelihood::matching_latent`] has
    /// nothing to work with.
    pub fn default_latent(&self) -> f64 {
        match *self {
            Likelihood::Gaussian { .. } | Likelihood::Bernoulli => 0.0,
            Likelihood::Poisson { transfer } => transfer_inverse(transfer, 0.1).unwrap_or(0.0),
        }
    }

    /// Mean of `z` given `y`.
    pub fn mean(&self, y: f64) -> f64 {
        match *self {
            Likelihood::Gaussian { .. } => y,
            Likelihood::Bernoulli => 2.0 * sigmoid(y) - 1.0,
            Likelihood::Poisson { transfer } => transfer_eval(transfer, y).lambda,
        }
    }

    /// Draws `z ~ P(z | y)`. Bernoulli draws are reported as `±1`.
    pub fn sample<R: Rng + ?Sized>(&self, y: f64, rng: &mut R) -> f64 {
        match *self {
            Likelihood::Gaussian { variance } => {
                let n: f64 = StandardNormal.sample(rng);
                y + variance.sqrt() * n
            }
            Likelihood::Bernoulli => {
                if rng.random::<f64>() < sigmoid(y) {
                    1.0
                } else {
                    -1.0
                }
            }
            Likelihood::Poisson { transfer } => {
                sample_poisson(transfer_eval(transfer, y).lambda, rng)
            }
        }
    }
}

/// Gaussian fit from precomputed (weighted) derivatives.
pub fn gaussianize_derivs(y: f64, d: &PhiDerivs) -> GaussianizedObservation {
    if !(d.d2 >= CURVATURE_FLOOR) || !d.d1.is_finite() {
        return GaussianizedObservation::missing();
    }
    let sigma_sq = 1.0 / d.d2;
    GaussianizedObservation::observed(y - sigma_sq * d.d1, sigma_sq)
}

/// `log(z!)` via the log-gamma function, exact zero for `z ∈ {0, 1}`.
pub fn ln_factorial(z: f64) -> f64 {
    if z < 2.0 {
        0.0
    } else {
        ln_gamma(z + 1.0)
    }
}

/// Poisson draw with the rate clamped to what the sampler supports.
pub fn sample_poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> f64 {
    if !(lambda > 1e-300) {
        return 0.0;
    }
    let lambda = lambda.min(1e15);
    Poisson::new(lambda).map_or(0.0, |p| p.sample(rng))
}

/// Targets, activity and availability weights for one stage of the
/// multi-stage count likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct StageData {
    pub stage: usize,
    /// `z̃ ∈ {+1, -1}` for stages 0 and 1, `z - 2` for stage 2; 0 where inactive.
    pub targets: Vec<f64>,
    pub active: Vec<bool>,
    pub weights: Vec<f64>,
}

impl StageData {
    pub fn num_active(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }
}

/// Splits a count series into the three stages: zero vs more, one vs more,
/// and `2 + Poisson`. Unobserved or fully out-of-stock days are inactive in
/// every stage; partial availability becomes a likelihood weight.
pub fn multi_stage_decompose(z: &[Option<f64>], availability: &[f64]) -> Result<[StageData; 3]> {
    if z.len() != availability.len() {
        return Err(Error::Data(format!(
            "series has {} targets but {} availability values",
            z.len(),
            availability.len()
        )));
    }
    let n = z.len();
    let mut stages: [StageData; 3] = std::array::from_fn(|k| StageData {
        stage: k,
        targets: vec![0.0; n],
        active: vec![false; n],
        weights: vec![0.0; n],
    });
    for (t, (zt, &rho)) in z.iter().zip(availability).enumerate() {
        let Some(zt) = *zt else { continue };
        if !(zt >= 0.0) || zt.fract() != 0.0 {
            return Err(Error::Data(format!(
                "count target must be a nonnegative integer, got {zt} at t={t}"
            )));
        }
        if !(rho > 0.0) {
            continue;
        }
        let rho = rho.min(1.0);
        for (k, stage) in stages.iter_mut().enumerate() {
            if zt < k as f64 {
                break;
            }
            stage.active[t] = true;
            stage.weights[t] = rho;
            stage.targets[t] = match k {
                0 | 1 => {
                    if zt == k as f64 {
                        1.0
                    } else {
                        -1.0
                    }
                }
                _ => zt - 2.0,
            };
        }
    }
    Ok(stages)
}
