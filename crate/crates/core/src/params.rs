//! Unconstrained parameter encoding and the quadratic regularizer.
//!
//! The raw vector is laid out as
//! `[w (p) | strengths | prior means (d) | prior sds | likelihood]`.
//! Strengths go through a scaled sigmoid into their bounds, prior standard
//! deviations and the Gaussian variance through softplus.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::issm::{Bounds, CompositeIssm, IssmParams};
use crate::likelihood::{sigmoid, softplus, softplus_inverse, Likelihood};

/// Sizes and offsets of the parameter blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub num_weights: usize,
    pub num_strengths: usize,
    pub num_means: usize,
    pub num_sds: usize,
    pub num_likelihood: usize,
    pub strength_bounds: Vec<Bounds>,
}

impl ParamLayout {
    pub fn new(issm: &CompositeIssm, likelihood: &Likelihood) -> Self {
        Self {
            num_weights: issm.feature_dim(),
            num_strengths: issm.num_strengths(),
            num_means: issm.total_dim(),
            num_sds: issm.num_prior_sd(),
            num_likelihood: likelihood.num_params(),
            strength_bounds: issm.strength_bounds(),
        }
    }

    pub fn len(&self) -> usize {
        self.num_weights + self.num_strengths + self.num_means + self.num_sds + self.num_likelihood
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn weights(&self) -> std::ops::Range<usize> {
        0..self.num_weights
    }

    pub fn strengths(&self) -> std::ops::Range<usize> {
        let s = self.num_weights;
        s..s + self.num_strengths
    }

    pub fn means(&self) -> std::ops::Range<usize> {
        let s = self.strengths().end;
        s..s + self.num_means
    }

    pub fn sds(&self) -> std::ops::Range<usize> {
        let s = self.means().end;
        s..s + self.num_sds
    }

    pub fn likelihood(&self) -> std::ops::Range<usize> {
        let s = self.sds().end;
        s..s + self.num_likelihood
    }

    /// Constrained values from a raw vector.
    pub fn decode(&self, raw: &[f64]) -> Decoded {
        let strengths = raw[self.strengths()]
            .iter()
            .zip(&self.strength_bounds)
            .map(|(&t, b)| b.lower + (b.upper - b.lower) * sigmoid(t))
            .collect();
        Decoded {
            weights: raw[self.weights()].to_vec(),
            strengths,
            prior_mean: raw[self.means()].to_vec(),
            prior_sd: raw[self.sds()].iter().map(|&t| softplus(t)).collect(),
            likelihood: raw[self.likelihood()]
                .iter()
                .map(|&t| softplus(t))
                .collect(),
        }
    }

    /// Raw vector from constrained values.
    pub fn encode(&self, c: &Decoded) -> Result<Vec<f64>> {
        let mut raw = c.weights.clone();
        for (&s, b) in c.strengths.iter().zip(&self.strength_bounds) {
            if !b.contains(s) {
                return Err(Error::Config(format!(
                    "strength {s} outside its bounds ({}, {})",
                    b.lower, b.upper
                )));
            }
            let u = (s - b.lower) / (b.upper - b.lower);
            raw.push((u / (1.0 - u)).ln());
        }
        raw.extend_from_slice(&c.prior_mean);
        for &v in c.prior_sd.iter().chain(&c.likelihood) {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "positive parameter expected, got {v}"
                )));
            }
            raw.push(softplus_inverse(v));
        }
        Ok(raw)
    }

    /// `d constrained / d raw` for every coordinate (the encoding is
    /// coordinate-wise).
    pub fn jacobian(&self, raw: &[f64]) -> Vec<f64> {
        let mut j = vec![1.0; self.len()];
        for (k, b) in self.strengths().zip(&self.strength_bounds) {
            j[k] = (b.upper - b.lower) * sigmoid(raw[k]) * sigmoid(-raw[k]);
        }
        for k in self.sds().chain(self.likelihood()) {
            j[k] = sigmoid(raw[k]);
        }
        j
    }

    /// Default center `θ̄`: small strengths, unit prior sds, zero means and
    /// weights, unit likelihood variance.
    pub fn default_center(&self) -> Vec<f64> {
        self.center(&CenterValues::default())
            .expect("default center lies inside the bounds")
    }

    /// Raw center from constrained per-block values. Strengths outside
    /// their bounds are replaced by the bounds midpoint.
    pub fn center(&self, c: &CenterValues) -> Result<Vec<f64>> {
        let d = Decoded {
            weights: vec![c.weight; self.num_weights],
            strengths: self
                .strength_bounds
                .iter()
                .map(|b| {
                    if b.contains(c.strength) {
                        c.strength
                    } else {
                        0.5 * (b.lower + b.upper)
                    }
                })
                .collect(),
            prior_mean: vec![c.prior_mean; self.num_means],
            prior_sd: vec![c.prior_sd; self.num_sds],
            likelihood: vec![c.variance; self.num_likelihood],
        };
        self.encode(&d)
    }

    /// Per-coordinate regularization strengths from per-block values.
    pub fn strengths_by_block(&self, rho: &BlockStrengths) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for (range, v) in [
            (self.weights(), rho.weights),
            (self.strengths(), rho.strengths),
            (self.means(), rho.prior_mean),
            (self.sds(), rho.prior_sd),
            (self.likelihood(), rho.likelihood),
        ] {
            out[range].fill(v);
        }
        out
    }
}

/// Default innovation strength at the regularization center.
pub const DEFAULT_STRENGTH: f64 = 0.05;

/// Constrained values of the regularization center, one per block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CenterValues {
    pub weight: f64,
    pub strength: f64,
    pub prior_mean: f64,
    pub prior_sd: f64,
    pub variance: f64,
}

impl Default for CenterValues {
    fn default() -> Self {
        Self {
            weight: 0.0,
            strength: DEFAULT_STRENGTH,
            prior_mean: 0.0,
            prior_sd: 1.0,
            variance: 1.0,
        }
    }
}

/// Regularization strength `ρ` per block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlockStrengths {
    pub weights: f64,
    pub strengths: f64,
    pub prior_mean: f64,
    pub prior_sd: f64,
    pub likelihood: f64,
}

impl BlockStrengths {
    pub fn uniform(rho: f64) -> Self {
        Self {
            weights: rho,
            strengths: rho,
            prior_mean: rho,
            prior_sd: rho,
            likelihood: rho,
        }
    }
}

impl Default for BlockStrengths {
    fn default() -> Self {
        Self::uniform(1.0)
    }
}

/// Decoded (constrained) parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoded {
    pub weights: Vec<f64>,
    pub strengths: Vec<f64>,
    pub prior_mean: Vec<f64>,
    /// One entry per prior-sd slot (seasonality shares one).
    pub prior_sd: Vec<f64>,
    pub likelihood: Vec<f64>,
}

impl Decoded {
    pub fn issm_params(&self, issm: &CompositeIssm) -> IssmParams {
        IssmParams {
            strengths: self.strengths.clone(),
            prior_mean: self.prior_mean.clone(),
            prior_sd: issm.expand_prior_sd(&self.prior_sd),
        }
    }
}

/// `Σ_j (ρ_j / 2)(θ_j - θ̄_j)²` in raw coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regularizer {
    pub strength: Vec<f64>,
    pub center: Vec<f64>,
}

impl Regularizer {
    pub fn uniform(center: Vec<f64>, rho: f64) -> Self {
        Self {
            strength: vec![rho; center.len()],
            center,
        }
    }

    pub fn value(&self, raw: &[f64]) -> f64 {
        raw.iter()
            .zip(&self.center)
            .zip(&self.strength)
            .map(|((t, c), r)| 0.5 * r * (t - c) * (t - c))
            .sum()
    }

    pub fn gradient(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(&self.center)
            .zip(&self.strength)
            .map(|((t, c), r)| r * (t - c))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::issm::{compose, make_level, make_seasonality, SeasonalityPattern};

    fn layout() -> ParamLayout {
        let issm = compose(
            vec![
                make_level(Bounds::new(0.01, 0.5)).unwrap(),
                make_seasonality(Bounds::default(), SeasonalityPattern::day_of_week()).unwrap(),
            ],
            2,
        )
        .unwrap();
        ParamLayout::new(&issm, &Likelihood::Gaussian { variance: 1.0 })
    }

    #[test]
    fn block_offsets() {
        let l = layout();
        assert_eq!(l.weights(), 0..2);
        assert_eq!(l.strengths(), 2..4);
        assert_eq!(l.means(), 4..12);
        assert_eq!(l.sds(), 12..14);
        assert_eq!(l.likelihood(), 14..15);
        assert_eq!(l.len(), 15);
    }

    #[test]
    fn strengths_stay_in_bounds() {
        let l = layout();
        let mut raw = vec![0.0; l.len()];
        for t in [-800.0, -30.0, 0.0, 30.0] {
            raw[2] = t;
            let s = l.decode(&raw).strengths[0];
            assert!((0.01..=0.5).contains(&s));
        }
        raw[2] = 0.0;
        assert!((l.decode(&raw).strengths[0] - 0.255).abs() < 1e-15);
    }

    #[test]
    fn regularizer_gradient() {
        let r = Regularizer {
            strength: vec![2.0, 0.0],
            center: vec![1.0, 5.0],
        };
        assert_eq!(r.value(&[3.0, -1.0]), 4.0);
        assert_eq!(r.gradient(&[3.0, -1.0]), vec![4.0, 0.0]);
    }
}
