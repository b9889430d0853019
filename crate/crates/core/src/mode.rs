//! Newton-Raphson search for the mode of `P(z, s | θ)` over the latent path
//! `s = [ε_0 .. ε_{T-2}, l_0]`.
//!
//! Each Newton step Gaussianizes the likelihood at the current `y(s)` and
//! takes the posterior mean of the resulting linear-Gaussian model, which
//! the square-root smoother computes in linear time.

use log::trace;

use crate::error::{Error, Result};
use crate::issm::Trajectory;
use crate::likelihood::{gaussianize_derivs, GaussianizedObservation, Likelihood, PhiDerivs};
use crate::srif::{smooth, GaussianModel, SmoothingResult};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

const ROUNDOFF_SLOPE: f64 = 1e-11;

/// Targets of one likelihood stage, aligned with the trajectory. Inactive
/// entries are unobserved and their targets are ignored.
#[derive(Debug, Clone, Copy)]
pub struct Observations<'a> {
    pub targets: &'a [f64],
    pub active: &'a [bool],
    pub weights: &'a [f64],
}

impl Observations<'_> {
    pub fn num_active(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }
}

/// Everything that defines `F(s)` for fixed parameters.
#[derive(Debug, Clone, Copy)]
pub struct ModeProblem<'a> {
    pub trajectory: &'a Trajectory,
    pub prior_mean: &'a [f64],
    pub prior_sd: &'a [f64],
    /// `b_t = wᵀ x_t`.
    pub offset: &'a [f64],
    pub likelihood: Likelihood,
    pub obs: Observations<'a>,
}

/// Stopping rules and line-search constants.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ModeOptions {
    pub max_iterations: usize,
    /// Stop when `|ΔF| / max(1, |F|)` drops below this.
    pub rel_tolerance: f64,
    /// Stop when the sup-norm of the Newton step drops below this.
    pub step_tolerance: f64,
    pub armijo: f64,
    pub backtrack: f64,
    pub max_halvings: usize,
    /// Starting latent value when the targets do not determine one.
    pub default_latent: Option<f64>,
}

impl Default for ModeOptions {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            rel_tolerance: 1e-9,
            step_tolerance: 1e-8,
            armijo: 1e-4,
            backtrack: 0.5,
            max_halvings: 30,
            default_latent: None,
        }
    }
}

/// Latent path `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPath {
    pub eps: Vec<f64>,
    pub l0: Vec<f64>,
}

impl LatentPath {
    pub fn zeros(t: usize, d: usize) -> Self {
        Self {
            eps: vec![0.0; t.saturating_sub(1)],
            l0: vec![0.0; d],
        }
    }

    /// Flattened `[ε; l0]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.eps.clone();
        v.extend_from_slice(&self.l0);
        v
    }

    pub fn from_slice(v: &[f64], t: usize) -> Self {
        let n_eps = t.saturating_sub(1);
        Self {
            eps: v[..n_eps].to_vec(),
            l0: v[n_eps..].to_vec(),
        }
    }

    fn axpy(&self, alpha: f64, d: &LatentPath) -> LatentPath {
        LatentPath {
            eps: self
                .eps
                .iter()
                .zip(&d.eps)
                .map(|(a, b)| a + alpha * b)
                .collect(),
            l0: self
                .l0
                .iter()
                .zip(&d.l0)
                .map(|(a, b)| a + alpha * b)
                .collect(),
        }
    }

    fn sup_norm(&self) -> f64 {
        self.eps
            .iter()
            .chain(&self.l0)
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Outcome of mode finding.
#[derive(Debug, Clone)]
pub struct ModeResult {
    pub s_hat: LatentPath,
    pub y_hat: Vec<f64>,
    pub f_value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each accepted iteration, starting with the initial point.
    pub f_trace: Vec<f64>,
    /// Gaussianized observations at `ŷ` (inactive days missing).
    pub observations: Vec<GaussianizedObservation>,
    /// Likelihood derivatives at `ŷ` (zero on inactive days).
    pub derivs: Vec<PhiDerivs>,
    /// Smoother output for the Gaussianized model at `ŷ`.
    pub smoothing: SmoothingResult,
}

impl<'a> ModeProblem<'a> {
    fn len(&self) -> usize {
        self.trajectory.len()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.len();
        let d = self.trajectory.dim();
        if self.obs.targets.len() != t
            || self.obs.active.len() != t
            || self.obs.weights.len() != t
            || self.offset.len() != t
        {
            return Err(Error::Data(format!(
                "series arrays do not match the trajectory length {t}"
            )));
        }
        if self.prior_mean.len() != d || self.prior_sd.len() != d {
            return Err(Error::Config(format!("prior must have dimension {d}")));
        }
        if self.prior_sd.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Config(
                "prior standard deviations must be positive".into(),
            ));
        }
        if self.obs.num_active() == 0 {
            return Err(Error::Data("no observed days to fit".into()));
        }
        for i in 0..t {
            if !self.offset[i].is_finite() {
                return Err(Error::numerical(i, "non-finite feature offset"));
            }
            if self.obs.active[i] {
                self.likelihood.check_target(self.obs.targets[i])?;
                let w = self.obs.weights[i];
                if !(w > 0.0 && w <= 1.0) {
                    return Err(Error::Data(format!(
                        "availability weight must lie in (0, 1] on observed days, got {w} at t={i}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// `y(s) = M s + b`.
    pub fn y_of(&self, s: &LatentPath) -> Vec<f64> {
        self.trajectory
            .forward_pass(&s.eps, &s.l0, Some(self.offset))
    }

    /// Likelihood part `Σ_O ρ_t φ_t(y_t)` with its normalizers.
    fn likelihood_value(&self, y: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for (i, &yi) in y.iter().enumerate() {
            if self.obs.active[i] {
                let v = self.obs.weights[i]
                    * self
                        .likelihood
                        .phi_derivs_unchecked(self.obs.targets[i], yi)
                        .phi;
                if !v.is_finite() {
                    return Err(Error::numerical(
                        i,
                        format!("non-finite potential at y={yi}"),
                    ));
                }
                total += v;
            }
        }
        Ok(total)
    }

    /// Prior part `-log P(s)` including normalizers.
    fn prior_value(&self, s: &LatentPath) -> f64 {
        let eps: f64 = s.eps.iter().map(|e| 0.5 * (e * e + LN_2PI)).sum();
        let l0: f64 =
            s.l0.iter()
                .zip(self.prior_mean)
                .zip(self.prior_sd)
                .map(|((l, m), sd)| {
                    let r = (l - m) / sd;
                    0.5 * (r * r + LN_2PI) + sd.ln()
                })
                .sum();
        eps + l0
    }

    /// `F(s) = -log P(z_O | s) - log P(s)`.
    pub fn objective(&self, s: &LatentPath) -> Result<f64> {
        let y = self.y_of(s);
        Ok(self.likelihood_value(&y)? + self.prior_value(s))
    }

    /// `F(s)` and `∂F/∂y` on observed days (zero elsewhere).
    pub fn inner_objective(&self, s: &LatentPath) -> Result<(f64, Vec<f64>)> {
        let y = self.y_of(s);
        let f = self.likelihood_value(&y)? + self.prior_value(s);
        let grad = self.derivs_at(&y).into_iter().map(|d| d.d1).collect();
        Ok((f, grad))
    }

    /// Gradient of `F` with respect to `s`, computed densely through the
    /// adjoint of the forward pass.
    pub fn gradient(&self, s: &LatentPath) -> Vec<f64> {
        let y = self.y_of(s);
        let dy: Vec<f64> = self.derivs_at(&y).into_iter().map(|d| d.d1).collect();
        let mut g = self.adjoint(&dy);
        for (gi, e) in g.iter_mut().zip(&s.eps) {
            *gi += e;
        }
        let n_eps = s.eps.len();
        for j in 0..s.l0.len() {
            let sd = self.prior_sd[j];
            g[n_eps + j] += (s.l0[j] - self.prior_mean[j]) / (sd * sd);
        }
        g
    }

    /// `Mᵀ v` for the map `s ↦ y(s) - b`.
    pub fn adjoint(&self, v: &[f64]) -> Vec<f64> {
        let traj = self.trajectory;
        let (t, d) = (traj.len(), traj.dim());
        // λ_i = ∂(vᵀy)/∂state[i], propagated backwards.
        let mut lam = vec![0.0; d];
        let mut tmp = vec![0.0; d];
        let mut out = vec![0.0; t.saturating_sub(1) + d];
        for i in (0..t).rev() {
            if i + 1 < t {
                out[i] = crate::issm::dot(traj.g(i), &lam);
                traj.transition().apply_transpose(&lam, &mut tmp);
                std::mem::swap(&mut lam, &mut tmp);
            }
            for (l, a) in lam.iter_mut().zip(traj.a(i)) {
                *l += v[i] * a;
            }
        }
        out[t.saturating_sub(1)..].copy_from_slice(&lam);
        out
    }

    /// Weighted likelihood derivatives at `y`; zero on inactive days.
    pub fn derivs_at(&self, y: &[f64]) -> Vec<PhiDerivs> {
        y.iter()
            .enumerate()
            .map(|(i, &yi)| {
                if self.obs.active[i] {
                    let d = self
                        .likelihood
                        .phi_derivs_unchecked(self.obs.targets[i], yi);
                    let w = self.obs.weights[i];
                    PhiDerivs {
                        phi: w * d.phi,
                        d1: w * d.d1,
                        d2: w * d.d2,
                        d3: w * d.d3,
                    }
                } else {
                    PhiDerivs::default()
                }
            })
            .collect()
    }

    fn gaussianized(&self, y: &[f64], derivs: &[PhiDerivs]) -> Vec<GaussianizedObservation> {
        y.iter()
            .zip(derivs)
            .enumerate()
            .map(|(i, (&yi, d))| {
                if self.obs.active[i] {
                    gaussianize_derivs(yi, d)
                } else {
                    GaussianizedObservation::missing()
                }
            })
            .collect()
    }

    fn smooth_at(
        &self,
        y: &[f64],
    ) -> Result<(
        Vec<PhiDerivs>,
        Vec<GaussianizedObservation>,
        SmoothingResult,
    )> {
        let derivs = self.derivs_at(y);
        let obs = self.gaussianized(y, &derivs);
        let model = GaussianModel::new(self.trajectory, self.prior_mean, self.prior_sd)
            .with_offset(self.offset);
        let res = smooth(&model, &obs)?;
        Ok((derivs, obs, res))
    }

    /// One Newton step from `s`: returns the direction `d = s' - s` and the
    /// smoothed minimizer `s'` of the quadratic model.
    pub fn newton_step(&self, s: &LatentPath) -> Result<(LatentPath, LatentPath)> {
        let y = self.y_of(s);
        let (_, _, res) = self.smooth_at(&y)?;
        let next = LatentPath {
            eps: res.eps_mean,
            l0: res.l0_mean,
        };
        let d = next.axpy(-1.0, s);
        Ok((d, next))
    }

    /// Starting point with `y_t(s₀) = ȳ` for every `t`.
    pub fn initial_point(&self, default_latent: Option<f64>) -> Result<LatentPath> {
        let traj = self.trajectory;
        let (t, d) = (traj.len(), traj.dim());
        let targets: Vec<f64> = (0..t)
            .filter(|&i| self.obs.active[i])
            .map(|i| self.obs.targets[i])
            .collect();
        let y_bar = self
            .likelihood
            .matching_latent(&targets)
            .or(default_latent)
            .unwrap_or_else(|| self.likelihood.default_latent());

        let a0 = traj.a(0);
        let (j, aj) = a0.iter().enumerate().fold((0, 0.0f64), |best, (j, &v)| {
            if v.abs() > best.1.abs() {
                (j, v)
            } else {
                best
            }
        });
        let mut l0 = vec![0.0; d];
        if aj.abs() > 1e-8 {
            l0[j] = (y_bar - self.offset[0]) / aj;
        }

        let mut eps = Vec::with_capacity(t.saturating_sub(1));
        let mut state = l0.clone();
        let mut next = vec![0.0; d];
        for i in 0..t.saturating_sub(1) {
            traj.transition().apply(&state, &mut next);
            let a = traj.a(i + 1);
            let ag = crate::issm::dot(a, traj.g(i));
            // Components without a level (pure seasonality) may not reach the
            // next observation; leave those innovations at zero.
            let e = if ag.abs() > 1e-8 {
                (y_bar - self.offset[i + 1] - crate::issm::dot(a, &next)) / ag
            } else {
                0.0
            };
            for (n, g) in next.iter_mut().zip(traj.g(i)) {
                *n += g * e;
            }
            eps.push(e);
            std::mem::swap(&mut state, &mut next);
        }
        Ok(LatentPath { eps, l0 })
    }

    /// Directional derivative `F'(0)` along `d`, given `M d` and `φ'` at `s`.
    fn slope(&self, s: &LatentPath, d: &LatentPath, md: &[f64], dphi: &[PhiDerivs]) -> f64 {
        let lik: f64 = md.iter().zip(dphi).map(|(m, p)| m * p.d1).sum();
        let eps: f64 = s.eps.iter().zip(&d.eps).map(|(e, de)| e * de).sum();
        let l0: f64 = (0..s.l0.len())
            .map(|j| {
                let v = self.prior_sd[j] * self.prior_sd[j];
                d.l0[j] * (s.l0[j] - self.prior_mean[j]) / v
            })
            .sum();
        lik + eps + l0
    }

    /// Backtracking line search along `d`. Returns the accepted step size,
    /// the new objective and `F'(0)`.
    pub fn line_search(
        &self,
        s: &LatentPath,
        f0: f64,
        d: &LatentPath,
        opts: &ModeOptions,
    ) -> Result<(f64, f64, f64)> {
        let y = self.y_of(s);
        let dphi = self.derivs_at(&y);
        let md = self.trajectory.forward_pass(&d.eps, &d.l0, None);
        let slope = self.slope(s, d, &md, &dphi);
        // Below this the expected decrease is lost in the rounding of F and
        // the full Newton step is taken unchecked.
        let roundoff = slope > -ROUNDOFF_SLOPE * f0.abs().max(1.0);
        let mut alpha = 1.0;
        let mut y_trial = vec![0.0; y.len()];
        for _ in 0..=opts.max_halvings {
            for ((yt, yi), mi) in y_trial.iter_mut().zip(&y).zip(&md) {
                *yt = yi + alpha * mi;
            }
            let trial = s.axpy(alpha, d);
            if let Ok(lik) = self.likelihood_value(&y_trial) {
                let f = lik + self.prior_value(&trial);
                let accept = if roundoff {
                    f <= f0 + ROUNDOFF_SLOPE * f0.abs().max(1.0)
                } else {
                    f <= f0 + opts.armijo * alpha * slope
                };
                if f.is_finite() && accept {
                    return Ok((alpha, f, slope));
                }
            }
            alpha *= opts.backtrack;
        }
        Err(Error::LineSearch {
            halvings: opts.max_halvings,
            slope,
        })
    }
}

/// Runs Newton-Raphson from the initial-point heuristic.
pub fn find_mode(problem: &ModeProblem, opts: &ModeOptions) -> Result<ModeResult> {
    problem.validate()?;
    let start = problem.initial_point(opts.default_latent)?;
    find_mode_from(problem, start, opts)
}

/// Runs Newton-Raphson from a given starting path.
pub fn find_mode_from(
    problem: &ModeProblem,
    start: LatentPath,
    opts: &ModeOptions,
) -> Result<ModeResult> {
    problem.validate()?;
    let mut s = start;
    let mut f = problem.objective(&s)?;
    let mut f_trace = vec![f];
    let mut iterations = 0;
    let mut converged = false;
    let mut cached = None;

    while iterations < opts.max_iterations {
        let y = problem.y_of(&s);
        let (derivs, obs, res) = problem.smooth_at(&y)?;
        let next = LatentPath {
            eps: res.eps_mean.clone(),
            l0: res.l0_mean.clone(),
        };
        let d = next.axpy(-1.0, &s);
        if d.sup_norm() < opts.step_tolerance {
            converged = true;
            cached = Some((y, derivs, obs, res));
            break;
        }
        let (alpha, f_new, slope) = match problem.line_search(&s, f, &d, opts) {
            Ok(v) => v,
            Err(Error::LineSearch { slope, .. }) if slope > -ROUNDOFF_SLOPE * f.abs().max(1.0) => {
                // No descent left at working precision.
                converged = true;
                cached = Some((y, derivs, obs, res));
                break;
            }
            Err(e) => return Err(e),
        };
        if f_new > f + ROUNDOFF_SLOPE * f.abs().max(1.0) {
            return Err(Error::Divergence {
                iteration: iterations,
                before: f,
                after: f_new,
            });
        }
        trace!("newton iteration {iterations}: F={f_new:.12e} step={alpha} slope={slope:.3e}");
        s = s.axpy(alpha, &d);
        iterations += 1;
        let rel = (f - f_new).abs() / f.abs().max(1.0);
        f = f_new;
        f_trace.push(f);
        if rel < opts.rel_tolerance {
            converged = true;
            break;
        }
    }

    let (y_hat, derivs, observations, smoothing) = match cached {
        Some(c) => c,
        None => {
            let y = problem.y_of(&s);
            let (derivs, obs, res) = problem.smooth_at(&y)?;
            (y, derivs, obs, res)
        }
    };
    Ok(ModeResult {
        s_hat: s,
        y_hat,
        f_value: f,
        iterations,
        converged,
        f_trace,
        observations,
        derivs,
        smoothing,
    })
}
