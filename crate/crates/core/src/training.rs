//! Laplace-approximate maximum likelihood for one likelihood stage, and the
//! multi-stage orchestration around it.
//!
//! The criterion is `ψ(θ) = Σ_t γ_t − log P(z̃)`, where `z̃, σ²` are the
//! Gaussianized observations at the mode `ŷ` and `γ_t` is the gap between
//! the potential and its Taylor fit. Its gradient is assembled from three
//! parts: the explicit dependence at fixed potentials, the dependence of the
//! potentials on `ŷ` through the posterior moments, and the dependence of
//! `ŷ` on `θ`, which costs one additional smoothing pass.

use log::{debug, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::issm::{compose, dot, CompositeIssm, IssmComponent, IssmShapes, TimeRange, Trajectory};
use crate::lbfgs::{minimize, IterationRecord, LbfgsOptions, Termination};
use crate::likelihood::{
    multi_stage_decompose, GaussianizedObservation, Likelihood, TransferFunction,
};
use crate::mode::{find_mode, ModeOptions, ModeProblem, ModeResult, Observations};
use crate::params::{BlockStrengths, CenterValues, Decoded, ParamLayout, Regularizer};
use crate::srif::{forward_filter, smooth, GaussianModel, SqrtGaussian};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Minimum number of observed days below which a stage is not trained.
pub const MIN_OBSERVED_DAYS: usize = 7;

/// The criterion `ψ` for one stage over a fixed training range.
#[derive(Debug, Clone)]
pub struct Criterion<'a> {
    issm: &'a CompositeIssm,
    shapes: IssmShapes,
    likelihood: Likelihood,
    features: &'a [f64],
    obs: Observations<'a>,
    layout: ParamLayout,
    pub mode_options: ModeOptions,
    /// Raw-coordinate step for the strength terms at fixed potentials.
    pub fd_step: f64,
}

/// `ψ` at one parameter vector, with the mode it was computed at.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub psi: f64,
    /// Gradient in raw coordinates, when requested.
    pub gradient: Option<Vec<f64>>,
    pub params: Decoded,
    pub mode: ModeResult,
}

/// Everything determined by a parameter vector before mode finding.
struct Instance {
    params: Decoded,
    trajectory: Trajectory,
    prior_sd: Vec<f64>,
    offset: Vec<f64>,
    likelihood: Likelihood,
}

impl<'a> Criterion<'a> {
    /// `features` is row-major `range.len × feature_dim`.
    pub fn new(
        issm: &'a CompositeIssm,
        range: &TimeRange,
        likelihood: Likelihood,
        features: &'a [f64],
        obs: Observations<'a>,
    ) -> Result<Self> {
        likelihood.validate()?;
        let shapes = issm.shapes(range)?;
        let n = shapes.len();
        if obs.targets.len() != n || obs.active.len() != n || obs.weights.len() != n {
            return Err(Error::Data(format!(
                "series arrays do not match the training range length {n}"
            )));
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite feature at t={}",
                i / issm.feature_dim().max(1)
            )));
        }
        if features.len() != n * issm.feature_dim() {
            return Err(Error::Data(format!(
                "expected {} feature values ({n} × {}), got {}",
                n * issm.feature_dim(),
                issm.feature_dim(),
                features.len()
            )));
        }
        Ok(Self {
            issm,
            shapes,
            layout: ParamLayout::new(issm, &likelihood),
            likelihood,
            features,
            obs,
            mode_options: ModeOptions::default(),
            fd_step: 1e-6,
        })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn observations(&self) -> Observations<'a> {
        self.obs
    }

    fn instance(&self, raw: &[f64]) -> Result<Instance> {
        if raw.len() != self.layout.len() {
            return Err(Error::Config(format!(
                "parameter vector has length {}, expected {}",
                raw.len(),
                self.layout.len()
            )));
        }
        let params = self.layout.decode(raw);
        let trajectory = self
            .shapes
            .trajectory(self.issm.transition().clone(), &params.strengths);
        let p = self.issm.feature_dim();
        let offset = (0..self.shapes.len())
            .map(|t| {
                if p == 0 {
                    0.0
                } else {
                    dot(&self.features[t * p..(t + 1) * p], &params.weights)
                }
            })
            .collect();
        Ok(Instance {
            prior_sd: self.issm.expand_prior_sd(&params.prior_sd),
            likelihood: self.likelihood.with_params(&params.likelihood),
            params,
            trajectory,
            offset,
        })
    }

    fn problem<'b>(&'b self, inst: &'b Instance) -> ModeProblem<'b> {
        ModeProblem {
            trajectory: &inst.trajectory,
            prior_mean: &inst.params.prior_mean,
            prior_sd: &inst.prior_sd,
            offset: &inst.offset,
            likelihood: inst.likelihood,
            obs: self.obs,
        }
    }

    pub fn psi(&self, raw: &[f64]) -> Result<f64> {
        Ok(self.evaluate(raw, false)?.psi)
    }

    /// Finds the mode at `raw` and evaluates `ψ`, optionally with its
    /// gradient.
    pub fn evaluate(&self, raw: &[f64], with_gradient: bool) -> Result<Evaluation> {
        let inst = self.instance(raw)?;
        let mode = find_mode(&self.problem(&inst), &self.mode_options)?;

        let mut psi = -mode.smoothing.log_likelihood;
        let mut scale = psi.abs();
        for (t, d) in mode.derivs.iter().enumerate() {
            if !self.obs.active[t] {
                continue;
            }
            if mode.observations[t].missing {
                // Curvature too small for a Gaussian fit: keep the potential.
                psi += d.phi;
                scale += d.phi.abs();
            } else {
                let log_det = 0.5 * (LN_2PI - d.d2.ln());
                let quad = 0.5 * d.d1 * d.d1 / d.d2;
                psi += d.phi - log_det - quad;
                scale += d.phi.abs() + log_det.abs() + quad;
            }
        }
        if !psi.is_finite() {
            return Err(Error::numerical(0, format!("non-finite criterion {psi}")));
        }
        // Near-singular priors blow up the mode and both halves of the sum;
        // what is left after cancellation is noise.
        if scale > MAX_CRITERION_SCALE {
            return Err(Error::numerical(
                0,
                format!("criterion lost to cancellation (scale {scale:.1e})"),
            ));
        }

        let gradient = if with_gradient {
            Some(self.gradient(raw, &inst, &mode)?)
        } else {
            None
        };
        Ok(Evaluation {
            psi,
            gradient,
            params: inst.params,
            mode,
        })
    }

    fn gradient(&self, raw: &[f64], inst: &Instance, mode: &ModeResult) -> Result<Vec<f64>> {
        let traj = &inst.trajectory;
        let (n, d) = (traj.len(), traj.dim());
        let layout = &self.layout;
        let sm = &mode.smoothing;
        let observed: Vec<bool> = (0..n)
            .map(|t| self.obs.active[t] && !mode.observations[t].missing)
            .collect();

        let e1: Vec<f64> = (0..n).map(|t| sm.y_mean[t] - mode.y_hat[t]).collect();
        let e2: Vec<f64> = (0..n)
            .map(|t| 0.5 * (e1[t] * e1[t] + sm.y_var[t]))
            .collect();
        // ∂ψ/∂ŷ_t.
        let c: Vec<f64> = (0..n)
            .map(|t| {
                if observed[t] {
                    mode.derivs[t].d3 * e2[t]
                } else {
                    0.0
                }
            })
            .collect();

        // ξ = H⁻¹ Mᵀ c as a posterior mean with pseudo-observations c/φ''.
        let zeros = vec![0.0; d];
        let (xi_eps, xi_l0) = if c.iter().all(|&v| v == 0.0) {
            (vec![0.0; n.saturating_sub(1)], zeros.clone())
        } else {
            let pseudo: Vec<GaussianizedObservation> = (0..n)
                .map(|t| {
                    if observed[t] {
                        let s2 = mode.observations[t].sigma_sq;
                        GaussianizedObservation::observed(c[t] * s2, s2)
                    } else {
                        GaussianizedObservation::missing()
                    }
                })
                .collect();
            let model = GaussianModel::new(traj, &zeros, &inst.prior_sd);
            let r = smooth(&model, &pseudo)?;
            (r.eps_mean, r.l0_mean)
        };
        let m_xi = traj.forward_pass(&xi_eps, &xi_l0, None);
        let u: Vec<f64> = (0..n)
            .map(|t| {
                if self.obs.active[t] {
                    c[t] - mode.derivs[t].d2 * m_xi[t]
                } else {
                    0.0
                }
            })
            .collect();

        let mut g = vec![0.0; layout.len()];

        let p = layout.num_weights;
        if p > 0 {
            let wr = layout.weights();
            for t in 0..n {
                if !self.obs.active[t] {
                    continue;
                }
                let dt = &mode.derivs[t];
                let mut r = u[t];
                if observed[t] {
                    r += dt.d1 + dt.d2 * e1[t];
                }
                for (gj, x) in g[wr.clone()]
                    .iter_mut()
                    .zip(&self.features[t * p..(t + 1) * p])
                {
                    *gj += x * r;
                }
            }
        }

        for (k, gi) in layout.strengths().enumerate() {
            let traj_k = traj.with_g(self.shapes.shape_rows(k).to_vec());
            let ms = traj_k.forward_pass(&mode.s_hat.eps, &zeros, None);
            let mx = traj_k.forward_pass(&xi_eps, &zeros, None);
            g[gi] = (0..n)
                .filter(|&t| self.obs.active[t])
                .map(|t| ms[t] * u[t] - mode.derivs[t].d1 * mx[t])
                .sum();
        }

        let mu = &inst.params.prior_mean;
        let l_hat = &mode.s_hat.l0;
        for (j, gi) in layout.means().enumerate() {
            let v = inst.prior_sd[j] * inst.prior_sd[j];
            g[gi] = (mu[j] - sm.l0_mean[j]) / v + xi_l0[j] / v;
        }
        for (k, gi) in layout.sds().enumerate() {
            let sd = inst.params.prior_sd[k];
            let v = sd * sd;
            let dv: f64 = self
                .issm
                .prior_sd_dims(k)
                .map(|j| {
                    let r = sm.l0_mean[j] - mu[j];
                    0.5 * (1.0 / v - (r * r + sm.l0_var[j]) / (v * v))
                        + xi_l0[j] * (l_hat[j] - mu[j]) / (v * v)
                })
                .sum();
            g[gi] = 2.0 * sd * dv;
        }

        if layout.num_likelihood > 0 {
            let lr = layout.likelihood();
            for t in 0..n {
                if !self.obs.active[t] {
                    continue;
                }
                let rho = self.obs.weights[t];
                let pd = inst
                    .likelihood
                    .param_derivs(self.obs.targets[t], mode.y_hat[t]);
                for (gi, dp) in g[lr.clone()].iter_mut().zip(&pd) {
                    *gi += rho * dp[0] - rho * dp[1] * m_xi[t];
                    if observed[t] {
                        *gi += rho * (dp[1] * e1[t] + dp[2] * e2[t]);
                    }
                }
            }
        }

        for (gi, j) in g.iter_mut().zip(layout.jacobian(raw)) {
            *gi *= j;
        }

        // Strength dependence of −log P(z̃) at fixed potentials.
        let h = self.fd_step;
        for gi in layout.strengths() {
            let mut ll = [0.0; 2];
            for (slot, sign) in [(0, 1.0), (1, -1.0)] {
                let mut shifted = raw.to_vec();
                shifted[gi] += sign * h;
                let strengths = layout.decode(&shifted).strengths;
                let traj_h = self
                    .shapes
                    .trajectory(self.issm.transition().clone(), &strengths);
                let model =
                    GaussianModel::new(&traj_h, mu, &inst.prior_sd).with_offset(&inst.offset);
                ll[slot] = forward_filter(&model, &mode.observations, false)?.log_likelihood;
            }
            g[gi] += (ll[1] - ll[0]) / (2.0 * h);
        }

        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical(0, "non-finite criterion gradient"));
        }
        Ok(g)
    }

    /// Posterior over the state after the last training index at `raw`.
    /// Without observed days this is the prior pushed through the range.
    pub fn final_state_posterior(&self, raw: &[f64]) -> Result<(SqrtGaussian, Option<ModeResult>)> {
        let inst = self.instance(raw)?;
        if self.obs.num_active() == 0 {
            let missing = vec![GaussianizedObservation::missing(); inst.trajectory.len()];
            let model =
                GaussianModel::new(&inst.trajectory, &inst.params.prior_mean, &inst.prior_sd)
                    .with_offset(&inst.offset);
            return Ok((smooth(&model, &missing)?.final_state, None));
        }
        let mode = find_mode(&self.problem(&inst), &self.mode_options)?;
        Ok((mode.smoothing.final_state.clone(), Some(mode)))
    }
}

/// Largest magnitude of the summed terms of `ψ` before it is rejected.
const MAX_CRITERION_SCALE: f64 = 1e12;

/// Settings for the outer optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub optimizer: LbfgsOptions,
    pub mode: ModeOptions,
    /// Regularization strength `ρ` per parameter block.
    pub regularization: BlockStrengths,
    /// Regularization center `θ̄` (constrained values), also the starting
    /// point and the fallback parameters.
    pub center: CenterValues,
    pub min_observed_days: usize,
    pub fd_step: f64,
    /// Extra optimizer runs from seeded perturbations of the center, with
    /// unit standard deviation in the unconstrained space. The run with
    /// the lowest objective is kept.
    pub restarts: usize,
    pub restart_seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            optimizer: LbfgsOptions::default(),
            mode: ModeOptions::default(),
            regularization: BlockStrengths::default(),
            center: CenterValues::default(),
            min_observed_days: MIN_OBSERVED_DAYS,
            fd_step: 1e-6,
            restarts: 0,
            restart_seed: 0,
        }
    }
}

/// Optimizer outcome for a trained stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSummary {
    pub iterations: usize,
    pub evaluations: usize,
    pub failures: usize,
    pub termination: Termination,
    pub gradient_norm: f64,
    pub trace: Vec<IterationRecord>,
}

/// Parameters and final-state posterior of one stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedStage {
    /// Likelihood with learned parameters filled in.
    pub likelihood: Likelihood,
    pub raw: Vec<f64>,
    pub params: Decoded,
    /// Set when the stage had too few observed days to train.
    pub fallback: bool,
    pub observed_days: usize,
    /// `ψ` and `ψ + regularizer` at the returned parameters.
    pub psi: Option<f64>,
    pub objective: Option<f64>,
    pub optimizer: Option<OptimizerSummary>,
    pub mode_iterations: usize,
    pub mode_converged: bool,
    /// Posterior over the state after the last training index.
    pub final_state: SqrtGaussian,
    /// Why training was abandoned in favor of the center parameters.
    pub error: Option<String>,
    #[serde(skip)]
    pub mode: Option<ModeResult>,
}

/// Trains one stage. Optimizer breakdowns fall back to the center with the
/// error recorded; only invalid inputs are returned as errors.
pub fn fit(
    issm: &CompositeIssm,
    range: &TimeRange,
    likelihood: Likelihood,
    features: &[f64],
    obs: Observations,
    config: &TrainingConfig,
) -> Result<TrainedStage> {
    let mut crit = Criterion::new(issm, range, likelihood, features, obs)?;
    crit.mode_options = config.mode;
    crit.fd_step = config.fd_step;
    let layout = crit.layout().clone();
    let center = layout.center(&config.center)?;
    let reg = Regularizer {
        strength: layout.strengths_by_block(&config.regularization),
        center: center.clone(),
    };
    let observed_days = obs.num_active();
    if observed_days < config.min_observed_days {
        debug!("{observed_days} observed days: using the center parameters");
        return fallback_stage(&crit, center, true, None);
    }

    let mut last_error = None;
    let mut run = |x0: Vec<f64>| {
        minimize(
            |x| match crit.evaluate(x, true) {
                Ok(ev) => {
                    let mut g = ev.gradient.unwrap();
                    for (gi, r) in g.iter_mut().zip(reg.gradient(x)) {
                        *gi += r;
                    }
                    Some((ev.psi + reg.value(x), g))
                }
                Err(e) => {
                    debug!("criterion failed: {e}");
                    last_error = Some(e.to_string());
                    None
                }
            },
            x0,
            &config.optimizer,
        )
    };
    let mut result = run(center.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(config.restart_seed);
    for k in 0..config.restarts {
        let x0: Vec<f64> = center
            .iter()
            .map(|c| {
                let e: f64 = StandardNormal.sample(&mut rng);
                c + e
            })
            .collect();
        let Some(r) = run(x0) else { continue };
        if result.as_ref().is_none_or(|best| r.value < best.value) {
            debug!("restart {k} improved the objective to {}", r.value);
            result = Some(r);
        }
    }
    let Some(result) = result else {
        let msg = format!(
            "criterion could not be evaluated at the center: {}",
            last_error.unwrap_or_default()
        );
        warn!("{msg}");
        return fallback_stage(&crit, center, false, Some(msg));
    };
    if result.termination == Termination::RepeatedFailures {
        debug!("optimizer stopped after repeated inner failures; keeping the best point");
    }

    let ev = match crit.evaluate(&result.x, false) {
        Ok(ev) => ev,
        Err(e) => {
            let msg = format!("criterion failed at the optimum: {e}");
            warn!("{msg}");
            return fallback_stage(&crit, center, false, Some(msg));
        }
    };
    let summary = OptimizerSummary {
        iterations: result.iterations,
        evaluations: result.evaluations,
        failures: result.failures,
        termination: result.termination,
        gradient_norm: result.gradient.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        trace: result.trace,
    };
    Ok(TrainedStage {
        likelihood: likelihood.with_params(&ev.params.likelihood),
        params: ev.params,
        fallback: false,
        observed_days,
        psi: Some(ev.psi),
        objective: Some(ev.psi + reg.value(&result.x)),
        optimizer: Some(summary),
        mode_iterations: ev.mode.iterations,
        mode_converged: ev.mode.converged,
        final_state: ev.mode.smoothing.final_state.clone(),
        error: None,
        mode: Some(ev.mode),
        raw: result.x,
    })
}

fn fallback_stage(
    crit: &Criterion,
    raw: Vec<f64>,
    fallback: bool,
    error: Option<String>,
) -> Result<TrainedStage> {
    let params = crit.layout().decode(&raw);
    let (final_state, mode) = match crit.final_state_posterior(&raw) {
        Ok(v) => v,
        Err(e) if crit.observations().num_active() > 0 => {
            // The mode at the center failed too: forecast from the prior.
            warn!("mode finding failed at the center parameters: {e}");
            let inactive = vec![false; crit.shapes.len()];
            let empty = Criterion {
                obs: Observations {
                    active: &inactive,
                    ..crit.observations()
                },
                ..crit.clone()
            };
            empty.final_state_posterior(&raw)?
        }
        Err(e) => return Err(e),
    };
    Ok(TrainedStage {
        likelihood: crit.likelihood.with_params(&params.likelihood),
        params,
        fallback,
        observed_days: crit.observations().num_active(),
        psi: None,
        objective: None,
        optimizer: None,
        mode_iterations: mode.as_ref().map_or(0, |m| m.iterations),
        mode_converged: mode.as_ref().is_some_and(|m| m.converged),
        final_state,
        error,
        mode,
        raw,
    })
}

/// A trained model: structure plus one trained stage per likelihood stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedModel {
    pub components: Vec<IssmComponent>,
    pub feature_dim: usize,
    pub train_start: i64,
    pub train_len: usize,
    /// Three stages (zero, one, `2 + Poisson`) when set, otherwise one.
    pub multi_stage: bool,
    pub stages: Vec<TrainedStage>,
    /// Set iff some stage had too few observed days to train.
    pub fallback: bool,
}

impl TrainedModel {
    pub fn issm(&self) -> Result<CompositeIssm> {
        compose(self.components.clone(), self.feature_dim)
    }

    /// Range immediately after the training range.
    pub fn horizon_range(&self, len: usize) -> TimeRange {
        TimeRange::new(self.train_start + self.train_len as i64, len)
    }
}

/// Targets for a single-stage likelihood. Bernoulli targets may be given as
/// `±1` or `{0, 1}`; a 1 maps to `+1`.
pub fn single_stage_observations(
    likelihood: &Likelihood,
    z: &[Option<f64>],
    availability: &[f64],
) -> Result<(Vec<f64>, Vec<bool>, Vec<f64>)> {
    if z.len() != availability.len() {
        return Err(Error::Data(format!(
            "series has {} targets but {} availability values",
            z.len(),
            availability.len()
        )));
    }
    let n = z.len();
    let (mut targets, mut active, mut weights) = (vec![0.0; n], vec![false; n], vec![0.0; n]);
    for t in 0..n {
        let (Some(zt), rho) = (z[t], availability[t]) else {
            continue;
        };
        if !(rho > 0.0) {
            continue;
        }
        let zt = match likelihood {
            Likelihood::Bernoulli if zt == 0.0 => -1.0,
            _ => zt,
        };
        likelihood.check_target(zt)?;
        targets[t] = zt;
        active[t] = true;
        weights[t] = rho.min(1.0);
    }
    Ok((targets, active, weights))
}

/// Assembles a model from independently trained stages.
pub fn model_from(
    issm: &CompositeIssm,
    range: &TimeRange,
    multi_stage: bool,
    stages: Vec<TrainedStage>,
) -> TrainedModel {
    TrainedModel {
        components: issm.components().to_vec(),
        feature_dim: issm.feature_dim(),
        train_start: range.start,
        train_len: range.len,
        multi_stage,
        fallback: stages.iter().any(|s| s.fallback),
        stages,
    }
}

/// Trains a single-stage model on `z` (`None` = unobserved).
pub fn fit_single_stage(
    issm: &CompositeIssm,
    range: &TimeRange,
    likelihood: Likelihood,
    features: &[f64],
    z: &[Option<f64>],
    availability: &[f64],
    config: &TrainingConfig,
) -> Result<TrainedModel> {
    let (targets, active, weights) = single_stage_observations(&likelihood, z, availability)?;
    let obs = Observations {
        targets: &targets,
        active: &active,
        weights: &weights,
    };
    let stage = fit(issm, range, likelihood, features, obs, config)?;
    Ok(model_from(issm, range, false, vec![stage]))
}

/// Likelihoods of the three count stages.
pub fn stage_likelihoods(transfer: TransferFunction) -> [Likelihood; 3] {
    [
        Likelihood::Bernoulli,
        Likelihood::Bernoulli,
        Likelihood::Poisson { transfer },
    ]
}

/// Trains the three count stages independently over the full range.
pub fn fit_multi_stage(
    issm: &CompositeIssm,
    range: &TimeRange,
    transfer: TransferFunction,
    features: &[f64],
    z: &[Option<f64>],
    availability: &[f64],
    config: &TrainingConfig,
) -> Result<TrainedModel> {
    let data = multi_stage_decompose(z, availability)?;
    let mut stages = Vec::with_capacity(3);
    for (sd, lik) in data.iter().zip(stage_likelihoods(transfer)) {
        let obs = Observations {
            targets: &sd.targets,
            active: &sd.active,
            weights: &sd.weights,
        };
        stages.push(fit(issm, range, lik, features, obs, config)?);
    }
    Ok(model_from(issm, range, true, stages))
}
