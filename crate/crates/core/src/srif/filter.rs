//! Forward filtering and backward smoothing of an ISSM with Gaussian
//! observation potentials, optionally with joint inference over feature
//! weights.
//!
//! Indexing: observation `i` reads `state[i]`; the transition
//! `state[i+1] = F state[i] + g_i ε_i` uses innovation `ε_i`. A series of
//! length `T` has innovations `ε_0 .. ε_{T-2}` and initial state `state[0]`.

use crate::error::{Error, Result};
use crate::issm::{dot, Trajectory};
use crate::likelihood::GaussianizedObservation;

use super::system::{EquationSystem, Row, SqrtGaussian};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Joint Gaussian inference over feature weights `w` with `b_t = x_tᵀ w`.
#[derive(Debug, Clone, Copy)]
pub struct WeightModel<'a> {
    /// Row-major `T × p` feature matrix.
    pub features: &'a [f64],
    pub prior_mean: &'a [f64],
    pub prior_sd: &'a [f64],
}

impl WeightModel<'_> {
    fn p(&self) -> usize {
        self.prior_mean.len()
    }

    fn x(&self, i: usize) -> &[f64] {
        let p = self.p();
        &self.features[i * p..(i + 1) * p]
    }
}

/// Linear-Gaussian model: trajectory, prior over `state[0]`, and either a
/// fixed offset `b_t` or a weight model.
#[derive(Debug, Clone, Copy)]
pub struct GaussianModel<'a> {
    pub trajectory: &'a Trajectory,
    pub prior_mean: &'a [f64],
    pub prior_sd: &'a [f64],
    pub offset: Option<&'a [f64]>,
    pub weights: Option<WeightModel<'a>>,
}

impl<'a> GaussianModel<'a> {
    pub fn new(trajectory: &'a Trajectory, prior_mean: &'a [f64], prior_sd: &'a [f64]) -> Self {
        Self {
            trajectory,
            prior_mean,
            prior_sd,
            offset: None,
            weights: None,
        }
    }

    pub fn with_offset(mut self, offset: &'a [f64]) -> Self {
        self.offset = Some(offset);
        self
    }

    pub fn with_weights(mut self, weights: WeightModel<'a>) -> Self {
        self.weights = Some(weights);
        self
    }

    fn p(&self) -> usize {
        self.weights.map_or(0, |w| w.p())
    }

    fn offset_at(&self, i: usize) -> f64 {
        self.offset.map_or(0.0, |b| b[i])
    }

    fn validate(&self, obs: &[GaussianizedObservation]) -> Result<()> {
        let t = self.trajectory.len();
        let d = self.trajectory.dim();
        if t == 0 {
            return Err(Error::Data("empty series".into()));
        }
        if obs.len() != t {
            return Err(Error::Data(format!(
                "{} observations for a trajectory of length {t}",
                obs.len()
            )));
        }
        if self.prior_mean.len() != d || self.prior_sd.len() != d {
            return Err(Error::Config(format!("prior must have dimension {d}")));
        }
        if let Some(b) = self.offset {
            if b.len() != t {
                return Err(Error::Data(format!(
                    "offset has length {}, expected {t}",
                    b.len()
                )));
            }
        }
        if let Some(w) = &self.weights {
            if w.prior_sd.len() != w.p() || w.features.len() != t * w.p() {
                return Err(Error::Data("weight model dimensions do not match".into()));
            }
            if w.prior_sd.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
                return Err(Error::Config(
                    "weight prior standard deviations must be finite and nonnegative".into(),
                ));
            }
        }
        if self
            .prior_mean
            .iter()
            .chain(self.prior_sd)
            .any(|v| !v.is_finite())
            || self.prior_sd.iter().any(|s| *s < 0.0)
        {
            return Err(Error::numerical(0, "invalid prior over the initial state"));
        }
        Ok(())
    }
}

/// `ε_i | state[i+1], w, data up to i  ~  N(kᵀ state[i+1] + qᵀ w + mean, var)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsConditional {
    pub k: Vec<f64>,
    pub q: Vec<f64>,
    pub mean: f64,
    pub var: f64,
}

/// Everything the backward pass and forecasting need from the forward pass.
#[derive(Debug, Clone)]
pub struct ForwardState {
    pub eps_conditionals: Vec<EpsConditional>,
    /// Predictive `(mean, sd)` of `z̃_i` given earlier observations; `None`
    /// when observation `i` is missing.
    pub predictive: Vec<Option<(f64, f64)>>,
    pub log_likelihood: f64,
    /// `[state[T-1]; w]` given all observations.
    pub last_filtered: SqrtGaussian,
    /// `[state[T]; w]` given all observations.
    pub final_state: SqrtGaussian,
    /// `[state[i]; w]` given observations before `i`, when requested.
    pub messages: Option<Vec<SqrtGaussian>>,
}

/// Posterior moments from the backward pass.
#[derive(Debug, Clone)]
pub struct SmoothingResult {
    pub eps_mean: Vec<f64>,
    pub eps_var: Vec<f64>,
    /// `[state[0]; w]` given all observations.
    pub initial: SqrtGaussian,
    pub l0_mean: Vec<f64>,
    pub l0_var: Vec<f64>,
    pub y_mean: Vec<f64>,
    pub y_var: Vec<f64>,
    pub final_state: SqrtGaussian,
    pub w_mean: Option<Vec<f64>>,
    pub w_posterior: Option<SqrtGaussian>,
    pub log_likelihood: f64,
}

/// Householder reflection `H` with `H g = σ‖g‖ e_1`.
struct Reflection {
    v: Vec<f64>,
    vtv: f64,
    sigma_norm: f64,
    norm: f64,
}

impl Reflection {
    fn new(g: &[f64]) -> Option<Self> {
        let norm = super::system::scaled_norm(g.iter().copied());
        if norm == 0.0 || !norm.is_finite() {
            return None;
        }
        let sigma = if g[0] >= 0.0 { -1.0 } else { 1.0 };
        let mut v = g.to_vec();
        v[0] -= sigma * norm;
        let vtv = dot(&v, &v);
        Some(Self {
            v,
            vtv,
            sigma_norm: sigma * norm,
            norm,
        })
    }

    /// Row `j` of `H`.
    fn row(&self, j: usize, out: &mut [f64]) {
        let f = 2.0 * self.v[j] / self.vtv;
        for (o, vk) in out.iter_mut().zip(&self.v) {
            *o = -f * vk;
        }
        out[j] += 1.0;
    }
}

/// Dense `F` rows plus `vᵀF` helpers.
struct DenseTransition {
    d: usize,
    f: Vec<f64>,
}

impl DenseTransition {
    fn new(traj: &Trajectory) -> Self {
        Self {
            d: traj.dim(),
            f: traj.transition().to_dense(),
        }
    }

    fn row(&self, j: usize) -> &[f64] {
        &self.f[j * self.d..(j + 1) * self.d]
    }

    /// `vᵀ F`.
    fn left(&self, v: &[f64]) -> Vec<f64> {
        let d = self.d;
        let mut out = vec![0.0; d];
        for (j, &vj) in v.iter().enumerate() {
            if vj == 0.0 {
                continue;
            }
            for (o, f) in out.iter_mut().zip(self.row(j)) {
                *o += vj * f;
            }
        }
        out
    }
}

/// Rows encoding `state_next = F state_cur + g ε` with `ε` integrated out
/// (`cond = None`) or replaced by its conditional (`cond = Some`), laid out
/// over columns `[next at next_off, cur at cur_off, w at w_off]`.
fn transition_rows(
    tf: &DenseTransition,
    g: &[f64],
    n: usize,
    next_off: usize,
    cur_off: usize,
    w_off: usize,
    cond: Option<&EpsConditional>,
    sys: &mut EquationSystem,
) {
    let d = tf.d;
    match Reflection::new(g) {
        None => {
            for j in 0..d {
                let mut row = Row::zeros(n);
                row.coeffs[next_off + j] = 1.0;
                for (c, f) in tf.row(j).iter().enumerate() {
                    row.coeffs[cur_off + c] = -f;
                }
                sys.push(row, None);
            }
        }
        Some(h) => {
            let vtf = tf.left(&h.v);
            let mut hrow = vec![0.0; d];
            for j in 0..d {
                h.row(j, &mut hrow);
                let mut row = Row::zeros(n);
                row.coeffs[next_off..next_off + d].copy_from_slice(&hrow);
                let fj = 2.0 * h.v[j] / h.vtv;
                for (c, f) in tf.row(j).iter().enumerate() {
                    row.coeffs[cur_off + c] = -(f - fj * vtf[c]);
                }
                if j == 0 {
                    match cond {
                        None => row.sd = h.norm,
                        Some(e) => {
                            for (c, k) in e.k.iter().enumerate() {
                                row.coeffs[next_off + c] -= h.sigma_norm * k;
                            }
                            for (c, q) in e.q.iter().enumerate() {
                                row.coeffs[w_off + c] -= h.sigma_norm * q;
                            }
                            row.mean = h.sigma_norm * e.mean;
                            row.sd = h.norm * e.var.max(0.0).sqrt();
                        }
                    }
                }
                sys.push(row, None);
            }
        }
    }
}

/// Places the rows of a `[state; w]` representation into a system at the
/// given column offsets, marking them ready.
fn push_joint(
    sys: &mut EquationSystem,
    joint: &SqrtGaussian,
    d: usize,
    p: usize,
    state_off: usize,
    w_off: usize,
    include_w_rows: bool,
) {
    let n = sys.n;
    let rows = if include_w_rows { d + p } else { d };
    for i in 0..rows {
        let src = joint.row(i);
        let mut row = Row::zeros(n);
        row.coeffs[state_off..state_off + d].copy_from_slice(&src[..d]);
        row.coeffs[w_off..w_off + p].copy_from_slice(&src[d..d + p]);
        row.mean = joint.mean[i];
        row.sd = joint.sd[i];
        let ready = if i < d {
            state_off + i
        } else {
            w_off + (i - d)
        };
        sys.push(row, Some(ready));
    }
}

/// Collects pivot rows for the given columns into a `[state; w]`
/// representation, substituting the observed `z̃` if present.
fn collect_joint(
    sys: &EquationSystem,
    pivots: &[usize],
    cols: &[usize],
    z_col: Option<(usize, f64)>,
) -> SqrtGaussian {
    let m = cols.len();
    let mut r = vec![0.0; m * m];
    let mut mean = vec![0.0; m];
    let mut sd = vec![0.0; m];
    for (i, &p) in pivots.iter().enumerate() {
        let row = &sys.rows[p];
        for (j, &c) in cols.iter().enumerate() {
            r[i * m + j] = row.coeffs[c];
        }
        mean[i] = row.mean - z_col.map_or(0.0, |(c, z)| row.coeffs[c] * z);
        sd[i] = row.sd;
    }
    SqrtGaussian {
        dim: m,
        r,
        mean,
        sd,
    }
}

fn check_finite(g: &SqrtGaussian, t: usize) -> Result<()> {
    if g.is_valid() {
        Ok(())
    } else {
        Err(Error::numerical(t, "non-finite filter state"))
    }
}

/// Runs the forward pass.
pub fn forward_filter(
    model: &GaussianModel,
    obs: &[GaussianizedObservation],
    keep_messages: bool,
) -> Result<ForwardState> {
    model.validate(obs)?;
    let traj = model.trajectory;
    let (t_len, d, p) = (traj.len(), traj.dim(), model.p());
    let tf = DenseTransition::new(traj);

    let mut joint = {
        let mut mean = model.prior_mean.to_vec();
        let mut sd = model.prior_sd.to_vec();
        if let Some(w) = &model.weights {
            mean.extend_from_slice(w.prior_mean);
            sd.extend_from_slice(w.prior_sd);
        }
        SqrtGaussian::diagonal(&mean, &sd)
    };
    let mut eps_conditionals = Vec::with_capacity(t_len.saturating_sub(1));
    let mut predictive = Vec::with_capacity(t_len);
    let mut messages = keep_messages.then(Vec::new);
    let mut log_likelihood = 0.0;

    for (i, ob) in obs.iter().enumerate() {
        if let Some(m) = messages.as_mut() {
            m.push(joint.clone());
        }
        let observed = !ob.missing;
        if observed && !(ob.z_tilde.is_finite() && ob.sigma_sq > 0.0 && ob.sigma_sq.is_finite()) {
            return Err(Error::numerical(
                i,
                format!(
                    "invalid Gaussian observation z̃={}, σ²={}",
                    ob.z_tilde, ob.sigma_sq
                ),
            ));
        }
        if !traj.a(i).iter().chain(traj.g(i)).all(|v| v.is_finite()) {
            return Err(Error::numerical(i, "non-finite model coefficients"));
        }
        let last = i + 1 == t_len;
        let z_value = ob.z_tilde - model.offset_at(i);

        // Columns: [cur (d), next (d, unless last), w (p), z̃ (if observed)].
        let next_off = d;
        let w_off = if last { d } else { 2 * d };
        let z_off = w_off + p;
        let n = z_off + observed as usize;
        let mut sys = EquationSystem::new(n);
        push_joint(&mut sys, &joint, d, p, 0, w_off, true);
        if !last {
            transition_rows(&tf, traj.g(i), n, next_off, 0, w_off, None, &mut sys);
        }
        if observed {
            let mut row = Row::zeros(n);
            for (c, a) in traj.a(i).iter().enumerate() {
                row.coeffs[c] = -a;
            }
            if let Some(w) = &model.weights {
                for (c, x) in w.x(i).iter().enumerate() {
                    row.coeffs[w_off + c] = -x;
                }
            }
            row.coeffs[z_off] = 1.0;
            row.sd = ob.sigma_sq.sqrt();
            sys.push(row, None);
        }
        let pivots = sys.triangularize(0..n)?;
        let z_col = observed.then_some((z_off, z_value));

        if observed {
            let row = &sys.rows[pivots[n - 1]];
            let (m, s) = (row.mean, row.sd);
            if !(s > 0.0) || !m.is_finite() {
                return Err(Error::numerical(i, "degenerate predictive distribution"));
            }
            let r = (z_value - m) / s;
            log_likelihood += -LN_SQRT_2PI - s.ln() - 0.5 * r * r;
            predictive.push(Some((m + model.offset_at(i), s)));
        } else {
            predictive.push(None);
        }

        if last {
            let cols: Vec<usize> = (0..d + p).collect();
            joint = collect_joint(&sys, &pivots[..d + p], &cols, z_col);
            check_finite(&joint, i)?;
        } else {
            eps_conditionals.push(eps_conditional(
                &sys,
                &pivots[..d],
                &tf,
                traj.g(i),
                d,
                p,
                z_col,
            ));
            let cols: Vec<usize> = (d..2 * d + p).collect();
            joint = collect_joint(&sys, &pivots[d..2 * d + p], &cols, z_col);
            check_finite(&joint, i)?;
        }
    }

    // One more transition without observation gives state[T].
    let final_state = {
        let n = 2 * d + p;
        let mut sys = EquationSystem::new(n);
        push_joint(&mut sys, &joint, d, p, 0, 2 * d, true);
        transition_rows(&tf, traj.g(t_len - 1), n, d, 0, 2 * d, None, &mut sys);
        let pivots = sys.triangularize(0..n)?;
        let cols: Vec<usize> = (d..n).collect();
        collect_joint(&sys, &pivots[d..], &cols, None)
    };

    Ok(ForwardState {
        eps_conditionals,
        predictive,
        log_likelihood,
        last_filtered: joint,
        final_state,
        messages,
    })
}

/// Conditional of `ε_i` from the rows pivoting on `state[i]`:
/// `R_p state[i] + S state[i+1] + T w = c`.
fn eps_conditional(
    sys: &EquationSystem,
    pivots: &[usize],
    tf: &DenseTransition,
    g: &[f64],
    d: usize,
    p: usize,
    z_col: Option<(usize, f64)>,
) -> EpsConditional {
    let gg = dot(g, g);
    if gg == 0.0 || !gg.is_finite() {
        return EpsConditional {
            k: vec![0.0; d],
            q: vec![0.0; p],
            mean: 0.0,
            var: 1.0,
        };
    }
    // u solves R_pᵀ u = Fᵀ g / ‖g‖².
    let mut u = tf.left(g);
    for v in u.iter_mut() {
        *v /= gg;
    }
    for i in 0..d {
        let ui = u[i];
        if ui == 0.0 {
            continue;
        }
        let row = &sys.rows[pivots[i]].coeffs;
        for j in i + 1..d {
            u[j] -= row[j] * ui;
        }
    }
    let mut k: Vec<f64> = g.iter().map(|v| v / gg).collect();
    let mut q = vec![0.0; p];
    let mut mean = 0.0;
    let mut sds = Vec::with_capacity(d);
    for (i, &ui) in u.iter().enumerate() {
        let row = &sys.rows[pivots[i]];
        for (kj, c) in k.iter_mut().zip(&row.coeffs[d..2 * d]) {
            *kj += c * ui;
        }
        for (qj, c) in q.iter_mut().zip(&row.coeffs[2 * d..2 * d + p]) {
            *qj += c * ui;
        }
        let m = row.mean - z_col.map_or(0.0, |(c, z)| row.coeffs[c] * z);
        mean -= ui * m;
        sds.push(ui * row.sd);
    }
    let s = super::system::scaled_norm(sds.into_iter());
    EpsConditional {
        k,
        q,
        mean,
        var: s * s,
    }
}

/// Runs the backward pass on a completed forward pass.
pub fn backward_smooth(model: &GaussianModel, fwd: &ForwardState) -> Result<SmoothingResult> {
    let traj = model.trajectory;
    let (t_len, d, p) = (traj.len(), traj.dim(), model.p());
    let tf = DenseTransition::new(traj);

    let w_post = (p > 0).then(|| fwd.last_filtered.trailing(d));
    let w_mean = w_post.as_ref().map(|w| w.mean_vector());

    let mut y_mean = vec![0.0; t_len];
    let mut y_var = vec![0.0; t_len];
    let mut eps_mean = vec![0.0; t_len.saturating_sub(1)];
    let mut eps_var = vec![0.0; t_len.saturating_sub(1)];
    let mut joint = fwd.last_filtered.clone();
    let mut c = vec![0.0; d + p];

    for i in (0..t_len).rev() {
        let mean = joint.mean_vector();
        c[..d].copy_from_slice(traj.a(i));
        if let Some(w) = &model.weights {
            c[d..].copy_from_slice(w.x(i));
        }
        y_mean[i] = dot(&c, &mean) + model.offset_at(i);
        y_var[i] = joint.variance_of(&c);

        if i == 0 {
            break;
        }
        let e = &fwd.eps_conditionals[i - 1];
        c[..d].copy_from_slice(&e.k);
        c[d..].copy_from_slice(&e.q);
        eps_mean[i - 1] = dot(&c, &mean) + e.mean;
        eps_var[i - 1] = joint.variance_of(&c) + e.var;

        // Columns: [state[i] (d), state[i-1] (d), w (p)].
        let n = 2 * d + p;
        let mut sys = EquationSystem::new(n);
        push_joint(&mut sys, &joint, d, p, 0, 2 * d, false);
        transition_rows(&tf, traj.g(i - 1), n, 0, d, 2 * d, Some(e), &mut sys);
        let pivots = sys.triangularize(0..2 * d)?;
        let mut next = SqrtGaussian {
            dim: d + p,
            r: vec![0.0; (d + p) * (d + p)],
            mean: vec![0.0; d + p],
            sd: vec![0.0; d + p],
        };
        for (r, &pv) in pivots[d..].iter().enumerate() {
            let row = &sys.rows[pv];
            next.r[r * (d + p)..r * (d + p) + d].copy_from_slice(&row.coeffs[d..2 * d]);
            next.r[r * (d + p) + d..(r + 1) * (d + p)].copy_from_slice(&row.coeffs[2 * d..]);
            next.mean[r] = row.mean;
            next.sd[r] = row.sd;
        }
        for r in d..d + p {
            next.r[r * (d + p)..(r + 1) * (d + p)].copy_from_slice(joint.row(r));
            next.mean[r] = joint.mean[r];
            next.sd[r] = joint.sd[r];
        }
        check_finite(&next, i - 1)?;
        joint = next;
    }

    let l0_all = joint.mean_vector();
    let l0_var = (0..d)
        .map(|j| {
            let mut e = vec![0.0; d + p];
            e[j] = 1.0;
            joint.variance_of(&e)
        })
        .collect();
    Ok(SmoothingResult {
        eps_mean,
        eps_var,
        l0_mean: l0_all[..d].to_vec(),
        l0_var,
        initial: joint,
        y_mean,
        y_var,
        final_state: fwd.final_state.clone(),
        w_mean,
        w_posterior: w_post,
        log_likelihood: fwd.log_likelihood,
    })
}

/// Forward and backward pass in one call.
pub fn smooth(model: &GaussianModel, obs: &[GaussianizedObservation]) -> Result<SmoothingResult> {
    let fwd = forward_filter(model, obs, false)?;
    backward_smooth(model, &fwd)
}
