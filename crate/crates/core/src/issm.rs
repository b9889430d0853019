//! Innovation state space model components and their composition.
//!
//! A model is `y_t = a_tᵀ l_{t-1} + b_t`, `l_t = F l_{t-1} + g_t ε_t` with a
//! single standard normal innovation per step. Components (level,
//! level-trend, seasonality) each own a block of the latent state; the
//! composite stacks them, so `F` is block diagonal and `a_t`, `g_t` are the
//! stacked component vectors.
//!
//! Time is indexed by an absolute integer `t`. Calendar information for
//! seasonality comes either from a periodic rule on `t` or from an integer
//! column supplied by the data layer; this module never looks at dates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Open interval `(lower, upper)` for an innovation strength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

impl Bounds {
    pub const fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    pub fn validate(&self, what: &str) -> Result<()> {
        if !(self.lower > 0.0 && self.lower < self.upper && self.upper.is_finite()) {
            return Err(Error::Config(format!(
                "{what} bounds must satisfy 0 < lower < upper < inf, got ({}, {})",
                self.lower, self.upper
            )));
        }
        Ok(())
    }

    pub fn contains(&self, x: f64) -> bool {
        x > self.lower && x < self.upper
    }
}

impl Default for Bounds {
    fn default() -> Self {
        Self::new(1e-3, 1.0)
    }
}

/// Damping hyperparameters of a level-trend component. They replace the
/// unit entries of `F` and `a_t` and are never learned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Damping {
    #[serde(default = "one")]
    pub level: f64,
    #[serde(default = "one")]
    pub slope: f64,
}

fn one() -> f64 {
    1.0
}

impl Damping {
    pub fn slope(slope: f64) -> Self {
        Self { level: 1.0, slope }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [("level", self.level), ("slope", self.slope)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!(
                    "{name} damping must lie in (0, 1], got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Where the atomic seasonal factor index `time(t)` comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalendarSource {
    /// `time(t) = ((t + phase) / step) mod period`.
    Periodic {
        period: usize,
        #[serde(default = "one_usize")]
        step: usize,
        #[serde(default)]
        phase: usize,
    },
    /// Integer column supplied with the data (`season_<name>` in CSV).
    Column { name: String },
}

fn one_usize() -> usize {
    1
}

/// Absolute time range a model is evaluated on, with any calendar columns
/// aligned to its indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TimeRange {
    pub start: i64,
    pub len: usize,
    pub columns: BTreeMap<String, Vec<usize>>,
}

impl TimeRange {
    pub fn new(start: i64, len: usize) -> Self {
        Self {
            start,
            len,
            columns: BTreeMap::new(),
        }
    }

    pub fn with_column(mut self, name: impl Into<String>, values: Vec<usize>) -> Result<Self> {
        let name = name.into();
        if values.len() != self.len {
            return Err(Error::Data(format!(
                "calendar column {name} has {} values, range has {}",
                values.len(),
                self.len
            )));
        }
        self.columns.insert(name, values);
        Ok(self)
    }

    /// Range of `len` steps directly following this one. Calendar columns are
    /// not carried over.
    pub fn following(&self, len: usize) -> Self {
        Self::new(self.start + self.len as i64, len)
    }

    fn atomic_index(&self, source: &CalendarSource, i: usize) -> Result<usize> {
        match source {
            CalendarSource::Periodic {
                period,
                step,
                phase,
            } => {
                let t = self.start + i as i64 + *phase as i64;
                Ok((t.div_euclid(*step as i64)).rem_euclid(*period as i64) as usize)
            }
            CalendarSource::Column { name } => self
                .columns
                .get(name)
                .and_then(|c| c.get(i).copied())
                .ok_or_else(|| Error::Data(format!("calendar column {name} missing at index {i}"))),
        }
    }
}

/// Seasonal factor layout: atomic factors, the grouping map onto latent
/// factors, and the calendar that picks the active atomic factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonalityPattern {
    pub num_atomic: usize,
    pub grouping: Vec<usize>,
    pub source: CalendarSource,
}

impl SeasonalityPattern {
    /// Builds a pattern; `grouping = None` keeps every atomic factor separate.
    pub fn new(
        num_atomic: usize,
        grouping: Option<Vec<usize>>,
        source: CalendarSource,
    ) -> Result<Self> {
        if num_atomic == 0 {
            return Err(Error::Config(
                "seasonality needs at least one factor".into(),
            ));
        }
        let grouping = grouping.unwrap_or_else(|| (0..num_atomic).collect());
        let pattern = Self {
            num_atomic,
            grouping,
            source,
        };
        pattern.validate()?;
        Ok(pattern)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grouping.len() != self.num_atomic {
            return Err(Error::Config(format!(
                "grouping has {} entries for {} atomic factors",
                self.grouping.len(),
                self.num_atomic
            )));
        }
        let groups = self.num_groups();
        let mut seen = vec![false; groups];
        for &h in &self.grouping {
            seen[h] = true;
        }
        if let Some(h) = seen.iter().position(|s| !s) {
            return Err(Error::Config(format!(
                "grouping is not contiguous: group {h} is never used (groups 0..{groups})"
            )));
        }
        if let CalendarSource::Periodic { period, step, .. } = &self.source {
            if *period != self.num_atomic || *step == 0 {
                return Err(Error::Config(format!(
                    "periodic calendar with period {period}, step {step} does not match {} atomic factors",
                    self.num_atomic
                )));
            }
        }
        Ok(())
    }

    pub fn num_groups(&self) -> usize {
        self.grouping.iter().max().map_or(0, |m| m + 1)
    }

    /// Day-of-week on daily data.
    pub fn day_of_week() -> Self {
        Self::periodic(7, 1)
    }

    /// Hour-of-day on hourly data.
    pub fn hour_of_day() -> Self {
        Self::periodic(24, 1)
    }

    /// Day-of-week on hourly data (each factor used 24 times per cycle).
    pub fn day_of_week_hourly() -> Self {
        Self::periodic(7, 24)
    }

    /// Hour-of-week (hour × day cross product, 168 factors) on hourly data.
    pub fn hour_of_week() -> Self {
        Self::periodic(168, 1)
    }

    /// Hour × day with Monday to Friday tied together: 24 workday factors
    /// plus 24 each for Saturday and Sunday. Day 0 is Monday.
    pub fn hour_of_week_workdays_grouped() -> Self {
        let grouping = (0..168)
            .map(|j| {
                let (day, hour) = (j / 24, j % 24);
                if day < 5 {
                    hour
                } else {
                    24 + (day - 5) * 24 + hour
                }
            })
            .collect();
        Self {
            num_atomic: 168,
            grouping,
            source: CalendarSource::Periodic {
                period: 168,
                step: 1,
                phase: 0,
            },
        }
    }

    fn periodic(period: usize, step: usize) -> Self {
        Self {
            num_atomic: period,
            grouping: (0..period).collect(),
            source: CalendarSource::Periodic {
                period,
                step,
                phase: 0,
            },
        }
    }

    pub fn with_grouping(mut self, grouping: Vec<usize>) -> Result<Self> {
        self.grouping = grouping;
        self.validate()?;
        Ok(self)
    }

    pub fn with_phase(mut self, new_phase: usize) -> Self {
        if let CalendarSource::Periodic { phase, .. } = &mut self.source {
            *phase = new_phase;
        }
        self
    }

    /// Usage counts `N_h` per group over one idealized cycle of a periodic
    /// calendar.
    pub fn usage_counts(&self) -> Vec<usize> {
        let step = match self.source {
            CalendarSource::Periodic { step, .. } => step,
            CalendarSource::Column { .. } => 1,
        };
        let mut counts = vec![0; self.num_groups()];
        for &h in &self.grouping {
            counts[h] += step;
        }
        counts
    }

    /// Active group and budget weight `1 / N_h` for every index of `range`.
    ///
    /// Column calendars are split into cycles wherever the atomic index wraps
    /// around; counts are taken per concrete cycle so uneven cycles still
    /// spend a unit budget. Partial cycles at the range boundaries borrow the
    /// counts of the nearest complete cycle.
    pub fn active_weights(&self, range: &TimeRange) -> Result<Vec<(usize, f64)>> {
        let atomic: Vec<usize> = (0..range.len)
            .map(|i| range.atomic_index(&self.source, i))
            .collect::<Result<_>>()?;
        if let Some(&bad) = atomic.iter().find(|&&j| j >= self.num_atomic) {
            return Err(Error::Data(format!(
                "atomic seasonal index {bad} out of range 0..{}",
                self.num_atomic
            )));
        }
        let groups: Vec<usize> = atomic.iter().map(|&j| self.grouping[j]).collect();
        match self.source {
            CalendarSource::Periodic { .. } => {
                let counts = self.usage_counts();
                Ok(groups
                    .into_iter()
                    .map(|h| (h, 1.0 / counts[h] as f64))
                    .collect())
            }
            CalendarSource::Column { .. } => {
                let mut bounds = vec![0];
                for i in 1..atomic.len() {
                    if atomic[i] < atomic[i - 1] {
                        bounds.push(i);
                    }
                }
                bounds.push(atomic.len());
                let n_cycles = bounds.len() - 1;
                let per_cycle: Vec<Vec<usize>> = (0..n_cycles)
                    .map(|c| {
                        let mut counts = vec![0; self.num_groups()];
                        for &h in &groups[bounds[c]..bounds[c + 1]] {
                            counts[h] += 1;
                        }
                        counts
                    })
                    .collect();
                let complete: Vec<usize> = (0..n_cycles)
                    .filter(|&c| c > 0 && c + 1 < n_cycles)
                    .collect();
                let mut out = Vec::with_capacity(groups.len());
                for c in 0..n_cycles {
                    let reference = if complete.contains(&c) || complete.is_empty() {
                        c
                    } else if c == 0 {
                        complete[0]
                    } else {
                        *complete.last().unwrap()
                    };
                    for &h in &groups[bounds[c]..bounds[c + 1]] {
                        let n = per_cycle[reference][h].max(per_cycle[c][h]).max(1);
                        let n = if reference == c { per_cycle[c][h] } else { n };
                        out.push((h, 1.0 / n as f64));
                    }
                }
                Ok(out)
            }
        }
    }
}

/// One building block of a composite ISSM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IssmComponent {
    Level {
        alpha: Bounds,
    },
    LevelTrend {
        alpha: Bounds,
        beta: Bounds,
        damping: Option<Damping>,
    },
    Seasonality {
        gamma: Bounds,
        pattern: SeasonalityPattern,
    },
}

/// Level component: `F = [1]`, `a_t = [1]`, `g_t = [α]`.
pub fn make_level(alpha_bounds: Bounds) -> Result<IssmComponent> {
    alpha_bounds.validate("alpha")?;
    Ok(IssmComponent::Level {
        alpha: alpha_bounds,
    })
}

/// Level plus slope. Without damping `F = [[1, 1], [0, 1]]`, `a_t = [1, 1]`.
pub fn make_level_trend(
    alpha_bounds: Bounds,
    beta_bounds: Bounds,
    damping: Option<Damping>,
) -> Result<IssmComponent> {
    alpha_bounds.validate("alpha")?;
    beta_bounds.validate("beta")?;
    if let Some(d) = &damping {
        d.validate()?;
    }
    Ok(IssmComponent::LevelTrend {
        alpha: alpha_bounds,
        beta: beta_bounds,
        damping,
    })
}

/// Seasonal factors with `F = I`, `a_{t,h} = 1{π(time(t)) = h}` and budget
/// weighted innovation shape `g̃_{t,h} = a_{t,h} / N_h`.
pub fn make_seasonality(
    gamma_bounds: Bounds,
    pattern: SeasonalityPattern,
) -> Result<IssmComponent> {
    gamma_bounds.validate("gamma")?;
    pattern.validate()?;
    Ok(IssmComponent::Seasonality {
        gamma: gamma_bounds,
        pattern,
    })
}

impl IssmComponent {
    pub fn latent_dim(&self) -> usize {
        match self {
            IssmComponent::Level { .. } => 1,
            IssmComponent::LevelTrend { .. } => 2,
            IssmComponent::Seasonality { pattern, .. } => pattern.num_groups(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            IssmComponent::Level { .. } => "level",
            IssmComponent::LevelTrend { .. } => "level_trend",
            IssmComponent::Seasonality { .. } => "seasonality",
        }
    }

    /// Bounds of the learnable innovation strengths, in slot order.
    pub fn strength_bounds(&self) -> Vec<Bounds> {
        match self {
            IssmComponent::Level { alpha } => vec![*alpha],
            IssmComponent::LevelTrend { alpha, beta, .. } => vec![*alpha, *beta],
            IssmComponent::Seasonality { gamma, .. } => vec![*gamma],
        }
    }

    /// Number of learnable prior standard deviations (seasonality shares one).
    pub fn num_prior_sd(&self) -> usize {
        match self {
            IssmComponent::Seasonality { .. } => 1,
            other => other.latent_dim(),
        }
    }

    fn damping(&self) -> Damping {
        match self {
            IssmComponent::LevelTrend {
                damping: Some(d), ..
            } => *d,
            _ => Damping {
                level: 1.0,
                slope: 1.0,
            },
        }
    }

    /// Transition block of this component.
    pub fn transition(&self) -> TransitionBlock {
        match self {
            IssmComponent::Level { .. } => TransitionBlock::Dense {
                n: 1,
                m: vec![1.0],
                inv: vec![1.0],
            },
            IssmComponent::LevelTrend { .. } => {
                let d = self.damping();
                let m = vec![d.level, d.slope, 0.0, d.slope];
                let inv = vec![
                    1.0 / d.level,
                    -d.slope / (d.level * d.slope),
                    0.0,
                    1.0 / d.slope,
                ];
                TransitionBlock::Dense { n: 2, m, inv }
            }
            IssmComponent::Seasonality { pattern, .. } => TransitionBlock::Identity {
                n: pattern.num_groups(),
            },
        }
    }

    /// Writes `a_t` for every index of `range` into `out` (row stride `stride`,
    /// column offset `offset`), and the unit-strength shape of each strength
    /// slot into `shapes[slot]` with the same layout.
    fn fill(
        &self,
        range: &TimeRange,
        offset: usize,
        stride: usize,
        a_out: &mut [f64],
        shapes: &mut [Vec<f64>],
    ) -> Result<()> {
        match self {
            IssmComponent::Level { .. } => {
                for i in 0..range.len {
                    a_out[i * stride + offset] = 1.0;
                    shapes[0][i * stride + offset] = 1.0;
                }
            }
            IssmComponent::LevelTrend { .. } => {
                let d = self.damping();
                for i in 0..range.len {
                    a_out[i * stride + offset] = d.level;
                    a_out[i * stride + offset + 1] = d.slope;
                    shapes[0][i * stride + offset] = 1.0;
                    shapes[1][i * stride + offset + 1] = 1.0;
                }
            }
            IssmComponent::Seasonality { pattern, .. } => {
                for (i, (h, w)) in pattern.active_weights(range)?.into_iter().enumerate() {
                    a_out[i * stride + offset + h] = 1.0;
                    shapes[0][i * stride + offset + h] = w;
                }
            }
        }
        Ok(())
    }
}

/// A block of the (block diagonal) transition matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum TransitionBlock {
    Identity {
        n: usize,
    },
    /// Row-major `n × n` matrix and its inverse.
    Dense {
        n: usize,
        m: Vec<f64>,
        inv: Vec<f64>,
    },
}

impl TransitionBlock {
    fn n(&self) -> usize {
        match self {
            TransitionBlock::Identity { n } | TransitionBlock::Dense { n, .. } => *n,
        }
    }
}

/// Block diagonal transition `F` with cheap products against `F`, `F⁻¹` and
/// their transposes.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    blocks: Vec<(usize, TransitionBlock)>,
    dim: usize,
}

#[derive(Clone, Copy)]
enum Op {
    Forward,
    Inverse,
    Transpose,
    InverseTranspose,
}

impl Transition {
    pub fn new(blocks: Vec<TransitionBlock>) -> Self {
        let mut offset = 0;
        let blocks = blocks
            .into_iter()
            .map(|b| {
                let o = offset;
                offset += b.n();
                (o, b)
            })
            .collect();
        Self {
            blocks,
            dim: offset,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn apply_op(&self, op: Op, x: &[f64], out: &mut [f64]) {
        for (o, block) in &self.blocks {
            match block {
                TransitionBlock::Identity { n } => out[*o..o + n].copy_from_slice(&x[*o..o + n]),
                TransitionBlock::Dense { n, m, inv } => {
                    let (mat, transpose) = match op {
                        Op::Forward => (m, false),
                        Op::Inverse => (inv, false),
                        Op::Transpose => (m, true),
                        Op::InverseTranspose => (inv, true),
                    };
                    for r in 0..*n {
                        let mut acc = 0.0;
                        for c in 0..*n {
                            let v = if transpose {
                                mat[c * n + r]
                            } else {
                                mat[r * n + c]
                            };
                            acc += v * x[o + c];
                        }
                        out[o + r] = acc;
                    }
                }
            }
        }
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.apply_op(Op::Forward, x, out)
    }

    pub fn apply_inverse(&self, x: &[f64], out: &mut [f64]) {
        self.apply_op(Op::Inverse, x, out)
    }

    pub fn apply_transpose(&self, x: &[f64], out: &mut [f64]) {
        self.apply_op(Op::Transpose, x, out)
    }

    pub fn apply_inverse_transpose(&self, x: &[f64], out: &mut [f64]) {
        self.apply_op(Op::InverseTranspose, x, out)
    }

    /// Entry `F[r, c]`.
    pub fn entry(&self, r: usize, c: usize) -> f64 {
        for (o, block) in &self.blocks {
            let n = block.n();
            if r >= *o && r < o + n {
                if c < *o || c >= o + n {
                    return 0.0;
                }
                return match block {
                    TransitionBlock::Identity { .. } => (r == c) as u8 as f64,
                    TransitionBlock::Dense { m, .. } => m[(r - o) * n + (c - o)],
                };
            }
        }
        0.0
    }

    /// Dense row-major copy of `F`.
    pub fn to_dense(&self) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; d * d];
        for r in 0..d {
            for c in 0..d {
                out[r * d + c] = self.entry(r, c);
            }
        }
        out
    }

    /// Column indices of the nonzero entries of row `r` of `F`.
    pub fn row_support(&self, r: usize) -> std::ops::Range<usize> {
        for (o, block) in &self.blocks {
            let n = block.n();
            if r >= *o && r < o + n {
                return match block {
                    TransitionBlock::Identity { .. } => r..r + 1,
                    TransitionBlock::Dense { .. } => *o..o + n,
                };
            }
        }
        0..0
    }
}

/// Learnable ISSM quantities in constrained (decoded) form. Prior arrays are
/// expanded to one entry per latent dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssmParams {
    pub strengths: Vec<f64>,
    pub prior_mean: Vec<f64>,
    pub prior_sd: Vec<f64>,
}

/// Where each component's slots live inside the stacked state and the
/// parameter arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentLayout {
    pub state_offset: usize,
    pub strength_offset: usize,
    pub prior_sd_offset: usize,
}

/// Several components stacked into one model.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeIssm {
    components: Vec<IssmComponent>,
    layout: Vec<ComponentLayout>,
    total_dim: usize,
    num_strengths: usize,
    num_prior_sd: usize,
    feature_dim: usize,
    transition: Transition,
}

/// Stacks components into a composite model with block diagonal `F`.
pub fn compose(components: Vec<IssmComponent>, feature_dim: usize) -> Result<CompositeIssm> {
    if components.is_empty() {
        return Err(Error::Config(
            "a model needs at least one ISSM component".into(),
        ));
    }
    let mut layout = Vec::with_capacity(components.len());
    let (mut state, mut strength, mut sd) = (0, 0, 0);
    for c in &components {
        layout.push(ComponentLayout {
            state_offset: state,
            strength_offset: strength,
            prior_sd_offset: sd,
        });
        state += c.latent_dim();
        strength += c.strength_bounds().len();
        sd += c.num_prior_sd();
    }
    let transition = Transition::new(components.iter().map(|c| c.transition()).collect());
    Ok(CompositeIssm {
        components,
        layout,
        total_dim: state,
        num_strengths: strength,
        num_prior_sd: sd,
        feature_dim,
        transition,
    })
}

impl CompositeIssm {
    pub fn components(&self) -> &[IssmComponent] {
        &self.components
    }

    pub fn layout(&self) -> &[ComponentLayout] {
        &self.layout
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_strengths(&self) -> usize {
        self.num_strengths
    }

    pub fn num_prior_sd(&self) -> usize {
        self.num_prior_sd
    }

    pub fn transition(&self) -> &Transition {
        &self.transition
    }

    pub fn strength_bounds(&self) -> Vec<Bounds> {
        self.components
            .iter()
            .flat_map(|c| c.strength_bounds())
            .collect()
    }

    /// Expands per-slot prior standard deviations to one per latent dimension.
    pub fn expand_prior_sd(&self, slots: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_dim);
        for (c, l) in self.components.iter().zip(&self.layout) {
            match c {
                IssmComponent::Seasonality { .. } => out.extend(std::iter::repeat_n(
                    slots[l.prior_sd_offset],
                    c.latent_dim(),
                )),
                _ => out.extend_from_slice(
                    &slots[l.prior_sd_offset..l.prior_sd_offset + c.latent_dim()],
                ),
            }
        }
        out
    }

    /// Latent state dimensions governed by prior-sd slot `k`.
    pub fn prior_sd_dims(&self, k: usize) -> std::ops::Range<usize> {
        for (c, l) in self.components.iter().zip(&self.layout) {
            let n = c.num_prior_sd();
            if k >= l.prior_sd_offset && k < l.prior_sd_offset + n {
                return match c {
                    IssmComponent::Seasonality { .. } => {
                        l.state_offset..l.state_offset + c.latent_dim()
                    }
                    _ => {
                        let s = l.state_offset + (k - l.prior_sd_offset);
                        s..s + 1
                    }
                };
            }
        }
        0..0
    }

    /// Selector vectors and unit innovation shapes over `range`.
    pub fn shapes(&self, range: &TimeRange) -> Result<IssmShapes> {
        let d = self.total_dim;
        let mut a = vec![0.0; range.len * d];
        let mut shapes = vec![vec![0.0; range.len * d]; self.num_strengths];
        for (c, l) in self.components.iter().zip(&self.layout) {
            let k = c.strength_bounds().len();
            c.fill(
                range,
                l.state_offset,
                d,
                &mut a,
                &mut shapes[l.strength_offset..l.strength_offset + k],
            )?;
        }
        Ok(IssmShapes {
            dim: d,
            len: range.len,
            a,
            shapes,
        })
    }

    /// Materializes `a_t`, `g_t` over `range` for the given strengths.
    pub fn trajectory(&self, range: &TimeRange, strengths: &[f64]) -> Result<Trajectory> {
        Ok(self
            .shapes(range)?
            .trajectory(self.transition.clone(), strengths))
    }

    /// Coefficients `(a_t, g_t, F, b_t)` at index `i` of `range`.
    pub fn coefficients_at(
        &self,
        range: &TimeRange,
        i: usize,
        params: &IssmParams,
        weights: &[f64],
        x_t: &[f64],
    ) -> Result<Coefficients> {
        if x_t.len() != self.feature_dim || weights.len() != self.feature_dim {
            return Err(Error::Data(format!(
                "feature dimension mismatch: model expects {}, got x of length {} and w of length {}",
                self.feature_dim,
                x_t.len(),
                weights.len()
            )));
        }
        if i >= range.len {
            return Err(Error::Range(format!(
                "index {i} outside range of length {}",
                range.len
            )));
        }
        let traj = self.trajectory(range, &params.strengths)?;
        Ok(Coefficients {
            a: traj.a(i).to_vec(),
            g: traj.g(i).to_vec(),
            f: self.transition.to_dense(),
            b: dot(weights, x_t),
        })
    }
}

/// Dense coefficients at a single time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    pub a: Vec<f64>,
    pub g: Vec<f64>,
    /// Row-major `F`.
    pub f: Vec<f64>,
    pub b: f64,
}

/// Strength-independent part of a materialized model.
#[derive(Debug, Clone)]
pub struct IssmShapes {
    dim: usize,
    len: usize,
    a: Vec<f64>,
    shapes: Vec<Vec<f64>>,
}

impl IssmShapes {
    pub fn trajectory(&self, transition: Transition, strengths: &[f64]) -> Trajectory {
        let mut g = vec![0.0; self.len * self.dim];
        for (shape, &s) in self.shapes.iter().zip(strengths) {
            for (gi, si) in g.iter_mut().zip(shape) {
                *gi += s * si;
            }
        }
        Trajectory {
            dim: self.dim,
            len: self.len,
            a: self.a.clone(),
            g,
            transition,
        }
    }

    /// `∂g_t / ∂strength_k` row for index `i`.
    pub fn shape(&self, k: usize, i: usize) -> &[f64] {
        &self.shapes[k][i * self.dim..(i + 1) * self.dim]
    }

    /// All `∂g_t / ∂strength_k` rows (row-major `len × dim`).
    pub fn shape_rows(&self, k: usize) -> &[f64] {
        &self.shapes[k]
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn num_slots(&self) -> usize {
        self.shapes.len()
    }
}

/// `a_t`, `g_t` for every index of a range, plus `F`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    dim: usize,
    len: usize,
    a: Vec<f64>,
    g: Vec<f64>,
    transition: Transition,
}

impl Trajectory {
    /// Builds a trajectory from explicit rows (row-major `len × dim`).
    pub fn from_parts(transition: Transition, a: Vec<f64>, g: Vec<f64>) -> Result<Self> {
        let dim = transition.dim();
        if dim == 0 || a.len() % dim != 0 || a.len() != g.len() {
            return Err(Error::Config("inconsistent trajectory dimensions".into()));
        }
        Ok(Self {
            dim,
            len: a.len() / dim,
            a,
            g,
            transition,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn a(&self, i: usize) -> &[f64] {
        &self.a[i * self.dim..(i + 1) * self.dim]
    }

    pub fn g(&self, i: usize) -> &[f64] {
        &self.g[i * self.dim..(i + 1) * self.dim]
    }

    pub fn transition(&self) -> &Transition {
        &self.transition
    }

    /// Replaces `g_t` rows (used for sensitivity passes).
    pub fn with_g(&self, g: Vec<f64>) -> Self {
        assert_eq!(g.len(), self.g.len());
        Self { g, ..self.clone() }
    }

    /// Deterministic forward pass: `y_t = a_tᵀ l_{t-1} + b_t` for innovations
    /// `eps` (length `len - 1`) and initial state `l0`.
    pub fn forward_pass(&self, eps: &[f64], l0: &[f64], b: Option<&[f64]>) -> Vec<f64> {
        let mut y = Vec::with_capacity(self.len);
        let mut state = l0.to_vec();
        let mut next = vec![0.0; self.dim];
        for i in 0..self.len {
            y.push(dot(self.a(i), &state) + b.map_or(0.0, |b| b[i]));
            if i + 1 < self.len {
                self.transition.apply(&state, &mut next);
                let e = eps[i];
                for (n, g) in next.iter_mut().zip(self.g(i)) {
                    *n += g * e;
                }
                std::mem::swap(&mut state, &mut next);
            }
        }
        y
    }

    /// Final state `l_{len-1}` reached by the forward pass.
    pub fn final_state(&self, eps: &[f64], l0: &[f64]) -> Vec<f64> {
        let mut state = l0.to_vec();
        let mut next = vec![0.0; self.dim];
        for (i, &e) in eps.iter().enumerate().take(self.len.saturating_sub(1)) {
            self.transition.apply(&state, &mut next);
            for (n, g) in next.iter_mut().zip(self.g(i)) {
                *n += g * e;
            }
            std::mem::swap(&mut state, &mut next);
        }
        state
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
