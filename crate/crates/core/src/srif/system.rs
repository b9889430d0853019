//! Stochastic equation systems `R x = c`, `c ~ N(m, diag(s²))`, kept in
//! standard-deviation form and triangularized by Gaussian elimination that
//! preserves independence of the right-hand sides.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// One equation `coeffsᵀ x = c` with `c ~ N(mean, sd²)`. `sd = 0` is a
/// deterministic constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub coeffs: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
}

impl Row {
    pub fn zeros(n: usize) -> Self {
        Self {
            coeffs: vec![0.0; n],
            mean: 0.0,
            sd: 0.0,
        }
    }
}

/// Eliminates column `col` from `target` using `pivot`, whose coefficient at
/// `col` must be 1.
///
/// The target becomes `target - a·pivot` with `a = target[col]`; the pivot is
/// replaced by the combination of both rows whose right-hand side is
/// independent of the new target. Standard deviations are updated without
/// squaring so that very large and very small scales survive.
pub fn eliminate(pivot: &mut Row, target: &mut Row, col: usize) {
    let a = target.coeffs[col];
    if a == 0.0 {
        return;
    }
    let (s1, si) = (pivot.sd, target.sd);
    let (w1, wi, s1_new, si_new);
    if s1 == 0.0 {
        (w1, wi, s1_new, si_new) = (1.0, 0.0, 0.0, si);
    } else if si > (a * s1).abs() {
        let alpha = a * s1 / si;
        let h = alpha.hypot(1.0);
        let denom = 1.0 + alpha * alpha;
        w1 = 1.0 / denom;
        wi = alpha * (s1 / si) / denom;
        si_new = si * h;
        s1_new = s1 / h;
    } else {
        let beta = si / (a * s1);
        let h = beta.hypot(1.0);
        let denom = 1.0 + beta * beta;
        w1 = beta * beta / denom;
        wi = (1.0 / a) / denom;
        si_new = (a * s1).abs() * h;
        s1_new = beta.abs() * s1 / h;
    }
    if wi == 0.0 {
        for (t, p) in target.coeffs.iter_mut().zip(&pivot.coeffs) {
            *t -= a * p;
        }
        target.mean -= a * pivot.mean;
    } else {
        for (p, t) in pivot.coeffs.iter_mut().zip(target.coeffs.iter_mut()) {
            let (pv, tv) = (*p, *t);
            *p = w1 * pv + wi * tv;
            *t = tv - a * pv;
        }
        let (pm, tm) = (pivot.mean, target.mean);
        pivot.mean = w1 * pm + wi * tm;
        target.mean = tm - a * pm;
    }
    pivot.coeffs[col] = 1.0;
    target.coeffs[col] = 0.0;
    pivot.sd = s1_new;
    target.sd = si_new;
}

/// Dense equation system over `n` variables with optional "ready" rows that
/// already have a unit coefficient at a known pivot column.
#[derive(Debug, Clone)]
pub struct EquationSystem {
    pub n: usize,
    pub rows: Vec<Row>,
    ready: Vec<Option<usize>>,
}

impl EquationSystem {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            rows: Vec::new(),
            ready: Vec::new(),
        }
    }

    /// Adds a row; `ready_at = Some(j)` marks it as a unit pivot for column `j`.
    pub fn push(&mut self, row: Row, ready_at: Option<usize>) {
        debug_assert_eq!(row.coeffs.len(), self.n);
        self.rows.push(row);
        self.ready.push(ready_at);
    }

    /// Triangularizes the given columns in order and returns the pivot row
    /// of each column. Ready rows are used as pivots when available,
    /// otherwise the row with the largest absolute coefficient is normalized
    /// and used. Rows without a pivot stay in the system untouched by later
    /// columns' pivots only through elimination.
    pub fn triangularize(&mut self, cols: std::ops::Range<usize>) -> Result<Vec<usize>> {
        let mut used = vec![false; self.rows.len()];
        let mut pivots = Vec::with_capacity(cols.len());
        for j in cols {
            let mut pivot = None;
            for (r, row) in self.rows.iter().enumerate() {
                if !used[r] && self.ready[r] == Some(j) && row.coeffs[j] == 1.0 {
                    pivot = Some(r);
                    break;
                }
            }
            if pivot.is_none() {
                let mut best = 0.0;
                for (r, row) in self.rows.iter().enumerate() {
                    let v = row.coeffs[j].abs();
                    if !used[r] && v > best {
                        best = v;
                        pivot = Some(r);
                    }
                }
                let Some(p) = pivot else {
                    return Err(Error::numerical(j, "singular equation system: no pivot"));
                };
                let row = &mut self.rows[p];
                let c = row.coeffs[j];
                if !c.is_finite() {
                    return Err(Error::numerical(j, "non-finite pivot coefficient"));
                }
                for v in row.coeffs.iter_mut() {
                    *v /= c;
                }
                row.coeffs[j] = 1.0;
                row.mean /= c;
                row.sd /= c.abs();
                self.ready[p] = Some(j);
            }
            let p = pivot.unwrap();
            used[p] = true;
            let mut prow = std::mem::replace(&mut self.rows[p], Row::zeros(0));
            for r in 0..self.rows.len() {
                if used[r] || self.rows[r].coeffs[j] == 0.0 {
                    continue;
                }
                if self.ready[r].is_some() {
                    self.ready[r] = None;
                }
                eliminate(&mut prow, &mut self.rows[r], j);
            }
            self.rows[p] = prow;
            pivots.push(p);
        }
        Ok(pivots)
    }
}

/// Gaussian over `dim` variables represented as `R x = c`,
/// `c ~ N(mean, diag(sd²))`, with `R` unit upper triangular (row-major).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SqrtGaussian {
    pub dim: usize,
    pub r: Vec<f64>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl SqrtGaussian {
    /// Independent coordinates `x_j ~ N(mean_j, sd_j²)`.
    pub fn diagonal(mean: &[f64], sd: &[f64]) -> Self {
        let dim = mean.len();
        let mut r = vec![0.0; dim * dim];
        for j in 0..dim {
            r[j * dim + j] = 1.0;
        }
        Self {
            dim,
            r,
            mean: mean.to_vec(),
            sd: sd.to_vec(),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.r[i * self.dim..(i + 1) * self.dim]
    }

    /// Solves `R x = c`.
    pub fn solve(&self, c: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let mut x = c.to_vec();
        for i in (0..n).rev() {
            let row = self.row(i);
            let mut acc = x[i];
            for j in i + 1..n {
                acc -= row[j] * x[j];
            }
            x[i] = acc;
        }
        x
    }

    /// Solves `Rᵀ u = c`.
    pub fn solve_transpose(&self, c: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let mut u = c.to_vec();
        for i in 0..n {
            let ui = u[i];
            if ui == 0.0 {
                continue;
            }
            let row = self.row(i);
            for j in i + 1..n {
                u[j] -= row[j] * ui;
            }
        }
        u
    }

    pub fn mean_vector(&self) -> Vec<f64> {
        self.solve(&self.mean)
    }

    /// Standard deviation of `cᵀx`, accumulated with rescaling so extreme
    /// scales do not overflow.
    pub fn std_dev_of(&self, c: &[f64]) -> f64 {
        let u = self.solve_transpose(c);
        scaled_norm(u.iter().zip(&self.sd).map(|(a, b)| a * b))
    }

    pub fn variance_of(&self, c: &[f64]) -> f64 {
        let s = self.std_dev_of(c);
        s * s
    }

    /// Dense covariance `R⁻¹ diag(sd²) R⁻ᵀ`.
    pub fn covariance(&self) -> Vec<f64> {
        let n = self.dim;
        // Columns of R⁻¹ scaled by sd.
        let mut l = vec![0.0; n * n];
        for k in 0..n {
            let mut e = vec![0.0; n];
            e[k] = self.sd[k];
            let col = self.solve(&e);
            for i in 0..n {
                l[i * n + k] = col[i];
            }
        }
        let mut cov = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v: f64 = (0..n).map(|k| l[i * n + k] * l[j * n + k]).sum();
                cov[i * n + j] = v;
                cov[j * n + i] = v;
            }
        }
        cov
    }

    /// Marginal variances of each coordinate.
    pub fn marginal_variances(&self) -> Vec<f64> {
        let n = self.dim;
        (0..n)
            .map(|i| {
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                self.variance_of(&e)
            })
            .collect()
    }

    /// Draws `x` by sampling the right-hand side and back-substituting.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let c: Vec<f64> = self
            .mean
            .iter()
            .zip(&self.sd)
            .map(|(m, s)| {
                let n: f64 = StandardNormal.sample(rng);
                m + s * n
            })
            .collect();
        self.solve(&c)
    }

    /// Marginal over the trailing `dim - k` coordinates (the rows below `k`
    /// of a triangular system only involve those coordinates).
    pub fn trailing(&self, k: usize) -> SqrtGaussian {
        let n = self.dim;
        let m = n - k;
        let mut r = vec![0.0; m * m];
        for i in 0..m {
            r[i * m..(i + 1) * m].copy_from_slice(&self.row(k + i)[k..]);
        }
        SqrtGaussian {
            dim: m,
            r,
            mean: self.mean[k..].to_vec(),
            sd: self.sd[k..].to_vec(),
        }
    }

    /// True when every entry is finite and standard deviations are nonnegative.
    pub fn is_valid(&self) -> bool {
        self.r.iter().all(|v| v.is_finite())
            && self.mean.iter().all(|v| v.is_finite())
            && self.sd.iter().all(|v| v.is_finite() && *v >= 0.0)
    }
}

/// Euclidean norm with rescaling.
pub(crate) fn scaled_norm(values: impl Iterator<Item = f64>) -> f64 {
    let mut scale = 0.0f64;
    let mut ssq = 1.0f64;
    for v in values {
        if v != 0.0 {
            let a = v.abs();
            if scale < a {
                ssq = 1.0 + ssq * (scale / a) * (scale / a);
                scale = a;
            } else {
                ssq += (a / scale) * (a / scale);
            }
        }
    }
    scale * ssq.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_pivot_is_plain_elimination() {
        let mut p = Row {
            coeffs: vec![1.0, 2.0],
            mean: 1.0,
            sd: 0.0,
        };
        let mut t = Row {
            coeffs: vec![3.0, 1.0],
            mean: 2.0,
            sd: 0.5,
        };
        eliminate(&mut p, &mut t, 0);
        assert_eq!(p.coeffs, vec![1.0, 2.0]);
        assert_eq!(t.coeffs, vec![0.0, -5.0]);
        assert_eq!(t.mean, -1.0);
        assert_eq!(t.sd, 0.5);
    }

    #[test]
    fn zero_coefficient_leaves_rows() {
        let mut p = Row {
            coeffs: vec![1.0, 2.0],
            mean: 1.0,
            sd: 1.0,
        };
        let mut t = Row {
            coeffs: vec![0.0, 1.0],
            mean: 2.0,
            sd: 0.5,
        };
        let (p0, t0) = (p.clone(), t.clone());
        eliminate(&mut p, &mut t, 0);
        assert_eq!(p, p0);
        assert_eq!(t, t0);
    }

    #[test]
    fn both_branches_agree_with_variance_form() {
        for (a, s1, si) in [(0.5, 1.0, 2.0), (3.0, 1.0, 0.1), (-2.0, 0.3, 0.0)] {
            let mut p = Row {
                coeffs: vec![1.0, 0.4],
                mean: 0.2,
                sd: s1,
            };
            let mut t = Row {
                coeffs: vec![a, -1.0],
                mean: 0.7,
                sd: si,
            };
            eliminate(&mut p, &mut t, 0);
            let (v1, vi) = (s1 * s1, si * si);
            let d = vi + a * a * v1;
            assert!((t.sd * t.sd - d).abs() < 1e-12);
            assert!((p.sd * p.sd - v1 * vi / d).abs() < 1e-12);
            let w1 = vi / d;
            let wi = a * v1 / d;
            assert!((p.coeffs[1] - (w1 * 0.4 + wi * -1.0)).abs() < 1e-12);
            assert!((p.mean - (w1 * 0.2 + wi * 0.7)).abs() < 1e-12);
        }
    }

    #[test]
    fn scaled_norm_handles_extremes() {
        let n = scaled_norm([1e200, 1e200].into_iter());
        assert!((n / (1e200 * 2f64.sqrt()) - 1.0).abs() < 1e-14);
        assert_eq!(scaled_norm(std::iter::empty()), 0.0);
    }
}
