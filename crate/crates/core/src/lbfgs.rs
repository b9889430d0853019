//! Limited-memory BFGS with backtracking Armijo line search.
//!
//! The objective may fail at a trial point (inner mode finding breaking
//! down); such points are treated as `+∞` and the step is shortened.

use log::debug;

/// Optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop when the sup-norm of the gradient falls below this.
    pub gradient_tolerance: f64,
    pub armijo: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
    /// Abort after this many consecutive failed objective evaluations.
    pub max_consecutive_failures: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iterations: 55,
            gradient_tolerance: 1e-5,
            armijo: 1e-4,
            backtrack: 0.5,
            max_backtracks: 20,
            max_consecutive_failures: 5,
        }
    }
}

/// Why the optimizer stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    MaxIterations,
    LineSearchFailed,
    RepeatedFailures,
}

/// Per-iteration diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub value: f64,
    pub gradient_norm: f64,
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub failures: usize,
    pub termination: Termination,
    pub trace: Vec<IterationRecord>,
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f` from `x0`. `f` returns `None` when evaluation fails.
/// Returns `None` only if the starting point itself cannot be evaluated.
pub fn minimize<F>(mut f: F, x0: Vec<f64>, opts: &LbfgsOptions) -> Option<LbfgsResult>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let (mut fx, mut g) = f(&x0)?;
    if !fx.is_finite() {
        return None;
    }
    let mut x = x0;
    let mut evaluations = 1;
    let mut failures = 0;
    let mut consecutive = 0;
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut trace = vec![IterationRecord {
        iteration: 0,
        value: fx,
        gradient_norm: sup_norm(&g),
        step: 0.0,
    }];
    let mut iterations = 0;

    let termination = loop {
        if sup_norm(&g) < opts.gradient_tolerance {
            break Termination::GradientTolerance;
        }
        if iterations >= opts.max_iterations {
            break Termination::MaxIterations;
        }

        // Two-loop recursion for the search direction.
        let mut q = g.clone();
        let m = s_hist.len();
        let mut alphas = vec![0.0; m];
        for i in (0..m).rev() {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            alphas[i] = rho * dot(&s_hist[i], &q);
            for (qj, yj) in q.iter_mut().zip(&y_hist[i]) {
                *qj -= alphas[i] * yj;
            }
        }
        let gamma = if m > 0 {
            dot(&s_hist[m - 1], &y_hist[m - 1]) / dot(&y_hist[m - 1], &y_hist[m - 1])
        } else {
            1.0 / sup_norm(&g).max(1.0)
        };
        for qj in q.iter_mut() {
            *qj *= gamma;
        }
        for i in 0..m {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            let beta = rho * dot(&y_hist[i], &q);
            for (qj, sj) in q.iter_mut().zip(&s_hist[i]) {
                *qj += (alphas[i] - beta) * sj;
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            // Curvature information went bad; restart from steepest descent.
            s_hist.clear();
            y_hist.clear();
            dir = g.iter().map(|v| -v / sup_norm(&g).max(1.0)).collect();
            slope = dot(&g, &dir);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + step * b).collect();
            evaluations += 1;
            match f(&trial) {
                Some((ft, gt)) if ft.is_finite() && gt.iter().all(|v| v.is_finite()) => {
                    consecutive = 0;
                    if ft <= fx + opts.armijo * step * slope {
                        accepted = Some((trial, ft, gt));
                        break;
                    }
                }
                _ => {
                    failures += 1;
                    consecutive += 1;
                    debug!("objective failed at trial step {step}");
                    if consecutive >= opts.max_consecutive_failures {
                        break;
                    }
                }
            }
            step *= opts.backtrack;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            break if consecutive >= opts.max_consecutive_failures {
                Termination::RepeatedFailures
            } else {
                Termination::LineSearchFailed
            };
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        if dot(&s, &y) > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if s_hist.len() == opts.memory {
                s_hist.remove(0);
                y_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
        }
        x = x_new;
        fx = f_new;
        g = g_new;
        iterations += 1;
        trace.push(IterationRecord {
            iteration: iterations,
            value: fx,
            gradient_norm: sup_norm(&g),
            step,
        });
        debug!(
            "lbfgs iteration {iterations}: f={fx:.10e} |g|={:.3e}",
            sup_norm(&g)
        );
        debug_assert_eq!(x.len(), n);
    };

    Some(LbfgsResult {
        x,
        value: fx,
        gradient: g,
        iterations,
        evaluations,
        failures,
        termination,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![
                -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                200.0 * (b - a * a),
            ];
            Some((v, g))
        };
        let opts = LbfgsOptions {
            max_iterations: 500,
            gradient_tolerance: 1e-8,
            ..Default::default()
        };
        let r = minimize(f, vec![-1.2, 1.0], &opts).unwrap();
        assert_eq!(r.termination, Termination::GradientTolerance);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn failing_region_is_avoided() {
        // Quadratic with a wall at x > 2 where evaluation fails.
        let f = |x: &[f64]| {
            if x[0] > 2.0 {
                None
            } else {
                Some(((x[0] - 1.5).powi(2), vec![2.0 * (x[0] - 1.5)]))
            }
        };
        let r = minimize(f, vec![-10.0], &LbfgsOptions::default()).unwrap();
        assert!((r.x[0] - 1.5).abs() < 1e-5);
    }
}
