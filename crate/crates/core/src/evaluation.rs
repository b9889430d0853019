//! Quantile loss and span risk metrics with in-stock filtering.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::ForecastSamples;

/// Availability at or above this counts as an in-stock day.
pub const IN_STOCK_LEVEL: f64 = 0.5;

/// `L_ρ(z, ẑ) = 2 (z − ẑ)(ρ 1{z > ẑ} − (1 − ρ) 1{z ≤ ẑ})`.
pub fn quantile_loss(z: f64, z_hat: f64, rho: f64) -> f64 {
    let r = z - z_hat;
    if z > z_hat {
        2.0 * r * rho
    } else {
        -2.0 * r * (1.0 - rho)
    }
}

/// A span `[lead, lead + span)` of the forecast horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub lead: usize,
    pub span: usize,
}

/// Which metrics to compute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationSpec {
    pub spans: Vec<Span>,
    pub quantiles: Vec<f64>,
    /// Fraction of in-stock days a span needs for an item to be scored.
    pub in_stock_fraction: f64,
    /// Also report the weekly (33 spans) and daily (8 spans) averages.
    pub weekly_daily: bool,
}

impl Default for EvaluationSpec {
    fn default() -> Self {
        Self {
            spans: vec![Span { lead: 0, span: 7 }],
            quantiles: vec![0.5, 0.9],
            in_stock_fraction: 0.8,
            weekly_daily: false,
        }
    }
}

impl EvaluationSpec {
    pub fn validate(&self) -> Result<()> {
        if let Some(q) = self.quantiles.iter().find(|q| !(**q > 0.0 && **q < 1.0)) {
            return Err(Error::Config(format!(
                "quantile levels must lie in (0, 1), got {q}"
            )));
        }
        if self.spans.iter().any(|s| s.span == 0) {
            return Err(Error::Config("spans must cover at least one step".into()));
        }
        if !(self.in_stock_fraction > 0.0 && self.in_stock_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "in-stock fraction must lie in (0, 1], got {}",
                self.in_stock_fraction
            )));
        }
        Ok(())
    }

    /// Longest horizon any configured metric needs.
    pub fn required_horizon(&self) -> usize {
        let spans = self
            .spans
            .iter()
            .map(|s| s.lead + s.span)
            .max()
            .unwrap_or(0);
        if self.weekly_daily {
            spans.max(7 * 33)
        } else {
            spans
        }
    }
}

/// Actual targets and availability over the forecast horizon of one item,
/// with its sample paths.
#[derive(Debug, Clone, Copy)]
pub struct EvalItem<'a> {
    pub actuals: &'a [f64],
    pub availability: &'a [f64],
    pub samples: &'a ForecastSamples,
}

/// Mean loss over the retained items.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Risk {
    pub value: f64,
    pub n_items: usize,
}

/// Whether at least `fraction · span` days of the span are in stock.
pub fn in_stock(availability: &[f64], lead: usize, span: usize, fraction: f64) -> bool {
    let days = availability[lead..lead + span]
        .iter()
        .filter(|&&p| p >= IN_STOCK_LEVEL)
        .count();
    days as f64 >= fraction * span as f64
}

/// `Σ_t π_t z_t` over the span.
pub fn span_actual(actuals: &[f64], availability: &[f64], lead: usize, span: usize) -> f64 {
    (lead..lead + span)
        .map(|t| availability[t] * actuals[t])
        .sum()
}

/// `R^ρ[I; (lead, span)]`: mean quantile loss of the span sums over items
/// that are mostly in stock. An empty retained set is an error.
pub fn risk(items: &[EvalItem], lead: usize, span: usize, rho: f64, fraction: f64) -> Result<Risk> {
    let mut total = 0.0;
    let mut n = 0;
    for item in items {
        if item.actuals.len() < lead + span || item.availability.len() < lead + span {
            return Err(Error::Range(format!(
                "span [{lead}, {}) beyond the actuals ({} steps)",
                lead + span,
                item.actuals.len()
            )));
        }
        if !in_stock(item.availability, lead, span, fraction) {
            continue;
        }
        let z = span_actual(item.actuals, item.availability, lead, span);
        let z_hat = item.samples.span_quantile(lead, span, rho)?;
        total += quantile_loss(z, z_hat, rho);
        n += 1;
    }
    if n == 0 {
        return Err(Error::Empty(format!(
            "no item is in stock on span ({lead}, {span})"
        )));
    }
    Ok(Risk {
        value: total / n as f64,
        n_items: n,
    })
}

fn average(
    items: &[EvalItem],
    spans: impl Iterator<Item = (usize, usize)>,
    rho: f64,
    fraction: f64,
) -> Result<Risk> {
    let mut values = Vec::new();
    let mut n_items = 0;
    for (lead, span) in spans {
        match risk(items, lead, span, rho, fraction) {
            Ok(r) => {
                values.push(r.value);
                n_items = n_items.max(r.n_items);
            }
            Err(Error::Empty(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if values.is_empty() {
        return Err(Error::Empty("no span has in-stock items".into()));
    }
    Ok(Risk {
        value: values.iter().sum::<f64>() / values.len() as f64,
        n_items,
    })
}

/// Average of `R^ρ[I; (7k, 7)]` over `k = 0..33`. Spans without in-stock
/// items are left out of the average.
pub fn weekly_risk(items: &[EvalItem], rho: f64, fraction: f64) -> Result<Risk> {
    average(items, (0..33).map(|k| (7 * k, 7)), rho, fraction)
}

/// Average of `R^ρ[I; (k, 1)]` over `k = 0..8`.
pub fn daily_risk(items: &[EvalItem], rho: f64, fraction: f64) -> Result<Risk> {
    average(items, (0..8).map(|k| (k, 1)), rho, fraction)
}

/// One metric value; `value` is `None` when no item was retained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub metric: String,
    pub rho: f64,
    pub lead: Option<usize>,
    pub span: Option<usize>,
    pub value: Option<f64>,
    pub n_items: usize,
}

fn record(metric: &str, rho: f64, span: Option<Span>, r: Result<Risk>) -> Result<MetricRecord> {
    let (value, n_items) = match r {
        Ok(r) => (Some(r.value), r.n_items),
        Err(Error::Empty(_)) => (None, 0),
        Err(e) => return Err(e),
    };
    Ok(MetricRecord {
        metric: metric.to_string(),
        rho,
        lead: span.map(|s| s.lead),
        span: span.map(|s| s.span),
        value,
        n_items,
    })
}

/// Every metric the spec asks for.
pub fn evaluate(items: &[EvalItem], spec: &EvaluationSpec) -> Result<Vec<MetricRecord>> {
    spec.validate()?;
    let mut out = Vec::new();
    for &rho in &spec.quantiles {
        let name = format!("P{}", (rho * 100.0).round());
        for &s in &spec.spans {
            out.push(record(
                &name,
                rho,
                Some(s),
                risk(items, s.lead, s.span, rho, spec.in_stock_fraction),
            )?);
        }
        if spec.weekly_daily {
            out.push(record(
                &format!("{name}-wk"),
                rho,
                None,
                weekly_risk(items, rho, spec.in_stock_fraction),
            )?);
            out.push(record(
                &format!("{name}-dy"),
                rho,
                None,
                daily_risk(items, rho, spec.in_stock_fraction),
            )?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_loss_is_absolute_error() {
        assert_eq!(quantile_loss(7.0, 3.0, 0.5), 4.0);
        assert_eq!(quantile_loss(3.0, 7.0, 0.5), 4.0);
    }

    #[test]
    fn loss_formula() {
        assert!((quantile_loss(10.0, 8.0, 0.9) - 3.6).abs() < 1e-12);
        assert!((quantile_loss(8.0, 10.0, 0.9) - 0.4).abs() < 1e-12);
        for rho in [0.1, 0.5, 0.9] {
            assert_eq!(quantile_loss(4.0, 4.0, rho), 0.0);
        }
    }

    #[test]
    fn filter_threshold() {
        let a = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0];
        assert!(!in_stock(&a, 0, 10, 0.8));
        assert!(in_stock(&a, 0, 8, 0.8));
        // Fractional availability counts as in stock from one half.
        assert!(in_stock(&[0.5, 0.6], 0, 2, 1.0));
        assert!(!in_stock(&[0.49, 1.0], 0, 2, 1.0));
    }
}
