//! Performance and risk statistics over per-step net returns.
//!
//! Ratios are per step (not annualized) unless stated otherwise. Value-at-risk
//! figures are lower-tail return quantiles, so they are usually negative.

use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("return series has zero dispersion")]
    ZeroDispersion,
    #[error("no return falls below the target")]
    NoDownside,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("value path has no drawdown")]
    ZeroDrawdown,
}

fn require(series: &[f64], needed: usize) -> Result<(), MetricError> {
    if series.len() < needed {
        return Err(MetricError::TooFewSamples { needed, got: series.len() });
    }
    Ok(())
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with denominator `n − 1`.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn sample_std(xs: &[f64]) -> f64 {
    math::sqrt(sample_variance(xs))
}

// Rounding of the mean leaves ~1 ulp residue in a constant series.
fn is_degenerate(std: f64, mean: f64) -> bool {
    std == 0.0 || std <= 1e-12 * mean.abs()
}

pub fn sharpe(returns: &[f64], risk_free: f64) -> Result<f64, MetricError> {
    require(returns, 2)?;
    let m = mean(returns);
    let sd = sample_std(returns);
    if is_degenerate(sd, m) {
        return Err(MetricError::ZeroDispersion);
    }
    Ok((m - risk_free) / sd)
}

/// Mean excess return over the downside deviation
/// `sqrt(mean(min(R − MAR, 0)²))` with `MAR = risk_free`.
pub fn sortino(returns: &[f64], risk_free: f64) -> Result<f64, MetricError> {
    require(returns, 1)?;
    if !returns.iter().any(|&r| r < risk_free) {
        return Err(MetricError::NoDownside);
    }
    let shortfall = returns
        .iter()
        .map(|&r| {
            let d = (r - risk_free).min(0.0);
            d * d
        })
        .sum::<f64>()
        / returns.len() as f64;
    Ok((mean(returns) - risk_free) / math::sqrt(shortfall))
}

/// Worst `v_t / max_{s≤t} v_s − 1`; zero for a path that never declines.
pub fn max_drawdown(values: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut worst = 0.0f64;
    for &v in values {
        peak = peak.max(v);
        worst = worst.min(v / peak - 1.0);
    }
    worst
}

/// `v_0, v_0(1+R_1), ...` of length `returns.len() + 1`.
pub fn value_path(returns: &[f64], initial: f64) -> Vec<f64> {
    let mut path = Vec::with_capacity(returns.len() + 1);
    path.push(initial);
    let mut v = initial;
    for r in returns {
        v *= 1.0 + r;
        path.push(v);
    }
    path
}

/// Smallest sample count for which the `1 − confidence` tail is non-empty.
pub fn min_tail_samples(confidence: f64) -> usize {
    // 1/0.05 evaluates a hair below 20
    math::ceil(1.0 / (1.0 - confidence) - 1e-9) as usize
}

/// Empirical lower-tail value-at-risk and conditional value-at-risk.
///
/// VaR is the sorted return at index `floor((n − 1)(1 − confidence))`
/// ("lower" interpolation); CVaR is the mean of all returns at or below it.
pub fn var_cvar(returns: &[f64], confidence: f64) -> Result<(f64, f64), MetricError> {
    require(returns, min_tail_samples(confidence))?;
    let mut sorted = returns.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = (sorted.len() - 1) as f64 * (1.0 - confidence);
    let idx = (pos + 1e-9) as usize;
    let var = sorted[idx];
    let tail: Vec<f64> = sorted.iter().copied().filter(|&r| r <= var).collect();
    Ok((var, mean(&tail)))
}

/// Annualized compound return over `|max drawdown|`, with the value path
/// starting at 1.
pub fn calmar(returns: &[f64], periods_per_year: f64) -> Result<f64, MetricError> {
    require(returns, 1)?;
    let path = value_path(returns, 1.0);
    let mdd = max_drawdown(&path);
    if mdd == 0.0 {
        return Err(MetricError::ZeroDrawdown);
    }
    Ok(annualized_return(path[path.len() - 1], returns.len(), periods_per_year) / mdd.abs())
}

pub fn annualized_return(growth: f64, steps: usize, periods_per_year: f64) -> f64 {
    math::powf(growth, periods_per_year / steps as f64) - 1.0
}

/// `mean − λ/2 · sample variance`.
pub fn utility(returns: &[f64], lambda: f64) -> Result<f64, MetricError> {
    require(returns, 2)?;
    Ok(mean(returns) - 0.5 * lambda * sample_variance(returns))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportSettings {
    pub risk_free: f64,
    pub confidence: f64,
    pub periods_per_year: f64,
    pub utility_lambda: f64,
}

impl Default for ReportSettings {
    fn default() -> Self {
        Self { risk_free: 0.0, confidence: 0.95, periods_per_year: 365.0, utility_lambda: 1.0 }
    }
}

/// Summary of one backtest. Metrics that are undefined for the series
/// (zero dispersion, no downside, too few samples, no drawdown) are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub final_value: f64,
    pub mean_log_return: f64,
    pub std: Option<f64>,
    pub sharpe: Option<f64>,
    pub sortino: Option<f64>,
    pub max_drawdown: f64,
    pub var_95: Option<f64>,
    pub cvar_95: Option<f64>,
    pub calmar: Option<f64>,
    pub utility: Option<f64>,
    pub avg_weights: Vec<(String, f64)>,
}

/// Builds the report from net returns, the value path `v_0..v_T` and the
/// weights held at each step (labelled by `slots`).
pub fn build_report(
    net_returns: &[f64],
    values: &[f64],
    weights: &[&[f64]],
    slots: &[String],
    settings: &ReportSettings,
) -> MetricsReport {
    let log_returns: Vec<f64> = values.windows(2).map(|w| math::ln(w[1] / w[0])).collect();
    let mean_log_return = if log_returns.is_empty() { 0.0 } else { mean(&log_returns) };
    let (var_95, cvar_95) = match var_cvar(net_returns, settings.confidence) {
        Ok((v, c)) => (Some(v), Some(c)),
        Err(_) => (None, None),
    };
    let avg_weights = slots
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let avg =
                if weights.is_empty() { 0.0 } else { weights.iter().map(|w| w[i]).sum::<f64>() / weights.len() as f64 };
            (name.clone(), avg)
        })
        .collect();
    MetricsReport {
        final_value: values.last().copied().unwrap_or(0.0),
        mean_log_return,
        std: (net_returns.len() >= 2).then(|| sample_std(net_returns)),
        sharpe: sharpe(net_returns, settings.risk_free).ok(),
        sortino: sortino(net_returns, settings.risk_free).ok(),
        max_drawdown: max_drawdown(values),
        var_95,
        cvar_95,
        calmar: calmar(net_returns, settings.periods_per_year).ok(),
        utility: utility(net_returns, settings.utility_lambda).ok(),
        avg_weights,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sharpe_examples() {
        let alt: Vec<f64> = (0..10).map(|i| if i % 2 == 0 { 0.01 } else { -0.01 }).collect();
        assert!(sharpe(&alt, 0.0).unwrap().abs() < 1e-15);
        assert_eq!(sharpe(&[0.003; 50], 0.0), Err(MetricError::ZeroDispersion));
    }

    #[test]
    fn sortino_examples() {
        assert_eq!(sortino(&[0.01, 0.02, 0.0], 0.0), Err(MetricError::NoDownside));
        assert!(sortino(&[0.02, -0.02, 0.02, -0.02], 0.0).unwrap().abs() < 1e-15);
        // equal mean, no negative skew: downside deviation below full std
        let r = [0.03, -0.01, 0.01, 0.01, -0.01, 0.03, 0.01, -0.01];
        assert!(sortino(&r, 0.0).unwrap() >= sharpe(&r, 0.0).unwrap());
    }

    #[test]
    fn drawdown_examples() {
        assert_eq!(max_drawdown(&[1.0, 1.1, 1.2, 1.5]), 0.0);
        assert_eq!(max_drawdown(&[1.0, 2.0, 1.0]), -0.5);
    }

    #[test]
    fn tail_examples() {
        let mut r = vec![-0.01; 5];
        r.extend(vec![0.01; 95]);
        assert_eq!(var_cvar(&r, 0.95).unwrap(), (-0.01, -0.01));
        assert_eq!(var_cvar(&[0.0; 19], 0.95), Err(MetricError::TooFewSamples { needed: 20, got: 19 }));
        let sym: Vec<f64> = (0..40).map(|i| if i % 2 == 0 { 0.02 } else { -0.02 }).collect();
        assert!(var_cvar(&sym, 0.95).unwrap().0 < 0.0);
    }

    #[test]
    fn calmar_examples() {
        assert_eq!(calmar(&[0.01, 0.02], 365.0), Err(MetricError::ZeroDrawdown));
        let dip = [0.0, 0.0, -0.1, 1.0 / 0.9 - 1.0];
        assert!(calmar(&dip, 365.0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn utility_examples() {
        let r = [0.01, -0.02, 0.03];
        assert_eq!(utility(&r, 0.0).unwrap(), mean(&r));
        assert!((utility(&[0.004; 6], 3.0).unwrap() - 0.004).abs() < 1e-18);
    }

    #[test]
    fn report_handles_undefined_metrics() {
        let rets = [0.01, 0.01];
        let values = value_path(&rets, 1.0);
        let w = [0.5, 0.5];
        let report = build_report(&rets, &values, &[&w, &w], &["a".into(), "b".into()], &ReportSettings::default());
        assert_eq!(report.sharpe, None);
        assert_eq!(report.sortino, None);
        assert_eq!(report.var_95, None);
        assert_eq!(report.calmar, None);
        assert_eq!(report.max_drawdown, 0.0);
        assert_eq!(report.avg_weights[1], ("b".into(), 0.5));
    }

    fn series() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-0.1f64..0.1, 30..120)
    }

    proptest! {
        #[test]
        fn shift_moves_sharpe_by_c_over_sigma(r in series(), c in -0.01f64..0.01) {
            let shifted: Vec<f64> = r.iter().map(|x| x + c).collect();
            let sd = sample_std(&r);
            prop_assume!(sd > 1e-6);
            prop_assert!((sample_std(&shifted) - sd).abs() < 1e-12);
            let delta = sharpe(&shifted, 0.0).unwrap() - sharpe(&r, 0.0).unwrap();
            prop_assert!((delta - c / sd).abs() < 1e-9);
        }

        #[test]
        fn drawdown_is_scale_invariant(r in series(), k in 0.01f64..100.0) {
            let path = value_path(&r, 1.0);
            let scaled: Vec<f64> = path.iter().map(|v| v * k).collect();
            prop_assert!((max_drawdown(&path) - max_drawdown(&scaled)).abs() < 1e-12);
            prop_assert!(max_drawdown(&path) <= 0.0);
        }

        #[test]
        fn cvar_never_exceeds_var(r in series()) {
            let (var, cvar) = var_cvar(&r, 0.95).unwrap();
            prop_assert!(cvar <= var);
        }
    }
}
