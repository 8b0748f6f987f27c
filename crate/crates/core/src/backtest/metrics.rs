//! Performance and forecast-accuracy statistics of daily return series.

use serde::Serialize;
use thiserror::Error;

pub const TRADING_DAYS: f64 = 252.0;
pub const DEFAULT_VAR_LEVEL: f64 = 0.95;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("need at least {needed} returns, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("zero return variance: Sharpe ratio undefined")]
    ZeroVariance,
    #[error("invalid return {0}")]
    InvalidReturn(f64),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerformanceReport {
    pub n_days: usize,
    pub cumulative_return: f64,
    pub cagr: f64,
    pub mean_daily: f64,
    pub std_daily: f64,
    pub mean_ann: f64,
    pub std_ann: f64,
    pub sharpe_daily: f64,
    pub sharpe_ann: f64,
    pub max_drawdown: f64,
    pub var: f64,
    pub cvar: f64,
}

fn check(returns: &[f64], needed: usize) -> Result<(), MetricsError> {
    if returns.len() < needed {
        return Err(MetricsError::TooShort {
            needed,
            got: returns.len(),
        });
    }
    match returns.iter().find(|r| !r.is_finite() || **r <= -1.0) {
        Some(&bad) => Err(MetricsError::InvalidReturn(bad)),
        None => Ok(()),
    }
}

pub fn terminal_wealth(returns: &[f64]) -> f64 {
    returns.iter().map(|r| 1.0 + r).product()
}

/// `W_T^(periods_per_year / T) − 1`.
pub fn cagr(returns: &[f64], periods_per_year: f64) -> Result<f64, MetricsError> {
    check(returns, 1)?;
    Ok(terminal_wealth(returns).powf(periods_per_year / returns.len() as f64) - 1.0)
}

/// Most negative `W_t / max_{s≤t} W_s − 1`, with the running peak starting at 1.
pub fn max_drawdown(returns: &[f64]) -> Result<f64, MetricsError> {
    check(returns, 1)?;
    let (mut wealth, mut peak, mut mdd) = (1.0f64, 1.0f64, 0.0f64);
    for r in returns {
        wealth *= 1.0 + r;
        peak = peak.max(wealth);
        mdd = mdd.min(wealth / peak - 1.0);
    }
    Ok(mdd)
}

/// Historical VaR: the empirical `(1 − level)` quantile of returns, taken
/// at 1-based order-statistic position `n·p` with linear interpolation.
pub fn historical_var(returns: &[f64], level: f64) -> Result<f64, MetricsError> {
    check(returns, 1)?;
    let mut sorted = returns.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut h = n as f64 * (1.0 - level);
    if (h - h.round()).abs() < 1e-9 {
        h = h.round();
    }
    if h <= 1.0 {
        return Ok(sorted[0]);
    }
    if h >= n as f64 {
        return Ok(sorted[n - 1]);
    }
    let k = h.floor() as usize;
    let frac = h - k as f64;
    Ok(sorted[k - 1] + frac * (sorted[k] - sorted[k - 1]))
}

/// Mean of the returns at or below the VaR.
pub fn historical_cvar(returns: &[f64], level: f64) -> Result<f64, MetricsError> {
    let var = historical_var(returns, level)?;
    let tail: Vec<f64> = returns.iter().copied().filter(|r| *r <= var).collect();
    // a mean of values <= var cannot exceed it; clamp summation rounding
    Ok((tail.iter().sum::<f64>() / tail.len() as f64).min(var))
}

/// Mean and sample standard deviation (n − 1 denominator).
pub fn mean_std(returns: &[f64]) -> Result<(f64, f64), MetricsError> {
    check(returns, 2)?;
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

/// Full report, with zero risk-free rate.
pub fn performance(returns: &[f64], periods_per_year: f64, var_level: f64) -> Result<PerformanceReport, MetricsError> {
    let (mean_daily, std_daily) = mean_std(returns)?;
    // rounding leaves ~1e-19 spread on constant series
    if std_daily <= 1e-12 * mean_daily.abs() || std_daily == 0.0 {
        return Err(MetricsError::ZeroVariance);
    }
    let sharpe_daily = mean_daily / std_daily;
    let report = PerformanceReport {
        n_days: returns.len(),
        cumulative_return: terminal_wealth(returns) - 1.0,
        cagr: cagr(returns, periods_per_year)?,
        mean_daily,
        std_daily,
        mean_ann: mean_daily * periods_per_year,
        std_ann: std_daily * periods_per_year.sqrt(),
        sharpe_daily,
        sharpe_ann: sharpe_daily * periods_per_year.sqrt(),
        max_drawdown: max_drawdown(returns)?,
        var: historical_var(returns, var_level)?,
        cvar: historical_cvar(returns, var_level)?,
    };
    if report.max_drawdown > 0.0 {
        return Err(MetricsError::Invariant(format!("drawdown {} > 0", report.max_drawdown)));
    }
    if report.cvar > report.var {
        return Err(MetricsError::Invariant(format!("CVaR {} > VaR {}", report.cvar, report.var)));
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ForecastErrorReport {
    pub n: usize,
    pub mse: f64,
    pub rmse: f64,
    pub mae: f64,
}

/// MSE and MAE over (forecast, realized) pairs, in the pairs' units.
pub fn forecast_errors(pairs: &[(f64, f64)]) -> Option<ForecastErrorReport> {
    if pairs.is_empty() {
        return None;
    }
    let n = pairs.len() as f64;
    let mse = pairs.iter().map(|(f, r)| (f - r).powi(2)).sum::<f64>() / n;
    Some(ForecastErrorReport {
        n: pairs.len(),
        mse,
        rmse: mse.sqrt(),
        mae: pairs.iter().map(|(f, r)| (f - r).abs()).sum::<f64>() / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_return_growth() {
        let r = vec![0.001; 252];
        let g = cagr(&r, TRADING_DAYS).unwrap();
        assert!((g - (1.001f64.powi(252) - 1.0)).abs() < 1e-12);
        assert!((g - 0.28644).abs() < 1e-4);
        assert_eq!(performance(&r, TRADING_DAYS, 0.95), Err(MetricsError::ZeroVariance));
    }

    #[test]
    fn drawdown_of_up_down_up() {
        let mdd = max_drawdown(&[0.1, -0.5, 0.2]).unwrap();
        assert!((mdd + 0.5).abs() < 1e-15);
        assert_eq!(max_drawdown(&[0.01, 0.02]).unwrap(), 0.0);
    }

    #[test]
    fn var_and_cvar_of_two_point_sample() {
        let mut r = vec![-0.02; 5];
        r.extend(vec![0.01; 95]);
        assert!((historical_var(&r, 0.95).unwrap() + 0.02).abs() < 1e-15);
        assert!((historical_cvar(&r, 0.95).unwrap() + 0.02).abs() < 1e-15);
    }

    #[test]
    fn sharpe_annualization_and_errors() {
        let r = [0.01, -0.005, 0.002, 0.004];
        let p = performance(&r, TRADING_DAYS, 0.95).unwrap();
        assert_eq!(p.sharpe_ann, p.sharpe_daily * TRADING_DAYS.sqrt());
        assert!(matches!(performance(&r[..1], TRADING_DAYS, 0.95), Err(MetricsError::TooShort { .. })));
        assert!(matches!(cagr(&[0.1, f64::NAN], TRADING_DAYS), Err(MetricsError::InvalidReturn(_))));
        let f = forecast_errors(&[(1.0, 0.0), (0.0, 2.0)]).unwrap();
        assert!((f.mse - 2.5).abs() < 1e-15 && (f.mae - 1.5).abs() < 1e-15);
        assert!((f.rmse - 1.5811).abs() < 1e-4);
        assert_eq!(forecast_errors(&[(0.3, 0.3)]).unwrap().mse, 0.0);
        assert!(forecast_errors(&[]).is_none());
    }

    proptest! {
        #[test]
        fn report_invariants(r in proptest::collection::vec(-0.2f64..0.2, 2..300)) {
            prop_assume!(r.iter().any(|x| *x != r[0]));
            let p = performance(&r, TRADING_DAYS, 0.95).unwrap();
            prop_assert!(p.max_drawdown <= 0.0);
            prop_assert!(p.cvar <= p.var);
            prop_assert!((p.sharpe_ann - p.sharpe_daily * TRADING_DAYS.sqrt()).abs() <= 1e-12 * p.sharpe_ann.abs().max(1.0));
            prop_assert!((p.mean_ann - p.mean_daily * TRADING_DAYS).abs() <= 1e-15);
        }
    }
}
