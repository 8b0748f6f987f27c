//! Selection of the prior-uncertainty scale τ on a validation window.
//!
//! `τ_init` is the average over validation rebalances of
//! `mean(Ω_t) / mean(Σ_t)`; candidates are fixed multiples of it and the one
//! with the highest validation Sharpe ratio wins, ties going to the smaller τ.

use std::fmt::Display;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::backtest::export::{CsvOut, ExportError};
use crate::backtest::{estimate_covariance, performance, run_backtest, BacktestConfig, BacktestError, Strategy};
use crate::backtest::metrics::{DEFAULT_VAR_LEVEL, TRADING_DAYS};
use crate::black_litterman::CovarianceMatrix;
use crate::marketdata::PriceTable;
use crate::views::{aggregate, build_contexts, ViewSet, ViewSource};

pub const TAU_MULTIPLIERS: [f64; 5] = [0.5, 0.75, 1.0, 1.25, 1.5];

/// Which entries of Ω enter `mean(Ω_t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OmegaMean {
    /// All k×k entries, off-diagonal zeros included.
    #[default]
    AllEntries,
    Diagonal,
}

#[derive(Debug, Error)]
pub enum TuneError {
    #[error("tuning input: {0}")]
    Input(String),
    #[error("every τ candidate failed: {}", .0.join("; "))]
    NoViableCandidate(Vec<String>),
    #[error(transparent)]
    Backtest(#[from] BacktestError),
}

pub fn tau_init(periods: &[(ViewSet, CovarianceMatrix)], mode: OmegaMean) -> Result<f64, TuneError> {
    if periods.is_empty() {
        return Err(TuneError::Input("no validation periods".into()));
    }
    let mut total = 0.0;
    for (views, sigma) in periods {
        let omega = match mode {
            OmegaMean::AllEntries => views.omega.mean(),
            OmegaMean::Diagonal => views.omega_diagonal().mean(),
        };
        let s = sigma.mean_entry();
        if !(s.is_finite() && s > 0.0) {
            return Err(TuneError::Input(format!("mean covariance entry {s} is not positive")));
        }
        total += omega / s;
    }
    let tau = total / periods.len() as f64;
    if !(tau.is_finite() && tau > 0.0) {
        return Err(TuneError::Input(format!("τ_init = {tau}")));
    }
    Ok(tau)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TauCandidate {
    pub tau: f64,
    pub validation_sharpe: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TauGrid {
    pub tau_init: f64,
    pub candidates: Vec<TauCandidate>,
    pub tau_star: f64,
}

impl TauGrid {
    pub fn selected(&self) -> &TauCandidate {
        self.candidates.iter().find(|c| c.tau == self.tau_star).expect("τ* is a candidate")
    }
}

/// Evaluate every multiple of `tau_init` and pick the best.
pub fn grid_search<F, E>(tau_init: f64, evaluate: F) -> Result<TauGrid, TuneError>
where
    F: Fn(f64) -> Result<f64, E> + Sync,
    E: Display,
{
    let candidates: Vec<TauCandidate> = TAU_MULTIPLIERS
        .par_iter()
        .map(|m| {
            let tau = m * tau_init;
            match evaluate(tau) {
                Ok(s) if s.is_finite() => TauCandidate {
                    tau,
                    validation_sharpe: Some(s),
                    failure: None,
                },
                Ok(s) => TauCandidate {
                    tau,
                    validation_sharpe: None,
                    failure: Some(format!("Sharpe {s}")),
                },
                Err(e) => TauCandidate {
                    tau,
                    validation_sharpe: None,
                    failure: Some(e.to_string()),
                },
            }
        })
        .collect();
    let mut best: Option<(f64, f64)> = None;
    for c in &candidates {
        if let Some(s) = c.validation_sharpe {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((c.tau, s));
            }
        }
    }
    match best {
        Some((tau_star, _)) => Ok(TauGrid {
            tau_init,
            candidates,
            tau_star,
        }),
        None => Err(TuneError::NoViableCandidate(
            candidates
                .iter()
                .map(|c| format!("τ={}: {}", c.tau, c.failure.as_deref().unwrap_or("?")))
                .collect(),
        )),
    }
}

/// Ω and Σ at every rebalance of `config`'s schedule.
pub fn validation_inputs(
    config: &BacktestConfig,
    table: &PriceTable,
    views: &dyn ViewSource,
) -> Result<Vec<(ViewSet, CovarianceMatrix)>, TuneError> {
    let returns = table.returns();
    config
        .schedule
        .rebalance_dates
        .iter()
        .map(|&d| {
            let view_err = |source| BacktestError::View { date: d, source };
            let contexts = build_contexts(table, &returns, d, config.schedule.lookback_days).map_err(view_err)?;
            let samples = views.view_samples(d, &contexts).map_err(view_err)?;
            let set = aggregate(&samples).map_err(view_err)?;
            Ok((set, estimate_covariance(&returns, d, config.cov_lookback_days)?))
        })
        .collect()
}

/// Full tuning pass: τ_init on the validation schedule, then the grid.
pub fn tune_tau(
    config: &BacktestConfig,
    table: &PriceTable,
    views: &dyn ViewSource,
    mode: OmegaMean,
) -> Result<TauGrid, TuneError> {
    let init = tau_init(&validation_inputs(config, table, views)?, mode)?;
    grid_search(init, |tau| {
        let cfg = BacktestConfig {
            tau,
            strategy: Strategy::Blm,
            ..config.clone()
        };
        let ledger = run_backtest(&cfg, table, Some(views))?;
        let r = performance(&ledger.net_returns().values, TRADING_DAYS, DEFAULT_VAR_LEVEL).map_err(BacktestError::from)?;
        Ok::<f64, BacktestError>(r.sharpe_daily)
    })
}

pub fn write_tuning(path: &Path, header: &str, grid: &TauGrid) -> Result<(), ExportError> {
    let mut out = CsvOut::create(path, header)?;
    out.row(["tau_candidate", "validation_sharpe", "selected"])?;
    for c in &grid.candidates {
        out.row([
            c.tau.to_string(),
            c.validation_sharpe.map(|s| s.to_string()).unwrap_or_default(),
            (c.tau == grid.tau_star).to_string(),
        ])?;
    }
    out.finish()
}
