//! Periodic-rebalancing backtest with proportional transaction costs.
//!
//! At each rebalance date the strategy picks target weights from data up to
//! and including that date. Weights then drift with realized returns until
//! the next rebalance. Cost is `cost_rate × Σ|w_target − w_drifted|`, charged
//! on the first day of the period; the first period buys in from cash.

pub mod export;
pub mod metrics;

use chrono::NaiveDate;
use nalgebra::DVector;
use thiserror::Error;

use crate::black_litterman::{
    condition_covariance, implied_equilibrium, posterior, sample_covariance, BlError, BlInputs, CovarianceMatrix,
    DEFAULT_DELTA,
};
use crate::marketdata::{DataError, PriceTable, RebalanceSchedule, ReturnSeries, ReturnTable};
use crate::optimizer::{
    equal_weight, mvo_baseline_inputs, solve_mvo, MvoProblem, OptimizationError, PortfolioWeights, DEFAULT_LAMBDA,
};
use crate::views::{aggregate, build_contexts, ViewError, ViewSamples, ViewSet, ViewSource};
pub use metrics::{forecast_errors, performance, ForecastErrorReport, MetricsError, PerformanceReport};
use metrics::{DEFAULT_VAR_LEVEL, TRADING_DAYS};

pub const DEFAULT_COST_RATE: f64 = 0.001;
pub const PCT: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    Blm,
    Mvo,
    EqualWeight,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Blm => "BLM",
            Strategy::Mvo => "MVO",
            Strategy::EqualWeight => "EW",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BacktestConfig {
    pub schedule: RebalanceSchedule,
    pub strategy: Strategy,
    pub cost_rate: f64,
    pub lambda: f64,
    pub tau: f64,
    pub delta: f64,
    /// Returns used for the covariance estimate at each rebalance.
    pub cov_lookback_days: usize,
    pub annualization_days: f64,
    pub var_level: f64,
}

impl BacktestConfig {
    pub fn new(schedule: RebalanceSchedule, strategy: Strategy, tau: f64) -> Self {
        let cov_lookback_days = schedule.lookback_days;
        Self {
            schedule,
            strategy,
            cost_rate: DEFAULT_COST_RATE,
            lambda: DEFAULT_LAMBDA,
            tau,
            delta: DEFAULT_DELTA,
            cov_lookback_days,
            annualization_days: TRADING_DAYS,
            var_level: DEFAULT_VAR_LEVEL,
        }
    }

    /// Performance of a ledger's net returns under this config's conventions.
    pub fn report(&self, ledger: &BacktestLedger) -> Result<PerformanceReport, BacktestError> {
        Ok(performance(&ledger.net_returns().values, self.annualization_days, self.var_level)?)
    }

    fn validate(&self) -> Result<(), BacktestError> {
        let bad = |m: &str| Err(BacktestError::Config(m.to_string()));
        if !(self.cost_rate.is_finite() && self.cost_rate >= 0.0 && self.cost_rate < 1.0) {
            return bad("cost_rate must be in [0, 1)");
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad("lambda must be finite and >= 0");
        }
        if self.strategy == Strategy::Blm && !(self.tau.is_finite() && self.tau > 0.0) {
            return bad("tau must be finite and > 0");
        }
        if !self.delta.is_finite() {
            return bad("delta must be finite");
        }
        if !(self.var_level > 0.0 && self.var_level < 1.0) || !self.annualization_days.is_finite() || self.annualization_days <= 0.0 {
            return bad("var_level must be in (0, 1) and annualization_days > 0");
        }
        if self.cov_lookback_days < 2 {
            return bad("covariance lookback needs at least 2 returns");
        }
        if self.schedule.rebalance_dates.is_empty() {
            return bad("empty rebalance schedule");
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("views at {date}: {source}")]
    View {
        date: NaiveDate,
        #[source]
        source: ViewError,
    },
    #[error("posterior at {date}: {source}")]
    Numerical {
        date: NaiveDate,
        #[source]
        source: BlError,
    },
    #[error("optimizer at {date}: {source}")]
    Optimization {
        date: NaiveDate,
        #[source]
        source: OptimizationError,
    },
    #[error("non-finite {what} at {date}")]
    NonFinite { date: NaiveDate, what: String },
    #[error("portfolio value not positive at {0}")]
    Degenerate(NaiveDate),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Intermediate quantities of one Black-Litterman rebalance.
#[derive(Debug, Clone)]
pub struct BlDiagnostics {
    pub sigma: CovarianceMatrix,
    pub pi: DVector<f64>,
    pub views: ViewSet,
    pub mu: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct PeriodRecord {
    pub rebalance_date: NaiveDate,
    /// Dates of the returns earned in this period.
    pub dates: Vec<NaiveDate>,
    /// Drifted weights just before rebalancing (zeros before the first).
    pub pre_weights: DVector<f64>,
    pub weights: PortfolioWeights,
    pub turnover: f64,
    pub cost: f64,
    pub gross: Vec<f64>,
    pub net: Vec<f64>,
    /// Per-asset expected daily return used for the decision, percent.
    pub forecast_pct: Option<Vec<f64>>,
    /// Per-asset realized mean daily return over the period, percent.
    pub realized_pct: Vec<f64>,
    pub samples: Option<ViewSamples>,
    pub diagnostics: Option<BlDiagnostics>,
}

#[derive(Debug, Clone)]
pub struct BacktestLedger {
    pub strategy: Strategy,
    pub tickers: Vec<String>,
    pub periods: Vec<PeriodRecord>,
}

impl BacktestLedger {
    pub fn net_returns(&self) -> ReturnSeries {
        self.concat(|p| &p.net)
    }

    pub fn gross_returns(&self) -> ReturnSeries {
        self.concat(|p| &p.gross)
    }

    fn concat(&self, f: impl Fn(&PeriodRecord) -> &Vec<f64>) -> ReturnSeries {
        let dates = self.periods.iter().flat_map(|p| p.dates.iter().copied()).collect();
        let values = self.periods.iter().flat_map(|p| f(p).iter().copied()).collect();
        ReturnSeries::new(dates, values)
    }

    pub fn total_cost(&self) -> f64 {
        self.periods.iter().map(|p| p.cost).sum()
    }

    /// (forecast, realized) pairs in percent, for periods that carry a forecast.
    pub fn forecast_pairs(&self) -> Vec<(f64, f64)> {
        self.periods
            .iter()
            .filter_map(|p| p.forecast_pct.as_ref().map(|f| (f, &p.realized_pct)))
            .flat_map(|(f, r)| f.iter().copied().zip(r.iter().copied()))
            .collect()
    }
}

/// Turnover and cost of moving from `pre` (drifted, or `None` for cash) to `target`.
pub fn turnover_cost(pre: Option<&DVector<f64>>, target: &DVector<f64>, cost_rate: f64) -> (f64, f64) {
    let turnover = match pre {
        Some(p) => (target - p).abs().sum(),
        None => target.abs().sum(),
    };
    (turnover, turnover * cost_rate)
}

/// One day of buy-and-hold: portfolio return and the drifted weights.
/// `None` when the portfolio value is not positive afterwards.
pub fn drift_weights(w: &DVector<f64>, asset_returns: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
    let r = w.dot(asset_returns);
    let grown = w.component_mul(&asset_returns.add_scalar(1.0));
    let total = grown.sum();
    (total > 0.0).then(|| (r, grown / total))
}

/// Conditioned sample covariance of the `lookback` returns ending at `as_of`.
pub fn estimate_covariance(returns: &ReturnTable, as_of: NaiveDate, lookback: usize) -> Result<CovarianceMatrix, BacktestError> {
    let end = returns.index_of(as_of).map(|i| i + 1).unwrap_or(0);
    if end < lookback {
        return Err(DataError::Window {
            end_date: as_of,
            requested: lookback,
            available: end,
        }
        .into());
    }
    let cols: Vec<&[f64]> = returns.assets.iter().map(|a| &a[end - lookback..end]).collect();
    let numerical = |source| BacktestError::Numerical { date: as_of, source };
    let raw = sample_covariance(&cols).map_err(numerical)?;
    condition_covariance(&raw).map_err(numerical)
}

struct Decision {
    target: DVector<f64>,
    forecast_pct: Option<Vec<f64>>,
    samples: Option<ViewSamples>,
    diagnostics: Option<BlDiagnostics>,
}

fn ensure_finite(v: &DVector<f64>, date: NaiveDate, what: &str) -> Result<(), BacktestError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(BacktestError::NonFinite {
            date,
            what: what.to_string(),
        })
    }
}

fn decide(
    config: &BacktestConfig,
    table: &PriceTable,
    returns: &ReturnTable,
    views: Option<&dyn ViewSource>,
    as_of: NaiveDate,
) -> Result<Decision, BacktestError> {
    let n = table.n_assets();
    let opt = |source| BacktestError::Optimization { date: as_of, source };
    match config.strategy {
        Strategy::EqualWeight => Ok(Decision {
            target: equal_weight(n),
            forecast_pct: None,
            samples: None,
            diagnostics: None,
        }),
        Strategy::Mvo => {
            let end = returns.index_of(as_of).map(|i| i + 1).unwrap_or(0);
            let lookback = config.schedule.lookback_days;
            if end < lookback {
                return Err(DataError::Window {
                    end_date: as_of,
                    requested: lookback,
                    available: end,
                }
                .into());
            }
            let cols: Vec<&[f64]> = returns.assets.iter().map(|a| &a[end - lookback..end]).collect();
            let problem =
                mvo_baseline_inputs(&cols, config.lambda).map_err(|source| BacktestError::Numerical { date: as_of, source })?;
            let sol = solve_mvo(&problem).map_err(opt)?;
            Ok(Decision {
                target: sol.w,
                forecast_pct: Some(problem.mu.iter().map(|m| m * PCT).collect()),
                samples: None,
                diagnostics: None,
            })
        }
        Strategy::Blm => {
            let source = views.ok_or_else(|| BacktestError::Config("BLM needs a view source".into()))?;
            let view_err = |source| BacktestError::View { date: as_of, source };
            let contexts = build_contexts(table, returns, as_of, config.schedule.lookback_days).map_err(view_err)?;
            let samples = source.view_samples(as_of, &contexts).map_err(view_err)?;
            let view_set = aggregate(&samples).map_err(view_err)?;
            let sigma = estimate_covariance(returns, as_of, config.cov_lookback_days)?;
            let price_idx = table.date_index(as_of).ok_or(DataError::Schedule(format!("{as_of} not in calendar")))?;
            let numerical = |source| BacktestError::Numerical { date: as_of, source };
            let prior = implied_equilibrium(&table.market_caps_at(price_idx), &sigma, config.delta).map_err(numerical)?;
            let inputs = BlInputs {
                prior,
                sigma,
                tau: config.tau,
                views: view_set,
            };
            let post = posterior(&inputs).map_err(numerical)?;
            ensure_finite(&post.mu, as_of, "posterior mean")?;
            let problem = MvoProblem {
                mu: post.mu.clone(),
                sigma: inputs.sigma.clone(),
                lambda: config.lambda,
            };
            let sol = solve_mvo(&problem).map_err(opt)?;
            Ok(Decision {
                target: sol.w,
                forecast_pct: Some(inputs.views.q.iter().map(|q| q * PCT).collect()),
                samples: Some(samples),
                diagnostics: Some(BlDiagnostics {
                    sigma: inputs.sigma,
                    pi: inputs.prior.pi,
                    views: inputs.views,
                    mu: post.mu,
                }),
            })
        }
    }
}

/// Run one strategy over the schedule.
pub fn run_backtest(
    config: &BacktestConfig,
    table: &PriceTable,
    views: Option<&dyn ViewSource>,
) -> Result<BacktestLedger, BacktestError> {
    config.validate()?;
    let returns = table.returns();
    let n = table.n_assets();
    let tickers = table.tickers();
    let schedule = &config.schedule;
    let end_ret = returns.dates.partition_point(|d| *d <= schedule.end);

    let mut periods = Vec::with_capacity(schedule.rebalance_dates.len());
    let mut drifted: Option<DVector<f64>> = None;
    for (k, &as_of) in schedule.rebalance_dates.iter().enumerate() {
        let start = returns.dates.partition_point(|d| *d <= as_of);
        let stop = match schedule.rebalance_dates.get(k + 1) {
            Some(next) => returns.dates.partition_point(|d| d <= next),
            None => (start + schedule.holding_days).min(end_ret),
        };
        if start >= stop {
            return Err(DataError::Schedule(format!("no holding days after {as_of}")).into());
        }

        let decision = decide(config, table, &returns, views, as_of)?;
        ensure_finite(&decision.target, as_of, "weights")?;
        let weights = PortfolioWeights::new(as_of, tickers.clone(), decision.target)
            .map_err(|source| BacktestError::Optimization { date: as_of, source })?;
        let (turnover, cost) = turnover_cost(drifted.as_ref(), &weights.w, config.cost_rate);
        let pre_weights = drifted.clone().unwrap_or_else(|| DVector::zeros(n));

        let mut w = weights.w.clone();
        let mut gross = Vec::with_capacity(stop - start);
        let mut net = Vec::with_capacity(stop - start);
        for t in start..stop {
            let r = DVector::from_iterator(n, returns.assets.iter().map(|a| a[t]));
            let (g, next) = drift_weights(&w, &r).ok_or(BacktestError::Degenerate(returns.dates[t]))?;
            if !g.is_finite() {
                return Err(BacktestError::NonFinite {
                    date: returns.dates[t],
                    what: "portfolio return".into(),
                });
            }
            // (1 + g)(1 − c) − 1, exact when c = 0
            net.push(if t == start { g - cost * (1.0 + g) } else { g });
            gross.push(g);
            w = next;
        }
        drifted = Some(w);

        let realized_pct = returns
            .assets
            .iter()
            .map(|a| a[start..stop].iter().sum::<f64>() / (stop - start) as f64 * PCT)
            .collect();
        periods.push(PeriodRecord {
            rebalance_date: as_of,
            dates: returns.dates[start..stop].to_vec(),
            pre_weights,
            weights,
            turnover,
            cost,
            gross,
            net,
            forecast_pct: decision.forecast_pct,
            realized_pct,
            samples: decision.samples,
            diagnostics: decision.diagnostics,
        });
    }
    Ok(BacktestLedger {
        strategy: config.strategy,
        tickers,
        periods,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marketdata::synthetic::{generate_market, MarketParams};
    use crate::marketdata::build_schedule;
    use crate::views::{Sampler, SamplingConfig, SyntheticProvider};
    use proptest::prelude::{prop_assert, proptest};

    fn market(seed: u64) -> PriceTable {
        generate_market(&MarketParams {
            n_assets: 4,
            n_days: 61,
            seed,
            ..MarketParams::default()
        })
    }

    fn schedule(t: &PriceTable) -> RebalanceSchedule {
        build_schedule(&t.dates, t.dates[0], *t.dates.last().unwrap(), 10, 10).unwrap()
    }

    #[test]
    fn turnover_examples() {
        let t = DVector::from_column_slice(&[0.5, 0.5]);
        let (to, c) = turnover_cost(Some(&DVector::from_column_slice(&[0.6, 0.4])), &t, 0.001);
        assert!((to - 0.2).abs() < 1e-15 && (c - 0.0002).abs() < 1e-15);
        assert_eq!(turnover_cost(Some(&t), &t, 0.001), (0.0, 0.0));
        let (to, c) = turnover_cost(None, &t, 0.001);
        assert!((to - 1.0).abs() < 1e-15 && (c - 0.001).abs() < 1e-15);
    }

    #[test]
    fn drift_matches_hand_calculation() {
        let w = DVector::from_column_slice(&[0.5, 0.5]);
        let (r, next) = drift_weights(&w, &DVector::from_column_slice(&[0.1, -0.1])).unwrap();
        assert!(r.abs() < 1e-15);
        assert!((next[0] - 0.55).abs() < 1e-15 && (next[1] - 0.45).abs() < 1e-15);
        let (_, doubled) = drift_weights(&w, &DVector::from_column_slice(&[1.0, 0.0])).unwrap();
        assert!((doubled[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!(drift_weights(&DVector::from_column_slice(&[1.0, 0.0]), &DVector::from_column_slice(&[-1.0, 0.0])).is_none());
    }

    #[test]
    fn equal_weight_ledger_shape() {
        let t = market(3);
        let cfg = BacktestConfig::new(schedule(&t), Strategy::EqualWeight, 1.0);
        let ledger = run_backtest(&cfg, &t, None).unwrap();
        assert_eq!(ledger.periods.len(), 5);
        assert_eq!(ledger.net_returns().len(), 50);
        assert!((ledger.periods[0].cost - cfg.cost_rate).abs() < 1e-15);
        assert!(ledger.periods[1].turnover > 0.0);
        let dates = ledger.net_returns().dates;
        assert!(dates.windows(2).all(|w| w[0] < w[1]));
        assert!(matches!(
            run_backtest(&BacktestConfig::new(schedule(&t), Strategy::Blm, 1.0), &t, None),
            Err(BacktestError::Config(_))
        ));
    }

    #[test]
    fn blm_uses_only_past_data() {
        // perturbing prices after the first rebalance must not change its weights
        let t = market(5);
        let sched = schedule(&t);
        let provider = SyntheticProvider::constant(0.05);
        let sampler = Sampler {
            provider: &provider,
            config: SamplingConfig {
                n_samples: 4,
                ..SamplingConfig::default()
            },
        };
        let cfg = BacktestConfig::new(sched.clone(), Strategy::Blm, 1.0);
        let a = run_backtest(&cfg, &t, Some(&sampler)).unwrap();
        let mut t2 = t.clone();
        let cut = t.date_index(sched.rebalance_dates[0]).unwrap();
        for p in &mut t2.prices {
            for x in &mut p[cut + 1..] {
                *x *= 1.3;
            }
        }
        let b = run_backtest(&cfg, &t2, Some(&sampler)).unwrap();
        assert_eq!(a.periods[0].weights, b.periods[0].weights);
    }

    proptest! {
        #[test]
        fn compounding_identity(seed in 0u64..200, rate in 0.0f64..0.01) {
            let t = market(seed);
            let mut cfg = BacktestConfig::new(schedule(&t), Strategy::Mvo, 1.0);
            cfg.cost_rate = rate;
            let ledger = run_backtest(&cfg, &t, None).unwrap();
            let gross: f64 = ledger.gross_returns().values.iter().map(|r| (1.0 + r).ln()).sum();
            let net: f64 = ledger.net_returns().values.iter().map(|r| (1.0 + r).ln()).sum();
            let costs: f64 = ledger.periods.iter().map(|p| (1.0 - p.cost).ln()).sum();
            prop_assert!((gross + costs - net).abs() <= 1e-10);
        }

        #[test]
        fn higher_cost_never_helps(seed in 0u64..200, lo in 0.0f64..0.005, extra in 0.0f64..0.005) {
            let t = market(seed);
            let mut cfg = BacktestConfig::new(schedule(&t), Strategy::Mvo, 1.0);
            cfg.cost_rate = lo;
            let a = run_backtest(&cfg, &t, None).unwrap().net_returns().values;
            cfg.cost_rate = lo + extra;
            let b = run_backtest(&cfg, &t, None).unwrap().net_returns().values;
            prop_assert!(a.iter().zip(&b).all(|(x, y)| y <= x));
        }
    }

    #[test]
    fn zero_cost_net_equals_gross() {
        let t = market(9);
        let mut cfg = BacktestConfig::new(schedule(&t), Strategy::Mvo, 1.0);
        cfg.cost_rate = 0.0;
        let l = run_backtest(&cfg, &t, None).unwrap();
        assert_eq!(l.net_returns().values, l.gross_returns().values);
    }
}
