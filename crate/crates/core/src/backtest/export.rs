//! CSV outputs. Every file starts with one `#` provenance line.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{BacktestLedger, ForecastErrorReport, PerformanceReport, Strategy};
use crate::views::{SentimentSeries, ViewStats};

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{0}")]
    Shape(String),
}

/// CSV writer over `path` whose first line is `header` verbatim.
pub struct CsvOut {
    path: PathBuf,
    inner: csv::Writer<File>,
}

impl CsvOut {
    pub fn create(path: &Path, header: &str) -> Result<Self, ExportError> {
        let io = |source| ExportError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut file = File::create(path).map_err(io)?;
        writeln!(file, "{header}").map_err(io)?;
        Ok(Self {
            path: path.to_path_buf(),
            inner: csv::Writer::from_writer(file),
        })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<(), ExportError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.inner.write_record(fields).map_err(|source| ExportError::Csv {
            path: self.path.clone(),
            source,
        })
    }

    pub fn finish(mut self) -> Result<(), ExportError> {
        self.inner.flush().map_err(|source| ExportError::Io {
            path: self.path.clone(),
            source,
        })
    }
}

fn f(x: f64) -> String {
    format!("{x}")
}

pub fn write_weights(path: &Path, header: &str, ledger: &BacktestLedger) -> Result<(), ExportError> {
    let mut out = CsvOut::create(path, header)?;
    out.row(["date", "ticker", "weight"])?;
    for p in &ledger.periods {
        for (t, w) in p.weights.tickers.iter().zip(p.weights.w.iter()) {
            out.row([p.rebalance_date.to_string(), t.clone(), f(*w)])?;
        }
    }
    out.finish()
}

pub fn write_ledger(path: &Path, header: &str, ledger: &BacktestLedger) -> Result<(), ExportError> {
    let mut out = CsvOut::create(path, header)?;
    out.row(["date", "strategy", "gross_return", "cost", "net_return"])?;
    for p in &ledger.periods {
        for (i, d) in p.dates.iter().enumerate() {
            let cost = if i == 0 { p.cost } else { 0.0 };
            out.row([
                d.to_string(),
                ledger.strategy.name().to_string(),
                f(p.gross[i]),
                f(cost),
                f(p.net[i]),
            ])?;
        }
    }
    out.finish()
}

/// Cumulative net return of each ledger on a shared date axis, plus an
/// optional cost-free benchmark column aligned with those dates.
pub fn write_cumulative(
    path: &Path,
    header: &str,
    ledgers: &[&BacktestLedger],
    benchmark: Option<(&str, &[f64])>,
) -> Result<(), ExportError> {
    let series: Vec<_> = ledgers.iter().map(|l| l.net_returns()).collect();
    let Some(first) = series.first() else {
        return Err(ExportError::Shape("no ledgers".into()));
    };
    if series.iter().any(|s| s.dates != first.dates) {
        return Err(ExportError::Shape("ledgers cover different dates".into()));
    }
    if benchmark.is_some_and(|(_, b)| b.len() != first.dates.len()) {
        return Err(ExportError::Shape("benchmark length differs from ledger".into()));
    }
    let mut out = CsvOut::create(path, header)?;
    let mut cols = vec!["date".to_string()];
    cols.extend(ledgers.iter().map(|l| l.strategy.name().to_string()));
    cols.extend(benchmark.map(|(name, _)| name.to_string()));
    out.row(&cols)?;
    let mut wealth = vec![1.0; series.len()];
    let mut bench_wealth = 1.0;
    for (t, d) in first.dates.iter().enumerate() {
        let mut row = vec![d.to_string()];
        for (w, s) in wealth.iter_mut().zip(&series) {
            *w *= 1.0 + s.values[t];
            row.push(f(*w - 1.0));
        }
        if let Some((_, b)) = benchmark {
            bench_wealth *= 1.0 + b[t];
            row.push(f(bench_wealth - 1.0));
        }
        out.row(&row)?;
    }
    out.finish()
}

pub fn write_views_vs_realized(path: &Path, header: &str, ledger: &BacktestLedger) -> Result<(), ExportError> {
    let mut out = CsvOut::create(path, header)?;
    out.row(["date", "ticker", "view_pct", "realized_pct"])?;
    for p in &ledger.periods {
        let Some(fc) = &p.forecast_pct else { continue };
        for ((t, q), r) in ledger.tickers.iter().zip(fc).zip(&p.realized_pct) {
            out.row([p.rebalance_date.to_string(), t.clone(), f(*q), f(*r)])?;
        }
    }
    out.finish()
}

/// Per-rebalance π, q, Ω diagonal and posterior μ (fraction units).
pub fn write_posterior_dump(path: &Path, header: &str, ledger: &BacktestLedger) -> Result<(), ExportError> {
    let mut out = CsvOut::create(path, header)?;
    out.row(["date", "ticker", "pi", "q", "omega", "mu", "omega_floored"])?;
    for p in &ledger.periods {
        let Some(d) = &p.diagnostics else { continue };
        let omega = d.views.omega_diagonal();
        for (i, t) in ledger.tickers.iter().enumerate() {
            out.row([
                p.rebalance_date.to_string(),
                t.clone(),
                f(d.pi[i]),
                f(d.views.q[i]),
                f(omega[i]),
                f(d.mu[i]),
                d.views.floored.to_string(),
            ])?;
        }
    }
    out.finish()
}

/// One row per strategy with the ten headline metrics.
pub fn write_report(path: &Path, header: &str, rows: &[(Strategy, PerformanceReport)]) -> Result<(), ExportError> {
    let mut out = CsvOut::create(path, header)?;
    out.row([
        "strategy",
        "cagr",
        "mean_daily",
        "std_daily",
        "sharpe_daily",
        "mean_ann",
        "std_ann",
        "sharpe_ann",
        "mdd",
        "var95",
        "cvar95",
    ])?;
    for (s, p) in rows {
        out.row([
            s.name().to_string(),
            f(p.cagr),
            f(p.mean_daily),
            f(p.std_daily),
            f(p.sharpe_daily),
            f(p.mean_ann),
            f(p.std_ann),
            f(p.sharpe_ann),
            f(p.max_drawdown),
            f(p.var),
            f(p.cvar),
        ])?;
    }
    out.finish()
}

pub fn write_forecast_errors(path: &Path, header: &str, rows: &[(Strategy, ForecastErrorReport)]) -> Result<(), ExportError> {
    let mut out = CsvOut::create(path, header)?;
    out.row(["strategy", "n", "mse", "rmse", "mae"])?;
    for (s, e) in rows {
        out.row([s.name().to_string(), e.n.to_string(), f(e.mse), f(e.rmse), f(e.mae)])?;
    }
    out.finish()
}

pub fn write_sentiment(path: &Path, header: &str, series: &SentimentSeries) -> Result<(), ExportError> {
    let mut out = CsvOut::create(path, header)?;
    out.row(["date", "positive_share"])?;
    for (d, v) in series.dates.iter().zip(&series.values) {
        out.row([d.to_string(), f(*v)])?;
    }
    out.finish()
}

pub fn write_view_stats(path: &Path, header: &str, stats: Option<&ViewStats>) -> Result<(), ExportError> {
    let mut out = CsvOut::create(path, header)?;
    out.row(["count", "mean", "std", "min", "p25", "median", "p75", "max"])?;
    if let Some(s) = stats {
        out.row([
            s.count.to_string(),
            f(s.mean),
            f(s.std),
            f(s.min),
            f(s.p25),
            f(s.median),
            f(s.p75),
            f(s.max),
        ])?;
    }
    out.finish()
}
