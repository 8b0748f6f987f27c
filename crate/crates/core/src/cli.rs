//! Command-line surface: view generation, τ tuning, backtests and reports.
//!
//! Configuration is a flat `key = value` file; `--seed`, `--out` and
//! repeated `--set key=value` flags override it. Every CSV written starts
//! with `# config-hash=<sha256> seed=<int>`, where the hash covers every
//! effective setting except the output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backtest::export::{self, CsvOut, ExportError};
use crate::backtest::{
    forecast_errors, performance, run_backtest, BacktestConfig, BacktestError, BacktestLedger, MetricsError, Strategy,
};
use crate::llm_client::{cached_batch, CacheError, ClientError, EndpointConfig, LlmClient, ViewCache};
use crate::marketdata::synthetic::{generate_market, MarketParams};
use crate::marketdata::{build_schedule, load_price_table, write_price_table, DataError, PriceFiles, PriceTable, RebalanceSchedule};
use crate::tuner::{tune_tau, write_tuning, OmegaMean, TauGrid, TuneError};
use crate::views::{
    build_contexts, sentiment, view_stats, SamplingConfig, SyntheticKind, SyntheticParams, SyntheticProvider, ViewError,
    ViewLibrary, ViewProvider,
};

// ---------------------------------------------------------------------------
// Errors and exit codes
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("provider: {0}")]
    Provider(String),
    #[error("numerical: {0}")]
    Numerical(String),
    #[error("io: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Provider(_) => 4,
            CliError::Numerical(_) => 5,
            CliError::Io(_) => 6,
        }
    }

    fn context(self, what: &str) -> Self {
        let f = |m: String| format!("{what}: {m}");
        match self {
            CliError::Config(m) => CliError::Config(f(m)),
            CliError::Data(m) => CliError::Data(f(m)),
            CliError::Provider(m) => CliError::Provider(f(m)),
            CliError::Numerical(m) => CliError::Numerical(f(m)),
            CliError::Io(m) => CliError::Io(f(m)),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ViewError> for CliError {
    fn from(e: ViewError) -> Self {
        match e {
            ViewError::Provider { .. } | ViewError::InsufficientSamples { .. } | ViewError::IncompleteSamples { .. } => {
                CliError::Provider(e.to_string())
            }
            ViewError::Invalid(_) => CliError::Config(e.to_string()),
            ViewError::Data(d) => d.into(),
            ViewError::Missing(_) => CliError::Data(e.to_string()),
        }
    }
}

impl From<CacheError> for CliError {
    fn from(e: CacheError) -> Self {
        match e {
            CacheError::Io { .. } => CliError::Io(e.to_string()),
            CacheError::View(v) => v.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<BacktestError> for CliError {
    fn from(e: BacktestError) -> Self {
        match e {
            BacktestError::Config(m) => CliError::Config(m),
            BacktestError::Data(d) => d.into(),
            BacktestError::View { date, source } => CliError::from(source).context(&date.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<TuneError> for CliError {
    fn from(e: TuneError) -> Self {
        match e {
            TuneError::Backtest(b) => b.into(),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<ExportError> for CliError {
    fn from(e: ExportError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::Config(m) => CliError::Config(m),
            other => CliError::Provider(other.to_string()),
        }
    }
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

const KEYS: &[(&str, Option<&str>)] = &[
    ("prices", None),
    ("sectors", None),
    ("market", None),
    ("metadata", None),
    ("cache", None),
    ("out", Some("out")),
    ("validation_start", None),
    ("validation_end", None),
    ("test_start", None),
    ("test_end", None),
    ("strategies", Some("EW,MVO,BLM")),
    ("provider", Some("llm")),
    ("provider_constant", Some("0")),
    ("noise_std", Some("0")),
    ("bias", Some("0")),
    ("base_url", Some("http://localhost:8000/v1")),
    ("model", Some("default")),
    ("api_key_env", Some("OPENAI_API_KEY")),
    ("max_retries", Some("3")),
    ("timeout_secs", Some("60")),
    ("temperature", Some("1.0")),
    ("backoff_ms", Some("250")),
    ("parallelism", Some("8")),
    ("n_samples", Some("100")),
    ("retry_budget", Some("3")),
    ("lookback", Some("10")),
    ("interval", Some("10")),
    ("cov_lookback", Some("10")),
    ("lambda", Some("0.1")),
    ("delta", Some("2.5")),
    ("cost_rate", Some("0.001")),
    ("tau", Some("tuned")),
    ("omega_mean", Some("all")),
    ("seed", Some("0")),
];

const SECRET_KEYS: &[&str] = &["api_key", "token", "password", "secret", "authorization"];

#[derive(Debug, Clone, PartialEq)]
pub enum ProviderSpec {
    Llm,
    Synthetic(SyntheticKind),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TauSetting {
    Fixed(f64),
    Tuned,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub files: Option<PriceFiles>,
    pub cache: Option<PathBuf>,
    pub out: PathBuf,
    pub validation: Option<(NaiveDate, NaiveDate)>,
    pub test: Option<(NaiveDate, NaiveDate)>,
    pub strategies: Vec<Strategy>,
    pub provider: ProviderSpec,
    pub synthetic: SyntheticParams,
    pub endpoint: EndpointConfig,
    pub sampling: SamplingConfig,
    pub lookback: usize,
    pub interval: usize,
    pub cov_lookback: usize,
    pub lambda: f64,
    pub delta: f64,
    pub cost_rate: f64,
    pub tau: TauSetting,
    pub omega_mean: OmegaMean,
    pub seed: u64,
    values: BTreeMap<String, String>,
}

/// Parse `key = value` lines; `#` starts a comment line.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.parse().map_err(|_| CliError::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_date(key: &str, v: &str) -> Result<NaiveDate, CliError> {
    NaiveDate::parse_from_str(v, "%Y-%m-%d").map_err(|_| CliError::Config(format!("{key}: expected YYYY-MM-DD, got {v:?}")))
}

pub fn parse_strategy(s: &str) -> Result<Strategy, CliError> {
    match s.trim().to_ascii_uppercase().as_str() {
        "EW" => Ok(Strategy::EqualWeight),
        "MVO" => Ok(Strategy::Mvo),
        "BLM" => Ok(Strategy::Blm),
        other => Err(CliError::Config(format!("unknown strategy {other:?}"))),
    }
}

impl RunConfig {
    /// Merge file entries with overrides (later wins) and validate.
    pub fn from_entries(file: Vec<(String, String)>, overrides: Vec<(String, String)>) -> Result<Self, CliError> {
        let mut values: BTreeMap<String, String> = BTreeMap::new();
        let mut seen = std::collections::HashSet::new();
        for (k, v) in &file {
            if !seen.insert(k.clone()) {
                return Err(CliError::Config(format!("duplicate key {k}")));
            }
            values.insert(k.clone(), v.clone());
        }
        for (k, v) in overrides {
            values.insert(k, v);
        }
        for k in values.keys() {
            let lower = k.to_ascii_lowercase();
            if SECRET_KEYS.iter().any(|s| lower == *s) {
                return Err(CliError::Config(format!(
                    "{k}: credentials are read from the environment variable named by api_key_env, never from config"
                )));
            }
            if !KEYS.iter().any(|(name, _)| name == k) {
                return Err(CliError::Config(format!("unknown key {k}")));
            }
        }
        for (k, default) in KEYS {
            if let Some(d) = default {
                values.entry(k.to_string()).or_insert_with(|| d.to_string());
            }
        }
        let get = |k: &str| values.get(k).map(String::as_str);
        let req = |k: &str| get(k).expect("defaulted key");

        let files = match (get("prices"), get("sectors"), get("market"), get("metadata")) {
            (Some(p), Some(s), Some(m), Some(md)) => Some(PriceFiles {
                prices: p.into(),
                sectors: s.into(),
                market: m.into(),
                metadata: md.into(),
            }),
            (None, None, None, None) => None,
            _ => return Err(CliError::Config("prices, sectors, market and metadata go together".into())),
        };
        let range = |a: &str, b: &str| -> Result<Option<(NaiveDate, NaiveDate)>, CliError> {
            match (get(a), get(b)) {
                (Some(x), Some(y)) => {
                    let (x, y) = (parse_date(a, x)?, parse_date(b, y)?);
                    if x > y {
                        return Err(CliError::Config(format!("{a} is after {b}")));
                    }
                    Ok(Some((x, y)))
                }
                (None, None) => Ok(None),
                _ => Err(CliError::Config(format!("{a} and {b} go together"))),
            }
        };
        let validation = range("validation_start", "validation_end")?;
        let test = range("test_start", "test_end")?;
        if let (Some(v), Some(t)) = (validation, test) {
            if v.1 > t.0 {
                return Err(CliError::Config("validation_end must not be after test_start".into()));
            }
        }
        let mut strategies = Vec::new();
        for s in req("strategies").split(',').filter(|s| !s.trim().is_empty()) {
            let s = parse_strategy(s)?;
            if strategies.contains(&s) {
                return Err(CliError::Config(format!("strategy {} listed twice", s.name())));
            }
            strategies.push(s);
        }
        if strategies.is_empty() {
            return Err(CliError::Config("no strategies".into()));
        }
        let provider = match req("provider") {
            "llm" => ProviderSpec::Llm,
            "oracle" => ProviderSpec::Synthetic(SyntheticKind::Oracle),
            "noisy_oracle" => ProviderSpec::Synthetic(SyntheticKind::NoisyOracle),
            "pessimist" => ProviderSpec::Synthetic(SyntheticKind::Pessimist),
            "noise" => ProviderSpec::Synthetic(SyntheticKind::Noise),
            "constant" => ProviderSpec::Synthetic(SyntheticKind::Constant(parse_num("provider_constant", req("provider_constant"))?)),
            other => return Err(CliError::Config(format!("unknown provider {other:?}"))),
        };
        let seed: u64 = parse_num("seed", req("seed"))?;
        let synthetic = SyntheticParams {
            noise_std: parse_num("noise_std", req("noise_std"))?,
            bias: parse_num("bias", req("bias"))?,
            seed,
        };
        let parallelism: usize = parse_num("parallelism", req("parallelism"))?;
        let endpoint = EndpointConfig {
            base_url: req("base_url").to_string(),
            model_name: req("model").to_string(),
            api_key_env_var_name: req("api_key_env").to_string(),
            max_retries: parse_num("max_retries", req("max_retries"))?,
            timeout: Duration::from_secs_f64(parse_num::<f64>("timeout_secs", req("timeout_secs"))?.max(0.0)),
            temperature: parse_num("temperature", req("temperature"))?,
            parallelism,
            backoff: Duration::from_millis(parse_num("backoff_ms", req("backoff_ms"))?),
        };
        endpoint.validate()?;
        let sampling = SamplingConfig {
            n_samples: parse_num("n_samples", req("n_samples"))?,
            retry_budget: parse_num("retry_budget", req("retry_budget"))?,
            parallelism,
        };
        if sampling.n_samples < 2 {
            return Err(CliError::Config("n_samples must be at least 2".into()));
        }
        let tau = match req("tau") {
            "tuned" => TauSetting::Tuned,
            v => {
                let t: f64 = parse_num("tau", v)?;
                if !(t.is_finite() && t > 0.0) {
                    return Err(CliError::Config("tau must be positive or \"tuned\"".into()));
                }
                TauSetting::Fixed(t)
            }
        };
        let omega_mean = match req("omega_mean") {
            "all" => OmegaMean::AllEntries,
            "diagonal" => OmegaMean::Diagonal,
            other => return Err(CliError::Config(format!("omega_mean: expected all or diagonal, got {other:?}"))),
        };
        let cfg = Self {
            files,
            cache: get("cache").map(PathBuf::from),
            out: req("out").into(),
            validation,
            test,
            strategies,
            provider,
            synthetic,
            endpoint,
            sampling,
            lookback: parse_num("lookback", req("lookback"))?,
            interval: parse_num("interval", req("interval"))?,
            cov_lookback: parse_num("cov_lookback", req("cov_lookback"))?,
            lambda: parse_num("lambda", req("lambda"))?,
            delta: parse_num("delta", req("delta"))?,
            cost_rate: parse_num("cost_rate", req("cost_rate"))?,
            tau,
            omega_mean,
            seed,
            values,
        };
        Ok(cfg)
    }

    /// SHA-256 over the sorted effective settings, output directory excluded.
    pub fn config_hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.values.iter().filter(|(k, _)| k.as_str() != "out") {
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    pub fn header(&self) -> String {
        format!("# config-hash={} seed={}", self.config_hash(), self.seed)
    }

    fn files(&self) -> Result<&PriceFiles, CliError> {
        self.files
            .as_ref()
            .ok_or_else(|| CliError::Config("prices, sectors, market and metadata are required".into()))
    }

    fn cache_path(&self) -> Result<&Path, CliError> {
        self.cache.as_deref().ok_or_else(|| CliError::Config("cache is required".into()))
    }

    fn schedule(&self, table: &PriceTable, range: Option<(NaiveDate, NaiveDate)>, what: &str) -> Result<RebalanceSchedule, CliError> {
        let (a, b) = range.ok_or_else(|| CliError::Config(format!("{what}_start and {what}_end are required")))?;
        Ok(build_schedule(&table.dates, a, b, self.interval, self.lookback)?)
    }

    fn backtest_config(&self, schedule: RebalanceSchedule, strategy: Strategy, tau: f64) -> BacktestConfig {
        BacktestConfig {
            cost_rate: self.cost_rate,
            lambda: self.lambda,
            delta: self.delta,
            cov_lookback_days: self.cov_lookback,
            ..BacktestConfig::new(schedule, strategy, tau)
        }
    }

    fn out_path(&self, name: &str) -> Result<PathBuf, CliError> {
        fs::create_dir_all(&self.out).map_err(|e| CliError::Io(format!("{}: {e}", self.out.display())))?;
        Ok(self.out.join(name))
    }
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

/// Every (rebalance date, ticker) the cache must hold.
fn view_dates(cfg: &RunConfig, table: &PriceTable) -> Result<Vec<NaiveDate>, CliError> {
    let mut dates = Vec::new();
    if cfg.validation.is_some() {
        dates.extend(cfg.schedule(table, cfg.validation, "validation")?.rebalance_dates);
    }
    if cfg.test.is_some() {
        dates.extend(cfg.schedule(table, cfg.test, "test")?.rebalance_dates);
    }
    if dates.is_empty() {
        return Err(CliError::Config("set a validation or test range".into()));
    }
    dates.sort();
    dates.dedup();
    Ok(dates)
}

fn build_provider(cfg: &RunConfig, table: &PriceTable) -> Result<Box<dyn ViewProvider>, CliError> {
    Ok(match cfg.provider {
        ProviderSpec::Llm => Box::new(LlmClient::new(cfg.endpoint.clone())?),
        ProviderSpec::Synthetic(kind) => Box::new(SyntheticProvider::new(kind, cfg.synthetic)?.with_lookahead(table, cfg.interval)),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerateSummary {
    pub dates: usize,
    pub new_records: usize,
    pub missing: Vec<(NaiveDate, String)>,
}

pub fn cmd_generate_views(cfg: &RunConfig) -> Result<GenerateSummary, CliError> {
    let table = load_price_table(cfg.files()?)?;
    let returns = table.returns();
    let dates = view_dates(cfg, &table)?;
    let provider = build_provider(cfg, &table)?;
    let mut cache = ViewCache::open(cfg.cache_path()?)?;
    let mut first_error = None;
    for &d in &dates {
        let contexts = build_contexts(&table, &returns, d, cfg.lookback)?;
        if let Err(e) = cached_batch(provider.as_ref(), d, &contexts, &cfg.sampling, &mut cache) {
            let e = CliError::from(e);
            if !matches!(e, CliError::Provider(_)) {
                return Err(e);
            }
            first_error.get_or_insert(e);
        }
    }
    let tickers = table.tickers();
    let missing: Vec<(NaiveDate, String)> = dates
        .iter()
        .flat_map(|&d| tickers.iter().map(move |t| (d, t.clone())))
        .filter(|(d, t)| cache.get(*d, t).is_none())
        .collect();
    let summary = GenerateSummary {
        dates: dates.len(),
        new_records: cache.appended(),
        missing,
    };
    if !summary.missing.is_empty() {
        let path = cfg.out_path("missing_pairs.csv")?;
        let mut out = CsvOut::create(&path, &cfg.header())?;
        out.row(["date", "ticker"])?;
        for (d, t) in &summary.missing {
            out.row([d.to_string(), t.clone()])?;
        }
        out.finish()?;
        let cause = first_error.map(|e| e.to_string()).unwrap_or_default();
        return Err(CliError::Provider(format!(
            "{} (date, ticker) pairs missing, listed in {}; {cause}",
            summary.missing.len(),
            path.display()
        )));
    }
    Ok(summary)
}

fn library(cfg: &RunConfig, table: &PriceTable, dates: &[NaiveDate]) -> Result<ViewLibrary, CliError> {
    let cache = ViewCache::open(cfg.cache_path()?)?;
    cache.library(dates, &table.tickers(), cfg.sampling.n_samples).map_err(|e| match e {
        CacheError::Coverage { ref missing } => CliError::Data(format!(
            "{e}; run generate-views first ({} pairs missing)",
            missing.len()
        )),
        other => other.into(),
    })
}

fn tune_on(cfg: &RunConfig, table: &PriceTable) -> Result<TauGrid, CliError> {
    let schedule = cfg.schedule(table, cfg.validation, "validation")?;
    let lib = library(cfg, table, &schedule.rebalance_dates)?;
    let base = cfg.backtest_config(schedule, Strategy::Blm, 1.0);
    Ok(tune_tau(&base, table, &lib, cfg.omega_mean)?)
}

pub fn cmd_tune(cfg: &RunConfig) -> Result<TauGrid, CliError> {
    let table = load_price_table(cfg.files()?)?;
    let grid = tune_on(cfg, &table)?;
    write_tuning(&cfg.out_path("tuning.csv")?, &cfg.header(), &grid)?;
    Ok(grid)
}

#[derive(Debug)]
pub struct BacktestRun {
    pub tau: f64,
    pub ledgers: Vec<BacktestLedger>,
    pub written: Vec<PathBuf>,
}

pub fn cmd_backtest(cfg: &RunConfig) -> Result<BacktestRun, CliError> {
    let table = load_price_table(cfg.files()?)?;
    let schedule = cfg.schedule(&table, cfg.test, "test")?;
    let wants_blm = cfg.strategies.contains(&Strategy::Blm);
    let lib = if wants_blm {
        Some(library(cfg, &table, &schedule.rebalance_dates)?)
    } else {
        None
    };
    let tau = match (cfg.tau, wants_blm) {
        (TauSetting::Fixed(t), _) => t,
        (TauSetting::Tuned, true) => {
            let grid = tune_on(cfg, &table)?;
            write_tuning(&cfg.out_path("tuning.csv")?, &cfg.header(), &grid)?;
            grid.tau_star
        }
        (TauSetting::Tuned, false) => f64::NAN,
    };

    let header = cfg.header();
    let mut written = Vec::new();
    let mut ledgers = Vec::new();
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for &s in &cfg.strategies {
        let bc = cfg.backtest_config(schedule.clone(), s, tau);
        let views = lib.as_ref().map(|l| l as &dyn crate::views::ViewSource);
        let ctx = |e: CliError| e.context(&format!("strategy {}", s.name()));
        let ledger = run_backtest(&bc, &table, views).map_err(|e| ctx(e.into()))?;
        rows.push((s, bc.report(&ledger).map_err(|e| ctx(e.into()))?));
        if let Some(e) = forecast_errors(&ledger.forecast_pairs()) {
            errors.push((s, e));
        }
        let name = s.name();
        let mut emit = |file: String, f: &dyn Fn(&Path) -> Result<(), ExportError>| -> Result<(), CliError> {
            let path = cfg.out_path(&file)?;
            f(&path)?;
            written.push(path);
            Ok(())
        };
        emit(format!("weights_{name}.csv"), &|p| export::write_weights(p, &header, &ledger))?;
        if s != Strategy::EqualWeight {
            emit(format!("views_vs_realized_{name}.csv"), &|p| export::write_views_vs_realized(p, &header, &ledger))?;
        }
        if s == Strategy::Blm {
            emit(format!("posterior_{name}.csv"), &|p| export::write_posterior_dump(p, &header, &ledger))?;
            let samples: Vec<_> = ledger.periods.iter().filter_map(|p| p.samples.clone()).collect();
            emit("sentiment.csv".into(), &|p| export::write_sentiment(p, &header, &sentiment(&samples)))?;
            emit("view_stats.csv".into(), &|p| export::write_view_stats(p, &header, view_stats(&samples).as_ref()))?;
        }
        ledgers.push(ledger);
    }
    let refs: Vec<&BacktestLedger> = ledgers.iter().collect();
    let path = cfg.out_path("ledger.csv")?;
    write_combined_ledger(&path, &header, &refs)?;
    written.push(path);
    // the market index rides along as a cost-free comparison
    let returns = table.returns();
    let market: Vec<f64> = ledgers[0]
        .net_returns()
        .dates
        .iter()
        .map(|d| returns.index_of(*d).map(|i| returns.market[i]))
        .collect::<Option<_>>()
        .ok_or_else(|| CliError::Data("market index does not cover the test dates".into()))?;
    let path = cfg.out_path("cumulative.csv")?;
    export::write_cumulative(&path, &header, &refs, Some(("Market", &market)))?;
    written.push(path);
    let path = cfg.out_path("report.csv")?;
    export::write_report(&path, &header, &rows)?;
    written.push(path);
    let path = cfg.out_path("forecast_errors.csv")?;
    export::write_forecast_errors(&path, &header, &errors)?;
    written.push(path);
    Ok(BacktestRun { tau, ledgers, written })
}

fn write_combined_ledger(path: &Path, header: &str, ledgers: &[&BacktestLedger]) -> Result<(), ExportError> {
    let mut out = CsvOut::create(path, header)?;
    out.row(["date", "strategy", "gross_return", "cost", "net_return"])?;
    for l in ledgers {
        for p in &l.periods {
            for (i, d) in p.dates.iter().enumerate() {
                let cost = if i == 0 { p.cost } else { 0.0 };
                out.row([
                    d.to_string(),
                    l.strategy.name().to_string(),
                    p.gross[i].to_string(),
                    cost.to_string(),
                    p.net[i].to_string(),
                ])?;
            }
        }
    }
    out.finish()
}

/// Net return series per strategy from a combined ledger CSV, in file order.
pub fn read_ledger(path: &Path) -> Result<Vec<(Strategy, Vec<f64>)>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let bad = |m: String| CliError::Data(format!("{}: {m}", path.display()));
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| bad(format!("missing column {name}")));
    let (si, ni) = (col("strategy")?, col("net_return")?);
    let mut out: Vec<(Strategy, Vec<f64>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let s = parse_strategy(&rec[si])?;
        let r: f64 = rec[ni].parse().map_err(|_| bad(format!("bad net_return {:?}", &rec[ni])))?;
        match out.iter_mut().find(|(x, _)| *x == s) {
            Some((_, v)) => v.push(r),
            None => out.push((s, vec![r])),
        }
    }
    Ok(out)
}

/// Recompute the performance report from `<out>/ledger.csv`.
pub fn cmd_report(cfg: &RunConfig) -> Result<Vec<(Strategy, crate::backtest::PerformanceReport)>, CliError> {
    let series = read_ledger(&cfg.out.join("ledger.csv"))?;
    let bc = BacktestConfig::new(
        RebalanceSchedule {
            rebalance_dates: Vec::new(),
            lookback_days: cfg.lookback,
            holding_days: cfg.interval,
            end: NaiveDate::MIN,
        },
        Strategy::EqualWeight,
        1.0,
    );
    let mut rows = Vec::new();
    for (s, r) in series {
        rows.push((s, performance(&r, bc.annualization_days, bc.var_level)?));
    }
    export::write_report(&cfg.out_path("report.csv")?, &cfg.header(), &rows)?;
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Argument parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Parser)]
#[command(name = "bl-engine", version, about = "Black-Litterman backtests with sampled return views")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args, Clone)]
pub struct SimulateArgs {
    /// Directory receiving the four input files and a starter config.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub assets: usize,
    #[arg(long, default_value_t = 121)]
    pub days: usize,
    #[arg(long, default_value_t = 0.0008)]
    pub drift: f64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample views for every rebalance date into the cache.
    GenerateViews(Common),
    /// Select τ on the validation range.
    Tune(Common),
    /// Run the requested strategies over the test range.
    Backtest(Common),
    /// Rebuild report.csv from an existing ledger.csv.
    Report(Common),
    /// Write a seeded synthetic universe.
    Simulate(SimulateArgs),
}

pub fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    let file = match &common.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            parse_kv(&text)?
        }
        None => Vec::new(),
    };
    let mut overrides = Vec::new();
    for s in &common.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got {s:?}")))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(seed) = common.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    if let Some(out) = &common.out {
        overrides.push(("out".into(), out.display().to_string()));
    }
    RunConfig::from_entries(file, overrides)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<PathBuf, CliError> {
    if args.assets == 0 || args.days < 3 {
        return Err(CliError::Config("need at least one asset and three days".into()));
    }
    let table = generate_market(&MarketParams {
        n_assets: args.assets,
        n_days: args.days,
        drift: args.drift,
        seed: args.seed,
        ..MarketParams::default()
    });
    fs::create_dir_all(&args.out).map_err(|e| CliError::Io(format!("{}: {e}", args.out.display())))?;
    let files = PriceFiles {
        prices: args.out.join("prices.csv"),
        sectors: args.out.join("sectors.csv"),
        market: args.out.join("market.csv"),
        metadata: args.out.join("metadata.csv"),
    };
    write_price_table(&table, &files)?;
    let d = &table.dates;
    let split = d.len() / 3;
    let conf = format!(
        "prices = {}\nsectors = {}\nmarket = {}\nmetadata = {}\ncache = {}\n\
         validation_start = {}\nvalidation_end = {}\ntest_start = {}\ntest_end = {}\n\
         provider = noisy_oracle\nnoise_std = 0.5\nn_samples = 20\nseed = {}\n",
        files.prices.display(),
        files.sectors.display(),
        files.market.display(),
        files.metadata.display(),
        args.out.join("views.jsonl").display(),
        d[0],
        d[split],
        d[split],
        d[d.len() - 1],
        args.seed,
    );
    let path = args.out.join("run.conf");
    fs::write(&path, conf).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(path)
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::GenerateViews(c) => {
            let s = cmd_generate_views(&load_config(c)?)?;
            println!("{} rebalance dates covered, {} new records", s.dates, s.new_records);
        }
        Command::Tune(c) => {
            let g = cmd_tune(&load_config(c)?)?;
            println!("tau_init = {}", g.tau_init);
            for cand in &g.candidates {
                match cand.validation_sharpe {
                    Some(s) => println!("tau = {:<24} sharpe = {s}", cand.tau),
                    None => println!("tau = {:<24} failed: {}", cand.tau, cand.failure.as_deref().unwrap_or("")),
                }
            }
            println!("tau_star = {}", g.tau_star);
        }
        Command::Backtest(c) => {
            let r = cmd_backtest(&load_config(c)?)?;
            if r.tau.is_finite() {
                println!("tau = {}", r.tau);
            }
            for p in &r.written {
                println!("wrote {}", p.display());
            }
        }
        Command::Report(c) => {
            for (s, p) in cmd_report(&load_config(c)?)? {
                println!("{:<4} cagr={:.6} sharpe_ann={:.4} mdd={:.4}", s.name(), p.cagr, p.sharpe_ann, p.max_drawdown);
            }
        }
        Command::Simulate(a) => println!("wrote {}", cmd_simulate(a)?.display()),
    }
    Ok(())
}

/// Parse arguments, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entries(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn flags_override_file_and_out_is_not_hashed() {
        let file = entries(&[("seed", "1"), ("lambda", "0.2"), ("out", "a")]);
        let cfg = RunConfig::from_entries(file.clone(), entries(&[("seed", "7")])).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.lambda, 0.2);
        let other = RunConfig::from_entries(file.clone(), entries(&[("seed", "7"), ("out", "b")])).unwrap();
        assert_eq!(cfg.config_hash(), other.config_hash());
        let changed = RunConfig::from_entries(file, entries(&[("seed", "8")])).unwrap();
        assert_ne!(cfg.config_hash(), changed.config_hash());
        assert!(cfg.header().starts_with("# config-hash="));
        assert!(cfg.header().ends_with(" seed=7"));
    }

    #[test]
    fn rejects_bad_config() {
        let bad = |pairs: &[(&str, &str)]| RunConfig::from_entries(entries(pairs), vec![]).unwrap_err().exit_code();
        assert_eq!(bad(&[("api_key", "sk-123")]), 2);
        assert_eq!(bad(&[("nonsense", "1")]), 2);
        assert_eq!(bad(&[("strategies", "EW,XYZ")]), 2);
        assert_eq!(bad(&[("tau", "-1")]), 2);
        assert_eq!(bad(&[("prices", "p.csv")]), 2);
        assert_eq!(
            bad(&[
                ("validation_start", "2024-01-01"),
                ("validation_end", "2024-03-01"),
                ("test_start", "2024-02-01"),
                ("test_end", "2024-05-01"),
            ]),
            2
        );
        assert!(parse_kv("just words").is_err());
        let kv = parse_kv("# c\n a = b=c \n\n").unwrap();
        assert_eq!(kv, entries(&[("a", "b=c")]));
    }
}
