//! View providers and the translation of repeated forecasts into `(q, P, Ω)`.
//!
//! Providers speak percent units (a daily return of `-0.0036` is `-0.36`).
//! [`aggregate`] is the only place where percent becomes fraction; every
//! type downstream of it works in fractions.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::marketdata::{AssetMeta, DataError, PriceTable, ReturnTable};

/// Variance floor for Ω diagonal entries, fraction² units.
pub const EPSILON_OMEGA: f64 = 1e-10;
/// Retained forecasts must lie in `[-SAMPLE_BOUND_PCT, SAMPLE_BOUND_PCT]`.
pub const SAMPLE_BOUND_PCT: f64 = 100.0;
const PCT: f64 = 100.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("invalid response: {0}")]
    InvalidResponse(String),
    #[error("no realized data after {as_of} for {ticker}")]
    LookaheadUnavailable { as_of: NaiveDate, ticker: String },
}

impl ProviderError {
    fn is_retryable(&self) -> bool {
        !matches!(self, ProviderError::LookaheadUnavailable { .. })
    }
}

#[derive(Debug, Error)]
pub enum ViewError {
    #[error("{as_of} {ticker}: {source}")]
    Provider {
        as_of: NaiveDate,
        ticker: String,
        #[source]
        source: ProviderError,
    },
    #[error("{as_of} {ticker}: only {got} valid samples, at least 2 required")]
    InsufficientSamples {
        as_of: NaiveDate,
        ticker: String,
        got: usize,
    },
    #[error("{as_of}: incomplete samples after retries: {}", format_shortfalls(.shortfalls))]
    IncompleteSamples {
        as_of: NaiveDate,
        /// `(ticker, valid samples)` for every short asset.
        shortfalls: Vec<(String, usize)>,
        wanted: usize,
    },
    #[error("no views available for {0}")]
    Missing(NaiveDate),
    #[error("invalid view samples: {0}")]
    Invalid(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

fn format_shortfalls(s: &[(String, usize)]) -> String {
    s.iter().map(|(t, n)| format!("{t}={n}")).collect::<Vec<_>>().join(", ")
}

/// Everything a provider may see about one asset at a rebalance date.
#[derive(Debug, Clone, PartialEq)]
pub struct AssetContext {
    pub meta: AssetMeta,
    pub asset_returns_pct: Vec<f64>,
    pub sector_returns_pct: Vec<f64>,
    pub market_returns_pct: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct ForecastRequest<'a> {
    pub as_of: NaiveDate,
    pub context: &'a AssetContext,
    pub sample_index: usize,
    /// Zero for the first try of this sample, incremented per retry.
    pub attempt: usize,
}

/// A source of single forecasts, percent units. Must be callable concurrently.
pub trait ViewProvider: Send + Sync {
    fn forecast(&self, request: &ForecastRequest<'_>) -> Result<f64, ProviderError>;
}

impl<P: ViewProvider + ?Sized> ViewProvider for Arc<P> {
    fn forecast(&self, request: &ForecastRequest<'_>) -> Result<f64, ProviderError> {
        (**self).forecast(request)
    }
}

impl<P: ViewProvider + ?Sized> ViewProvider for &P {
    fn forecast(&self, request: &ForecastRequest<'_>) -> Result<f64, ProviderError> {
        (**self).forecast(request)
    }
}

/// The raw forecasts for one rebalance date.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSamples {
    pub as_of: NaiveDate,
    pub tickers: Vec<String>,
    /// `per_asset[i]` holds the retained samples for `tickers[i]`, percent.
    pub per_asset: Vec<Vec<f64>>,
    /// Out-of-range forecasts dropped per asset before retrying.
    pub discarded: Vec<usize>,
}

impl ViewSamples {
    pub fn new(as_of: NaiveDate, tickers: Vec<String>, per_asset: Vec<Vec<f64>>) -> Result<Self, ViewError> {
        let discarded = vec![0; tickers.len()];
        let s = Self {
            as_of,
            tickers,
            per_asset,
            discarded,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ViewError> {
        if self.tickers.len() != self.per_asset.len() || self.per_asset.is_empty() {
            return Err(ViewError::Invalid("one sample list per ticker required".into()));
        }
        let n = self.per_asset[0].len();
        for (ticker, s) in self.tickers.iter().zip(&self.per_asset) {
            if s.len() < 2 {
                return Err(ViewError::InsufficientSamples {
                    as_of: self.as_of,
                    ticker: ticker.clone(),
                    got: s.len(),
                });
            }
            if s.len() != n {
                return Err(ViewError::Invalid(format!(
                    "{ticker}: {} samples, expected {n}",
                    s.len()
                )));
            }
            if s.iter().any(|x| !x.is_finite()) {
                return Err(ViewError::Invalid(format!("{ticker}: non-finite sample")));
            }
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.per_asset.first().map_or(0, Vec::len)
    }

    /// Reorder to `tickers`, failing if any is absent.
    pub fn aligned_to(&self, tickers: &[String]) -> Result<ViewSamples, ViewError> {
        let index: HashMap<&str, usize> = self.tickers.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
        let mut per_asset = Vec::with_capacity(tickers.len());
        let mut discarded = Vec::with_capacity(tickers.len());
        for t in tickers {
            let &i = index.get(t.as_str()).ok_or(ViewError::Missing(self.as_of))?;
            per_asset.push(self.per_asset[i].clone());
            discarded.push(self.discarded[i]);
        }
        Ok(ViewSamples {
            as_of: self.as_of,
            tickers: tickers.to_vec(),
            per_asset,
            discarded,
        })
    }
}

/// Black-Litterman view inputs, fraction units.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSet {
    pub q: DVector<f64>,
    pub p: DMatrix<f64>,
    pub omega: DMatrix<f64>,
    /// Set when any Ω entry was raised to [`EPSILON_OMEGA`].
    pub floored: bool,
}

impl ViewSet {
    pub fn k(&self) -> usize {
        self.q.len()
    }

    pub fn omega_diagonal(&self) -> DVector<f64> {
        self.omega.diagonal()
    }

    pub fn check_invariants(&self) -> Result<(), ViewError> {
        let k = self.q.len();
        if self.p != DMatrix::identity(k, k) {
            return Err(ViewError::Invalid("picking matrix must be the identity".into()));
        }
        for i in 0..k {
            for j in 0..k {
                let v = self.omega[(i, j)];
                if (i == j && v <= 0.0) || (i != j && v != 0.0) {
                    return Err(ViewError::Invalid(format!("omega entry ({i},{j}) = {v}")));
                }
            }
        }
        Ok(())
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn unbiased_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// `q = mean / 100`, `Ω = diag(var / 100²)` with the unbiased variance, `P = I`.
pub fn aggregate(samples: &ViewSamples) -> Result<ViewSet, ViewError> {
    samples.validate()?;
    let k = samples.per_asset.len();
    let mut q = DVector::zeros(k);
    let mut omega = DMatrix::zeros(k, k);
    let mut floored = false;
    for (i, s) in samples.per_asset.iter().enumerate() {
        q[i] = mean(s) / PCT;
        let var = unbiased_variance(s) / (PCT * PCT);
        if var < EPSILON_OMEGA {
            floored = true;
            omega[(i, i)] = EPSILON_OMEGA;
        } else {
            omega[(i, i)] = var;
        }
    }
    Ok(ViewSet {
        q,
        p: DMatrix::identity(k, k),
        omega,
        floored,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewStats {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub p25: f64,
    pub median: f64,
    pub p75: f64,
    pub max: f64,
}

/// Quantile by linear interpolation between order statistics at
/// position `(n - 1) * p` of the sorted data.
pub fn quantile_linear(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Summary statistics over every retained sample of every asset and date,
/// percent units. `std` is the sample standard deviation.
pub fn view_stats(all_samples: &[ViewSamples]) -> Option<ViewStats> {
    let mut values: Vec<f64> = all_samples
        .iter()
        .flat_map(|s| s.per_asset.iter().flatten().copied())
        .collect();
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let m = mean(&values);
    let std = if n > 1 { unbiased_variance(&values).sqrt() } else { 0.0 };
    Some(ViewStats {
        count: n,
        mean: m,
        std,
        min: values[0],
        p25: quantile_linear(&values, 0.25),
        median: quantile_linear(&values, 0.5),
        p75: quantile_linear(&values, 0.75),
        max: values[n - 1],
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentimentSeries {
    pub dates: Vec<NaiveDate>,
    /// Share of strictly positive samples per date.
    pub values: Vec<f64>,
}

pub fn sentiment(all_samples: &[ViewSamples]) -> SentimentSeries {
    let mut dates = Vec::with_capacity(all_samples.len());
    let mut values = Vec::with_capacity(all_samples.len());
    for s in all_samples {
        let (pos, total) = s
            .per_asset
            .iter()
            .flatten()
            .fold((0usize, 0usize), |(p, t), x| (p + usize::from(*x > 0.0), t + 1));
        dates.push(s.as_of);
        values.push(if total == 0 { 0.0 } else { pos as f64 / total as f64 });
    }
    SentimentSeries { dates, values }
}

#[derive(Debug, Clone, Copy)]
pub struct SamplingConfig {
    pub n_samples: usize,
    /// Extra attempts per sample after a failed or out-of-range forecast.
    pub retry_budget: usize,
    /// Maximum concurrent provider calls.
    pub parallelism: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            n_samples: 100,
            retry_budget: 3,
            parallelism: 8,
        }
    }
}

enum SampleOutcome {
    Value(f64, usize),
    Failed(usize),
    Fatal(ProviderError),
}

fn draw_sample(provider: &dyn ViewProvider, as_of: NaiveDate, context: &AssetContext, index: usize, retries: usize) -> SampleOutcome {
    let mut discarded = 0;
    let mut last_transport = None;
    for attempt in 0..=retries {
        let request = ForecastRequest {
            as_of,
            context,
            sample_index: index,
            attempt,
        };
        match provider.forecast(&request) {
            Ok(v) if v.is_finite() && v.abs() <= SAMPLE_BOUND_PCT => return SampleOutcome::Value(v, discarded),
            Ok(_) => discarded += 1,
            Err(e) if !e.is_retryable() => return SampleOutcome::Fatal(e),
            Err(e @ ProviderError::Transport(_)) => last_transport = Some(e),
            Err(_) => last_transport = None,
        }
    }
    match last_transport {
        Some(e) => SampleOutcome::Fatal(e),
        None => SampleOutcome::Failed(discarded),
    }
}

/// Query `provider` for `n_samples` forecasts per asset.
///
/// Invalid or out-of-range answers are retried within the budget. Assets
/// that still fall short are reported, never imputed.
pub fn provide_views(
    provider: &dyn ViewProvider,
    as_of: NaiveDate,
    contexts: &[AssetContext],
    config: &SamplingConfig,
) -> Result<ViewSamples, ViewError> {
    let n = config.n_samples;
    let jobs: Vec<(usize, usize)> = (0..contexts.len()).flat_map(|a| (0..n).map(move |s| (a, s))).collect();
    let run = || -> Vec<SampleOutcome> {
        jobs.par_iter()
            .map(|&(a, s)| draw_sample(provider, as_of, &contexts[a], s, config.retry_budget))
            .collect()
    };
    let outcomes = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism.max(1))
        .build()
        .map(|pool| pool.install(run))
        .unwrap_or_else(|_| run());

    let mut per_asset = vec![Vec::with_capacity(n); contexts.len()];
    let mut discarded = vec![0; contexts.len()];
    for (&(a, _), outcome) in jobs.iter().zip(outcomes) {
        match outcome {
            SampleOutcome::Value(v, d) => {
                per_asset[a].push(v);
                discarded[a] += d;
            }
            SampleOutcome::Failed(d) => discarded[a] += d,
            SampleOutcome::Fatal(source) => {
                return Err(ViewError::Provider {
                    as_of,
                    ticker: contexts[a].meta.ticker.clone(),
                    source,
                })
            }
        }
    }
    let tickers: Vec<String> = contexts.iter().map(|c| c.meta.ticker.clone()).collect();
    if let Some((t, s)) = tickers.iter().zip(&per_asset).find(|(_, s)| s.len() < 2) {
        return Err(ViewError::InsufficientSamples {
            as_of,
            ticker: t.clone(),
            got: s.len(),
        });
    }
    let shortfalls: Vec<(String, usize)> = tickers
        .iter()
        .zip(&per_asset)
        .filter(|(_, s)| s.len() < n)
        .map(|(t, s)| (t.clone(), s.len()))
        .collect();
    if !shortfalls.is_empty() {
        return Err(ViewError::IncompleteSamples {
            as_of,
            shortfalls,
            wanted: n,
        });
    }
    Ok(ViewSamples {
        as_of,
        tickers,
        per_asset,
        discarded,
    })
}

/// Prompt context for every asset at `as_of`: the `lookback` returns up to
/// and including `as_of`, in percent.
pub fn build_contexts(
    table: &PriceTable,
    returns: &ReturnTable,
    as_of: NaiveDate,
    lookback: usize,
) -> Result<Vec<AssetContext>, ViewError> {
    let end = returns.index_of(as_of).map(|i| i + 1).unwrap_or(0);
    if end < lookback || lookback == 0 {
        return Err(DataError::Window {
            end_date: as_of,
            requested: lookback,
            available: end,
        }
        .into());
    }
    let range = end - lookback..end;
    let pct = |v: &[f64]| v[range.clone()].iter().map(|x| x * PCT).collect::<Vec<_>>();
    let market = pct(&returns.market);
    table
        .assets
        .iter()
        .enumerate()
        .map(|(i, meta)| {
            let sector = returns
                .sectors
                .get(&meta.gics_sector)
                .ok_or_else(|| DataError::Metadata(format!("no sector series {}", meta.gics_sector)))?;
            Ok(AssetContext {
                meta: meta.clone(),
                asset_returns_pct: pct(&returns.assets[i]),
                sector_returns_pct: pct(sector),
                market_returns_pct: market.clone(),
            })
        })
        .collect()
}

/// Supplies every view sample set a backtest asks for.
pub trait ViewSource: Sync {
    fn view_samples(&self, as_of: NaiveDate, contexts: &[AssetContext]) -> Result<ViewSamples, ViewError>;
}

/// Live sampling from a provider.
pub struct Sampler<'a> {
    pub provider: &'a dyn ViewProvider,
    pub config: SamplingConfig,
}

impl ViewSource for Sampler<'_> {
    fn view_samples(&self, as_of: NaiveDate, contexts: &[AssetContext]) -> Result<ViewSamples, ViewError> {
        provide_views(self.provider, as_of, contexts, &self.config)
    }
}

/// Precomputed samples keyed by date.
#[derive(Debug, Clone, Default)]
pub struct ViewLibrary {
    pub by_date: BTreeMap<NaiveDate, ViewSamples>,
}

impl ViewLibrary {
    pub fn insert(&mut self, samples: ViewSamples) {
        self.by_date.insert(samples.as_of, samples);
    }

    pub fn all(&self) -> Vec<ViewSamples> {
        self.by_date.values().cloned().collect()
    }

    /// Sample every date in `dates` once, so later runs can share them.
    pub fn sample(
        source: &dyn ViewSource,
        table: &PriceTable,
        returns: &ReturnTable,
        dates: &[NaiveDate],
        lookback: usize,
    ) -> Result<Self, ViewError> {
        let mut lib = Self::default();
        for &d in dates {
            let contexts = build_contexts(table, returns, d, lookback)?;
            lib.insert(source.view_samples(d, &contexts)?);
        }
        Ok(lib)
    }
}

impl ViewSource for ViewLibrary {
    fn view_samples(&self, as_of: NaiveDate, contexts: &[AssetContext]) -> Result<ViewSamples, ViewError> {
        let tickers: Vec<String> = contexts.iter().map(|c| c.meta.ticker.clone()).collect();
        self.by_date.get(&as_of).ok_or(ViewError::Missing(as_of))?.aligned_to(&tickers)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SyntheticKind {
    /// Realized holding-period mean plus `Normal(bias, noise²)`.
    Oracle,
    /// Alias of `Oracle` meant for nonzero noise.
    NoisyOracle,
    /// Always `value`.
    Constant(f64),
    /// Oracle shifted down by `|bias|`, plus `Normal(0, noise²)`.
    Pessimist,
    /// `Normal(bias, noise²)` with no information about the future.
    Noise,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticParams {
    pub noise_std: f64,
    pub bias: f64,
    pub seed: u64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            noise_std: 0.0,
            bias: 0.0,
            seed: 0,
        }
    }
}

/// Deterministic, LLM-free forecast source.
pub struct SyntheticProvider {
    kind: SyntheticKind,
    params: SyntheticParams,
    lookahead: Option<Lookahead>,
}

struct Lookahead {
    returns: Arc<ReturnTable>,
    index: HashMap<String, usize>,
    holding_days: usize,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for one (date, ticker, sample, attempt) draw, independent of call order.
pub fn draw_seed(seed: u64, as_of: NaiveDate, ticker: &str, sample_index: usize, attempt: usize) -> u64 {
    let mut h = splitmix(seed);
    h = splitmix(h ^ as_of.to_string().bytes().fold(0u64, |a, b| a.wrapping_mul(131).wrapping_add(b as u64)));
    for b in ticker.bytes() {
        h = splitmix(h ^ b as u64);
    }
    h = splitmix(h ^ sample_index as u64);
    splitmix(h ^ attempt as u64)
}

impl SyntheticProvider {
    pub fn new(kind: SyntheticKind, params: SyntheticParams) -> Result<Self, ViewError> {
        if !(params.noise_std.is_finite() && params.noise_std >= 0.0 && params.bias.is_finite()) {
            return Err(ViewError::Invalid("synthetic parameters must be finite, noise >= 0".into()));
        }
        if let SyntheticKind::Constant(v) = kind {
            if !v.is_finite() {
                return Err(ViewError::Invalid("constant must be finite".into()));
            }
        }
        Ok(Self {
            kind,
            params,
            lookahead: None,
        })
    }

    pub fn constant(value: f64) -> Self {
        Self::new(SyntheticKind::Constant(value), SyntheticParams::default()).expect("finite constant")
    }

    /// Attach realized returns for the oracle-style kinds.
    pub fn with_lookahead(mut self, table: &PriceTable, holding_days: usize) -> Self {
        self.lookahead = Some(Lookahead {
            returns: Arc::new(table.returns()),
            index: table.tickers().into_iter().enumerate().map(|(i, t)| (t, i)).collect(),
            holding_days,
        });
        self
    }

    pub fn kind(&self) -> SyntheticKind {
        self.kind
    }

    fn realized_pct(&self, as_of: NaiveDate, ticker: &str) -> Result<f64, ProviderError> {
        let unavailable = || ProviderError::LookaheadUnavailable {
            as_of,
            ticker: ticker.to_string(),
        };
        let look = self.lookahead.as_ref().ok_or_else(unavailable)?;
        let &asset = look.index.get(ticker).ok_or_else(unavailable)?;
        forward_mean(&look.returns, asset, as_of, look.holding_days)
            .map(|m| m * PCT)
            .ok_or_else(unavailable)
    }

    fn noise(&self, request: &ForecastRequest<'_>, mean: f64) -> f64 {
        if self.params.noise_std == 0.0 {
            return mean;
        }
        let seed = draw_seed(
            self.params.seed,
            request.as_of,
            &request.context.meta.ticker,
            request.sample_index,
            request.attempt,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Normal::new(mean, self.params.noise_std).expect("finite noise").sample(&mut rng)
    }
}

impl ViewProvider for SyntheticProvider {
    fn forecast(&self, request: &ForecastRequest<'_>) -> Result<f64, ProviderError> {
        let ticker = &request.context.meta.ticker;
        let p = &self.params;
        Ok(match self.kind {
            SyntheticKind::Constant(v) => v,
            SyntheticKind::Oracle | SyntheticKind::NoisyOracle => {
                let r = self.realized_pct(request.as_of, ticker)?;
                self.noise(request, r + p.bias)
            }
            SyntheticKind::Pessimist => {
                let r = self.realized_pct(request.as_of, ticker)?;
                self.noise(request, r - p.bias.abs())
            }
            SyntheticKind::Noise => self.noise(request, p.bias),
        })
    }
}

/// Mean daily return (fraction) over up to `days` returns after `as_of`.
/// `None` when no return follows `as_of`.
pub fn forward_mean(returns: &ReturnTable, asset: usize, as_of: NaiveDate, days: usize) -> Option<f64> {
    let start = returns.dates.partition_point(|d| *d <= as_of);
    let end = (start + days).min(returns.dates.len());
    if start >= end {
        return None;
    }
    let slice = &returns.assets[asset][start..end];
    Some(slice.iter().sum::<f64>() / slice.len() as f64)
}
