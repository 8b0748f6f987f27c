//! Price ingestion, daily return series, and rebalance scheduling.
//!
//! All series in a [`PriceTable`] share one trading-day axis. Returns are
//! simple daily returns indexed by the date of the closing price that ends
//! the day, so `returns[t]` is `price[t + 1] / price[t] - 1` and carries the
//! date `dates[t + 1]`.

pub mod synthetic;

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Share of dates an asset may be missing before it is dropped.
pub const MAX_MISSING_FRACTION: f64 = 0.05;
/// Longest run of consecutive missing prices that is forward-filled.
pub const MAX_FORWARD_FILL: usize = 1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{file}: row {row}, column {column}: {message}")]
    Format {
        file: String,
        row: usize,
        column: String,
        message: String,
    },
    #[error("{file}: calendar misaligned at {}", dates.join(", "))]
    Alignment { file: String, dates: Vec<String> },
    #[error("insufficient data: need at least {needed} points, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("window ending {end_date}: requested {requested} values, {available} available")]
    Window {
        end_date: NaiveDate,
        requested: usize,
        available: usize,
    },
    #[error("schedule: {0}")]
    Schedule(String),
    #[error("metadata: {0}")]
    Metadata(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetMeta {
    pub ticker: String,
    pub company_name: String,
    pub gics_sector: String,
    pub gics_sub_industry: String,
    /// Market capitalisation on the first date of the price table.
    #[serde(default)]
    pub market_cap: Option<f64>,
}

/// Aligned daily prices for the asset universe, its sector indices, and the
/// market index.
#[derive(Debug, Clone)]
pub struct PriceTable {
    pub dates: Vec<NaiveDate>,
    pub assets: Vec<AssetMeta>,
    /// `prices[asset][date]`
    pub prices: Vec<Vec<f64>>,
    pub sector_index_prices: BTreeMap<String, Vec<f64>>,
    pub market_index_prices: Vec<f64>,
    /// Tickers dropped during loading with the reason.
    pub rejected: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReturnSeries {
    pub dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RebalanceSchedule {
    pub rebalance_dates: Vec<NaiveDate>,
    pub lookback_days: usize,
    pub holding_days: usize,
    /// Last trading day any holding period may include.
    pub end: NaiveDate,
}

/// The four input files of a universe.
#[derive(Debug, Clone)]
pub struct PriceFiles {
    pub prices: PathBuf,
    pub sectors: PathBuf,
    pub market: PathBuf,
    pub metadata: PathBuf,
}

impl ReturnSeries {
    pub fn new(dates: Vec<NaiveDate>, values: Vec<f64>) -> Self {
        assert_eq!(dates.len(), values.len(), "return series dates/values length mismatch");
        Self { dates, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Simple returns `p[t+1] / p[t] - 1`.
pub fn to_returns(prices: &[f64]) -> Result<Vec<f64>, DataError> {
    if prices.len() < 2 {
        return Err(DataError::InsufficientData {
            needed: 2,
            got: prices.len(),
        });
    }
    Ok(prices.windows(2).map(|p| p[1] / p[0] - 1.0).collect())
}

/// The `n_days` values ending at `end_date` (inclusive).
pub fn window(series: &ReturnSeries, end_date: NaiveDate, n_days: usize) -> Result<ReturnSeries, DataError> {
    let available = match series.dates.binary_search(&end_date) {
        Ok(idx) => idx + 1,
        Err(_) => 0,
    };
    if n_days == 0 || available < n_days {
        return Err(DataError::Window {
            end_date,
            requested: n_days,
            available,
        });
    }
    let range = available - n_days..available;
    Ok(ReturnSeries {
        dates: series.dates[range.clone()].to_vec(),
        values: series.values[range].to_vec(),
    })
}

/// Rebalance every `interval_days` trading days between `start` and `end`.
///
/// A calendar index `i` is eligible when it has `lookback_days` returns up to
/// and including it (`i >= lookback_days`) and at least one trading day
/// after it that is still on or before `end`.
pub fn build_schedule(
    dates: &[NaiveDate],
    start: NaiveDate,
    end: NaiveDate,
    interval_days: usize,
    lookback_days: usize,
) -> Result<RebalanceSchedule, DataError> {
    if interval_days == 0 || lookback_days == 0 {
        return Err(DataError::Schedule("interval and lookback must be positive".into()));
    }
    let (Some(&first), Some(&last)) = (dates.first(), dates.last()) else {
        return Err(DataError::Schedule("empty calendar".into()));
    };
    if start < first || end > last || start > end {
        return Err(DataError::Schedule(format!(
            "range {start}..{end} is outside the calendar {first}..{last}"
        )));
    }
    let start_idx = dates.partition_point(|d| *d < start);
    // last index with date <= end
    let end_idx = dates.partition_point(|d| *d <= end) - 1;
    let mut rebalance_dates = Vec::new();
    let mut i = start_idx.max(lookback_days);
    while i < end_idx {
        rebalance_dates.push(dates[i]);
        i += interval_days;
    }
    if rebalance_dates.is_empty() {
        return Err(DataError::Schedule(format!(
            "no rebalance date in {start}..{end} with {lookback_days} days of lookback"
        )));
    }
    Ok(RebalanceSchedule {
        rebalance_dates,
        lookback_days,
        holding_days: interval_days,
        end: dates[end_idx],
    })
}

impl PriceTable {
    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn tickers(&self) -> Vec<String> {
        self.assets.iter().map(|a| a.ticker.clone()).collect()
    }

    pub fn date_index(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    fn series(&self, prices: &[f64]) -> ReturnSeries {
        let values = to_returns(prices).unwrap_or_default();
        ReturnSeries {
            dates: self.dates[1..].to_vec(),
            values,
        }
    }

    pub fn asset_returns(&self, asset: usize) -> ReturnSeries {
        self.series(&self.prices[asset])
    }

    pub fn sector_returns(&self, sector: &str) -> Option<ReturnSeries> {
        self.sector_index_prices.get(sector).map(|p| self.series(p))
    }

    pub fn market_returns(&self) -> ReturnSeries {
        self.series(&self.market_index_prices)
    }

    /// Market capitalisations at `date_index`, scaled from the reference caps
    /// by relative price. Equal caps when the metadata carries none.
    pub fn market_caps_at(&self, date_index: usize) -> Vec<f64> {
        self.assets
            .iter()
            .zip(&self.prices)
            .map(|(meta, p)| match meta.market_cap {
                Some(cap) => cap * p[date_index] / p[0],
                None => 1.0,
            })
            .collect()
    }

    /// Precomputed returns for every series on the shared return axis.
    pub fn returns(&self) -> ReturnTable {
        ReturnTable {
            dates: self.dates[1..].to_vec(),
            assets: self.prices.iter().map(|p| to_returns(p).unwrap_or_default()).collect(),
            sectors: self
                .sector_index_prices
                .iter()
                .map(|(k, p)| (k.clone(), to_returns(p).unwrap_or_default()))
                .collect(),
            market: to_returns(&self.market_index_prices).unwrap_or_default(),
        }
    }

    /// Construct from in-memory series, checking the table invariants.
    pub fn new(
        dates: Vec<NaiveDate>,
        assets: Vec<AssetMeta>,
        prices: Vec<Vec<f64>>,
        sector_index_prices: BTreeMap<String, Vec<f64>>,
        market_index_prices: Vec<f64>,
    ) -> Result<Self, DataError> {
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DataError::Schedule("dates must be strictly increasing".into()));
        }
        validate_assets(&assets)?;
        if prices.len() != assets.len() {
            return Err(DataError::Metadata(format!(
                "{} price columns for {} assets",
                prices.len(),
                assets.len()
            )));
        }
        let all = prices
            .iter()
            .chain(sector_index_prices.values())
            .chain(std::iter::once(&market_index_prices));
        for series in all {
            if series.len() != dates.len() {
                return Err(DataError::Alignment {
                    file: "<memory>".into(),
                    dates: vec![format!("{} values for {} dates", series.len(), dates.len())],
                });
            }
            if series.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
                return Err(DataError::Metadata("every price must be positive".into()));
            }
        }
        for meta in &assets {
            if !sector_index_prices.contains_key(&meta.gics_sector) {
                return Err(DataError::Metadata(format!(
                    "no sector index for {} ({})",
                    meta.gics_sector, meta.ticker
                )));
            }
        }
        Ok(Self {
            dates,
            assets,
            prices,
            sector_index_prices,
            market_index_prices,
            rejected: Vec::new(),
        })
    }
}

/// Returns of every series in a [`PriceTable`], indexed like `dates`.
#[derive(Debug, Clone)]
pub struct ReturnTable {
    pub dates: Vec<NaiveDate>,
    pub assets: Vec<Vec<f64>>,
    pub sectors: BTreeMap<String, Vec<f64>>,
    pub market: Vec<f64>,
}

impl ReturnTable {
    /// Index into the return axis of the return that ends on `date`.
    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }
}

fn validate_assets(assets: &[AssetMeta]) -> Result<(), DataError> {
    let mut seen = HashSet::new();
    for a in assets {
        if a.ticker.trim().is_empty() {
            return Err(DataError::Metadata("empty ticker".into()));
        }
        if a.gics_sector.trim().is_empty() {
            return Err(DataError::Metadata(format!("{}: empty gics_sector", a.ticker)));
        }
        if !seen.insert(a.ticker.as_str()) {
            return Err(DataError::Metadata(format!("duplicate ticker {}", a.ticker)));
        }
        if let Some(cap) = a.market_cap {
            if !(cap.is_finite() && cap > 0.0) {
                return Err(DataError::Metadata(format!("{}: market_cap must be positive", a.ticker)));
            }
        }
    }
    let with_caps = assets.iter().filter(|a| a.market_cap.is_some()).count();
    if with_caps != 0 && with_caps != assets.len() {
        return Err(DataError::Metadata("market_cap must be given for all assets or none".into()));
    }
    Ok(())
}

/// A parsed wide CSV: date axis plus one optional-valued column per header.
struct WideCsv {
    dates: Vec<NaiveDate>,
    columns: Vec<(String, Vec<Option<f64>>)>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> DataError {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => DataError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => DataError::Format {
            file: path.display().to_string(),
            row: 0,
            column: String::new(),
            message: format!("{other:?}"),
        },
    }
}

fn read_wide_csv(path: &Path) -> Result<WideCsv, DataError> {
    let file_name = path.display().to_string();
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(file);
    let header = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.get(0) != Some("date") || header.len() < 2 {
        return Err(DataError::Format {
            file: file_name,
            row: 1,
            column: header.get(0).unwrap_or("").to_string(),
            message: "header must be `date,<NAME>,...`".into(),
        });
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut dates = Vec::new();
    let mut columns: Vec<Vec<Option<f64>>> = vec![Vec::new(); names.len()];
    let mut ragged = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| csv_err(path, e))?;
        let date_text = record.get(0).unwrap_or("");
        let date = NaiveDate::parse_from_str(date_text, "%Y-%m-%d").map_err(|e| DataError::Format {
            file: file_name.clone(),
            row,
            column: "date".into(),
            message: format!("bad date {date_text:?}: {e}"),
        })?;
        if dates.last().is_some_and(|d| *d >= date) {
            return Err(DataError::Format {
                file: file_name,
                row,
                column: "date".into(),
                message: format!("dates must be strictly increasing ({date})"),
            });
        }
        if record.len() != header.len() {
            ragged.push(date.to_string());
        }
        for (c, name) in names.iter().enumerate() {
            let cell = record.get(c + 1).unwrap_or("");
            let value = if cell.is_empty() {
                None
            } else {
                let v: f64 = cell.parse().map_err(|_| DataError::Format {
                    file: file_name.clone(),
                    row,
                    column: name.clone(),
                    message: format!("not a number: {cell:?}"),
                })?;
                if !(v.is_finite() && v > 0.0) {
                    return Err(DataError::Format {
                        file: file_name.clone(),
                        row,
                        column: name.clone(),
                        message: format!("price must be positive, got {v}"),
                    });
                }
                Some(v)
            };
            columns[c].push(value);
        }
        dates.push(date);
    }
    if !ragged.is_empty() {
        return Err(DataError::Alignment {
            file: file_name,
            dates: ragged,
        });
    }
    Ok(WideCsv {
        dates,
        columns: names.into_iter().zip(columns).collect(),
    })
}

/// Forward-fill isolated gaps; `Err(reason)` when the column is unusable.
fn fill_column(values: &[Option<f64>]) -> Result<Vec<f64>, String> {
    let missing = values.iter().filter(|v| v.is_none()).count();
    if missing as f64 > MAX_MISSING_FRACTION * values.len() as f64 {
        return Err(format!("missing {missing} of {} dates", values.len()));
    }
    let mut out = Vec::with_capacity(values.len());
    let mut run = 0;
    for v in values {
        match v {
            Some(p) => {
                run = 0;
                out.push(*p);
            }
            None => {
                run += 1;
                let Some(&prev) = out.last() else {
                    return Err("missing first price".into());
                };
                if run > MAX_FORWARD_FILL {
                    return Err(format!("more than {MAX_FORWARD_FILL} consecutive missing prices"));
                }
                out.push(prev);
            }
        }
    }
    Ok(out)
}

fn check_calendar(file: &Path, reference: &[NaiveDate], other: &[NaiveDate]) -> Result<(), DataError> {
    if reference == other {
        return Ok(());
    }
    let a: HashSet<_> = reference.iter().collect();
    let b: HashSet<_> = other.iter().collect();
    let mut diff: Vec<_> = a.symmetric_difference(&b).map(|d| d.to_string()).collect();
    diff.sort();
    Err(DataError::Alignment {
        file: file.display().to_string(),
        dates: diff,
    })
}

fn read_metadata(path: &Path) -> Result<Vec<AssetMeta>, DataError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    let expected = ["ticker", "company_name", "gics_sector", "gics_sub_industry"];
    if header.iter().take(4).ne(expected.iter().copied()) {
        return Err(DataError::Format {
            file: path.display().to_string(),
            row: 1,
            column: String::new(),
            message: format!("header must start with {}", expected.join(",")),
        });
    }
    let mut out = Vec::new();
    for record in reader.deserialize::<AssetMeta>() {
        out.push(record.map_err(|e| csv_err(path, e))?);
    }
    validate_assets(&out)?;
    Ok(out)
}

fn filled_series(path: &Path, name: &str, values: &[Option<f64>]) -> Result<Vec<f64>, DataError> {
    fill_column(values).map_err(|reason| DataError::Format {
        file: path.display().to_string(),
        row: 0,
        column: name.to_string(),
        message: reason,
    })
}

/// Load the universe from its four CSV files.
///
/// Assets with too many gaps are dropped and listed in `rejected`; sector and
/// market series must be complete up to forward-filling.
pub fn load_price_table(files: &PriceFiles) -> Result<PriceTable, DataError> {
    let prices = read_wide_csv(&files.prices)?;
    let sectors = read_wide_csv(&files.sectors)?;
    let market = read_wide_csv(&files.market)?;
    check_calendar(&files.sectors, &prices.dates, &sectors.dates)?;
    check_calendar(&files.market, &prices.dates, &market.dates)?;
    if market.columns.len() != 1 {
        return Err(DataError::Format {
            file: files.market.display().to_string(),
            row: 1,
            column: String::new(),
            message: "market file must have exactly one series".into(),
        });
    }
    let metadata = read_metadata(&files.metadata)?;

    let mut assets = Vec::new();
    let mut asset_prices = Vec::new();
    let mut rejected = Vec::new();
    for (ticker, values) in &prices.columns {
        let Some(meta) = metadata.iter().find(|m| &m.ticker == ticker) else {
            return Err(DataError::Metadata(format!("no metadata for {ticker}")));
        };
        match fill_column(values) {
            Ok(filled) => {
                assets.push(meta.clone());
                asset_prices.push(filled);
            }
            Err(reason) => rejected.push((ticker.clone(), reason)),
        }
    }
    if assets.is_empty() {
        return Err(DataError::Metadata("no usable assets".into()));
    }

    let mut sector_index_prices = BTreeMap::new();
    for (name, values) in &sectors.columns {
        sector_index_prices.insert(name.clone(), filled_series(&files.sectors, name, values)?);
    }
    let (market_name, market_values) = &market.columns[0];
    let market_index_prices = filled_series(&files.market, market_name, market_values)?;

    let mut table = PriceTable::new(
        prices.dates,
        assets,
        asset_prices,
        sector_index_prices,
        market_index_prices,
    )?;
    table.rejected = rejected;
    Ok(table)
}

/// Write a wide price CSV (`date,<NAME>,...`) in the loader's format.
pub fn write_wide_csv(
    path: &Path,
    dates: &[NaiveDate],
    columns: &[(&str, &[f64])],
) -> Result<(), DataError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["date".to_string()];
    header.extend(columns.iter().map(|(n, _)| n.to_string()));
    writer.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (t, date) in dates.iter().enumerate() {
        let mut row = vec![date.to_string()];
        row.extend(columns.iter().map(|(_, v)| v[t].to_string()));
        writer.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    writer.flush().map_err(io_err(path))
}

/// Write the universe back out as the four loader files.
pub fn write_price_table(table: &PriceTable, files: &PriceFiles) -> Result<(), DataError> {
    let tickers = table.tickers();
    let cols: Vec<(&str, &[f64])> = tickers
        .iter()
        .map(String::as_str)
        .zip(table.prices.iter().map(Vec::as_slice))
        .collect();
    write_wide_csv(&files.prices, &table.dates, &cols)?;
    let sector_cols: Vec<(&str, &[f64])> = table
        .sector_index_prices
        .iter()
        .map(|(k, v)| (k.as_str(), v.as_slice()))
        .collect();
    write_wide_csv(&files.sectors, &table.dates, &sector_cols)?;
    write_wide_csv(&files.market, &table.dates, &[("MARKET", &table.market_index_prices)])?;

    let path = &files.metadata;
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let with_caps = table.assets.iter().all(|a| a.market_cap.is_some());
    let mut header = vec!["ticker", "company_name", "gics_sector", "gics_sub_industry"];
    if with_caps {
        header.push("market_cap");
    }
    writer.write_record(&header).map_err(|e| csv_err(path, e))?;
    for a in &table.assets {
        let mut row = vec![
            a.ticker.clone(),
            a.company_name.clone(),
            a.gics_sector.clone(),
            a.gics_sub_industry.clone(),
        ];
        if let Some(cap) = a.market_cap.filter(|_| with_caps) {
            row.push(cap.to_string());
        }
        writer.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    writer.flush().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn calendar(n: usize) -> Vec<NaiveDate> {
        (0..n).map(|i| d("2024-01-01") + chrono::Days::new(i as u64)).collect()
    }

    #[test]
    fn returns_hand_arithmetic() {
        let r = to_returns(&[100.0, 101.0, 99.99]).unwrap();
        assert!((r[0] - 0.01).abs() < 1e-15);
        assert!((r[1] + 0.01).abs() < 1e-15);
        assert_eq!(to_returns(&[50.0, 100.0]).unwrap(), vec![1.0]);
        assert_eq!(to_returns(&[7.0; 5]).unwrap(), vec![0.0; 4]);
        assert!(matches!(
            to_returns(&[1.0]),
            Err(DataError::InsufficientData { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn window_slicing_and_bounds() {
        let dates = calendar(30);
        let s = ReturnSeries::new(dates.clone(), (0..30).map(|i| i as f64 / 1000.0).collect());
        let w = window(&s, dates[29], 10).unwrap();
        assert_eq!(w.values, s.values[20..].to_vec());
        assert_eq!(window(&s, dates[29], 30).unwrap(), s);
        match window(&s, dates[29], 31) {
            Err(DataError::Window {
                requested: 31,
                available: 30,
                ..
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let mid = window(&s, dates[14], 5).unwrap();
        assert_eq!(mid.dates.last(), Some(&dates[14]));
        assert!(window(&s, d("2030-01-01"), 1).is_err());
    }

    #[test]
    fn schedule_enumeration() {
        let cal = calendar(60);
        let s = build_schedule(&cal, cal[0], cal[59], 10, 10).unwrap();
        assert_eq!(s.rebalance_dates, vec![cal[10], cal[20], cal[30], cal[40], cal[50]]);
        assert_eq!(s.holding_days, 10);

        let cal15 = calendar(15);
        let s = build_schedule(&cal15, cal15[0], cal15[14], 10, 10).unwrap();
        assert_eq!(s.rebalance_dates, vec![cal15[10]]);

        assert!(matches!(
            build_schedule(&cal, cal[0], cal[59], 10, 60),
            Err(DataError::Schedule(_))
        ));
    }

    #[test]
    fn schedule_respects_start_and_end() {
        let cal = calendar(60);
        let s = build_schedule(&cal, cal[25], cal[45], 10, 10).unwrap();
        assert_eq!(s.rebalance_dates, vec![cal[25], cal[35]]);
        // end exactly one day after a candidate keeps it
        let s = build_schedule(&cal, cal[10], cal[21], 10, 10).unwrap();
        assert_eq!(s.rebalance_dates, vec![cal[10], cal[20]]);
        assert!(build_schedule(&cal, cal[10], d("2031-01-01"), 10, 10).is_err());
    }

    #[test]
    fn forward_fill_rules() {
        let mut v: Vec<Option<f64>> = (0..40).map(|i| Some(10.0 + i as f64)).collect();
        v[5] = None;
        let f = fill_column(&v).unwrap();
        assert_eq!(f[5], f[4]);
        v[6] = None;
        assert!(fill_column(&v).is_err());
        let mut first_missing = v.clone();
        first_missing[5] = Some(1.0);
        first_missing[6] = Some(1.0);
        first_missing[0] = None;
        assert!(fill_column(&first_missing).is_err());
        // three isolated gaps in 40 dates is 7.5% > 5%
        let mut sparse: Vec<Option<f64>> = (0..40).map(|_| Some(1.0)).collect();
        for i in [3, 10, 20] {
            sparse[i] = None;
        }
        assert!(fill_column(&sparse).is_err());
    }
}
