//! Seeded one-factor market simulator.
//!
//! Daily asset returns are `drift_i + beta * f_t + e_it` with a common
//! Gaussian factor `f_t` and independent Gaussian residuals. Sector indices
//! and the market index are equal-weighted daily averages of their members.

use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{AssetMeta, PriceTable};

const SECTORS: [&str; 11] = [
    "Information Technology",
    "Health Care",
    "Financials",
    "Consumer Discretionary",
    "Communication Services",
    "Industrials",
    "Consumer Staples",
    "Energy",
    "Utilities",
    "Real Estate",
    "Materials",
];

#[derive(Debug, Clone)]
pub struct MarketParams {
    pub n_assets: usize,
    /// Number of price dates (returns are one shorter).
    pub n_days: usize,
    pub n_sectors: usize,
    /// Mean of the per-asset daily drifts.
    pub drift: f64,
    /// Cross-sectional standard deviation of per-asset drifts.
    pub drift_dispersion: f64,
    pub factor_vol: f64,
    pub idio_vol_min: f64,
    pub idio_vol_max: f64,
    pub seed: u64,
    pub start: NaiveDate,
}

impl Default for MarketParams {
    fn default() -> Self {
        Self {
            n_assets: 10,
            n_days: 121,
            n_sectors: 3,
            drift: 0.0008,
            drift_dispersion: 0.0005,
            factor_vol: 0.008,
            idio_vol_min: 0.004,
            idio_vol_max: 0.03,
            seed: 0,
            start: NaiveDate::from_ymd_opt(2024, 6, 3).expect("valid date"),
        }
    }
}

/// `n` consecutive weekdays starting at (or after) `start`.
pub fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.succ_opt().expect("date in range");
    }
    out
}

pub fn generate_market(params: &MarketParams) -> PriceTable {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n = params.n_assets;
    let n_sectors = params.n_sectors.clamp(1, SECTORS.len());
    let dates = business_days(params.start, params.n_days);

    let drift_dist = Normal::new(params.drift, params.drift_dispersion.max(0.0)).expect("finite drift");
    let drifts: Vec<f64> = (0..n).map(|_| drift_dist.sample(&mut rng)).collect();
    let idio: Vec<f64> = (0..n)
        .map(|i| {
            if n == 1 {
                params.idio_vol_min
            } else {
                params.idio_vol_min + (params.idio_vol_max - params.idio_vol_min) * i as f64 / (n - 1) as f64
            }
        })
        .collect();
    let assets: Vec<AssetMeta> = (0..n)
        .map(|i| AssetMeta {
            ticker: format!("A{i:02}"),
            company_name: format!("Synthetic Asset {i}"),
            gics_sector: SECTORS[i % n_sectors].to_string(),
            gics_sub_industry: format!("Synthetic Sub-Industry {}", i % n_sectors),
            market_cap: Some((rng.random::<f64>() * 2.0).exp() * 1e10),
        })
        .collect();

    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut prices = vec![vec![100.0; dates.len()]; n];
    let mut sector_prices: BTreeMap<String, Vec<f64>> = SECTORS[..n_sectors]
        .iter()
        .map(|s| (s.to_string(), vec![100.0; dates.len()]))
        .collect();
    let mut market = vec![100.0; dates.len()];
    for t in 1..dates.len() {
        let f = params.factor_vol * std_normal.sample(&mut rng);
        let mut sector_sum: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
        let mut market_sum = 0.0;
        for i in 0..n {
            let r = (drifts[i] + f + idio[i] * std_normal.sample(&mut rng)).max(-0.95);
            prices[i][t] = prices[i][t - 1] * (1.0 + r);
            let e = sector_sum.entry(assets[i].gics_sector.as_str()).or_default();
            e.0 += r;
            e.1 += 1;
            market_sum += r;
        }
        for (name, series) in sector_prices.iter_mut() {
            let r = sector_sum.get(name.as_str()).map_or(0.0, |(s, k)| s / *k as f64);
            series[t] = series[t - 1] * (1.0 + r);
        }
        market[t] = market[t - 1] * (1.0 + market_sum / n as f64);
    }
    PriceTable::new(dates, assets, prices, sector_prices, market).expect("generated table is valid")
}
