mod common;

use std::path::Path;

use bl_engine::backtest::{estimate_covariance, run_backtest, BacktestConfig, Strategy};
use bl_engine::black_litterman::implied_equilibrium;
use bl_engine::marketdata::{build_schedule, load_price_table, DataError, PriceFiles};
use bl_engine::optimizer::{solve_mvo, MvoProblem};
use bl_engine::views::{Sampler, SamplingConfig, SyntheticProvider};
use chrono::NaiveDate;

fn d(day: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(2024, 3, day).unwrap()
}

/// Three assets over ten weekdays, each asset in its own sector.
fn write_fixture(dir: &Path, prices: &str) -> PriceFiles {
    let days = [1, 4, 5, 6, 7, 8, 11, 12, 13, 14];
    let mut sectors = String::from("date,Tech,Energy\n");
    let mut market = String::from("date,MKT\n");
    for (i, day) in days.iter().enumerate() {
        let x = 100.0 + i as f64;
        sectors.push_str(&format!("{},{x},{}\n", d(*day), 2.0 * x));
        market.push_str(&format!("{},{}\n", d(*day), 3.0 * x));
    }
    let meta = "ticker,company_name,gics_sector,gics_sub_industry\n\
                AAA,Alpha Inc.,Tech,Semiconductors\n\
                BBB,Beta Corp.,Tech,Application Software\n\
                CCC,Gamma Ltd.,Energy,Oil & Gas Drilling\n";
    let files = PriceFiles {
        prices: dir.join("prices.csv"),
        sectors: dir.join("sectors.csv"),
        market: dir.join("market.csv"),
        metadata: dir.join("metadata.csv"),
    };
    std::fs::write(&files.prices, prices).unwrap();
    std::fs::write(&files.sectors, sectors).unwrap();
    std::fs::write(&files.market, market).unwrap();
    std::fs::write(&files.metadata, meta).unwrap();
    files
}

fn good_prices() -> String {
    let days = [1, 4, 5, 6, 7, 8, 11, 12, 13, 14];
    let mut s = String::from("date,AAA,BBB,CCC\n");
    for (i, day) in days.iter().enumerate() {
        let i = i as f64;
        s.push_str(&format!("{},{},{},{}\n", d(*day), 10.0 + i, 20.0 - 0.5 * i, 30.0 * 1.01f64.powf(i)));
    }
    s
}

#[test]
fn well_formed_files_load() {
    let dir = tempfile::tempdir().unwrap();
    let t = load_price_table(&write_fixture(dir.path(), &good_prices())).unwrap();
    assert_eq!(t.n_assets(), 3);
    assert_eq!(t.dates.len(), 10);
    assert_eq!(t.tickers(), ["AAA", "BBB", "CCC"]);
    assert_eq!(t.prices[0][9], 19.0);
    assert!(t.rejected.is_empty());
}

#[test]
fn negative_price_names_the_cell() {
    let dir = tempfile::tempdir().unwrap();
    let bad = good_prices().replace("2024-03-06,13,18.5", "2024-03-06,13,-18.5");
    assert_ne!(bad, good_prices());
    match load_price_table(&write_fixture(dir.path(), &bad)) {
        Err(DataError::Format { row, column, .. }) => {
            assert_eq!(row, 5);
            assert_eq!(column, "BBB");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn asset_missing_final_date_is_misaligned() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = good_prices();
    // drop the last field of the final row
    let cut = text.trim_end().rfind(',').unwrap();
    text.truncate(cut);
    text.push('\n');
    match load_price_table(&write_fixture(dir.path(), &text)) {
        Err(DataError::Alignment { dates, .. }) => assert_eq!(dates, ["2024-03-14"]),
        other => panic!("{other:?}"),
    }
}

#[test]
fn equal_weight_on_two_asset_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let days = [1, 4, 5, 6, 7, 8, 11, 12, 13, 14];
    let a = [100.0, 101.0, 102.01, 100.0, 100.0, 105.0, 106.0, 104.0, 104.0, 110.0];
    let b = [50.0, 49.5, 50.0, 51.0, 52.0, 51.0, 51.0, 53.0, 52.0, 52.5];
    let mut prices = String::from("date,AAA,BBB,CCC\n");
    for i in 0..10 {
        prices.push_str(&format!("{},{},{},{}\n", d(days[i]), a[i], b[i], 1.0));
    }
    let files = write_fixture(dir.path(), &prices);
    let mut table = load_price_table(&files).unwrap();
    // keep only the first two assets
    table.assets.truncate(2);
    table.prices.truncate(2);

    let schedule = build_schedule(&table.dates, table.dates[2], table.dates[9], 3, 2).unwrap();
    assert_eq!(schedule.rebalance_dates, vec![table.dates[2], table.dates[5], table.dates[8]]);
    let cfg = BacktestConfig {
        cost_rate: 0.0,
        ..BacktestConfig::new(schedule, Strategy::EqualWeight, 1.0)
    };
    let ledger = run_backtest(&cfg, &table, None).unwrap();

    // hand computation: buy-and-hold from (1/2, 1/2) within each period
    let ret = |p: &[f64], t: usize| p[t] / p[t - 1] - 1.0;
    let mut expected = Vec::new();
    for period in [3..6, 6..9, 9..10] {
        let (mut wa, mut wb) = (0.5, 0.5);
        for t in period {
            let (ra, rb) = (ret(&a, t), ret(&b, t));
            let g = wa * ra + wb * rb;
            expected.push(g);
            wa = wa * (1.0 + ra) / (1.0 + g);
            wb = wb * (1.0 + rb) / (1.0 + g);
        }
    }
    let got = ledger.gross_returns().values;
    assert_eq!(got.len(), expected.len());
    for (g, e) in got.iter().zip(&expected) {
        assert!((g - e).abs() < 1e-15, "{g} vs {e}");
    }
    assert_eq!(ledger.gross_returns().values, ledger.net_returns().values);
}

#[test]
fn blm_with_silent_views_and_tiny_tau_is_mvo_on_prior() {
    let table = common::market(5, 80, 11);
    let schedule = build_schedule(&table.dates, table.dates[10], table.dates[79], 10, 10).unwrap();
    let cfg = BacktestConfig::new(schedule, Strategy::Blm, 1e-16);
    let provider = SyntheticProvider::constant(0.0);
    let sampler = Sampler {
        provider: &provider,
        config: SamplingConfig {
            n_samples: 4,
            ..SamplingConfig::default()
        },
    };
    let ledger = run_backtest(&cfg, &table, Some(&sampler)).unwrap();
    let again = run_backtest(&cfg, &table, Some(&sampler)).unwrap();
    assert_eq!(ledger.net_returns().values, again.net_returns().values);

    let returns = table.returns();
    for p in &ledger.periods {
        let sigma = estimate_covariance(&returns, p.rebalance_date, cfg.cov_lookback_days).unwrap();
        let idx = table.date_index(p.rebalance_date).unwrap();
        let prior = implied_equilibrium(&table.market_caps_at(idx), &sigma, cfg.delta).unwrap();
        let direct = solve_mvo(&MvoProblem {
            mu: prior.pi,
            sigma,
            lambda: cfg.lambda,
        })
        .unwrap();
        let diff = (&direct.w - &p.weights.w).amax();
        assert!(diff < 1e-6, "{} differs by {diff}", p.rebalance_date);
    }
}
