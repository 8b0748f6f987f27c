//! Prompt rendering for the daily-return forecasting task.

use chrono::NaiveDate;

use crate::marketdata::AssetMeta;

const SYSTEM_TEMPLATE: &str = "\
You are providing analysis on {{DATE}}. Predict the average daily return for the next two weeks based on the information provided about a stock's past performance.

You will receive the following inputs:
- Daily Returns: The stock's daily returns, a time-series from the past two weeks.
- Company Sector: The company's GICS sector classification.
- Sector Returns: The company sector's daily returns, a time-series from the past two weeks.
- Market Returns: The S&P 500's daily returns, a time-series from the past two weeks.
- Company Information:
  - Ticker: The stock symbol.
  - Company Name: The name of the company.
  - GICS Sector: The Global Industry Classification Standard sector.
  - GICS Sub-Industry: The sub-industry classification.

# Steps

1. Analyze the Time-Series Data: Review the historical daily returns to identify patterns, trends, or anomalies that may affect future performance.
2. Consider Sector Performance: Analyze how the market and the sector's performance might influence the stock's future returns.
3. Incorporate Company Information: Use the details from the GICS sector and sub-industry, along with the company symbol and name, to contextualize the predicted performance within its industry.
4. Predict Future Returns: Estimate the average daily returns for the next two weeks based on the analysis of available data.

# Output Format

Return a single float value that represents the predicted average daily return for the stock over the next two weeks, without any additional commentary or explanation.

# Notes

- Ensure the prediction considers the quantified data from the time-series.
- Make calculations based on statistical trends from daily returns data.
- Pay attention to the trends within both the stock's daily returns and the market's return data.
- Consider the relevance of the company's sector to refine your predictions.
- Make calculations without additional interpretation or commentary.";

/// Labels of the blocks every user prompt carries, in order.
pub const USER_BLOCKS: [&str; 5] = [
    "Daily Returns:",
    "Company Sector:",
    "Sector Returns:",
    "Market Returns:",
    "Company Information:",
];

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PromptBundle {
    pub system_text: String,
    pub user_text: String,
}

/// Round to two decimals and print the shortest form, keeping at least one
/// fractional digit: `-0.36`, `0.1`, `2.0`.
pub fn format_pct(value: f64) -> String {
    let mut s = format!("{value:.2}");
    while s.ends_with('0') && !s.ends_with(".0") {
        s.pop();
    }
    if s == "-0.0" {
        s = "0.0".into();
    }
    s
}

fn format_list(values: &[f64]) -> String {
    let items: Vec<String> = values.iter().copied().map(format_pct).collect();
    format!("[{}]", items.join(", "))
}

/// Render both prompts. Return arrays are percent units already.
pub fn build_prompts(
    as_of: NaiveDate,
    asset: &AssetMeta,
    asset_returns_pct: &[f64],
    sector_returns_pct: &[f64],
    market_returns_pct: &[f64],
) -> PromptBundle {
    let system_text = SYSTEM_TEMPLATE.replace("{{DATE}}", &as_of.format("%Y-%m-%d").to_string());
    let user_text = format!(
        "Daily Returns: {}\n\
         Company Sector: {}\n\
         Sector Returns: {}\n\
         Market Returns: {}\n\
         Company Information:\n    \
         Ticker: {}\n    \
         Company Name: {}\n    \
         GICS sector: {}\n    \
         GICS sub-industry: {}",
        format_list(asset_returns_pct),
        asset.gics_sector,
        format_list(sector_returns_pct),
        format_list(market_returns_pct),
        asset.ticker,
        asset.company_name,
        asset.gics_sector,
        asset.gics_sub_industry,
    );
    PromptBundle { system_text, user_text }
}
