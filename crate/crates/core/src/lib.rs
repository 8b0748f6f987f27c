//! Black-Litterman portfolio engine with language-model generated views.

pub mod backtest;
pub mod cli;
pub mod black_litterman;
pub mod llm_client;
pub mod marketdata;
pub mod optimizer;
pub mod tuner;
pub mod views;
