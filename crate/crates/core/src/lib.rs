//! Volatility forecasting, option implied volatility and a delta-hedged
//! volatility-spread backtester for BTC.

pub mod backtest;
pub mod cli;
pub mod error;
pub mod forecast_eval;
pub mod market_data;
pub mod models;
pub mod optim;
pub mod options;
pub mod smile;
pub mod synthetic;

pub use error::{Error, Result};
