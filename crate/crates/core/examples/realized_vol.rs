//! Descriptive statistics of daily returns and intraday realized volatility.

use volrace::forecast_eval::daily_realized_vols;
use volrace::market_data::{descriptive_stats, realized_vol, resample, simple_returns, Frequency};
use volrace::synthetic::{generate, MarketConfig};

pub fn run_example() -> volrace::Result<()> {
    let market = generate(&MarketConfig {
        days: 20,
        listing_days: 5,
        frequency: Frequency::Minute,
        ..MarketConfig::default()
    })?;
    let daily = simple_returns(&resample(&market.spot, Frequency::Daily)?)?;
    let stats = descriptive_stats(&daily)?;
    println!(
        "daily: n={} mean={:+.5} vol={:.2}% skew={:.3} exkurt={:.3}",
        stats.n,
        stats.mean,
        100.0 * stats.annualized_vol,
        stats.skewness,
        stats.excess_kurtosis
    );
    println!("whole-sample realized vol {:.2}%", 100.0 * realized_vol(&daily, daily.len(), true)?);

    for (day, vol) in daily_realized_vols(&market.spot).iter().take(5) {
        println!("{day} intraday realized vol {:.2}%", 100.0 * vol);
    }
    Ok(())
}

fn main() -> volrace::Result<()> {
    run_example()
}
