//! Walk-forward next-day forecasts regressed on realized volatility.

use chrono::Days;
use volrace::forecast_eval::{daily_realized_vols, ols_predict, shift_to_origin, walk_forward, LookbackSpec, WalkForwardOptions};
use volrace::market_data::{resample, simple_returns, Frequency};
use volrace::models::ModelKind;
use volrace::synthetic::{generate, MarketConfig};

pub fn run_example() -> volrace::Result<()> {
    let market = generate(&MarketConfig {
        days: 90,
        listing_days: 5,
        frequency: Frequency::Minute,
        ..MarketConfig::default()
    })?;
    let daily = simple_returns(&resample(&market.spot, Frequency::Daily)?)?;
    let target = shift_to_origin(&daily_realized_vols(&market.spot));
    let start = market.spot.first().expect("bars").timestamp.date_naive() + Days::new(60);
    let opts = WalkForwardOptions::default();

    for kind in [ModelKind::Hist, ModelKind::Ema, ModelKind::Garch] {
        let f = walk_forward(kind, LookbackSpec::Whole, &daily, start, &opts)?;
        let reg = ols_predict(&target, &[(kind.as_str(), &f.to_dated())])?;
        let b = &reg.coefficients[1];
        println!(
            "{:<6} n={} beta={:.3} (t={:.2}) r2={:.3} mae={:.4}",
            f.name(),
            reg.n,
            b.estimate,
            b.t_stat,
            reg.r2,
            reg.mae
        );
    }
    Ok(())
}

fn main() -> volrace::Result<()> {
    run_example()
}
