//! Black-Scholes pricing, implied volatility inversion and a daily
//! at-the-money implied volatility series.

use volrace::options::{bs_delta, bs_price, bs_vega, daily_atm_iv, implied_vol, BsInputs, OptionKind, RISK_FREE_RATE};
use volrace::synthetic::{generate, MarketConfig};

pub fn run_example() -> volrace::Result<()> {
    let call = BsInputs::new(OptionKind::Call, 8000.0, 9000.0, 0.25, 0.8);
    let price = bs_price(&call);
    println!(
        "call 9000 on 8000: price {price:.2} delta {:.4} vega {:.2}",
        bs_delta(&call),
        bs_vega(&call)
    );
    println!("recovered vol {:.6}", implied_vol(price, &call)?);

    let market = generate(&MarketConfig {
        days: 60,
        listing_days: 20,
        strikes: vec![7000.0, 8000.0, 9000.0, 10000.0],
        ..MarketConfig::default()
    })?;
    for row in daily_atm_iv(&market.ticks, &market.spot, market.expiry, 1000.0, RISK_FREE_RATE).iter().take(7) {
        println!(
            "{} vwap {:.2} strike {:.0} iv {:.2}% from {} trades",
            row.date,
            row.vwap,
            row.strike,
            100.0 * row.iv,
            row.trades
        );
    }
    Ok(())
}

fn main() -> volrace::Result<()> {
    run_example()
}
