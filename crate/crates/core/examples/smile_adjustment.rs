//! Calibrates the smile slope from three strikes around the money and
//! applies it to a constant GARCH forecast.

use chrono::Days;
use volrace::market_data::day_start;
use volrace::options::year_fraction;
use volrace::smile::{adjustment, calibrate, slope_on_date};
use volrace::synthetic::{generate, MarketConfig};

pub fn run_example() -> volrace::Result<()> {
    let market = generate(&MarketConfig {
        days: 60,
        listing_days: 30,
        strikes: (4..=13).map(|k| k as f64 * 1000.0).collect(),
        smile_curvature: 1.5,
        ..MarketConfig::default()
    })?;
    let dates: Vec<_> = [25, 18, 11, 4].iter().map(|d| market.expiry - Days::new(*d)).collect();
    let (obs, s) = calibrate(&market.ticks, &market.spot, &dates, market.expiry)?;
    for o in &obs {
        println!(
            "{} center {:.0} ivs {:?} slope {:.4}",
            o.date,
            o.center_strike,
            o.ivs.map(|v| (v * 1e4).round() / 1e4),
            slope_on_date(o)?
        );
    }
    println!("average slope {s:.4}");

    let at = day_start(market.expiry - Days::new(10));
    let close = market.spot.close_at_or_before(at).expect("close");
    let tau = year_fraction(at, market.expiry);
    for k in [6000.0, 8000.0, 10000.0] {
        println!("strike {k:.0}: 60.00% -> {:.2}%", 100.0 * (0.60 + adjustment(s, close, k, tau)));
    }
    Ok(())
}

fn main() -> volrace::Result<()> {
    run_example()
}
