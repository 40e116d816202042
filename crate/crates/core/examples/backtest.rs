//! Delta-hedged volatility-spread strategy on a synthetic option market,
//! swept over entry thresholds.

use chrono::Duration;
use volrace::backtest::{garch_forecast_schedule, round_trips, run_grid, StrategyConfig};
use volrace::models::FitOptions;
use volrace::synthetic::{generate, MarketConfig};

pub fn run_example() -> volrace::Result<()> {
    let market = generate(&MarketConfig {
        days: 150,
        listing_days: 40,
        iv_mean: 0.40,
        ..MarketConfig::default()
    })?;
    let first = market.ticks.first().expect("ticks");
    let last = market.ticks.last().expect("ticks");
    let schedule = garch_forecast_schedule(
        &market.spot,
        first.timestamp - Duration::days(1),
        last.timestamp,
        24,
        market.expiry,
        &FitOptions::default(),
    )?;

    let configs: Vec<StrategyConfig> = [0.03, 0.05, 0.10]
        .iter()
        .map(|&e| StrategyConfig {
            instrument: first.instrument.clone(),
            ..StrategyConfig::new(e, 0.0)
        })
        .collect();
    for (cfg, res) in configs.iter().zip(run_grid(&configs, &market.ticks, &market.spot, &schedule)) {
        let res = res?;
        let r = &res.report;
        println!(
            "{:<28} trades {:>2} win rate {:>5.1}% pnl {:>10} fees {:.2}",
            cfg.label(),
            r.trades,
            100.0 * r.win_rate,
            r.total_pnl,
            r.total_costs().usd()
        );
        if let Some(t) = round_trips(&res.records).first() {
            println!(
                "  first trip {:?} {} -> {:?}, {} rehedges, option {} hedge {}",
                t.direction,
                t.entry_time,
                t.exit_time,
                t.rehedges,
                t.pnl_option,
                t.pnl_underlying
            );
        }
    }
    Ok(())
}

fn main() -> volrace::Result<()> {
    run_example()
}
