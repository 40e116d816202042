//! Writes synthetic hourly bars to CSV, loads them back and resamples to
//! coarser grids.

use volrace::market_data::{load_price_csv, resample, simple_returns, write_price_csv, Frequency};
use volrace::synthetic::{generate, MarketConfig};

pub fn run_example() -> volrace::Result<()> {
    let market = generate(&MarketConfig {
        days: 30,
        listing_days: 10,
        ..MarketConfig::default()
    })?;
    let dir = tempfile::tempdir().map_err(|e| volrace::Error::io("tempdir", e))?;
    let path = dir.path().join("spot.csv");
    let file = std::fs::File::create(&path).map_err(|e| volrace::Error::io(&path, e))?;
    write_price_csv(&market.spot, file)?;

    let hourly = load_price_csv(&path, Frequency::Hour1)?;
    assert_eq!(hourly.bars(), market.spot.bars());
    println!("loaded {} hourly bars, {} gaps", hourly.len(), hourly.gaps().len());
    for f in [Frequency::Hour6, Frequency::Daily] {
        let bars = resample(&hourly, f)?;
        let r = simple_returns(&bars)?;
        println!("{:>4}: {} bars, first return {:+.5}", f.as_str(), bars.len(), r.values()[0]);
    }
    Ok(())
}

fn main() -> volrace::Result<()> {
    run_example()
}
