//! Drives the command layer from a TOML config: simulates an EGARCH path and
//! fits all parametric models to it.

use volrace::cli::{cmd_fit, cmd_simulate, RunConfig};
use volrace::market_data::Frequency;

pub fn run_example() -> volrace::Result<()> {
    let dir = tempfile::tempdir().map_err(|e| volrace::Error::io("tempdir", e))?;
    let text = format!(
        r#"
        seed = 5
        out = "{}"
        models = ["ARCH", "GARCH", "EGARCH"]
        [simulate]
        model = "EGARCH"
        a0 = -0.3
        alpha = 0.15
        theta = -0.05
        beta = 0.96
        n = 1000
        "#,
        dir.path().display()
    );
    let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| volrace::Error::Config(e.to_string()))?;
    cfg.validate()?;
    for p in cmd_simulate(&cfg)? {
        println!("wrote {}", p.display());
    }
    cfg.data.spot = Some(dir.path().join("simulated_prices.csv"));
    cfg.data.spot_frequency = Frequency::Daily;
    for p in cmd_fit(&cfg)? {
        println!("wrote {}", p.display());
    }
    print!("{}", std::fs::read_to_string(dir.path().join("fits.csv")).map_err(|e| volrace::Error::io("fits.csv", e))?);
    Ok(())
}

fn main() -> volrace::Result<()> {
    run_example()
}
