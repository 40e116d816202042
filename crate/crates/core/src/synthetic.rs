//! Seeded synthetic spot prices and option trade ticks for demos and tests.

use std::f64::consts::PI;

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::{day_start, Frequency, PriceBar, PriceSeries};
use crate::models::GarchParams;
use crate::options::{bs_price, expiry_instant, instrument_name, BsInputs, OptionKind, OptionTrade, RISK_FREE_RATE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarketConfig {
    pub seed: u64,
    pub start: NaiveDate,
    pub days: usize,
    pub frequency: Frequency,
    pub initial_price: f64,
    /// Daily GARCH(1,1) driving the intraday variance.
    pub garch: GarchParams,
    /// Call strikes listed; IVs carry a quadratic smile in log-moneyness.
    pub strikes: Vec<f64>,
    /// Days before expiry on which option trading starts.
    pub listing_days: usize,
    pub tick_every_hours: u32,
    pub iv_mean: f64,
    pub iv_amplitude: f64,
    pub iv_period_days: f64,
    pub iv_noise: f64,
    pub smile_curvature: f64,
}

impl Default for MarketConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            start: NaiveDate::from_ymd_opt(2019, 1, 1).expect("valid date"),
            days: 400,
            frequency: Frequency::Hour1,
            initial_price: 8000.0,
            garch: GarchParams::garch(2e-5, 0.10, 0.85),
            strikes: vec![8000.0],
            listing_days: 120,
            tick_every_hours: 3,
            iv_mean: 0.65,
            iv_amplitude: 0.15,
            iv_period_days: 12.0,
            iv_noise: 0.01,
            smile_curvature: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticMarket {
    pub spot: PriceSeries,
    pub ticks: Vec<OptionTrade>,
    pub expiry: NaiveDate,
}

/// Spot bars whose per-period variance follows a daily GARCH(1,1), plus
/// call trades whose implied volatility oscillates around `iv_mean`.
/// The expiry is the day after the last spot bar.
pub fn generate(cfg: &MarketConfig) -> Result<SyntheticMarket> {
    if cfg.frequency >= Frequency::Daily {
        return Err(Error::InvalidInput("synthetic spot needs an intraday frequency".into()));
    }
    if cfg.tick_every_hours == 0 || cfg.days < 2 {
        return Err(Error::InvalidInput("need at least two days and a positive tick interval".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let per_day = (1440 / cfg.frequency.minutes()) as usize;
    let step = cfg.frequency.duration();
    let p = &cfg.garch;
    let mut h = p.unconditional_variance()?;
    let mut price = cfg.initial_price;
    let mut bars = Vec::with_capacity(cfg.days * per_day);
    let mut t = day_start(cfg.start);
    for _ in 0..cfg.days {
        let sd = (h / per_day as f64).sqrt();
        let open = price;
        for _ in 0..per_day {
            let z: f64 = StandardNormal.sample(&mut rng);
            price *= 1.0 + sd * z;
            bars.push(PriceBar {
                timestamp: t,
                close: price,
                volume: Some(rng.random_range(1.0..10.0)),
            });
            t += step;
        }
        let r = price / open - 1.0;
        h = p.a0 + p.alpha * r * r + p.beta * h;
    }
    let spot = PriceSeries::new("SYNTH", cfg.frequency, bars)?;
    let expiry = cfg.start + chrono::Days::new(cfg.days as u64);
    let expiry_at = expiry_instant(expiry);

    let listing = day_start(expiry) - Duration::days(cfg.listing_days as i64);
    let mut ticks = Vec::new();
    let mut at = listing.max(day_start(cfg.start) + step);
    while at < expiry_at {
        if let Some(s) = spot.close_at_or_before(at - step) {
            let days = (at - listing).num_seconds() as f64 / 86_400.0;
            let noise: f64 = StandardNormal.sample(&mut rng);
            let base = cfg.iv_mean + cfg.iv_amplitude * (2.0 * PI * days / cfg.iv_period_days).sin() + cfg.iv_noise * noise;
            for &k in &cfg.strikes {
                let iv = (base + cfg.smile_curvature * (k / s).ln().powi(2)).max(0.05);
                let mut inputs = BsInputs::new(OptionKind::Call, s, k, crate::options::year_fraction(at, expiry), iv);
                inputs.rate = RISK_FREE_RATE;
                let premium = bs_price(&inputs);
                if premium <= 0.01 {
                    continue;
                }
                ticks.push(OptionTrade {
                    timestamp: at,
                    instrument: instrument_name(k, OptionKind::Call, expiry),
                    strike: k,
                    expiry,
                    kind: OptionKind::Call,
                    premium_usd: (premium * 100.0).round() / 100.0,
                    volume_usd: premium * rng.random_range(0.1..5.0),
                    underlying_price: s,
                });
            }
        }
        at += Duration::hours(cfg.tick_every_hours as i64);
    }
    Ok(SyntheticMarket { spot, ticks, expiry })
}
