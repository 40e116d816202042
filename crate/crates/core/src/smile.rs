//! Volatility-smile slope in delta space and the moneyness adjustment of a
//! model forecast.

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast_eval::DatedValues;
use crate::market_data::PriceSeries;
use crate::options::{atm_strike, bs_delta, vw_implied_vol, year_fraction, BsInputs, OptionKind, OptionTrade};

/// Fixed volatility and rate used for every smile delta.
pub const SMILE_VOL: f64 = 0.70;
pub const SMILE_RATE: f64 = 0.05;
pub const STRIKE_GAP: f64 = 1000.0;

pub fn default_calibration_dates() -> Vec<NaiveDate> {
    [(2019, 11, 1), (2019, 12, 6), (2020, 1, 7), (2020, 2, 4), (2020, 3, 5)]
        .iter()
        .map(|&(y, m, d)| NaiveDate::from_ymd_opt(y, m, d).expect("valid date"))
        .collect()
}

/// Call delta under the fixed smile assumptions.
pub fn smile_delta(spot: f64, strike: f64, tau: f64) -> f64 {
    let mut i = BsInputs::new(OptionKind::Call, spot, strike, tau, SMILE_VOL);
    i.rate = SMILE_RATE;
    bs_delta(&i)
}

/// Implied vols and deltas of three calls struck `STRIKE_GAP` apart around
/// `center_strike`, ordered low, center, high.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmileObservation {
    pub date: NaiveDate,
    pub center_strike: f64,
    pub ivs: [f64; 3],
    pub deltas: [f64; 3],
}

impl SmileObservation {
    pub fn new(date: NaiveDate, center_strike: f64, ivs: [f64; 3], deltas: [f64; 3]) -> Result<Self> {
        if !(deltas[0] > deltas[1] && deltas[1] > deltas[2]) {
            return Err(Error::DegenerateSmile(format!(
                "{date}: call deltas must fall with strike, got {deltas:?}"
            )));
        }
        if ivs.iter().chain(&deltas).any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!("{date}: non-finite smile input")));
        }
        Ok(Self {
            date,
            center_strike,
            ivs,
            deltas,
        })
    }

    /// Deltas computed from `spot` with the fixed smile assumptions.
    pub fn from_market(date: NaiveDate, spot: f64, center_strike: f64, ivs: [f64; 3], tau: f64) -> Result<Self> {
        let deltas = Self::strikes_of(center_strike).map(|k| smile_delta(spot, k, tau));
        Self::new(date, center_strike, ivs, deltas)
    }

    pub fn strikes(&self) -> [f64; 3] {
        Self::strikes_of(self.center_strike)
    }

    fn strikes_of(center: f64) -> [f64; 3] {
        [center - STRIKE_GAP, center, center + STRIKE_GAP]
    }
}

/// Mean of the two wing slopes, each IV difference over its absolute delta gap.
pub fn slope_on_date(obs: &SmileObservation) -> Result<f64> {
    let [iv_lo, iv_c, iv_hi] = obs.ivs;
    let [d_lo, d_c, d_hi] = obs.deltas;
    let (gap_lo, gap_hi) = ((d_lo - d_c).abs(), (d_c - d_hi).abs());
    if gap_lo == 0.0 || gap_hi == 0.0 {
        return Err(Error::DegenerateSmile(format!("{}: zero delta gap", obs.date)));
    }
    Ok(((iv_lo - iv_c) / gap_lo + (iv_hi - iv_c) / gap_hi) / 2.0)
}

pub fn average_slope(observations: &[SmileObservation]) -> Result<f64> {
    if observations.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let mut sum = 0.0;
    for o in observations {
        sum += slope_on_date(o)?;
    }
    Ok(sum / observations.len() as f64)
}

pub fn adjusted_forecast(garch_vol: f64, s_avg: f64, delta_strike: f64, delta_close: f64) -> f64 {
    garch_vol + s_avg * (delta_strike - delta_close).abs()
}

/// Adjustment for a contract struck at `traded_strike` when the underlying
/// sits at `close`: the slope times the delta distance to a call struck at
/// the close itself.
pub fn adjustment(s_avg: f64, close: f64, traded_strike: f64, tau: f64) -> f64 {
    s_avg * (smile_delta(close, traded_strike, tau) - smile_delta(close, close, tau)).abs()
}

/// Builds the observation for `date` from that day's call trades on
/// `expiry`. The center strike is the thousand-dollar multiple nearest the
/// day's last close. Returns `Ok(None)` when a contract has no usable trades.
pub fn observation_from_trades(
    trades: &[OptionTrade],
    underlying: &PriceSeries,
    date: NaiveDate,
    expiry: NaiveDate,
) -> Result<Option<SmileObservation>> {
    let Some(last) = underlying.bars_on(date).last() else {
        log::warn!("smile: no underlying bars on {date}");
        return Ok(None);
    };
    let center = atm_strike(last.close, STRIKE_GAP);
    let mut ivs = [0.0; 3];
    for (slot, k) in SmileObservation::strikes_of(center).into_iter().enumerate() {
        let day: Vec<OptionTrade> = trades
            .iter()
            .filter(|t| {
                t.kind == OptionKind::Call
                    && t.expiry == expiry
                    && t.timestamp.date_naive() == date
                    && (t.strike - k).abs() < 1e-6
            })
            .cloned()
            .collect();
        match vw_implied_vol(&day, SMILE_RATE) {
            Ok(iv) => ivs[slot] = iv,
            Err(_) => {
                log::warn!("smile: no usable {k} call trades on {date}; date skipped");
                return Ok(None);
            }
        }
    }
    let tau = year_fraction(last.timestamp, expiry);
    SmileObservation::from_market(date, last.close, center, ivs, tau).map(Some)
}

/// Observations for every usable date and their average slope.
pub fn calibrate(
    trades: &[OptionTrade],
    underlying: &PriceSeries,
    dates: &[NaiveDate],
    expiry: NaiveDate,
) -> Result<(Vec<SmileObservation>, f64)> {
    let mut obs = Vec::new();
    for &d in dates {
        if let Some(o) = observation_from_trades(trades, underlying, d, expiry)? {
            obs.push(o);
        }
    }
    let s = average_slope(&obs)?;
    Ok((obs, s))
}

/// Applies the smile adjustment to forecasts keyed by origin time, using the
/// underlying close at each origin.
pub fn adjust_schedule(
    forecasts: &[(DateTime<Utc>, f64)],
    underlying: &PriceSeries,
    s_avg: f64,
    traded_strike: f64,
    expiry: NaiveDate,
) -> Vec<(DateTime<Utc>, f64)> {
    forecasts
        .iter()
        .map(|&(at, f)| match underlying.close_at_or_before(at) {
            Some(close) => (at, f + adjustment(s_avg, close, traded_strike, year_fraction(at, expiry))),
            None => (at, f),
        })
        .collect()
}

/// Daily variant of [`adjust_schedule`] keyed by date, using that date's close.
pub fn adjust_daily(
    forecasts: &DatedValues,
    daily_closes: &DatedValues,
    s_avg: f64,
    traded_strike: f64,
    expiry: NaiveDate,
) -> DatedValues {
    forecasts
        .iter()
        .map(|(&d, &f)| {
            let adj = daily_closes.get(&d).map_or(0.0, |&close| {
                let end_of_day = crate::market_data::day_start(d + chrono::Days::new(1));
                adjustment(s_avg, close, traded_strike, year_fraction(end_of_day, expiry))
            });
            (d, f + adj)
        })
        .collect()
}
