//! Black-Scholes analytics and option tick-trade handling.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Datelike, NaiveDate, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::forecast_eval::DatedValues;
use crate::market_data::{parse_timestamp, PriceBar, PriceSeries};

/// Flat annual risk-free rate, continuously compounded.
pub const RISK_FREE_RATE: f64 = 0.05;
/// Hour (UTC) at which listed BTC options settle on their expiry date.
pub const EXPIRY_HOUR_UTC: u32 = 8;
pub const SECONDS_PER_YEAR: f64 = 365.0 * 86_400.0;
pub const IV_LOWER: f64 = 1e-4;
pub const IV_UPPER: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptionKind {
    Call,
    Put,
}

impl FromStr for OptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "c" | "call" => Ok(OptionKind::Call),
            "p" | "put" => Ok(OptionKind::Put),
            other => Err(Error::InvalidInput(format!("unknown option kind '{other}'"))),
        }
    }
}

impl fmt::Display for OptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptionKind::Call => "call",
            OptionKind::Put => "put",
        })
    }
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// European option under Black-Scholes. `tau` is in years (ACT/365).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BsInputs {
    pub spot: f64,
    pub strike: f64,
    pub tau: f64,
    pub rate: f64,
    pub vol: f64,
    pub kind: OptionKind,
}

impl BsInputs {
    pub fn new(kind: OptionKind, spot: f64, strike: f64, tau: f64, vol: f64) -> Self {
        Self {
            spot,
            strike,
            tau,
            rate: RISK_FREE_RATE,
            vol,
            kind,
        }
    }

    pub fn with_vol(self, vol: f64) -> Self {
        Self { vol, ..self }
    }

    pub fn with_spot(self, spot: f64) -> Self {
        Self { spot, ..self }
    }

    fn discounted_strike(&self) -> f64 {
        self.strike * (-self.rate * self.tau.max(0.0)).exp()
    }

    fn d1_d2(&self) -> (f64, f64) {
        let sd = self.vol * self.tau.sqrt();
        let d1 = ((self.spot / self.strike).ln() + (self.rate + 0.5 * self.vol * self.vol) * self.tau) / sd;
        (d1, d1 - sd)
    }

    /// `[lower, upper]` no-arbitrage bounds for the premium.
    pub fn premium_bounds(&self) -> (f64, f64) {
        let k = self.discounted_strike();
        match self.kind {
            OptionKind::Call => ((self.spot - k).max(0.0), self.spot),
            OptionKind::Put => ((k - self.spot).max(0.0), k),
        }
    }
}

pub fn bs_price(i: &BsInputs) -> f64 {
    if i.tau <= 0.0 {
        return match i.kind {
            OptionKind::Call => (i.spot - i.strike).max(0.0),
            OptionKind::Put => (i.strike - i.spot).max(0.0),
        };
    }
    if i.vol * i.tau.sqrt() <= 0.0 {
        return i.premium_bounds().0;
    }
    let (d1, d2) = i.d1_d2();
    let k = i.discounted_strike();
    match i.kind {
        OptionKind::Call => i.spot * norm_cdf(d1) - k * norm_cdf(d2),
        OptionKind::Put => k * norm_cdf(-d2) - i.spot * norm_cdf(-d1),
    }
}

/// Spot delta. At expiry (or zero vol) this is the intrinsic delta, with
/// 0.5 for an at-the-money call.
pub fn bs_delta(i: &BsInputs) -> f64 {
    let call = if i.tau <= 0.0 || i.vol <= 0.0 {
        let k = if i.tau <= 0.0 { i.strike } else { i.discounted_strike() };
        if i.spot > k {
            1.0
        } else if i.spot < k {
            0.0
        } else {
            0.5
        }
    } else {
        norm_cdf(i.d1_d2().0)
    };
    match i.kind {
        OptionKind::Call => call,
        OptionKind::Put => call - 1.0,
    }
}

pub fn bs_vega(i: &BsInputs) -> f64 {
    if i.tau <= 0.0 || i.vol <= 0.0 {
        return 0.0;
    }
    i.spot * norm_pdf(i.d1_d2().0) * i.tau.sqrt()
}

/// Volatility in `[1e-4, 10]` that reprices `premium`; `inputs.vol` is ignored.
/// Premiums at or below the lower-bracket price report the lower bracket.
pub fn implied_vol(premium: f64, inputs: &BsInputs) -> Result<f64> {
    if !(inputs.tau > 0.0) {
        return Err(Error::InvalidInput("implied volatility needs time to expiry".into()));
    }
    let (lower, upper) = inputs.premium_bounds();
    if !premium.is_finite() || premium < lower || premium >= upper {
        return Err(Error::NoSolution { premium, lower, upper });
    }
    let price = |v: f64| bs_price(&inputs.with_vol(v));
    let (mut lo, mut hi) = (IV_LOWER, IV_UPPER);
    if premium <= price(lo) {
        return Ok(lo);
    }
    if premium > price(hi) {
        return Err(Error::Numerical(format!(
            "premium {premium} needs volatility above {IV_UPPER}"
        )));
    }
    // Newton steps inside a shrinking bisection bracket.
    let mut v = 0.5_f64.clamp(lo, hi);
    for _ in 0..200 {
        let diff = price(v) - premium;
        if diff > 0.0 {
            hi = v;
        } else {
            lo = v;
        }
        if hi - lo < 1e-12 {
            break;
        }
        let vega = bs_vega(&inputs.with_vol(v));
        let newton = v - diff / vega;
        v = if vega > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if diff.abs() < 1e-13 * inputs.spot && hi - lo < 1e-8 {
            break;
        }
    }
    if hi - lo > 1e-8 && (price(v) - premium).abs() > 1e-9 * inputs.spot {
        return Err(Error::Numerical(format!("implied vol did not converge for premium {premium}")));
    }
    Ok(v)
}

/// Nearest multiple of `interval`; exact midpoints round up.
pub fn atm_strike(vwap: f64, interval: f64) -> f64 {
    (vwap / interval + 0.5).floor() * interval
}

/// Dollar-volume-weighted average close over `bars`. Falls back to the plain
/// mean when the bars carry no volume.
pub fn vwap(bars: &[PriceBar]) -> Option<f64> {
    if bars.is_empty() {
        return None;
    }
    let (num, den) = bars.iter().fold((0.0, 0.0), |(n, d), b| {
        let w = b.close * b.volume.unwrap_or(0.0);
        (n + w * b.close, d + w)
    });
    if den > 0.0 {
        Some(num / den)
    } else {
        Some(bars.iter().map(|b| b.close).sum::<f64>() / bars.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionTrade {
    pub timestamp: DateTime<Utc>,
    pub instrument: String,
    pub strike: f64,
    pub expiry: NaiveDate,
    pub kind: OptionKind,
    pub premium_usd: f64,
    /// Premium times contracts traded, in USD.
    pub volume_usd: f64,
    pub underlying_price: f64,
}

pub fn expiry_instant(expiry: NaiveDate) -> DateTime<Utc> {
    Utc.from_utc_datetime(&expiry.and_hms_opt(EXPIRY_HOUR_UTC, 0, 0).expect("valid hour"))
}

/// ACT/365 year fraction from `from` to the settlement instant of `expiry`.
pub fn year_fraction(from: DateTime<Utc>, expiry: NaiveDate) -> f64 {
    (expiry_instant(expiry) - from).num_seconds() as f64 / SECONDS_PER_YEAR
}

impl OptionTrade {
    pub fn tau(&self) -> f64 {
        year_fraction(self.timestamp, self.expiry)
    }

    pub fn bs_inputs(&self, rate: f64) -> BsInputs {
        BsInputs {
            spot: self.underlying_price,
            strike: self.strike,
            tau: self.tau(),
            rate,
            vol: 0.0,
            kind: self.kind,
        }
    }

    pub fn implied_vol(&self, rate: f64) -> Result<f64> {
        implied_vol(self.premium_usd, &self.bs_inputs(rate))
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if !(self.strike > 0.0) {
            return Err(format!("strike must be positive, got {}", self.strike));
        }
        if !(self.premium_usd >= 0.0) {
            return Err(format!("premium must be nonnegative, got {}", self.premium_usd));
        }
        if !(self.volume_usd > 0.0) {
            return Err(format!("volume must be positive, got {}", self.volume_usd));
        }
        if !(self.underlying_price > 0.0) {
            return Err(format!("underlying price must be positive, got {}", self.underlying_price));
        }
        if self.expiry < self.timestamp.date_naive() {
            return Err(format!("expiry {} precedes trade at {}", self.expiry, self.timestamp));
        }
        Ok(())
    }
}

/// Fields encoded in an instrument name such as `BTC8000C27MAR20` or
/// `BTC-27MAR20-8000-C`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstrumentName {
    pub strike: f64,
    pub kind: OptionKind,
    pub expiry: NaiveDate,
}

fn parse_ddmonyy(s: &str) -> Option<NaiveDate> {
    let s = s.to_ascii_uppercase();
    let split = s.find(|c: char| c.is_ascii_alphabetic())?;
    let day: u32 = s[..split].parse().ok()?;
    let month = match &s[split..split + 3.min(s.len() - split)] {
        "JAN" => 1,
        "FEB" => 2,
        "MAR" => 3,
        "APR" => 4,
        "MAY" => 5,
        "JUN" => 6,
        "JUL" => 7,
        "AUG" => 8,
        "SEP" => 9,
        "OCT" => 10,
        "NOV" => 11,
        "DEC" => 12,
        _ => return None,
    };
    let year: i32 = s.get(split + 3..)?.parse().ok()?;
    NaiveDate::from_ymd_opt(2000 + year, month, day)
}

impl FromStr for InstrumentName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("unrecognized instrument name '{s}'"));
        let u = s.trim().to_ascii_uppercase();
        let rest = u.strip_prefix("BTC").ok_or_else(bad)?;
        if let Some(rest) = rest.strip_prefix('-') {
            let parts: Vec<&str> = rest.split('-').collect();
            if parts.len() != 3 {
                return Err(bad());
            }
            return Ok(InstrumentName {
                expiry: parse_ddmonyy(parts[0]).ok_or_else(bad)?,
                strike: parts[1].parse().map_err(|_| bad())?,
                kind: parts[2].parse().map_err(|_| bad())?,
            });
        }
        let kind_pos = rest.find(['C', 'P']).ok_or_else(bad)?;
        Ok(InstrumentName {
            strike: rest[..kind_pos].parse().map_err(|_| bad())?,
            kind: rest[kind_pos..kind_pos + 1].parse()?,
            expiry: parse_ddmonyy(&rest[kind_pos + 1..]).ok_or_else(bad)?,
        })
    }
}

/// Canonical `BTC<strike><C|P><DDMONYY>` name.
pub fn instrument_name(strike: f64, kind: OptionKind, expiry: NaiveDate) -> String {
    let k = match kind {
        OptionKind::Call => 'C',
        OptionKind::Put => 'P',
    };
    format!(
        "BTC{}{}{}",
        strike.round() as i64,
        k,
        expiry.format("%d%b%y").to_string().to_ascii_uppercase()
    )
}

pub fn load_option_trades(path: impl AsRef<Path>) -> Result<Vec<OptionTrade>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_option_trades(file)
}

/// Reads the option tick CSV. Explicit `strike`/`expiry`/`kind` columns win
/// over fields decoded from the instrument name; a BTC premium is converted
/// at the trade's underlying price.
pub fn read_option_trades<R: std::io::Read>(reader: R) -> Result<Vec<OptionTrade>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let need = |name: &str| {
        col(name).ok_or(Error::Parse {
            line: 1,
            msg: format!("missing '{name}' column"),
        })
    };
    let ts_col = need("timestamp")?;
    let under_col = need("underlying_price")?;
    let instr_col = col("instrument");
    let (strike_col, expiry_col, kind_col) = (col("strike"), col("expiry"), col("kind"));
    let (usd_col, btc_col) = (col("premium_usd"), col("premium_btc"));
    let (vol_col, amount_col) = (col("volume_usd"), col("amount"));
    if usd_col.is_none() && btc_col.is_none() {
        return Err(Error::Parse {
            line: 1,
            msg: "need 'premium_usd' or 'premium_btc' column".into(),
        });
    }
    if vol_col.is_none() && amount_col.is_none() {
        return Err(Error::Parse {
            line: 1,
            msg: "need 'volume_usd' (or 'amount') column".into(),
        });
    }

    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let perr = |msg: String| Error::Parse { line, msg };
        let rec = rec.map_err(|e| perr(e.to_string()))?;
        let get = |c: Option<usize>| c.and_then(|c| rec.get(c)).filter(|s| !s.is_empty());
        let num = |c: Option<usize>, what: &str| -> Result<Option<f64>> {
            get(c)
                .map(|s| s.parse::<f64>().map_err(|e| perr(format!("bad {what} '{s}': {e}"))))
                .transpose()
        };

        let timestamp = parse_timestamp(rec.get(ts_col).unwrap_or("")).map_err(perr)?;
        let underlying_price = num(Some(under_col), "underlying_price")?.ok_or_else(|| perr("missing underlying_price".into()))?;
        let instrument = get(instr_col).unwrap_or("").to_string();
        let decoded = instrument.parse::<InstrumentName>().ok();

        let strike = match num(strike_col, "strike")? {
            Some(k) => k,
            None => decoded.map(|d| d.strike).ok_or_else(|| perr("no strike".into()))?,
        };
        let kind = match get(kind_col) {
            Some(k) => k.parse().map_err(|e: Error| perr(e.to_string()))?,
            None => decoded.map(|d| d.kind).ok_or_else(|| perr("no option kind".into()))?,
        };
        let expiry = match get(expiry_col) {
            Some(e) => NaiveDate::parse_from_str(e, "%Y-%m-%d")
                .ok()
                .or_else(|| parse_ddmonyy(e))
                .or_else(|| parse_timestamp(e).ok().map(|t| t.date_naive()))
                .ok_or_else(|| perr(format!("bad expiry '{e}'")))?,
            None => decoded.map(|d| d.expiry).ok_or_else(|| perr("no expiry".into()))?,
        };
        let premium_usd = match num(usd_col, "premium_usd")? {
            Some(p) => p,
            None => {
                num(btc_col, "premium_btc")?.ok_or_else(|| perr("missing premium".into()))? * underlying_price
            }
        };
        let volume_usd = match num(vol_col, "volume_usd")? {
            Some(v) => v,
            None => num(amount_col, "amount")?.ok_or_else(|| perr("missing volume".into()))? * premium_usd,
        };
        let instrument = if instrument.is_empty() {
            instrument_name(strike, kind, expiry)
        } else {
            instrument
        };
        let trade = OptionTrade {
            timestamp,
            instrument,
            strike,
            expiry,
            kind,
            premium_usd,
            volume_usd,
            underlying_price,
        };
        trade.validate().map_err(perr)?;
        out.push(trade);
    }
    out.sort_by_key(|t| t.timestamp);
    Ok(out)
}

/// Dollar-volume-weighted mean of per-trade implied volatilities. Trades
/// whose premium cannot be inverted are skipped.
pub fn vw_implied_vol(trades: &[OptionTrade], rate: f64) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    let mut skipped = 0;
    for t in trades {
        match t.implied_vol(rate) {
            Ok(iv) => {
                num += t.volume_usd * iv;
                den += t.volume_usd;
            }
            Err(e) => {
                skipped += 1;
                log::debug!("excluding {} at {}: {e}", t.instrument, t.timestamp);
            }
        }
    }
    if skipped > 0 {
        log::info!("{skipped} of {} trades excluded from weighted IV", trades.len());
    }
    if den > 0.0 {
        Ok(num / den)
    } else {
        Err(Error::NoImpliedVol)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyAtmIv {
    pub date: NaiveDate,
    pub vwap: f64,
    pub strike: f64,
    pub iv: f64,
    pub trades: usize,
}

/// Per-day implied volatility of the at-the-money strike for one expiry:
/// the strike nearest the day's underlying VWAP, calls and puts pooled.
pub fn daily_atm_iv(
    trades: &[OptionTrade],
    underlying: &PriceSeries,
    expiry: NaiveDate,
    strike_interval: f64,
    rate: f64,
) -> Vec<DailyAtmIv> {
    let mut by_day: BTreeMap<NaiveDate, Vec<&OptionTrade>> = BTreeMap::new();
    for t in trades.iter().filter(|t| t.expiry == expiry) {
        by_day.entry(t.timestamp.date_naive()).or_default().push(t);
    }
    let mut out = Vec::new();
    for (date, day_trades) in by_day {
        let Some(v) = vwap(underlying.bars_on(date)) else {
            log::warn!("no underlying bars on {date}; skipping ATM IV");
            continue;
        };
        let strike = atm_strike(v, strike_interval);
        let atm: Vec<OptionTrade> = day_trades
            .into_iter()
            .filter(|t| (t.strike - strike).abs() < 1e-6)
            .cloned()
            .collect();
        if atm.is_empty() {
            log::warn!("no trades at ATM strike {strike} on {date}");
            continue;
        }
        match vw_implied_vol(&atm, rate) {
            Ok(iv) => out.push(DailyAtmIv {
                date,
                vwap: v,
                strike,
                iv,
                trades: atm.len(),
            }),
            Err(e) => log::warn!("{date}: {e}"),
        }
    }
    out
}

pub fn atm_iv_series(rows: &[DailyAtmIv]) -> DatedValues {
    rows.iter().map(|r| (r.date, r.iv)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Quarter {
    pub year: i32,
    pub quarter: u32,
}

impl Quarter {
    pub fn of(date: NaiveDate) -> Self {
        Quarter {
            year: date.year(),
            quarter: (date.month() - 1) / 3 + 1,
        }
    }

    pub fn next(self) -> Self {
        if self.quarter == 4 {
            Quarter { year: self.year + 1, quarter: 1 }
        } else {
            Quarter { quarter: self.quarter + 1, ..self }
        }
    }
}

impl fmt::Display for Quarter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}Q{}", self.quarter, self.year)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuarterSummary {
    pub quarter: Quarter,
    pub contracts: usize,
    pub trades: usize,
    pub volume_usd: f64,
}

/// Distinct contracts, trade count and dollar volume for each quarter from
/// the first to the last trade, including empty quarters.
pub fn exchange_summary(trades: &[OptionTrade]) -> Vec<QuarterSummary> {
    let Some(first) = trades.iter().map(|t| t.timestamp).min() else {
        return Vec::new();
    };
    let last = trades.iter().map(|t| t.timestamp).max().expect("non-empty");
    let mut q = Quarter::of(first.date_naive());
    let end = Quarter::of(last.date_naive());
    let mut quarters = Vec::new();
    while q <= end {
        quarters.push(q);
        q = q.next();
    }
    exchange_summary_for(trades, &quarters)
}

pub fn exchange_summary_for(trades: &[OptionTrade], quarters: &[Quarter]) -> Vec<QuarterSummary> {
    quarters
        .iter()
        .map(|&q| {
            let in_q: Vec<&OptionTrade> = trades
                .iter()
                .filter(|t| Quarter::of(t.timestamp.date_naive()) == q)
                .collect();
            let contracts: BTreeSet<&str> = in_q.iter().map(|t| t.instrument.as_str()).collect();
            QuarterSummary {
                quarter: q,
                contracts: contracts.len(),
                trades: in_q.len(),
                volume_usd: in_q.iter().map(|t| t.volume_usd).sum(),
            }
        })
        .collect()
}
