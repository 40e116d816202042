//! Delta-hedged volatility-spread strategy on a single option contract.
//!
//! The engine walks option trade ticks in time order. At each tick the
//! spread between the latest model forecast and the tick's implied
//! volatility drives threshold entries and exits; open positions are
//! rehedged with the perpetual swap whenever the option delta drifts past a
//! band. Ledger amounts are integer cents so that PNL identities hold exactly.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Neg, Sub};

use chrono::{DateTime, Duration, NaiveDate, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast_eval::DatedValues;
use crate::market_data::{day_start, Frequency, PriceSeries, ReturnSeries};
use crate::models::{fit_mle_with, forecast_multi_period_average, FitOptions, ModelKind};
use crate::options::{bs_delta, expiry_instant, BsInputs, InstrumentName, OptionTrade, RISK_FREE_RATE};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Cents(pub i64);

impl Cents {
    pub const ZERO: Cents = Cents(0);

    pub fn from_usd(usd: f64) -> Self {
        Cents((usd * 100.0).round() as i64)
    }

    pub fn usd(self) -> f64 {
        self.0 as f64 / 100.0
    }

    pub fn abs(self) -> Self {
        Cents(self.0.abs())
    }
}

impl Add for Cents {
    type Output = Cents;
    fn add(self, o: Cents) -> Cents {
        Cents(self.0 + o.0)
    }
}

impl Sub for Cents {
    type Output = Cents;
    fn sub(self, o: Cents) -> Cents {
        Cents(self.0 - o.0)
    }
}

impl Neg for Cents {
    type Output = Cents;
    fn neg(self) -> Cents {
        Cents(-self.0)
    }
}

impl AddAssign for Cents {
    fn add_assign(&mut self, o: Cents) {
        self.0 += o.0;
    }
}

impl Sum for Cents {
    fn sum<I: Iterator<Item = Cents>>(iter: I) -> Cents {
        Cents(iter.map(|c| c.0).sum())
    }
}

impl fmt::Display for Cents {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        write!(f, "{sign}{}.{:02}", self.0.abs() / 100, self.0.abs() % 100)
    }
}

/// Exchange fee and quoted-spread constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeeModel {
    /// Option taker fee as a fraction of the underlying per contract.
    pub option_rate: f64,
    /// Cap on the option fee as a fraction of the premium.
    pub option_cap: f64,
    /// Perpetual taker fee as a fraction of notional.
    pub perpetual_rate: f64,
    /// Charge half the quoted bid-ask spread on every fill.
    pub bid_ask: bool,
    pub option_half_spread: f64,
    pub perpetual_half_spread_usd: f64,
    /// Net fees into `pnl_total`; off by default.
    pub include_in_pnl: bool,
}

impl Default for FeeModel {
    fn default() -> Self {
        Self {
            option_rate: 0.0004,
            option_cap: 0.125,
            perpetual_rate: 0.00075,
            bid_ask: false,
            option_half_spread: 0.015,
            perpetual_half_spread_usd: 0.25,
            include_in_pnl: false,
        }
    }
}

impl FeeModel {
    pub fn option_fee(&self, premium_usd: f64, underlying_usd: f64, contracts: f64) -> f64 {
        (self.option_rate * underlying_usd * contracts).min(self.option_cap * premium_usd * contracts)
    }

    pub fn perpetual_fee(&self, notional_usd: f64) -> f64 {
        self.perpetual_rate * notional_usd
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategyConfig {
    pub entry_threshold: f64,
    pub exit_threshold: f64,
    pub rehedge_band: f64,
    /// Hours between model refits; 24 refits at UTC midnight.
    pub garch_refresh_hours: u32,
    pub instrument: String,
    pub rate: f64,
    pub fees: FeeModel,
    pub smile_adjust: bool,
    /// Average smile slope; calibrated from the data when absent.
    pub smile_slope: Option<f64>,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            entry_threshold: 0.05,
            exit_threshold: 0.0,
            rehedge_band: 0.02,
            garch_refresh_hours: 24,
            instrument: "BTC8000C27MAR20".into(),
            rate: RISK_FREE_RATE,
            fees: FeeModel::default(),
            smile_adjust: false,
            smile_slope: None,
        }
    }
}

impl StrategyConfig {
    pub fn new(entry_threshold: f64, exit_threshold: f64) -> Self {
        Self {
            entry_threshold,
            exit_threshold,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.exit_threshold >= 0.0 && self.entry_threshold > self.exit_threshold) {
            return Err(Error::InvalidInput(format!(
                "need entry > exit >= 0, got entry {} exit {}",
                self.entry_threshold, self.exit_threshold
            )));
        }
        if !(self.rehedge_band > 0.0) {
            return Err(Error::InvalidInput("rehedge band must be positive".into()));
        }
        if self.garch_refresh_hours == 0 || 24 % self.garch_refresh_hours != 0 {
            return Err(Error::InvalidInput(format!(
                "refresh hours must divide 24, got {}",
                self.garch_refresh_hours
            )));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        format!(
            "{}h/{:.2}/{:.2}{}",
            self.garch_refresh_hours,
            self.entry_threshold,
            self.exit_threshold,
            if self.smile_adjust { "/smile" } else { "" }
        )
    }
}

pub fn vol_spread(forecast: f64, iv: f64) -> f64 {
    forecast - iv
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// Long option, short underlying.
    LongVol,
    ShortVol,
    Flat,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::LongVol => "long-vol",
            Direction::ShortVol => "short-vol",
            Direction::Flat => "flat",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Action {
    BuyToOpen,
    SellToOpen,
    BuyToClose,
    SellToClose,
    Rehedge,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::BuyToOpen => "buy-to-open",
            Action::SellToOpen => "sell-to-open",
            Action::BuyToClose => "buy-to-close",
            Action::SellToClose => "sell-to-close",
            Action::Rehedge => "rehedge",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventReason {
    Signal,
    DeltaBand,
    /// Settled at intrinsic value at the contract's expiry.
    Expiry,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntryRecord {
    pub timestamp: DateTime<Utc>,
    pub spread: f64,
    pub premium: Cents,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub direction: Direction,
    pub option_units: i64,
    /// Signed perpetual quantity in BTC.
    pub hedge_units: f64,
    pub last_hedge_delta: f64,
    pub last_hedge_price: f64,
    pub entry: Option<EntryRecord>,
}

impl Position {
    pub fn flat() -> Self {
        Self {
            direction: Direction::Flat,
            option_units: 0,
            hedge_units: 0.0,
            last_hedge_delta: 0.0,
            last_hedge_price: 0.0,
            entry: None,
        }
    }

    pub fn is_flat(&self) -> bool {
        self.direction == Direction::Flat
    }

    pub fn net_delta(&self, option_delta: f64) -> f64 {
        self.option_units as f64 * option_delta + self.hedge_units
    }

    pub fn needs_rehedge(&self, delta: f64, band: f64) -> bool {
        !self.is_flat() && (delta - self.last_hedge_delta).abs() > band
    }

    /// Long-vol exits once the spread is at or below `-exit` and negative;
    /// short-vol mirrors this above zero.
    pub fn should_exit(&self, spread: f64, exit: f64) -> bool {
        match self.direction {
            Direction::LongVol => spread <= -exit && spread < 0.0,
            Direction::ShortVol => spread >= exit && spread > 0.0,
            Direction::Flat => false,
        }
    }
}

/// Market state at one tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fill {
    pub timestamp: DateTime<Utc>,
    pub spread: f64,
    pub iv: f64,
    pub delta: f64,
    pub premium: Cents,
    /// Underlying index price carried on the tick.
    pub index_price: f64,
    /// Price at which the perpetual hedge trades.
    pub hedge_price: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fees {
    pub option: Cents,
    pub perpetual: Cents,
    pub bid_ask: Cents,
}

impl Fees {
    pub fn total(&self) -> Cents {
        self.option + self.perpetual + self.bid_ask
    }
}

impl Add for Fees {
    type Output = Fees;
    fn add(self, o: Fees) -> Fees {
        Fees {
            option: self.option + o.option,
            perpetual: self.perpetual + o.perpetual,
            bid_ask: self.bid_ask + o.bid_ask,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeRecord {
    pub timestamp: DateTime<Utc>,
    pub trade_id: usize,
    pub action: Action,
    pub reason: EventReason,
    pub direction: Direction,
    pub spread: f64,
    pub delta: f64,
    pub option_premium: Cents,
    pub index_price: f64,
    pub hedge_price: f64,
    /// Signed option contracts traded at this event.
    pub option_traded: i64,
    /// Signed perpetual BTC traded at this event.
    pub hedge_traded: f64,
    pub hedge_units: f64,
    /// Position delta after the event.
    pub net_delta: f64,
    pub pnl_underlying: Cents,
    pub pnl_option: Cents,
    pub fees: Fees,
    pub pnl_total: Cents,
}

/// Fills in the fee breakdown from the record's fills and recomputes
/// `pnl_total`.
pub fn apply_fees(record: &TradeRecord, fees: &FeeModel) -> TradeRecord {
    let contracts = record.option_traded.unsigned_abs() as f64;
    let premium = record.option_premium.usd();
    let hedge_qty = record.hedge_traded.abs();
    let mut f = Fees {
        option: Cents::from_usd(fees.option_fee(premium, record.index_price, contracts)),
        perpetual: Cents::from_usd(fees.perpetual_fee(hedge_qty * record.hedge_price)),
        bid_ask: Cents::ZERO,
    };
    if fees.bid_ask {
        let option_cost = if record.reason == EventReason::Expiry {
            0.0
        } else {
            fees.option_half_spread * premium * contracts
        };
        let perp_cost = if hedge_qty > 0.0 { fees.perpetual_half_spread_usd } else { 0.0 };
        f.bid_ask = Cents::from_usd(option_cost + perp_cost);
    }
    let mut out = record.clone();
    out.fees = f;
    out.pnl_total = record.pnl_underlying + record.pnl_option
        - if fees.include_in_pnl { f.total() } else { Cents::ZERO };
    out
}

fn record(pos: &Position, fill: &Fill, trade_id: usize, action: Action, reason: EventReason) -> TradeRecord {
    TradeRecord {
        timestamp: fill.timestamp,
        trade_id,
        action,
        reason,
        direction: pos.direction,
        spread: fill.spread,
        delta: fill.delta,
        option_premium: fill.premium,
        index_price: fill.index_price,
        hedge_price: fill.hedge_price,
        option_traded: 0,
        hedge_traded: 0.0,
        hedge_units: pos.hedge_units,
        net_delta: pos.net_delta(fill.delta),
        pnl_underlying: Cents::ZERO,
        pnl_option: Cents::ZERO,
        fees: Fees::default(),
        pnl_total: Cents::ZERO,
    }
}

/// Opens a one-contract position hedged to zero delta.
pub fn open(direction: Direction, fill: &Fill, trade_id: usize) -> (Position, TradeRecord) {
    let units = match direction {
        Direction::LongVol => 1,
        Direction::ShortVol => -1,
        Direction::Flat => 0,
    };
    let pos = Position {
        direction,
        option_units: units,
        hedge_units: -(units as f64) * fill.delta,
        last_hedge_delta: fill.delta,
        last_hedge_price: fill.hedge_price,
        entry: Some(EntryRecord {
            timestamp: fill.timestamp,
            spread: fill.spread,
            premium: fill.premium,
        }),
    };
    let action = if units > 0 { Action::BuyToOpen } else { Action::SellToOpen };
    let mut rec = record(&pos, fill, trade_id, action, EventReason::Signal);
    rec.option_traded = units;
    rec.hedge_traded = pos.hedge_units;
    (pos, rec)
}

/// Resets the hedge to `-option_units * delta`, realizing the underlying PNL
/// of the previous hedge against the move since it was placed.
pub fn rehedge(pos: &Position, fill: &Fill, trade_id: usize) -> (Position, TradeRecord) {
    let target = -(pos.option_units as f64) * fill.delta;
    let pnl = Cents::from_usd(pos.hedge_units * (fill.hedge_price - pos.last_hedge_price));
    let next = Position {
        hedge_units: target,
        last_hedge_delta: fill.delta,
        last_hedge_price: fill.hedge_price,
        ..pos.clone()
    };
    let mut rec = record(&next, fill, trade_id, Action::Rehedge, EventReason::DeltaBand);
    rec.hedge_traded = target - pos.hedge_units;
    rec.pnl_underlying = pnl;
    rec.pnl_total = pnl;
    (next, rec)
}

/// Closes the option at the fill premium and unwinds the hedge.
pub fn close(pos: &Position, fill: &Fill, trade_id: usize, reason: EventReason) -> (Position, TradeRecord) {
    let entry_premium = pos.entry.map_or(Cents::ZERO, |e| e.premium);
    let pnl_underlying = Cents::from_usd(pos.hedge_units * (fill.hedge_price - pos.last_hedge_price));
    let pnl_option = Cents(pos.option_units * (fill.premium - entry_premium).0);
    let action = if pos.option_units > 0 {
        Action::SellToClose
    } else {
        Action::BuyToClose
    };
    let mut rec = record(pos, fill, trade_id, action, reason);
    rec.option_traded = -pos.option_units;
    rec.hedge_traded = -pos.hedge_units;
    rec.hedge_units = 0.0;
    rec.net_delta = 0.0;
    rec.pnl_underlying = pnl_underlying;
    rec.pnl_option = pnl_option;
    rec.pnl_total = pnl_underlying + pnl_option;
    (Position::flat(), rec)
}

/// Model forecasts with the instant each becomes usable. A tick uses the
/// latest forecast available strictly before it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ForecastSchedule {
    entries: Vec<(DateTime<Utc>, f64)>,
}

impl ForecastSchedule {
    pub fn new(mut entries: Vec<(DateTime<Utc>, f64)>) -> Result<Self> {
        entries.sort_by_key(|e| e.0);
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidInput("duplicate forecast availability time".into()));
        }
        if let Some(e) = entries.iter().find(|e| !e.1.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite forecast at {}", e.0)));
        }
        Ok(Self { entries })
    }

    /// Daily forecasts keyed by origin date `t`, each usable from the start
    /// of `t + 1`.
    pub fn from_daily(forecasts: &DatedValues) -> Result<Self> {
        Self::new(
            forecasts
                .iter()
                .map(|(&d, &v)| (day_start(d + chrono::Days::new(1)), v))
                .collect(),
        )
    }

    pub fn constant(from: DateTime<Utc>, value: f64) -> Self {
        Self {
            entries: vec![(from, value)],
        }
    }

    pub fn entries(&self) -> &[(DateTime<Utc>, f64)] {
        &self.entries
    }

    pub fn latest_before(&self, ts: DateTime<Utc>) -> Option<f64> {
        let i = self.entries.partition_point(|e| e.0 < ts);
        i.checked_sub(1).map(|i| self.entries[i].1)
    }
}

/// Last close known at `ts`: the close of the latest bar that has finished
/// by then.
pub fn known_close(series: &PriceSeries, ts: DateTime<Utc>) -> Option<f64> {
    series.close_at_or_before(ts - series.frequency.duration())
}

/// Multi-period average GARCH forecasts to `expiry`, refitted every
/// `refresh_hours` on all daily returns known at each refit instant. Daily
/// closes are sampled from `underlying` at 24-hour steps back from the
/// refit instant.
pub fn garch_forecast_schedule(
    underlying: &PriceSeries,
    from: DateTime<Utc>,
    to: DateTime<Utc>,
    refresh_hours: u32,
    expiry: NaiveDate,
    opts: &FitOptions,
) -> Result<ForecastSchedule> {
    if refresh_hours == 0 || 24 % refresh_hours != 0 {
        return Err(Error::InvalidInput(format!("refresh hours must divide 24, got {refresh_hours}")));
    }
    let step = Duration::hours(refresh_hours as i64);
    let mut origin = day_start(from.date_naive());
    while origin < from {
        origin += step;
    }
    let mut origins = Vec::new();
    while origin <= to {
        origins.push(origin);
        origin += step;
    }
    let maturity = day_start(expiry);
    let entries: Vec<(DateTime<Utc>, f64)> = origins
        .par_iter()
        .filter_map(|&at| {
            let returns = daily_returns_known_at(underlying, at)?;
            if returns.len() < opts.min_obs {
                return None;
            }
            let fit = fit_mle_with(ModelKind::Garch, &returns, opts)
                .map_err(|e| log::warn!("GARCH refit at {at}: {e}"))
                .ok()?;
            forecast_multi_period_average(&fit, &returns, maturity)
                .map_err(|e| log::debug!("no forecast at {at}: {e}"))
                .ok()
                .map(|f| (at, f))
        })
        .collect();
    if entries.is_empty() {
        return Err(Error::InsufficientData { needed: opts.min_obs + 1, got: 0 });
    }
    ForecastSchedule::new(entries)
}

/// Simple returns between closes sampled every 24 hours back from `at`.
/// The return ending at `at` is stamped one day earlier, as a daily bar
/// labelled by its start.
pub fn daily_returns_known_at(series: &PriceSeries, at: DateTime<Utc>) -> Option<ReturnSeries> {
    let first = series.first()?.timestamp;
    let period = series.frequency.duration();
    let mut closes = Vec::new();
    let mut t = at;
    while t - period >= first {
        closes.push((t, known_close(series, t)?));
        t -= Duration::days(1);
    }
    closes.reverse();
    if closes.len() < 2 {
        return None;
    }
    let (stamps, values): (Vec<_>, Vec<_>) = closes
        .windows(2)
        .map(|w| (w[1].0 - Duration::days(1), w[1].1 / w[0].1 - 1.0))
        .unzip();
    ReturnSeries::new(Frequency::Daily, stamps, values).ok()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrip {
    pub trade_id: usize,
    pub direction: Direction,
    pub entry_time: DateTime<Utc>,
    pub exit_time: Option<DateTime<Utc>>,
    pub entry_spread: f64,
    pub exit_spread: Option<f64>,
    pub entry_premium: Cents,
    pub exit_premium: Option<Cents>,
    pub exit_reason: Option<EventReason>,
    pub rehedges: usize,
    pub hedge_volume_btc: f64,
    pub pnl_total: Cents,
    pub pnl_underlying: Cents,
    pub pnl_option: Cents,
    pub fees: Fees,
}

impl RoundTrip {
    pub fn is_closed(&self) -> bool {
        self.exit_time.is_some()
    }
}

pub fn round_trips(ledger: &[TradeRecord]) -> Vec<RoundTrip> {
    let mut trips: Vec<RoundTrip> = Vec::new();
    for r in ledger {
        if matches!(r.action, Action::BuyToOpen | Action::SellToOpen) {
            trips.push(RoundTrip {
                trade_id: r.trade_id,
                direction: r.direction,
                entry_time: r.timestamp,
                exit_time: None,
                entry_spread: r.spread,
                exit_spread: None,
                entry_premium: r.option_premium,
                exit_premium: None,
                exit_reason: None,
                rehedges: 0,
                hedge_volume_btc: 0.0,
                pnl_total: Cents::ZERO,
                pnl_underlying: Cents::ZERO,
                pnl_option: Cents::ZERO,
                fees: Fees::default(),
            });
        }
        let Some(t) = trips.iter_mut().rev().find(|t| t.trade_id == r.trade_id) else {
            continue;
        };
        match r.action {
            Action::Rehedge => t.rehedges += 1,
            Action::BuyToClose | Action::SellToClose => {
                t.exit_time = Some(r.timestamp);
                t.exit_spread = Some(r.spread);
                t.exit_premium = Some(r.option_premium);
                t.exit_reason = Some(r.reason);
            }
            _ => {}
        }
        t.hedge_volume_btc += r.hedge_traded.abs();
        t.pnl_total += r.pnl_total;
        t.pnl_underlying += r.pnl_underlying;
        t.pnl_option += r.pnl_option;
        t.fees = t.fees + r.fees;
    }
    trips
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceReport {
    pub trades: usize,
    pub wins: usize,
    pub losses: usize,
    pub win_rate: f64,
    /// Gross wins over gross losses; `None` without losing trades.
    pub win_loss_ratio: Option<f64>,
    pub total_pnl: Cents,
    pub pnl_per_trade: f64,
    pub option_fees: Cents,
    pub perpetual_fees: Cents,
    pub bid_ask_costs: Cents,
    pub hedge_volume_btc: f64,
}

impl PerformanceReport {
    pub fn total_costs(&self) -> Cents {
        self.option_fees + self.perpetual_fees + self.bid_ask_costs
    }
}

/// Aggregates closed round trips. A trade wins when its `pnl_total` is positive.
pub fn performance(ledger: &[TradeRecord]) -> PerformanceReport {
    let trips: Vec<RoundTrip> = round_trips(ledger).into_iter().filter(RoundTrip::is_closed).collect();
    let trades = trips.len();
    let wins: Vec<Cents> = trips.iter().map(|t| t.pnl_total).filter(|p| p.0 > 0).collect();
    let losses: Vec<Cents> = trips.iter().map(|t| t.pnl_total).filter(|p| p.0 < 0).collect();
    let gross_win: Cents = wins.iter().copied().sum();
    let gross_loss: Cents = losses.iter().copied().sum();
    let total_pnl: Cents = trips.iter().map(|t| t.pnl_total).sum();
    let fees = trips.iter().fold(Fees::default(), |a, t| a + t.fees);
    PerformanceReport {
        trades,
        wins: wins.len(),
        losses: losses.len(),
        win_rate: if trades > 0 { wins.len() as f64 / trades as f64 } else { 0.0 },
        win_loss_ratio: (gross_loss.0 != 0).then(|| gross_win.0 as f64 / gross_loss.abs().0 as f64),
        total_pnl,
        pnl_per_trade: if trades > 0 { total_pnl.usd() / trades as f64 } else { 0.0 },
        option_fees: fees.option,
        perpetual_fees: fees.perpetual,
        bid_ask_costs: fees.bid_ask,
        hedge_volume_btc: trips.iter().map(|t| t.hedge_volume_btc).sum(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestResult {
    pub records: Vec<TradeRecord>,
    pub report: PerformanceReport,
    /// Cumulative `pnl_total` after each event.
    pub curve: Vec<(DateTime<Utc>, Cents)>,
    pub skipped_ticks: usize,
}

fn same_contract(a: &str, b: &str) -> bool {
    match (a.parse::<InstrumentName>(), b.parse::<InstrumentName>()) {
        (Ok(x), Ok(y)) => x == y,
        _ => a.eq_ignore_ascii_case(b),
    }
}

/// Runs the strategy over the ticks of `config.instrument`.
///
/// Entries need a crossing: long-vol when the previous spread was at or
/// below `+entry` and the current one is above it, short-vol mirrored at
/// `-entry`. A position closed on a tick may reopen on the same tick. Any
/// position still open after the last tick settles at intrinsic value at
/// expiry, priced off the last underlying close known then.
pub fn run_backtest(
    config: &StrategyConfig,
    ticks: &[OptionTrade],
    underlying: &PriceSeries,
    forecasts: &ForecastSchedule,
) -> Result<BacktestResult> {
    config.validate()?;
    if ticks.windows(2).any(|w| w[1].timestamp < w[0].timestamp) {
        return Err(Error::InvalidInput("option ticks must be sorted by time".into()));
    }
    let ticks: Vec<&OptionTrade> = ticks
        .iter()
        .filter(|t| same_contract(&t.instrument, &config.instrument))
        .collect();
    let Some(first) = ticks.first() else {
        return Err(Error::InvalidInput(format!("no ticks for {}", config.instrument)));
    };
    let (strike, expiry, kind) = (first.strike, first.expiry, first.kind);
    let expiry_at = expiry_instant(expiry);

    let mut records = Vec::new();
    let mut pos = Position::flat();
    let mut prev_spread: Option<f64> = None;
    let mut last_fill: Option<Fill> = None;
    let mut trade_id = 0;
    let mut skipped = 0;
    let fee = |r: TradeRecord| apply_fees(&r, &config.fees);

    for tick in ticks {
        if tick.timestamp >= expiry_at {
            break;
        }
        let Some(forecast) = forecasts.latest_before(tick.timestamp) else {
            log::warn!("tick at {} precedes the first forecast; skipped", tick.timestamp);
            skipped += 1;
            continue;
        };
        let inputs = tick.bs_inputs(config.rate);
        let iv = match crate::options::implied_vol(tick.premium_usd, &inputs) {
            Ok(v) => v,
            Err(e) => {
                log::debug!("tick at {}: {e}", tick.timestamp);
                skipped += 1;
                continue;
            }
        };
        let fill = Fill {
            timestamp: tick.timestamp,
            spread: vol_spread(forecast, iv),
            iv,
            delta: bs_delta(&inputs.with_vol(iv)),
            premium: Cents::from_usd(tick.premium_usd),
            index_price: tick.underlying_price,
            hedge_price: known_close(underlying, tick.timestamp).unwrap_or(tick.underlying_price),
        };

        if !pos.is_flat() {
            if pos.should_exit(fill.spread, config.exit_threshold) {
                let (p, r) = close(&pos, &fill, trade_id, EventReason::Signal);
                pos = p;
                records.push(fee(r));
            } else if pos.needs_rehedge(fill.delta, config.rehedge_band) {
                let (p, r) = rehedge(&pos, &fill, trade_id);
                pos = p;
                records.push(fee(r));
            }
        }
        if pos.is_flat() {
            if let Some(prev) = prev_spread {
                let e = config.entry_threshold;
                let direction = if prev <= e && fill.spread > e {
                    Some(Direction::LongVol)
                } else if prev >= -e && fill.spread < -e {
                    Some(Direction::ShortVol)
                } else {
                    None
                };
                if let Some(d) = direction {
                    trade_id += 1;
                    let (p, r) = open(d, &fill, trade_id);
                    pos = p;
                    records.push(fee(r));
                }
            }
        }
        prev_spread = Some(fill.spread);
        last_fill = Some(fill);
    }

    if let (false, Some(last)) = (pos.is_flat(), last_fill) {
        let s = known_close(underlying, expiry_at).unwrap_or(last.index_price);
        let settle = BsInputs::new(kind, s, strike, 0.0, 0.0);
        let fill = Fill {
            timestamp: expiry_at,
            spread: last.spread,
            iv: last.iv,
            delta: bs_delta(&settle),
            premium: Cents::from_usd(crate::options::bs_price(&settle)),
            index_price: s,
            hedge_price: s,
        };
        let (_, r) = close(&pos, &fill, trade_id, EventReason::Expiry);
        records.push(fee(r));
    }

    let mut cum = Cents::ZERO;
    let curve = records
        .iter()
        .map(|r| {
            cum += r.pnl_total;
            (r.timestamp, cum)
        })
        .collect();
    Ok(BacktestResult {
        report: performance(&records),
        records,
        curve,
        skipped_ticks: skipped,
    })
}

/// Independent runs for several configurations sharing one forecast schedule.
pub fn run_grid(
    configs: &[StrategyConfig],
    ticks: &[OptionTrade],
    underlying: &PriceSeries,
    forecasts: &ForecastSchedule,
) -> Vec<Result<BacktestResult>> {
    configs
        .par_iter()
        .map(|c| run_backtest(c, ticks, underlying, forecasts))
        .collect()
}

fn fmt_time(t: DateTime<Utc>) -> String {
    t.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

pub fn write_ledger_csv<W: std::io::Write>(records: &[TradeRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "timestamp",
        "trade_id",
        "action",
        "reason",
        "direction",
        "spread",
        "delta",
        "option_premium",
        "index_price",
        "hedge_price",
        "option_traded",
        "hedge_traded",
        "hedge_units",
        "pnl_total",
        "pnl_underlying",
        "pnl_option",
        "option_fee",
        "perpetual_fee",
        "bid_ask",
    ])?;
    for r in records {
        w.write_record([
            fmt_time(r.timestamp),
            r.trade_id.to_string(),
            r.action.to_string(),
            format!("{:?}", r.reason).to_lowercase(),
            r.direction.to_string(),
            format!("{:.6}", r.spread),
            format!("{:.6}", r.delta),
            r.option_premium.to_string(),
            format!("{:.2}", r.index_price),
            format!("{:.2}", r.hedge_price),
            r.option_traded.to_string(),
            format!("{:.6}", r.hedge_traded),
            format!("{:.6}", r.hedge_units),
            r.pnl_total.to_string(),
            r.pnl_underlying.to_string(),
            r.pnl_option.to_string(),
            r.fees.option.to_string(),
            r.fees.perpetual.to_string(),
            r.fees.bid_ask.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<ledger>", e))?;
    Ok(())
}

/// One row per round trip: entry and exit spreads, direction, premiums and
/// PNL split.
pub fn write_round_trips_csv<W: std::io::Write>(trips: &[RoundTrip], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "trade_id",
        "entry_time",
        "exit_time",
        "direction",
        "entry_spread",
        "exit_spread",
        "entry_premium",
        "exit_premium",
        "rehedges",
        "pnl_total",
        "pnl_underlying",
        "pnl_option",
        "fees",
    ])?;
    let opt = |o: Option<String>| o.unwrap_or_default();
    for t in trips {
        w.write_record([
            t.trade_id.to_string(),
            fmt_time(t.entry_time),
            opt(t.exit_time.map(fmt_time)),
            t.direction.to_string(),
            format!("{:.4}", t.entry_spread),
            opt(t.exit_spread.map(|s| format!("{s:.4}"))),
            t.entry_premium.to_string(),
            opt(t.exit_premium.map(|p| p.to_string())),
            t.rehedges.to_string(),
            t.pnl_total.to_string(),
            t.pnl_underlying.to_string(),
            t.pnl_option.to_string(),
            t.fees.total().to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<round trips>", e))?;
    Ok(())
}

pub fn write_performance_csv<W: std::io::Write>(rows: &[(StrategyConfig, PerformanceReport)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "refresh_hours",
        "entry",
        "exit",
        "smile",
        "trades",
        "win_loss_ratio",
        "win_rate",
        "total_pnl",
        "pnl_per_trade",
        "option_fees",
        "perpetual_fees",
        "bid_ask",
        "hedge_volume_btc",
    ])?;
    for (c, p) in rows {
        w.write_record([
            c.garch_refresh_hours.to_string(),
            format!("{:.2}", c.entry_threshold),
            format!("{:.2}", c.exit_threshold),
            c.smile_adjust.to_string(),
            p.trades.to_string(),
            p.win_loss_ratio.map_or("n/a".into(), |r| format!("{r:.2}")),
            format!("{:.4}", p.win_rate),
            p.total_pnl.to_string(),
            format!("{:.2}", p.pnl_per_trade),
            p.option_fees.to_string(),
            p.perpetual_fees.to_string(),
            p.bid_ask_costs.to_string(),
            format!("{:.4}", p.hedge_volume_btc),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<performance>", e))?;
    Ok(())
}

pub fn write_pnl_curve_csv<W: std::io::Write>(curve: &[(DateTime<Utc>, Cents)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["timestamp", "cumulative_pnl_usd"])?;
    for (t, c) in curve {
        w.write_record([fmt_time(*t), c.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<pnl curve>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::parse_timestamp;
    use crate::options::{bs_price, OptionKind};

    fn ts(s: &str) -> DateTime<Utc> {
        parse_timestamp(s).unwrap()
    }

    #[test]
    fn spread_examples() {
        assert!((vol_spread(0.70, 0.65) - 0.05).abs() < 1e-15);
        assert!((vol_spread(0.60, 0.72) + 0.12).abs() < 1e-15);
        assert_eq!(vol_spread(0.7, 0.7), 0.0);
    }

    #[test]
    fn fee_examples() {
        let f = FeeModel::default();
        assert_eq!(Cents::from_usd(f.option_fee(2000.0, 8000.0, 1.0)), Cents(320));
        assert_eq!(Cents::from_usd(f.option_fee(10.0, 8000.0, 1.0)), Cents(125));
        assert_eq!(Cents::from_usd(f.perpetual_fee(8000.0)), Cents(600));
    }

    #[test]
    fn cents_display() {
        assert_eq!(Cents(225_100).to_string(), "2251.00");
        assert_eq!(Cents(-5).to_string(), "-0.05");
        assert_eq!(Cents::from_usd(0.125 * 10.0), Cents(125));
    }

    fn fill(delta: f64, price: f64, premium: f64, spread: f64) -> Fill {
        Fill {
            timestamp: ts("2020-01-10T00:00:00Z"),
            spread,
            iv: 0.7,
            delta,
            premium: Cents::from_usd(premium),
            index_price: price,
            hedge_price: price,
        }
    }

    #[test]
    fn rehedge_sells_the_delta_increase() {
        let (pos, _) = open(Direction::LongVol, &fill(0.50, 8000.0, 500.0, 0.06), 1);
        assert!(pos.needs_rehedge(0.53, 0.02));
        assert!(!pos.needs_rehedge(0.51, 0.02));
        let (next, rec) = rehedge(&pos, &fill(0.53, 8000.0, 520.0, 0.06), 1);
        assert!((rec.hedge_traded + 0.03).abs() < 1e-12);
        assert_eq!(rec.pnl_underlying, Cents::ZERO);
        assert_eq!(next.net_delta(0.53), 0.0);
    }

    #[test]
    fn exit_conventions() {
        let (long, _) = open(Direction::LongVol, &fill(0.5, 8000.0, 500.0, 0.06), 1);
        assert!(!long.should_exit(0.0, 0.0));
        assert!(long.should_exit(-0.01, 0.0));
        assert!(!long.should_exit(-0.01, 0.05));
        assert!(long.should_exit(-0.06, 0.05));
        let (short, _) = open(Direction::ShortVol, &fill(0.5, 8000.0, 500.0, -0.06), 1);
        assert!(short.should_exit(0.01, 0.0));
        assert!(!short.should_exit(-0.01, 0.0));
    }

    #[test]
    fn performance_examples() {
        let mk = |id: usize, pnl: i64| {
            let (pos, open_rec) = open(Direction::LongVol, &fill(0.5, 8000.0, 500.0, 0.06), id);
            let (_, mut c) = close(&pos, &fill(0.5, 8000.0, 500.0, -0.01), id, EventReason::Signal);
            c.pnl_total = Cents(pnl);
            vec![open_rec, c]
        };
        let one = performance(&mk(1, 10_000));
        assert_eq!((one.trades, one.win_rate, one.win_loss_ratio), (1, 1.0, None));
        assert_eq!(one.total_pnl, Cents(10_000));
        let two: Vec<TradeRecord> = mk(1, 30_000).into_iter().chain(mk(2, -10_000)).collect();
        let p = performance(&two);
        assert_eq!((p.win_rate, p.win_loss_ratio), (0.5, Some(3.0)));
        assert_eq!(p.total_pnl, Cents(20_000));
        assert_eq!(performance(&[]).trades, 0);
    }

    fn contract_tick(at: &str, spot: f64, iv: f64) -> OptionTrade {
        let expiry = NaiveDate::from_ymd_opt(2020, 3, 27).unwrap();
        let mut t = OptionTrade {
            timestamp: ts(at),
            instrument: "BTC8000C27MAR20".into(),
            strike: 8000.0,
            expiry,
            kind: OptionKind::Call,
            premium_usd: 0.0,
            volume_usd: 100.0,
            underlying_price: spot,
        };
        t.premium_usd = bs_price(&t.bs_inputs(RISK_FREE_RATE).with_vol(iv));
        t
    }

    #[test]
    fn no_crossing_no_trades() {
        let ticks: Vec<OptionTrade> = (0..20)
            .map(|i| contract_tick(&format!("2020-01-10T{:02}:00:00Z", i), 8000.0, 0.68))
            .collect();
        let under = PriceSeries::from_closes("perp", Frequency::Minute, ts("2020-01-01"), &[8000.0]).unwrap();
        let sched = ForecastSchedule::constant(ts("2020-01-01"), 0.70);
        let r = run_backtest(&StrategyConfig::default(), &ticks, &under, &sched).unwrap();
        assert!(r.records.is_empty());
        assert_eq!(r.report.total_pnl, Cents::ZERO);
    }

    #[test]
    fn schedule_uses_strictly_earlier_forecast() {
        let mut m = DatedValues::new();
        m.insert(NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(), 0.5);
        m.insert(NaiveDate::from_ymd_opt(2020, 1, 2).unwrap(), 0.6);
        let s = ForecastSchedule::from_daily(&m).unwrap();
        assert_eq!(s.latest_before(ts("2020-01-02T00:00:00Z")), None);
        assert_eq!(s.latest_before(ts("2020-01-02T00:00:01Z")), Some(0.5));
        assert_eq!(s.latest_before(ts("2020-01-03T00:00:00Z")), Some(0.5));
        assert_eq!(s.latest_before(ts("2020-01-05T00:00:00Z")), Some(0.6));
    }

    #[test]
    fn config_validation() {
        assert!(StrategyConfig::new(0.05, 0.0).validate().is_ok());
        assert!(StrategyConfig::new(0.05, 0.05).validate().is_err());
        assert!(StrategyConfig::new(0.05, -0.01).validate().is_err());
        let mut c = StrategyConfig::default();
        c.garch_refresh_hours = 7;
        assert!(c.validate().is_err());
    }

    #[test]
    fn daily_returns_known_at_uses_finished_bars() {
        let closes: Vec<f64> = (0..5).map(|i| 100.0 + i as f64).collect();
        let s = PriceSeries::from_closes("x", Frequency::Daily, ts("2020-01-01"), &closes).unwrap();
        let r = daily_returns_known_at(&s, ts("2020-01-04T00:00:00Z")).unwrap();
        // bars for Jan 1..3 are complete by Jan 4 00:00
        assert_eq!(r.len(), 2);
        assert!((r.values()[1] - (102.0 / 101.0 - 1.0)).abs() < 1e-15);
        assert_eq!(r.last_timestamp(), Some(ts("2020-01-03")));
    }
}
