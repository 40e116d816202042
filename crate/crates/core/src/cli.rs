//! Batch command-line front end.
//!
//! Every command reads a [`RunConfig`] (TOML, all fields optional), applies
//! command-line overrides and writes CSV/JSON files into the output
//! directory. The returned list names every file written.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::backtest::{
    garch_forecast_schedule, round_trips, run_grid, write_ledger_csv, write_performance_csv, write_pnl_curve_csv,
    write_round_trips_csv, ForecastSchedule, StrategyConfig,
};
use crate::error::{Error, Result};
use crate::forecast_eval::{
    daily_realized_vols, ols_predict, shift_to_origin, walk_forward_with_horizon, write_combination_csv,
    write_evaluation_csv, DatedValues, EvaluationRow, LookbackSpec, WalkForwardOptions,
};
use crate::market_data::{
    day_start, descriptive_stats, load_price_csv, resample, simple_returns, write_price_csv, DescriptiveStats,
    Frequency, PriceSeries, ReturnSeries,
};
use crate::models::{
    fit_mle_with, simulate, write_fits_csv, EmaConfig, FitOptions, ForecastSeries, GarchParams, Horizon, ModelKind,
};
use crate::options::{
    atm_iv_series, daily_atm_iv, exchange_summary, instrument_name, load_option_trades, InstrumentName, OptionTrade,
};
use crate::smile::{adjust_schedule, calibrate, default_calibration_dates, SmileObservation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Underlying index prices; intraday data enables realized volatility.
    pub spot: Option<PathBuf>,
    pub spot_frequency: Frequency,
    /// Option trade ticks.
    pub options: Option<PathBuf>,
    /// Hedge instrument prices; defaults to the spot series.
    pub perpetual: Option<PathBuf>,
    pub perpetual_frequency: Frequency,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            spot: None,
            spot_frequency: Frequency::Minute,
            options: None,
            perpetual: None,
            perpetual_frequency: Frequency::Minute,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub model: ModelKind,
    pub a0: f64,
    pub alpha: f64,
    pub beta: f64,
    pub theta: f64,
    pub n: usize,
    pub initial_price: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Garch,
            a0: 1e-5,
            alpha: 0.10,
            beta: 0.85,
            theta: 0.0,
            n: 2000,
            initial_price: 10_000.0,
        }
    }
}

impl SimulateConfig {
    pub fn params(&self) -> GarchParams {
        match self.model {
            ModelKind::Arch => GarchParams::arch(self.a0, self.alpha),
            ModelKind::Egarch => GarchParams::egarch(self.a0, self.alpha, self.theta, self.beta),
            _ => GarchParams::garch(self.a0, self.alpha, self.beta),
        }
    }
}

/// One backtest configuration in a parameter sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridPoint {
    pub refresh_hours: u32,
    pub entry: f64,
    pub exit: f64,
    #[serde(default)]
    pub smile: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataConfig,
    pub models: Vec<ModelKind>,
    pub lookbacks: Vec<LookbackSpec>,
    /// First forecast origin; defaults to the first day with enough history.
    pub start: Option<NaiveDate>,
    /// Last day of data used.
    pub end: Option<NaiveDate>,
    /// Option expiry for implied volatility, smile and backtest.
    pub expiry: NaiveDate,
    pub strike_interval: f64,
    pub ema: EmaConfig,
    pub strategy: StrategyConfig,
    /// Sweep for `backtest`; empty runs `strategy` alone.
    pub grid: Vec<GridPoint>,
    pub smile_dates: Vec<NaiveDate>,
    pub simulate: SimulateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            out: PathBuf::from("out"),
            data: DataConfig::default(),
            models: ModelKind::ALL.to_vec(),
            lookbacks: vec![LookbackSpec::Whole],
            start: None,
            end: None,
            expiry: NaiveDate::from_ymd_opt(2020, 3, 27).expect("valid date"),
            strike_interval: 1000.0,
            ema: EmaConfig::default(),
            strategy: StrategyConfig::default(),
            grid: Vec::new(),
            smile_dates: default_calibration_dates(),
            simulate: SimulateConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for p in [&self.data.spot, &self.data.options, &self.data.perpetual].into_iter().flatten() {
            if !p.exists() {
                return Err(Error::Config(format!("{} does not exist", p.display())));
            }
        }
        if let (Some(s), Some(e)) = (self.start, self.end) {
            if s > e {
                return Err(Error::Config(format!("start {s} is after end {e}")));
            }
        }
        if !(self.strike_interval > 0.0) {
            return Err(Error::Config("strike_interval must be positive".into()));
        }
        self.strategy.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}

#[derive(Debug, Parser)]
#[command(name = "volrace", version, about = "BTC volatility forecasting, implied volatility and volatility-spread backtests")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// RNG seed for simulation.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Spot price CSV (timestamp,close[,volume]).
    #[arg(long, global = true)]
    pub spot: Option<PathBuf>,
    /// Bar frequency of the spot CSV (1min, 1h, 3h, 6h, 12h, 1d).
    #[arg(long, global = true)]
    pub spot_frequency: Option<Frequency>,
    /// Option tick CSV.
    #[arg(long, global = true)]
    pub options: Option<PathBuf>,
    /// Hedge instrument price CSV at the perpetual frequency.
    #[arg(long, global = true)]
    pub perpetual: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Descriptive statistics of returns at several frequencies.
    Stats,
    /// In-sample maximum-likelihood fits.
    Fit {
        #[arg(long = "model")]
        models: Vec<ModelKind>,
    },
    /// Walk-forward forecasts per model and look-back.
    Forecast {
        #[arg(long = "model")]
        models: Vec<ModelKind>,
        #[arg(long = "lookback")]
        lookbacks: Vec<LookbackSpec>,
        /// Average forecast to the configured expiry instead of next day.
        #[arg(long)]
        multi_day: bool,
    },
    /// Regress next-day realized volatility on forecasts and implied volatility.
    Evaluate {
        #[arg(long = "model")]
        models: Vec<ModelKind>,
        #[arg(long = "lookback")]
        lookbacks: Vec<LookbackSpec>,
    },
    /// Daily at-the-money implied volatility and quarterly exchange summary.
    Iv {
        #[arg(long)]
        expiry: Option<NaiveDate>,
    },
    /// Smile slope calibration.
    Smile,
    /// Volatility-spread strategy backtest.
    Backtest {
        #[arg(long)]
        entry: Option<f64>,
        #[arg(long)]
        exit: Option<f64>,
        #[arg(long)]
        refresh: Option<u32>,
        #[arg(long)]
        smile: bool,
        /// Deduct fees and bid-ask costs from PNL.
        #[arg(long)]
        net_fees: bool,
        #[arg(long)]
        bid_ask: bool,
    },
    /// Simulate returns and prices from a model.
    Simulate {
        #[arg(long)]
        model: Option<ModelKind>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        a0: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        theta: Option<f64>,
    },
}

/// Config file (if any) with command-line overrides applied.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(p) = &cli.spot {
        cfg.data.spot = Some(p.clone());
    }
    if let Some(f) = cli.spot_frequency {
        cfg.data.spot_frequency = f;
    }
    if let Some(p) = &cli.options {
        cfg.data.options = Some(p.clone());
    }
    if let Some(p) = &cli.perpetual {
        cfg.data.perpetual = Some(p.clone());
    }
    match &cli.command {
        Command::Fit { models } | Command::Evaluate { models, .. } | Command::Forecast { models, .. }
            if !models.is_empty() =>
        {
            cfg.models = models.clone();
        }
        _ => {}
    }
    match &cli.command {
        Command::Evaluate { lookbacks, .. } | Command::Forecast { lookbacks, .. } if !lookbacks.is_empty() => {
            cfg.lookbacks = lookbacks.clone();
        }
        Command::Iv { expiry: Some(e) } => cfg.expiry = *e,
        Command::Backtest {
            entry,
            exit,
            refresh,
            smile,
            net_fees,
            bid_ask,
        } => {
            let s = &mut cfg.strategy;
            s.entry_threshold = entry.unwrap_or(s.entry_threshold);
            s.exit_threshold = exit.unwrap_or(s.exit_threshold);
            s.garch_refresh_hours = refresh.unwrap_or(s.garch_refresh_hours);
            s.smile_adjust |= smile;
            s.fees.include_in_pnl |= net_fees;
            s.fees.bid_ask |= bid_ask;
            if entry.is_some() || exit.is_some() || refresh.is_some() || *smile {
                cfg.grid.clear();
            }
        }
        Command::Simulate {
            model,
            n,
            a0,
            alpha,
            beta,
            theta,
        } => {
            let s = &mut cfg.simulate;
            s.model = model.unwrap_or(s.model);
            s.n = n.unwrap_or(s.n);
            s.a0 = a0.unwrap_or(s.a0);
            s.alpha = alpha.unwrap_or(s.alpha);
            s.beta = beta.unwrap_or(s.beta);
            s.theta = theta.unwrap_or(s.theta);
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    let cfg = stage("configuration", resolve_config(cli))?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    match cli.command {
        Command::Stats => cmd_stats(&cfg),
        Command::Fit { .. } => cmd_fit(&cfg),
        Command::Forecast { multi_day, .. } => cmd_forecast(&cfg, multi_day),
        Command::Evaluate { .. } => cmd_evaluate(&cfg),
        Command::Iv { .. } => cmd_iv(&cfg),
        Command::Smile => cmd_smile(&cfg),
        Command::Backtest { .. } => cmd_backtest(&cfg),
        Command::Simulate { .. } => cmd_simulate(&cfg),
    }
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: name.to_string(),
        source: Box::new(e),
    })
}

struct Outputs<'a> {
    dir: &'a Path,
    written: Vec<PathBuf>,
}

impl<'a> Outputs<'a> {
    fn new(dir: &'a Path) -> Self {
        Self { dir, written: Vec::new() }
    }

    fn write(&mut self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        let path = self.dir.join(name);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        stage(&format!("writing {name}"), f(&mut w))?;
        w.flush().map_err(|e| Error::io(&path, e))?;
        self.written.push(path);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w).map_err(|e| Error::io(name, e))
        })
    }
}

fn load_spot(cfg: &RunConfig) -> Result<PriceSeries> {
    let path = cfg
        .data
        .spot
        .as_ref()
        .ok_or_else(|| Error::Config("no spot price file (set data.spot or --spot)".into()))?;
    let s = stage("loading spot prices", load_price_csv(path, cfg.data.spot_frequency))?;
    Ok(match cfg.end {
        Some(end) => s.truncated_before(day_start(end + chrono::Days::new(1))),
        None => s,
    })
}

fn load_trades(cfg: &RunConfig) -> Result<Vec<OptionTrade>> {
    let path = cfg
        .data
        .options
        .as_ref()
        .ok_or_else(|| Error::Config("no option tick file (set data.options or --options)".into()))?;
    stage("loading option ticks", load_option_trades(path))
}

fn daily_returns(spot: &PriceSeries) -> Result<ReturnSeries> {
    stage("building daily returns", resample(spot, Frequency::Daily).and_then(|d| simple_returns(&d)))
}

fn default_start(daily: &ReturnSeries, opts: &FitOptions) -> Result<NaiveDate> {
    daily
        .timestamps()
        .get(opts.min_obs)
        .map(|t| t.date_naive())
        .ok_or(Error::InsufficientData {
            needed: opts.min_obs + 1,
            got: daily.len(),
        })
}

#[derive(Debug, Serialize)]
struct StatsRow {
    frequency: Frequency,
    #[serde(flatten)]
    stats: DescriptiveStats,
}

pub fn cmd_stats(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let spot = load_spot(cfg)?;
    let mut rows = Vec::new();
    for f in [
        Frequency::Daily,
        Frequency::Hour12,
        Frequency::Hour6,
        Frequency::Hour3,
        Frequency::Hour1,
    ] {
        if f < spot.frequency {
            continue;
        }
        let stats = stage(
            &format!("{f} statistics"),
            resample(&spot, f).and_then(|s| simple_returns(&s)).and_then(|r| descriptive_stats(&r)),
        )?;
        rows.push(StatsRow { frequency: f, stats });
    }
    let mut out = Outputs::new(&cfg.out);
    out.write("stats.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["frequency", "mean", "annualized_vol", "skewness", "excess_kurtosis", "n"])?;
        for r in &rows {
            c.write_record([
                r.frequency.to_string(),
                format!("{:.8}", r.stats.mean),
                format!("{:.6}", r.stats.annualized_vol),
                format!("{:.4}", r.stats.skewness),
                format!("{:.4}", r.stats.excess_kurtosis),
                r.stats.n.to_string(),
            ])?;
        }
        c.flush().map_err(|e| Error::io("stats.csv", e))
    })?;
    out.json("stats.json", &rows)?;
    Ok(out.written)
}

pub fn cmd_fit(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let daily = daily_returns(&load_spot(cfg)?)?;
    let mut fits = Vec::new();
    for &kind in cfg.models.iter().filter(|k| k.is_parametric()) {
        fits.push(stage(&format!("{kind} fit"), fit_mle_with(kind, &daily, &FitOptions::default()))?);
    }
    if fits.is_empty() {
        return Err(Error::Config("no parametric model selected".into()));
    }
    let mut out = Outputs::new(&cfg.out);
    out.write("fits.csv", |w| write_fits_csv(&fits, w))?;
    out.json("fits.json", &fits)?;
    Ok(out.written)
}

fn walk_forward_opts(cfg: &RunConfig) -> WalkForwardOptions {
    WalkForwardOptions {
        fit: FitOptions::default(),
        ema: cfg.ema,
    }
}

fn forecast_grid(cfg: &RunConfig, daily: &ReturnSeries, horizon: Horizon) -> Result<Vec<ForecastSeries>> {
    let opts = walk_forward_opts(cfg);
    let start = match cfg.start {
        Some(s) => s,
        None => default_start(daily, &opts.fit)?,
    };
    let mut all = Vec::new();
    for &kind in &cfg.models {
        for &lb in &cfg.lookbacks {
            if let Horizon::MultiDayAverage { .. } = horizon {
                if !kind.is_parametric() {
                    continue;
                }
            }
            match walk_forward_with_horizon(kind, lb, daily, start, horizon, &opts) {
                Ok(s) => all.push(s),
                Err(e) => log::warn!("{kind} {lb}: {e}"),
            }
        }
    }
    if all.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    Ok(all)
}

fn file_stem(s: &ForecastSeries) -> String {
    format!("forecast_{}_{}", s.kind.as_str().to_lowercase(), s.lookback)
}

pub fn cmd_forecast(cfg: &RunConfig, multi_day: bool) -> Result<Vec<PathBuf>> {
    let daily = daily_returns(&load_spot(cfg)?)?;
    let horizon = if multi_day {
        Horizon::MultiDayAverage { maturity: cfg.expiry }
    } else {
        Horizon::SingleDay
    };
    let series = stage("walk-forward forecasts", forecast_grid(cfg, &daily, horizon))?;
    let mut out = Outputs::new(&cfg.out);
    for s in &series {
        out.write(&format!("{}.csv", file_stem(s)), |w| s.write_csv(w))?;
    }
    Ok(out.written)
}

/// Wide per-day table: one column per named series, blank where missing.
fn write_wide_csv<W: Write>(columns: &[(String, &DatedValues)], w: W) -> Result<()> {
    let dates: std::collections::BTreeSet<NaiveDate> = columns.iter().flat_map(|(_, s)| s.keys().copied()).collect();
    let mut c = csv::Writer::from_writer(w);
    c.write_record(std::iter::once("date".to_string()).chain(columns.iter().map(|(n, _)| n.clone())))?;
    for d in dates {
        let mut rec = vec![d.to_string()];
        rec.extend(columns.iter().map(|(_, s)| s.get(&d).map(|v| format!("{v:.8}")).unwrap_or_default()));
        c.write_record(&rec)?;
    }
    c.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let spot = load_spot(cfg)?;
    if spot.frequency >= Frequency::Daily {
        return Err(Error::Config("evaluate needs intraday spot prices for realized volatility".into()));
    }
    let daily = daily_returns(&spot)?;
    let target = shift_to_origin(&daily_realized_vols(&spot));
    let series = stage("walk-forward forecasts", forecast_grid(cfg, &daily, Horizon::SingleDay))?;
    let dated: Vec<(String, DatedValues)> = series.iter().map(|s| (s.name(), s.to_dated())).collect();

    let mut rows = Vec::new();
    for (s, (_, d)) in series.iter().zip(&dated) {
        match ols_predict(&target, &[(s.kind.as_str(), d)]) {
            Ok(result) => rows.push(EvaluationRow {
                model: s.kind.to_string(),
                lookback: s.lookback.to_string(),
                result,
            }),
            Err(e) => log::warn!("{}: {e}", s.name()),
        }
    }

    let iv = match &cfg.data.options {
        Some(_) => {
            let trades = load_trades(cfg)?;
            Some(atm_iv_series(&daily_atm_iv(&trades, &spot, cfg.expiry, cfg.strike_interval, cfg.strategy.rate)))
        }
        None => None,
    };
    let mut combos = Vec::new();
    let mut combo_columns = vec!["IV"];
    if let Some(iv) = &iv {
        let first_lb = cfg.lookbacks.first().copied().unwrap_or(LookbackSpec::Whole);
        let models: Vec<(&str, &DatedValues)> = series
            .iter()
            .zip(&dated)
            .filter(|(s, _)| s.lookback == first_lb && s.kind.is_parametric())
            .map(|(s, (_, d))| (s.kind.as_str(), d))
            .collect();
        combo_columns.extend(models.iter().map(|m| m.0));
        let mut sets: Vec<Vec<(&str, &DatedValues)>> = vec![vec![("IV", iv)]];
        sets.extend(models.iter().map(|m| vec![("IV", iv), *m]));
        if models.len() > 1 {
            sets.push(std::iter::once(("IV", iv)).chain(models.iter().copied()).collect());
        }
        for set in sets {
            let label = set.iter().map(|(n, _)| *n).collect::<Vec<_>>().join("+");
            match ols_predict(&target, &set) {
                Ok(result) => combos.push(EvaluationRow {
                    model: label,
                    lookback: first_lb.to_string(),
                    result,
                }),
                Err(e) => log::warn!("{label}: {e}"),
            }
        }
    }

    let mut out = Outputs::new(&cfg.out);
    out.write("evaluation.csv", |w| write_evaluation_csv(&rows, w))?;
    out.json("evaluation.json", &rows)?;
    if iv.is_some() {
        out.write("combinations.csv", |w| write_combination_csv(&combos, &combo_columns, w))?;
    }
    let mut columns: Vec<(String, &DatedValues)> = vec![("realized_next_day".into(), &target)];
    if let Some(iv) = &iv {
        columns.push(("IV".into(), iv));
    }
    columns.extend(dated.iter().map(|(n, d)| (n.clone(), d)));
    out.write("forecast_vs_realized.csv", |w| write_wide_csv(&columns, w))?;
    Ok(out.written)
}

pub fn cmd_iv(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let spot = load_spot(cfg)?;
    let trades = load_trades(cfg)?;
    let rows = daily_atm_iv(&trades, &spot, cfg.expiry, cfg.strike_interval, cfg.strategy.rate);
    let summary = exchange_summary(&trades);
    let mut out = Outputs::new(&cfg.out);
    out.write("atm_iv.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["date", "vwap", "strike", "iv", "trades"])?;
        for r in &rows {
            c.write_record([
                r.date.to_string(),
                format!("{:.2}", r.vwap),
                format!("{:.0}", r.strike),
                format!("{:.6}", r.iv),
                r.trades.to_string(),
            ])?;
        }
        c.flush().map_err(|e| Error::io("atm_iv.csv", e))
    })?;
    out.write("exchange_summary.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["quarter", "contracts", "trades", "volume_usd"])?;
        for q in &summary {
            c.write_record([
                q.quarter.to_string(),
                q.contracts.to_string(),
                q.trades.to_string(),
                format!("{:.2}", q.volume_usd),
            ])?;
        }
        c.flush().map_err(|e| Error::io("exchange_summary.csv", e))
    })?;
    Ok(out.written)
}

#[derive(Debug, Serialize)]
struct SmileReport {
    observations: Vec<SmileObservation>,
    slopes: Vec<f64>,
    average_slope: f64,
}

fn calibrate_smile(cfg: &RunConfig, trades: &[OptionTrade], spot: &PriceSeries) -> Result<SmileReport> {
    let (observations, average_slope) = stage(
        "smile calibration",
        calibrate(trades, spot, &cfg.smile_dates, cfg.expiry),
    )?;
    let slopes = observations
        .iter()
        .map(crate::smile::slope_on_date)
        .collect::<Result<Vec<_>>>()?;
    Ok(SmileReport {
        observations,
        slopes,
        average_slope,
    })
}

pub fn cmd_smile(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let spot = load_spot(cfg)?;
    let trades = load_trades(cfg)?;
    let report = calibrate_smile(cfg, &trades, &spot)?;
    let mut out = Outputs::new(&cfg.out);
    out.write("smile.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["date", "center_strike", "iv_low", "iv_center", "iv_high", "delta_low", "delta_center", "delta_high", "slope"])?;
        for (o, s) in report.observations.iter().zip(&report.slopes) {
            let mut rec = vec![o.date.to_string(), format!("{:.0}", o.center_strike)];
            rec.extend(o.ivs.iter().chain(&o.deltas).map(|x| format!("{x:.6}")));
            rec.push(format!("{s:.6}"));
            c.write_record(&rec)?;
        }
        c.flush().map_err(|e| Error::io("smile.csv", e))
    })?;
    out.json("smile.json", &report)?;
    Ok(out.written)
}

fn grid_configs(cfg: &RunConfig) -> Vec<StrategyConfig> {
    if cfg.grid.is_empty() {
        return vec![cfg.strategy.clone()];
    }
    cfg.grid
        .iter()
        .map(|g| StrategyConfig {
            entry_threshold: g.entry,
            exit_threshold: g.exit,
            garch_refresh_hours: g.refresh_hours,
            smile_adjust: g.smile,
            ..cfg.strategy.clone()
        })
        .collect()
}

fn label_stem(c: &StrategyConfig) -> String {
    c.label().replace('/', "_")
}

pub fn cmd_backtest(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let spot = load_spot(cfg)?;
    let trades = load_trades(cfg)?;
    let hedge = match &cfg.data.perpetual {
        Some(p) => stage("loading perpetual prices", load_price_csv(p, cfg.data.perpetual_frequency))?,
        None => spot.clone(),
    };
    let configs = grid_configs(cfg);
    for c in &configs {
        stage("strategy configuration", c.validate())?;
    }
    let contract = cfg.strategy.instrument.parse::<InstrumentName>().map_err(|e| Error::Config(e.to_string()))?;
    let ticks: Vec<OptionTrade> = trades
        .iter()
        .filter(|t| t.strike == contract.strike && t.kind == contract.kind && t.expiry == contract.expiry)
        .cloned()
        .collect();
    let (Some(first), Some(last)) = (ticks.first(), ticks.last()) else {
        return Err(Error::Config(format!(
            "no ticks for {}",
            instrument_name(contract.strike, contract.kind, contract.expiry)
        )));
    };
    let (from, to) = (first.timestamp - Duration::days(1), last.timestamp);

    let slope = if configs.iter().any(|c| c.smile_adjust) {
        match cfg.strategy.smile_slope {
            Some(s) => Some(s),
            None => Some(calibrate_smile(cfg, &trades, &spot)?.average_slope),
        }
    } else {
        None
    };

    let mut schedules: BTreeMap<(u32, bool), ForecastSchedule> = BTreeMap::new();
    for c in &configs {
        let key = (c.garch_refresh_hours, c.smile_adjust);
        if schedules.contains_key(&key) {
            continue;
        }
        let base = stage(
            "GARCH forecast schedule",
            garch_forecast_schedule(&spot, from, to, c.garch_refresh_hours, contract.expiry, &FitOptions::default()),
        )?;
        let sched = match (c.smile_adjust, slope) {
            (true, Some(s)) => ForecastSchedule::new(adjust_schedule(
                base.entries(),
                &spot,
                s,
                contract.strike,
                contract.expiry,
            ))?,
            _ => base,
        };
        schedules.insert(key, sched);
    }

    let mut out = Outputs::new(&cfg.out);
    let mut perf_rows = Vec::new();
    for (key, sched) in &schedules {
        let group: Vec<StrategyConfig> = configs
            .iter()
            .filter(|c| (c.garch_refresh_hours, c.smile_adjust) == *key)
            .cloned()
            .collect();
        out.write(&format!("forecast_schedule_{}h{}.csv", key.0, if key.1 { "_smile" } else { "" }), |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["available_at", "forecast"])?;
            for (t, v) in sched.entries() {
                c.write_record([t.format("%Y-%m-%dT%H:%M:%SZ").to_string(), format!("{v:.8}")])?;
            }
            c.flush().map_err(|e| Error::io("<schedule>", e))
        })?;
        for (c, res) in group.iter().zip(run_grid(&group, &ticks, &hedge, sched)) {
            let res = stage(&format!("backtest {}", c.label()), res)?;
            let stem = label_stem(c);
            out.write(&format!("ledger_{stem}.csv"), |w| write_ledger_csv(&res.records, w))?;
            out.write(&format!("trades_{stem}.csv"), |w| write_round_trips_csv(&round_trips(&res.records), w))?;
            out.write(&format!("pnl_{stem}.csv"), |w| write_pnl_curve_csv(&res.curve, w))?;
            perf_rows.push((c.clone(), res.report));
        }
    }
    out.write("performance.csv", |w| write_performance_csv(&perf_rows, w))?;
    Ok(out.written)
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let s = &cfg.simulate;
    let returns = stage("simulation", simulate(s.model, &s.params(), s.n, cfg.seed))?;
    let mut closes = Vec::with_capacity(returns.len() + 1);
    closes.push(s.initial_price);
    for r in returns.values() {
        let last = closes[closes.len() - 1];
        closes.push(last * (1.0 + r));
    }
    let start = returns.timestamps()[0] - Duration::days(1);
    let prices = PriceSeries::from_closes("simulated", Frequency::Daily, start, &closes)?;
    let mut out = Outputs::new(&cfg.out);
    out.write("simulated_returns.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["timestamp", "return"])?;
        for (t, r) in returns.iter() {
            c.write_record([t.format("%Y-%m-%d").to_string(), format!("{r:.12}")])?;
        }
        c.flush().map_err(|e| Error::io("simulated_returns.csv", e))
    })?;
    out.write("simulated_prices.csv", |w| write_price_csv(&prices, w))?;
    Ok(out.written)
}
