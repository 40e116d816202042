//! Walk-forward forecasting and predictive regressions of next-day realized
//! volatility on model forecasts.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Duration, NaiveDate, Utc};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::{day_start, realized_vol, sample_std, PriceSeries, ReturnSeries};
use crate::models::{
    ema_variance, fit_mle_with, forecast_multi_period_average, forecast_one_step, EmaConfig, FitOptions,
    ForecastSeries, Horizon, ModelKind,
};

/// Values keyed by calendar day.
pub type DatedValues = BTreeMap<NaiveDate, f64>;

/// Trailing estimation window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LookbackSpec {
    Whole,
    Days(u32),
}

impl LookbackSpec {
    pub const MIN_DAYS: u32 = 30;

    pub fn days(n: u32) -> Result<Self> {
        if n < Self::MIN_DAYS {
            return Err(Error::InvalidInput(format!(
                "look-back of {n} days is below the {}-day minimum",
                Self::MIN_DAYS
            )));
        }
        Ok(LookbackSpec::Days(n))
    }

    /// The grid used for model comparison: whole history, 365, 180, 90, 30 days.
    pub fn standard_grid() -> Vec<LookbackSpec> {
        vec![
            LookbackSpec::Whole,
            LookbackSpec::Days(365),
            LookbackSpec::Days(180),
            LookbackSpec::Days(90),
            LookbackSpec::Days(30),
        ]
    }

    /// Returns inside the window ending at (and including) `origin`.
    pub fn window(&self, returns: &ReturnSeries, origin: DateTime<Utc>) -> ReturnSeries {
        match self {
            LookbackSpec::Whole => returns.up_to(origin),
            LookbackSpec::Days(n) => {
                returns.between(origin - Duration::days(*n as i64) + Duration::seconds(1), origin)
            }
        }
    }
}

impl fmt::Display for LookbackSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LookbackSpec::Whole => f.write_str("whole"),
            LookbackSpec::Days(n) => write!(f, "{n}d"),
        }
    }
}

impl FromStr for LookbackSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "whole" || s == "all" {
            return Ok(LookbackSpec::Whole);
        }
        let digits = s.strip_suffix('d').unwrap_or(&s);
        let n: u32 = digits
            .parse()
            .map_err(|_| Error::InvalidInput(format!("bad look-back '{s}'")))?;
        LookbackSpec::days(n)
    }
}

impl TryFrom<String> for LookbackSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<LookbackSpec> for String {
    fn from(l: LookbackSpec) -> String {
        l.to_string()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct WalkForwardOptions {
    pub fit: FitOptions,
    pub ema: EmaConfig,
}

/// Annualized next-period forecast from a single estimation window.
pub fn forecast_next(kind: ModelKind, window: &ReturnSeries, opts: &WalkForwardOptions) -> Result<f64> {
    match kind {
        ModelKind::Hist => realized_vol(window, window.len(), true),
        ModelKind::Ema => {
            let z = ema_variance(window.values(), &opts.ema)?;
            Ok(z[z.len() - 1].sqrt() * window.frequency.annualization())
        }
        _ => {
            let fit = fit_mle_with(kind, window, &opts.fit)?;
            forecast_one_step(&fit, window)
        }
    }
}

fn min_window(kind: ModelKind, opts: &WalkForwardOptions) -> usize {
    match kind {
        ModelKind::Hist => 2,
        ModelKind::Ema => 1,
        _ => opts.fit.min_obs,
    }
}

/// Re-estimates at every daily origin `t >= start` and forecasts day `t+1`.
pub fn walk_forward(
    kind: ModelKind,
    lookback: LookbackSpec,
    daily: &ReturnSeries,
    start: NaiveDate,
    opts: &WalkForwardOptions,
) -> Result<ForecastSeries> {
    walk_forward_with_horizon(kind, lookback, daily, start, Horizon::SingleDay, opts)
}

/// Walk-forward with either next-day or multi-day-average forecasts. For the
/// multi-day horizon, origins closer than two days to maturity are omitted.
pub fn walk_forward_with_horizon(
    kind: ModelKind,
    lookback: LookbackSpec,
    daily: &ReturnSeries,
    start: NaiveDate,
    horizon: Horizon,
    opts: &WalkForwardOptions,
) -> Result<ForecastSeries> {
    let start_ts = day_start(start);
    let origins: Vec<DateTime<Utc>> = daily
        .timestamps()
        .iter()
        .copied()
        .filter(|t| *t >= start_ts)
        .filter(|t| match horizon {
            Horizon::SingleDay => true,
            Horizon::MultiDayAverage { maturity } => (maturity - t.date_naive()).num_days() >= 2,
        })
        .collect();

    if let Some(first) = origins.first() {
        let needed = min_window(kind, opts);
        let got = lookback.window(daily, *first).len();
        if got < needed {
            return Err(Error::InsufficientData { needed, got });
        }
    }

    let entries = origins
        .par_iter()
        .map(|&origin| {
            let window = lookback.window(daily, origin);
            let result = match horizon {
                Horizon::SingleDay => forecast_next(kind, &window, opts),
                Horizon::MultiDayAverage { maturity } => fit_mle_with(kind, &window, &opts.fit)
                    .and_then(|fit| forecast_multi_period_average(&fit, &window, day_start(maturity))),
            };
            let value = match result {
                Ok(v) if v.is_finite() => Some(v),
                Ok(v) => {
                    log::warn!("{kind} {lookback} forecast at {} not finite ({v})", origin.date_naive());
                    None
                }
                Err(e) => {
                    log::warn!("{kind} {lookback} forecast at {} missing: {e}", origin.date_naive());
                    None
                }
            };
            (origin.date_naive(), value)
        })
        .collect();

    Ok(ForecastSeries {
        kind,
        lookback,
        horizon,
        entries,
    })
}

/// Annualized sample standard deviation of the returns stamped on `day`.
pub fn realized_vol_next_day(minute: &PriceSeries, day: NaiveDate) -> Result<f64> {
    let returns = intraday_returns(minute, day);
    if returns.len() < 30 {
        return Err(Error::InsufficientData {
            needed: 30,
            got: returns.len(),
        });
    }
    Ok(sample_std(&returns) * minute.frequency.annualization())
}

fn intraday_returns(series: &PriceSeries, day: NaiveDate) -> Vec<f64> {
    let bars = series.bars();
    let start = day_start(day);
    let end = start + Duration::days(1);
    let lo = bars.partition_point(|b| b.timestamp < start).max(1);
    let hi = bars.partition_point(|b| b.timestamp < end);
    (lo..hi.max(lo))
        .map(|i| (bars[i].close - bars[i - 1].close) / bars[i - 1].close)
        .collect()
}

/// Realized volatility for every day with at least 30 intraday returns.
pub fn daily_realized_vols(minute: &PriceSeries) -> DatedValues {
    let (Some(first), Some(last)) = (minute.first(), minute.last()) else {
        return DatedValues::new();
    };
    let mut out = DatedValues::new();
    let mut day = first.timestamp.date_naive();
    let end = last.timestamp.date_naive();
    while day <= end {
        if let Ok(v) = realized_vol_next_day(minute, day) {
            out.insert(day, v);
        }
        day = day.succ_opt().expect("date in range");
    }
    out
}

/// Re-keys a day-`t+1` quantity onto its origin day `t`.
pub fn shift_to_origin(next_day: &DatedValues) -> DatedValues {
    next_day
        .iter()
        .filter_map(|(d, v)| d.pred_opt().map(|p| (p, *v)))
        .collect()
}

impl ForecastSeries {
    pub fn to_dated(&self) -> DatedValues {
        self.entries
            .iter()
            .filter_map(|(d, v)| v.map(|x| (*d, x)))
            .collect()
    }
}

/// `(1/N) * sum |actual - fitted|`.
pub fn mae(actual: &[f64], fitted: &[f64]) -> Result<f64> {
    if actual.len() != fitted.len() {
        return Err(Error::Alignment {
            left: actual.len(),
            right: fitted.len(),
        });
    }
    if actual.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    Ok(actual.iter().zip(fitted).map(|(a, f)| (a - f).abs()).sum::<f64>() / actual.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub std_err: f64,
    pub t_stat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    /// Intercept first, then one entry per regressor.
    pub coefficients: Vec<Coefficient>,
    pub r2: f64,
    pub adj_r2: f64,
    pub mae: f64,
    pub n: usize,
    /// Dates removed because some aligned series had no value.
    pub dropped: usize,
    #[serde(skip)]
    pub fitted: Vec<f64>,
    #[serde(skip)]
    pub residuals: Vec<f64>,
}

impl RegressionResult {
    pub fn regressor_count(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn coefficient(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }
}

/// Aligns `target` with the regressors on common dates (listwise deletion)
/// and runs OLS with an intercept.
pub fn ols_predict(target: &DatedValues, regressors: &[(&str, &DatedValues)]) -> Result<RegressionResult> {
    let union = target.len();
    let dates: Vec<NaiveDate> = target
        .iter()
        .filter(|(d, v)| {
            v.is_finite()
                && regressors
                    .iter()
                    .all(|(_, s)| s.get(d).is_some_and(|x| x.is_finite()))
        })
        .map(|(d, _)| *d)
        .collect();
    let y: Vec<f64> = dates.iter().map(|d| target[d]).collect();
    let columns: Vec<(&str, Vec<f64>)> = regressors
        .iter()
        .map(|(name, s)| (*name, dates.iter().map(|d| s[d]).collect()))
        .collect();
    let mut res = ols(&y, &columns)?;
    res.dropped = union - dates.len();
    Ok(res)
}

/// Ordinary least squares with an intercept via Householder QR.
pub fn ols(y: &[f64], regressors: &[(&str, Vec<f64>)]) -> Result<RegressionResult> {
    let n = y.len();
    let k = regressors.len();
    if let Some((_, col)) = regressors.iter().find(|(_, c)| c.len() != n) {
        return Err(Error::Alignment {
            left: n,
            right: col.len(),
        });
    }
    if n <= k + 1 {
        return Err(Error::InsufficientData { needed: k + 2, got: n });
    }
    let names: Vec<String> = std::iter::once("const".to_string())
        .chain(regressors.iter().map(|(n, _)| n.to_string()))
        .collect();
    let x = DMatrix::from_fn(n, k + 1, |i, j| if j == 0 { 1.0 } else { regressors[j - 1].1[i] });
    let yv = DVector::from_column_slice(y);

    let qr = x.clone().qr();
    let r = qr.r();
    let collinear: Vec<String> = (0..=k)
        .filter(|&j| {
            let scale = x.column(j).norm().max(f64::MIN_POSITIVE);
            r[(j, j)].abs() <= 1e-10 * scale
        })
        .map(|j| names[j].clone())
        .collect();
    if !collinear.is_empty() {
        return Err(Error::Collinear { regressors: collinear });
    }

    let qty = qr.q().transpose() * &yv;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Numerical("singular triangular factor".into()))?;
    let fitted_v = &x * &beta;
    let resid_v = &yv - &fitted_v;
    let ssr = resid_v.norm_squared();
    let mean = y.iter().sum::<f64>() / n as f64;
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let r2 = 1.0 - ssr / sst;
    let dof = (n - k - 1) as f64;
    let adj_r2 = 1.0 - (1.0 - r2) * (n as f64 - 1.0) / dof;
    let sigma2 = ssr / dof;

    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular triangular factor".into()))?;
    let xtx_inv = &r_inv * r_inv.transpose();
    let coefficients = names
        .into_iter()
        .enumerate()
        .map(|(j, name)| {
            let std_err = (sigma2 * xtx_inv[(j, j)]).sqrt();
            Coefficient {
                name,
                estimate: beta[j],
                std_err,
                t_stat: beta[j] / std_err,
            }
        })
        .collect();

    let fitted: Vec<f64> = fitted_v.iter().copied().collect();
    Ok(RegressionResult {
        coefficients,
        r2,
        adj_r2,
        mae: mae(y, &fitted)?,
        n,
        dropped: 0,
        fitted,
        residuals: resid_v.iter().copied().collect(),
    })
}

/// One labelled regression for the evaluation report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationRow {
    pub model: String,
    pub lookback: String,
    pub result: RegressionResult,
}

/// Single-regressor layout: `model,lookback,beta0,t0,beta1,t1,adj_r2,mae,n`.
pub fn write_evaluation_csv<W: std::io::Write>(rows: &[EvaluationRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["model", "lookback", "beta0", "t0", "beta1", "t1", "adj_r2", "mae", "n"])?;
    for row in rows {
        let c = &row.result.coefficients;
        let (b1, t1) = c
            .get(1)
            .map(|c| (format!("{:.4}", c.estimate), format!("{:.2}", c.t_stat)))
            .unwrap_or_default();
        w.write_record([
            row.model.clone(),
            row.lookback.clone(),
            format!("{:.4}", c[0].estimate),
            format!("{:.2}", c[0].t_stat),
            b1,
            t1,
            format!("{:.4}", row.result.adj_r2),
            format!("{:.4}", row.result.mae),
            row.result.n.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Multi-regressor layout: one coefficient/t-stat column pair per name in
/// `columns`, blank where a row does not use that regressor.
pub fn write_combination_csv<W: std::io::Write>(rows: &[EvaluationRow], columns: &[&str], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["model".to_string(), "const".to_string(), "t_const".to_string()];
    for c in columns {
        header.push(c.to_string());
        header.push(format!("t_{c}"));
    }
    header.extend(["adj_r2", "mae", "n"].map(String::from));
    w.write_record(&header)?;
    for row in rows {
        let mut rec = vec![row.model.clone()];
        for name in std::iter::once(&"const").chain(columns) {
            match row.result.coefficient(name) {
                Some(c) => {
                    rec.push(format!("{:.4}", c.estimate));
                    rec.push(format!("{:.2}", c.t_stat));
                }
                None => {
                    rec.push(String::new());
                    rec.push(String::new());
                }
            }
        }
        rec.push(format!("{:.4}", row.result.adj_r2));
        rec.push(format!("{:.4}", row.result.mae));
        rec.push(row.result.n.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
