//! Price ingestion, resampling, simple returns and return-series moments.
//!
//! Crypto markets trade around the clock, so every annualization factor here
//! assumes 365 days per year.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Duration, NaiveDate, NaiveDateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DAYS_PER_YEAR: f64 = 365.0;

/// Sampling frequency of a price or return series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Frequency {
    #[serde(rename = "1min")]
    Minute,
    #[serde(rename = "1h")]
    Hour1,
    #[serde(rename = "3h")]
    Hour3,
    #[serde(rename = "6h")]
    Hour6,
    #[serde(rename = "12h")]
    Hour12,
    #[serde(rename = "1d")]
    Daily,
}

impl Frequency {
    pub fn minutes(self) -> i64 {
        match self {
            Frequency::Minute => 1,
            Frequency::Hour1 => 60,
            Frequency::Hour3 => 180,
            Frequency::Hour6 => 360,
            Frequency::Hour12 => 720,
            Frequency::Daily => 1440,
        }
    }

    pub fn duration(self) -> Duration {
        Duration::minutes(self.minutes())
    }

    /// Number of periods in a 365-day year.
    pub fn periods_per_year(self) -> f64 {
        DAYS_PER_YEAR * 1440.0 / self.minutes() as f64
    }

    pub fn annualization(self) -> f64 {
        self.periods_per_year().sqrt()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Frequency::Minute => "1min",
            Frequency::Hour1 => "1h",
            Frequency::Hour3 => "3h",
            Frequency::Hour6 => "6h",
            Frequency::Hour12 => "12h",
            Frequency::Daily => "1d",
        }
    }

    /// Start of the bucket containing `ts`. Buckets are aligned to UTC midnight.
    pub fn bucket_start(self, ts: DateTime<Utc>) -> DateTime<Utc> {
        let secs = self.minutes() * 60;
        let t = ts.timestamp();
        let start = t - t.rem_euclid(secs);
        Utc.timestamp_opt(start, 0).single().expect("bucket start in range")
    }
}

impl fmt::Display for Frequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Frequency {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1min" | "1m" | "minute" | "min" => Ok(Frequency::Minute),
            "1h" | "hour" | "hourly" => Ok(Frequency::Hour1),
            "3h" => Ok(Frequency::Hour3),
            "6h" => Ok(Frequency::Hour6),
            "12h" => Ok(Frequency::Hour12),
            "1d" | "d" | "day" | "daily" | "24h" => Ok(Frequency::Daily),
            other => Err(Error::InvalidInput(format!("unknown frequency '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceBar {
    pub timestamp: DateTime<Utc>,
    pub close: f64,
    pub volume: Option<f64>,
}

/// Timestamped closes at a declared frequency.
///
/// Bars are strictly increasing in time. Missing bars are allowed and are
/// never forward-filled; [`PriceSeries::gaps`] reports them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    pub instrument: String,
    pub frequency: Frequency,
    bars: Vec<PriceBar>,
}

impl PriceSeries {
    pub fn new(instrument: impl Into<String>, frequency: Frequency, bars: Vec<PriceBar>) -> Result<Self> {
        for (i, bar) in bars.iter().enumerate() {
            if !(bar.close > 0.0) || !bar.close.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "close must be positive, got {} at {}",
                    bar.close, bar.timestamp
                )));
            }
            if let Some(v) = bar.volume {
                if v < 0.0 || !v.is_finite() {
                    return Err(Error::InvalidInput(format!("negative volume at {}", bar.timestamp)));
                }
            }
            if i > 0 {
                let prev = bars[i - 1].timestamp;
                if bar.timestamp == prev {
                    return Err(Error::DuplicateTimestamp(bar.timestamp));
                }
                if bar.timestamp < prev {
                    return Err(Error::Ordering {
                        line: i + 1,
                        timestamp: bar.timestamp,
                        previous: prev,
                    });
                }
            }
        }
        Ok(Self {
            instrument: instrument.into(),
            frequency,
            bars,
        })
    }

    /// Builds a series from closes spaced one period apart starting at `start`.
    pub fn from_closes(
        instrument: impl Into<String>,
        frequency: Frequency,
        start: DateTime<Utc>,
        closes: &[f64],
    ) -> Result<Self> {
        let step = frequency.duration();
        let bars = closes
            .iter()
            .enumerate()
            .map(|(i, &close)| PriceBar {
                timestamp: start + step * i as i32,
                close,
                volume: None,
            })
            .collect();
        Self::new(instrument, frequency, bars)
    }

    pub fn bars(&self) -> &[PriceBar] {
        &self.bars
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    pub fn first(&self) -> Option<&PriceBar> {
        self.bars.first()
    }

    pub fn last(&self) -> Option<&PriceBar> {
        self.bars.last()
    }

    /// Pairs of consecutive bars further apart than one period.
    pub fn gaps(&self) -> Vec<(DateTime<Utc>, DateTime<Utc>)> {
        let step = self.frequency.duration();
        self.bars
            .windows(2)
            .filter(|w| w[1].timestamp - w[0].timestamp > step)
            .map(|w| (w[0].timestamp, w[1].timestamp))
            .collect()
    }

    /// Latest close at or before `ts`.
    pub fn close_at_or_before(&self, ts: DateTime<Utc>) -> Option<f64> {
        let idx = self.bars.partition_point(|b| b.timestamp <= ts);
        idx.checked_sub(1).map(|i| self.bars[i].close)
    }

    /// Bars whose timestamp falls on the given UTC calendar day.
    pub fn bars_on(&self, day: NaiveDate) -> &[PriceBar] {
        let start = day_start(day);
        let end = start + Duration::days(1);
        let lo = self.bars.partition_point(|b| b.timestamp < start);
        let hi = self.bars.partition_point(|b| b.timestamp < end);
        &self.bars[lo..hi]
    }

    /// Bars strictly before `ts`.
    pub fn truncated_before(&self, ts: DateTime<Utc>) -> PriceSeries {
        let idx = self.bars.partition_point(|b| b.timestamp < ts);
        PriceSeries {
            instrument: self.instrument.clone(),
            frequency: self.frequency,
            bars: self.bars[..idx].to_vec(),
        }
    }
}

pub fn day_start(day: NaiveDate) -> DateTime<Utc> {
    Utc.from_utc_datetime(&day.and_hms_opt(0, 0, 0).expect("midnight"))
}

/// Simple returns with the timestamp of the later bar of each pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSeries {
    pub frequency: Frequency,
    timestamps: Vec<DateTime<Utc>>,
    values: Vec<f64>,
}

impl ReturnSeries {
    pub fn new(frequency: Frequency, timestamps: Vec<DateTime<Utc>>, values: Vec<f64>) -> Result<Self> {
        if timestamps.len() != values.len() {
            return Err(Error::Alignment {
                left: timestamps.len(),
                right: values.len(),
            });
        }
        if let Some(w) = timestamps.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::Ordering {
                line: 0,
                timestamp: w[1],
                previous: w[0],
            });
        }
        Ok(Self {
            frequency,
            timestamps,
            values,
        })
    }

    /// Daily returns dated consecutively from `start`.
    pub fn daily_from_values(start: NaiveDate, values: Vec<f64>) -> Self {
        let t0 = day_start(start);
        let timestamps = (0..values.len()).map(|i| t0 + Duration::days(i as i64)).collect();
        Self {
            frequency: Frequency::Daily,
            timestamps,
            values,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn timestamps(&self) -> &[DateTime<Utc>] {
        &self.timestamps
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn last_timestamp(&self) -> Option<DateTime<Utc>> {
        self.timestamps.last().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (DateTime<Utc>, f64)> + '_ {
        self.timestamps.iter().copied().zip(self.values.iter().copied())
    }

    /// Sub-series of returns with timestamps in `[from, to]`.
    pub fn between(&self, from: DateTime<Utc>, to: DateTime<Utc>) -> ReturnSeries {
        let lo = self.timestamps.partition_point(|t| *t < from);
        let hi = self.timestamps.partition_point(|t| *t <= to);
        let hi = hi.max(lo);
        ReturnSeries {
            frequency: self.frequency,
            timestamps: self.timestamps[lo..hi].to_vec(),
            values: self.values[lo..hi].to_vec(),
        }
    }

    /// Returns dated at or before `to`.
    pub fn up_to(&self, to: DateTime<Utc>) -> ReturnSeries {
        let hi = self.timestamps.partition_point(|t| *t <= to);
        ReturnSeries {
            frequency: self.frequency,
            timestamps: self.timestamps[..hi].to_vec(),
            values: self.values[..hi].to_vec(),
        }
    }

    pub fn negated(&self) -> ReturnSeries {
        ReturnSeries {
            frequency: self.frequency,
            timestamps: self.timestamps.clone(),
            values: self.values.iter().map(|v| -v).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveStats {
    pub mean: f64,
    pub annualized_vol: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub n: usize,
}

/// Parses an ISO-8601 / RFC 3339 timestamp, a bare date, or epoch milliseconds.
pub(crate) fn parse_timestamp(raw: &str) -> std::result::Result<DateTime<Utc>, String> {
    let s = raw.trim();
    let digits = s.strip_prefix('-').unwrap_or(s);
    if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
        let ms: i64 = s.parse().map_err(|e| format!("bad epoch millis '{s}': {e}"))?;
        return Utc
            .timestamp_millis_opt(ms)
            .single()
            .ok_or_else(|| format!("epoch millis out of range: {s}"));
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(dt.with_timezone(&Utc));
    }
    for fmt in [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(naive) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(Utc.from_utc_datetime(&naive));
        }
    }
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(day_start(d));
    }
    Err(format!("unrecognized timestamp '{s}'"))
}

/// Loads a `timestamp,close[,volume]` CSV with a header row.
pub fn load_price_csv(path: impl AsRef<Path>, frequency: Frequency) -> Result<PriceSeries> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let instrument = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_price_csv(file, &instrument, frequency)
}

pub fn read_price_csv<R: std::io::Read>(reader: R, instrument: &str, frequency: Frequency) -> Result<PriceSeries> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let ts_col = col("timestamp").ok_or(Error::Parse {
        line: 1,
        msg: "missing 'timestamp' column".into(),
    })?;
    let close_col = col("close").ok_or(Error::Parse {
        line: 1,
        msg: "missing 'close' column".into(),
    })?;
    let vol_col = col("volume");

    let mut bars: Vec<PriceBar> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let timestamp = parse_timestamp(field(ts_col)).map_err(|msg| Error::Parse { line, msg })?;
        let close: f64 = field(close_col).parse().map_err(|e| Error::Parse {
            line,
            msg: format!("bad close '{}': {e}", field(close_col)),
        })?;
        if !(close > 0.0) || !close.is_finite() {
            return Err(Error::Parse {
                line,
                msg: format!("close must be positive, got {close}"),
            });
        }
        let volume = match vol_col.map(field) {
            None | Some("") => None,
            Some(v) => {
                let v: f64 = v.parse().map_err(|e| Error::Parse {
                    line,
                    msg: format!("bad volume '{v}': {e}"),
                })?;
                if v < 0.0 {
                    return Err(Error::Parse {
                        line,
                        msg: format!("negative volume {v}"),
                    });
                }
                Some(v)
            }
        };
        if let Some(prev) = bars.last() {
            if timestamp == prev.timestamp {
                return Err(Error::DuplicateTimestamp(timestamp));
            }
            if timestamp < prev.timestamp {
                return Err(Error::Ordering {
                    line,
                    timestamp,
                    previous: prev.timestamp,
                });
            }
        }
        bars.push(PriceBar { timestamp, close, volume });
    }
    PriceSeries::new(instrument, frequency, bars)
}

pub fn write_price_csv<W: std::io::Write>(series: &PriceSeries, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["timestamp", "close", "volume"])?;
    for bar in series.bars() {
        w.write_record([
            bar.timestamp.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            format!("{}", bar.close),
            bar.volume.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Coarsens a series. Each output bar carries the last close observed in its
/// bucket and is stamped with the bucket start; volumes are summed.
pub fn resample(series: &PriceSeries, target: Frequency) -> Result<PriceSeries> {
    if target < series.frequency {
        return Err(Error::Unsupported(format!(
            "cannot resample {} to finer frequency {}",
            series.frequency, target
        )));
    }
    let mut out: Vec<PriceBar> = Vec::new();
    for bar in series.bars() {
        let bucket = target.bucket_start(bar.timestamp);
        match out.last_mut() {
            Some(last) if last.timestamp == bucket => {
                last.close = bar.close;
                last.volume = match (last.volume, bar.volume) {
                    (Some(a), Some(b)) => Some(a + b),
                    (a, b) => a.or(b),
                };
            }
            _ => out.push(PriceBar {
                timestamp: bucket,
                close: bar.close,
                volume: bar.volume,
            }),
        }
    }
    PriceSeries::new(series.instrument.clone(), target, out)
}

/// `r_t = (S_t - S_{t-1}) / S_{t-1}` between consecutive observed bars.
pub fn simple_returns(series: &PriceSeries) -> Result<ReturnSeries> {
    let bars = series.bars();
    if bars.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: bars.len(),
        });
    }
    let (timestamps, values) = bars
        .windows(2)
        .map(|w| (w[1].timestamp, (w[1].close - w[0].close) / w[0].close))
        .unzip();
    Ok(ReturnSeries {
        frequency: series.frequency,
        timestamps,
        values,
    })
}

/// Sample standard deviation (divisor n - 1), two-pass.
pub fn sample_std(xs: &[f64]) -> f64 {
    sample_variance(xs).sqrt()
}

pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    if xs.iter().all(|x| *x == xs[0]) {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// Sample standard deviation of the most recent `window` returns, optionally
/// annualized by the square root of the series' periods per year.
pub fn realized_vol(returns: &ReturnSeries, window: usize, annualize: bool) -> Result<f64> {
    if window < 2 {
        return Err(Error::InsufficientData { needed: 2, got: window });
    }
    if returns.len() < window {
        return Err(Error::InsufficientData {
            needed: window,
            got: returns.len(),
        });
    }
    let tail = &returns.values()[returns.len() - window..];
    let sd = sample_std(tail);
    Ok(if annualize {
        sd * returns.frequency.annualization()
    } else {
        sd
    })
}

/// Mean, annualized volatility, bias-adjusted skewness and excess kurtosis.
pub fn descriptive_stats(returns: &ReturnSeries) -> Result<DescriptiveStats> {
    let xs = returns.values();
    let n = xs.len();
    if n < 4 {
        return Err(Error::InsufficientData { needed: 4, got: n });
    }
    let nf = n as f64;
    let mean = xs.iter().sum::<f64>() / nf;
    let (m2, m3, m4) = xs.iter().fold((0.0, 0.0, 0.0), |(a, b, c), x| {
        let d = x - mean;
        let d2 = d * d;
        (a + d2, b + d2 * d, c + d2 * d2)
    });
    let (m2, m3, m4) = (m2 / nf, m3 / nf, m4 / nf);
    let var = m2 * nf / (nf - 1.0);
    let (skewness, excess_kurtosis) = if m2 > 0.0 {
        let g1 = m3 / m2.powf(1.5);
        let g2 = m4 / (m2 * m2) - 3.0;
        let skew = g1 * (nf * (nf - 1.0)).sqrt() / (nf - 2.0);
        let kurt = (nf - 1.0) / ((nf - 2.0) * (nf - 3.0)) * ((nf + 1.0) * g2 + 6.0);
        (skew, kurt)
    } else {
        (0.0, 0.0)
    };
    Ok(DescriptiveStats {
        mean,
        annualized_vol: var.sqrt() * returns.frequency.annualization(),
        skewness,
        excess_kurtosis,
        n,
    })
}
