//! HIST, EMA, ARCH(1), GARCH(1,1) and EGARCH(1,1,1) volatility models.
//!
//! Returns are modelled as `r_t = z_t v_t` with standard normal `v_t` and no
//! conditional mean. All variances are per-period; forecasts are annualized
//! with the return series' frequency (365-day year).
//!
//! The conditional-variance recursions start from the sample variance of the
//! estimation window, both when fitting and when filtering for a forecast.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast_eval::LookbackSpec;
use crate::market_data::{day_start, sample_variance, Frequency, ReturnSeries, DAYS_PER_YEAR};
use crate::optim::{self, NelderMeadOptions};

const LN_2PI: f64 = 1.837_877_066_409_345_3;
const BOUNDARY_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ModelKind {
    Hist,
    Ema,
    Arch,
    Garch,
    Egarch,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Hist,
        ModelKind::Ema,
        ModelKind::Arch,
        ModelKind::Garch,
        ModelKind::Egarch,
    ];

    pub fn is_parametric(self) -> bool {
        matches!(self, ModelKind::Arch | ModelKind::Garch | ModelKind::Egarch)
    }

    /// Names of the estimated parameters, in [`GarchParams::to_vec`] order.
    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            ModelKind::Arch => &["a0", "alpha"],
            ModelKind::Garch => &["a0", "alpha", "beta"],
            ModelKind::Egarch => &["a0", "alpha", "theta", "beta"],
            ModelKind::Hist | ModelKind::Ema => &[],
        }
    }

    pub fn param_count(self) -> usize {
        self.param_names().len()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Hist => "HIST",
            ModelKind::Ema => "EMA",
            ModelKind::Arch => "ARCH",
            ModelKind::Garch => "GARCH",
            ModelKind::Egarch => "EGARCH",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "HIST" => Ok(ModelKind::Hist),
            "EMA" => Ok(ModelKind::Ema),
            "ARCH" => Ok(ModelKind::Arch),
            "GARCH" => Ok(ModelKind::Garch),
            "EGARCH" => Ok(ModelKind::Egarch),
            other => Err(Error::InvalidInput(format!("unknown model '{other}'"))),
        }
    }
}

/// Coefficients of the ARCH-family recursions.
///
/// `beta` is zero for ARCH and `theta` is zero except for EGARCH. For EGARCH
/// `a0` is the log-variance intercept and may be negative.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GarchParams {
    pub a0: f64,
    pub alpha: f64,
    pub beta: f64,
    pub theta: f64,
}

impl GarchParams {
    pub fn arch(a0: f64, alpha: f64) -> Self {
        Self { a0, alpha, beta: 0.0, theta: 0.0 }
    }

    pub fn garch(a0: f64, alpha: f64, beta: f64) -> Self {
        Self { a0, alpha, beta, theta: 0.0 }
    }

    pub fn egarch(a0: f64, alpha: f64, theta: f64, beta: f64) -> Self {
        Self { a0, alpha, beta, theta }
    }

    pub fn to_vec(&self, kind: ModelKind) -> Vec<f64> {
        match kind {
            ModelKind::Arch => vec![self.a0, self.alpha],
            ModelKind::Garch => vec![self.a0, self.alpha, self.beta],
            ModelKind::Egarch => vec![self.a0, self.alpha, self.theta, self.beta],
            ModelKind::Hist | ModelKind::Ema => vec![],
        }
    }

    pub fn from_slice(kind: ModelKind, v: &[f64]) -> Self {
        match kind {
            ModelKind::Arch => Self::arch(v[0], v[1]),
            ModelKind::Garch => Self::garch(v[0], v[1], v[2]),
            ModelKind::Egarch => Self::egarch(v[0], v[1], v[2], v[3]),
            ModelKind::Hist | ModelKind::Ema => Self::default(),
        }
    }

    /// `alpha + beta`, the decay rate of variance shocks for ARCH and GARCH.
    pub fn persistence(&self) -> f64 {
        self.alpha + self.beta
    }

    pub fn validate(&self, kind: ModelKind) -> Result<()> {
        let finite = [self.a0, self.alpha, self.beta, self.theta].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidInput(format!("non-finite parameters {self:?}")));
        }
        match kind {
            ModelKind::Arch | ModelKind::Garch => {
                if self.a0 <= 0.0 || self.alpha < 0.0 || self.beta < 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "{kind} requires a0 > 0, alpha >= 0, beta >= 0; got {self:?}"
                    )));
                }
                Ok(())
            }
            ModelKind::Egarch => {
                if self.beta.abs() >= 1.0 {
                    return Err(Error::NonStationary {
                        persistence: self.beta.abs(),
                    });
                }
                Ok(())
            }
            ModelKind::Hist | ModelKind::Ema => {
                Err(Error::Unsupported(format!("{kind} has no recursion parameters")))
            }
        }
    }

    pub fn unconditional_variance(&self) -> Result<f64> {
        let p = self.persistence();
        if p >= 1.0 {
            return Err(Error::NonStationary { persistence: p });
        }
        Ok(self.a0 / (1.0 - p))
    }
}

/// Annualized volatility implied by the stationary variance `a0 / (1 - alpha - beta)`
/// of daily GARCH parameters.
pub fn unconditional_vol(params: &GarchParams) -> Result<f64> {
    Ok(params.unconditional_variance()?.sqrt() * DAYS_PER_YEAR.sqrt())
}

/// Variance recursion state used to seed filters: the sample variance of the
/// window, falling back to the mean square for degenerate windows.
pub fn initial_variance(returns: &[f64]) -> f64 {
    let v = sample_variance(returns);
    if v.is_finite() && v > 0.0 {
        return v;
    }
    let ms = returns.iter().map(|r| r * r).sum::<f64>() / returns.len().max(1) as f64;
    if ms > 0.0 {
        ms
    } else {
        1e-12
    }
}

/// One application of the model recursion: variance for the period after a
/// period with return `r_prev` and conditional variance `var_prev`.
#[inline]
pub fn next_variance(kind: ModelKind, p: &GarchParams, r_prev: f64, var_prev: f64) -> f64 {
    match kind {
        ModelKind::Arch => p.a0 + p.alpha * r_prev * r_prev,
        ModelKind::Garch => p.a0 + p.alpha * r_prev * r_prev + p.beta * var_prev,
        ModelKind::Egarch => {
            let eps = r_prev / var_prev.sqrt();
            let ln_next = p.a0
                + p.alpha * (eps.abs() - (2.0 / PI).sqrt())
                + p.theta * eps
                + p.beta * var_prev.ln();
            ln_next.exp()
        }
        ModelKind::Hist | ModelKind::Ema => f64::NAN,
    }
}

/// Conditional variance path `z_t^2` for each return, seeded with the
/// window's sample variance.
pub fn variance_filter(kind: ModelKind, params: &GarchParams, returns: &[f64]) -> Result<Vec<f64>> {
    variance_filter_from(kind, params, returns, initial_variance(returns))
}

pub fn variance_filter_from(
    kind: ModelKind,
    params: &GarchParams,
    returns: &[f64],
    initial: f64,
) -> Result<Vec<f64>> {
    if !kind.is_parametric() {
        return Err(Error::Unsupported(format!("{kind} has no variance recursion")));
    }
    params.validate(kind)?;
    let mut out = Vec::with_capacity(returns.len());
    let mut var = initial;
    for t in 0..returns.len() {
        if t > 0 {
            var = next_variance(kind, params, returns[t - 1], var);
        }
        if !var.is_finite() || var <= 0.0 {
            return Err(Error::NumericalOverflow { index: t });
        }
        out.push(var);
    }
    Ok(out)
}

/// Gaussian log-likelihood of zero-mean returns under the model. Returns
/// `-inf` when the recursion leaves the positive finite range.
pub fn log_likelihood(kind: ModelKind, params: &GarchParams, returns: &[f64]) -> f64 {
    log_likelihood_from(kind, params, returns, initial_variance(returns))
}

fn log_likelihood_from(kind: ModelKind, p: &GarchParams, returns: &[f64], initial: f64) -> f64 {
    let mut var = initial;
    let mut ll = 0.0;
    for (t, &r) in returns.iter().enumerate() {
        if t > 0 {
            var = next_variance(kind, p, returns[t - 1], var);
        }
        if !var.is_finite() || var <= 0.0 {
            return f64::NEG_INFINITY;
        }
        ll -= 0.5 * (LN_2PI + var.ln() + r * r / var);
    }
    ll
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EmaWeighting {
    /// `z_t^2 = lambda z_{t-1}^2 + (1 - lambda) r_t^2` with `lambda = 2/(n+1)`.
    #[default]
    AsWritten,
    /// Same recursion with `lambda = 1 - 2/(n+1)`.
    Conventional,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmaConfig {
    pub span: usize,
    pub seed: Option<f64>,
    pub weighting: EmaWeighting,
}

impl Default for EmaConfig {
    fn default() -> Self {
        Self {
            span: 365,
            seed: None,
            weighting: EmaWeighting::AsWritten,
        }
    }
}

impl EmaConfig {
    pub fn lambda(&self) -> f64 {
        let l = 2.0 / (self.span as f64 + 1.0);
        match self.weighting {
            EmaWeighting::AsWritten => l,
            EmaWeighting::Conventional => 1.0 - l,
        }
    }
}

/// Exponentially weighted variance, one value per return. Unless a seed is
/// given, `z_0^2` is the sample variance of the first `min(30, len)` returns.
pub fn ema_variance(returns: &[f64], cfg: &EmaConfig) -> Result<Vec<f64>> {
    if returns.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let lambda = cfg.lambda();
    let mut z2 = cfg
        .seed
        .unwrap_or_else(|| initial_variance(&returns[..returns.len().min(30)]));
    Ok(returns
        .iter()
        .map(|r| {
            z2 = lambda * z2 + (1.0 - lambda) * r * r;
            z2
        })
        .collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub kind: ModelKind,
    pub params: GarchParams,
    pub std_errors: Vec<f64>,
    pub tstats: Vec<f64>,
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    pub n: usize,
    pub window: (DateTime<Utc>, DateTime<Utc>),
    /// Parameters sitting on the edge of the admissible region.
    pub pinned: Vec<String>,
}

impl FitResult {
    pub fn param_count(&self) -> usize {
        self.kind.param_count()
    }

    pub fn aic_of(k: usize, loglik: f64) -> f64 {
        2.0 * k as f64 - 2.0 * loglik
    }

    pub fn bic_of(k: usize, n: usize, loglik: f64) -> f64 {
        k as f64 * (n as f64).ln() - 2.0 * loglik
    }

    /// `(name, value, t-stat)` triples in model order.
    pub fn estimates(&self) -> Vec<(&'static str, f64, f64)> {
        self.kind
            .param_names()
            .iter()
            .zip(self.params.to_vec(self.kind))
            .zip(&self.tstats)
            .map(|((n, v), t)| (*n, v, *t))
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub min_obs: usize,
    pub optimizer: NelderMeadOptions,
    /// Extra restarts from the incumbent optimum.
    pub restarts: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            min_obs: 30,
            optimizer: NelderMeadOptions::default(),
            restarts: 3,
        }
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Maps unconstrained optimizer coordinates onto the admissible region.
fn to_params(kind: ModelKind, u: &[f64]) -> GarchParams {
    match kind {
        ModelKind::Arch => GarchParams::arch(u[0].exp(), logistic(u[1])),
        ModelKind::Garch => {
            let persistence = logistic(u[1]);
            let share = logistic(u[2]);
            GarchParams::garch(u[0].exp(), persistence * share, persistence * (1.0 - share))
        }
        ModelKind::Egarch => GarchParams::egarch(u[0], u[1], u[2], u[3].tanh()),
        ModelKind::Hist | ModelKind::Ema => GarchParams::default(),
    }
}

fn to_unconstrained(kind: ModelKind, p: &GarchParams) -> Vec<f64> {
    match kind {
        ModelKind::Arch => vec![p.a0.ln(), logit(p.alpha)],
        ModelKind::Garch => {
            let persistence = p.alpha + p.beta;
            vec![p.a0.ln(), logit(persistence), logit(p.alpha / persistence)]
        }
        ModelKind::Egarch => vec![p.a0, p.alpha, p.theta, p.beta.atanh()],
        ModelKind::Hist | ModelKind::Ema => vec![],
    }
}

fn starting_points(kind: ModelKind, var: f64) -> Vec<GarchParams> {
    match kind {
        ModelKind::Arch => [0.1, 0.3, 0.6]
            .iter()
            .map(|&a| GarchParams::arch(var * (1.0 - a), a))
            .collect(),
        ModelKind::Garch => [(0.1, 0.8), (0.05, 0.93), (0.2, 0.6)]
            .iter()
            .map(|&(a, b)| GarchParams::garch(var * (1.0 - a - b), a, b))
            .collect(),
        ModelKind::Egarch => [0.8, 0.95, 0.5]
            .iter()
            .map(|&b| GarchParams::egarch(var.ln() * (1.0 - b), 0.1, 0.0, b))
            .collect(),
        ModelKind::Hist | ModelKind::Ema => vec![],
    }
}

fn pinned_params(kind: ModelKind, p: &GarchParams) -> Vec<String> {
    let mut out = Vec::new();
    match kind {
        ModelKind::Arch | ModelKind::Garch => {
            if p.alpha < BOUNDARY_EPS {
                out.push("alpha".to_string());
            }
            if kind == ModelKind::Garch && p.beta < BOUNDARY_EPS {
                out.push("beta".to_string());
            }
            if p.persistence() > 1.0 - BOUNDARY_EPS {
                out.push("persistence".to_string());
            }
        }
        ModelKind::Egarch => {
            if p.beta.abs() > 1.0 - BOUNDARY_EPS {
                out.push("beta".to_string());
            }
        }
        ModelKind::Hist | ModelKind::Ema => {}
    }
    out
}

/// Per-coordinate finite-difference steps: 1e-4 relative, absolute near zero.
pub fn fd_steps(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|v| if v.abs() > 1e-8 { 1e-4 * v.abs() } else { 1e-6 })
        .collect()
}

/// Maximum-likelihood fit on the whole series.
pub fn fit_mle(kind: ModelKind, returns: &ReturnSeries) -> Result<FitResult> {
    fit_mle_with(kind, returns, &FitOptions::default())
}

pub fn fit_mle_with(kind: ModelKind, returns: &ReturnSeries, opts: &FitOptions) -> Result<FitResult> {
    if !kind.is_parametric() {
        return Err(Error::Unsupported(format!("{kind} is not estimated by maximum likelihood")));
    }
    let r = returns.values();
    if r.len() < opts.min_obs.max(2) {
        return Err(Error::InsufficientData {
            needed: opts.min_obs.max(2),
            got: r.len(),
        });
    }
    let var0 = initial_variance(r);
    let objective = |u: &[f64]| -log_likelihood_from(kind, &to_params(kind, u), r, var0);

    let starts = starting_points(kind, var0);
    let mut attempts = 0;
    let mut best: Option<optim::Minimum> = None;
    for start in &starts {
        attempts += 1;
        let m = optim::nelder_mead(objective, &to_unconstrained(kind, start), &opts.optimizer);
        if best.as_ref().is_none_or(|b| m.f < b.f) {
            best = Some(m);
        }
    }
    let mut best = best.expect("at least one starting point");
    for _ in 0..opts.restarts {
        attempts += 1;
        let m = optim::nelder_mead(objective, &best.x, &opts.optimizer);
        let improved = best.f - m.f;
        if m.f <= best.f {
            best = m;
        }
        if improved.abs() < 1e-9 && best.converged {
            break;
        }
    }

    let params = to_params(kind, &best.x);
    let loglik = -best.f;
    if !loglik.is_finite() || !best.converged {
        return Err(Error::Estimation {
            attempts,
            best: params,
            loglik,
        });
    }

    let theta = params.to_vec(kind);
    let natural = |x: &[f64]| -log_likelihood_from(kind, &GarchParams::from_slice(kind, x), r, var0);
    let h = optim::hessian(natural, &theta, &fd_steps(&theta));
    let std_errors = standard_errors(&h);
    let tstats = theta.iter().zip(&std_errors).map(|(v, se)| v / se).collect();

    let k = kind.param_count();
    let n = r.len();
    let ts = returns.timestamps();
    Ok(FitResult {
        kind,
        params,
        std_errors,
        tstats,
        loglik,
        aic: FitResult::aic_of(k, loglik),
        bic: FitResult::bic_of(k, n, loglik),
        n,
        window: (ts[0], ts[n - 1]),
        pinned: pinned_params(kind, &params),
    })
}

/// Square roots of the diagonal of the inverse observed information.
fn standard_errors(h: &[Vec<f64>]) -> Vec<f64> {
    let k = h.len();
    let m = nalgebra::DMatrix::from_fn(k, k, |i, j| h[i][j]);
    match m.try_inverse() {
        Some(inv) => (0..k)
            .map(|i| {
                let v = inv[(i, i)];
                if v > 0.0 {
                    v.sqrt()
                } else {
                    f64::NAN
                }
            })
            .collect(),
        None => vec![f64::NAN; k],
    }
}

/// Per-period variance for the period after the last return in `returns`.
pub fn one_step_variance(kind: ModelKind, params: &GarchParams, returns: &[f64]) -> Result<f64> {
    if returns.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let path = variance_filter(kind, params, returns)?;
    let last = returns.len() - 1;
    let next = next_variance(kind, params, returns[last], path[last]);
    if !next.is_finite() || next <= 0.0 {
        return Err(Error::NumericalOverflow { index: returns.len() });
    }
    Ok(next)
}

/// Annualized volatility forecast for the period after the fit window.
pub fn forecast_one_step(fit: &FitResult, returns: &ReturnSeries) -> Result<f64> {
    let var = one_step_variance(fit.kind, &fit.params, returns.values())?;
    Ok(var.sqrt() * returns.frequency.annualization())
}

/// Expected per-period variances `E[z^2_{t+h}]`, `h = 1..=horizons`, given
/// the one-step variance. Mean-reverts at rate `alpha + beta`.
pub fn variance_term_structure(kind: ModelKind, params: &GarchParams, next_var: f64, horizons: usize) -> Result<Vec<f64>> {
    if !matches!(kind, ModelKind::Arch | ModelKind::Garch) {
        return Err(Error::Unsupported(format!("multi-period forecasts for {kind}")));
    }
    let long_run = params.unconditional_variance()?;
    let p = params.persistence();
    let mut decay = 1.0;
    Ok((0..horizons)
        .map(|_| {
            let v = long_run + decay * (next_var - long_run);
            decay *= p;
            v
        })
        .collect())
}

/// Equal-weighted mean of the annualized per-period volatility forecasts from
/// the next period up to `maturity`.
pub fn forecast_multi_period_average(fit: &FitResult, returns: &ReturnSeries, maturity: DateTime<Utc>) -> Result<f64> {
    let last = returns
        .last_timestamp()
        .ok_or(Error::InsufficientData { needed: 1, got: 0 })?;
    let period = returns.frequency.duration();
    let horizons = ((maturity - last).num_seconds() / period.num_seconds()).max(0) as usize;
    if horizons < 2 {
        return Err(Error::InvalidInput(format!(
            "maturity {maturity} must be at least two periods after {last}"
        )));
    }
    let next = one_step_variance(fit.kind, &fit.params, returns.values())?;
    let ann = returns.frequency.annualization();
    let path = variance_term_structure(fit.kind, &fit.params, next, horizons)?;
    Ok(path.iter().map(|v| v.sqrt() * ann).sum::<f64>() / horizons as f64)
}

/// Daily form of [`forecast_multi_period_average`]: averages the forecasts for
/// days `t+1..=T` where `t` is the date of the last return.
pub fn forecast_multi_day_average(fit: &FitResult, returns: &ReturnSeries, maturity: NaiveDate) -> Result<f64> {
    if returns.frequency != Frequency::Daily {
        return Err(Error::InvalidInput("multi-day average requires daily returns".into()));
    }
    forecast_multi_period_average(fit, returns, day_start(maturity))
}

/// Simulated returns `r_t = z_t v_t`, deterministic in `seed`. Daily
/// timestamps start on 2000-01-01.
pub fn simulate(kind: ModelKind, params: &GarchParams, n: usize, seed: u64) -> Result<ReturnSeries> {
    let values = simulate_values(kind, params, n, seed)?;
    Ok(ReturnSeries::daily_from_values(
        NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date"),
        values,
    ))
}

pub fn simulate_values(kind: ModelKind, params: &GarchParams, n: usize, seed: u64) -> Result<Vec<f64>> {
    const BURN_IN: usize = 1000;
    params.validate(kind)?;
    let mut var = match kind {
        ModelKind::Arch | ModelKind::Garch => params.unconditional_variance()?,
        ModelKind::Egarch => (params.a0 / (1.0 - params.beta)).exp(),
        _ => return Err(Error::Unsupported(format!("cannot simulate {kind}"))),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for i in 0..n + BURN_IN {
        let shock: f64 = StandardNormal.sample(&mut rng);
        let r = var.sqrt() * shock;
        if i >= BURN_IN {
            out.push(r);
        }
        var = next_variance(kind, params, r, var);
        if !var.is_finite() || var <= 0.0 {
            return Err(Error::NumericalOverflow { index: i });
        }
    }
    Ok(out)
}

/// Dated annualized forecasts. Each entry is keyed by the forecast origin `t`
/// and holds the forecast for the period(s) after it; `None` marks an origin
/// where estimation failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSeries {
    pub kind: ModelKind,
    pub lookback: LookbackSpec,
    pub horizon: Horizon,
    pub entries: Vec<(NaiveDate, Option<f64>)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum Horizon {
    SingleDay,
    MultiDayAverage { maturity: NaiveDate },
}

impl ForecastSeries {
    pub fn get(&self, date: NaiveDate) -> Option<f64> {
        self.entries
            .binary_search_by_key(&date, |(d, _)| *d)
            .ok()
            .and_then(|i| self.entries[i].1)
    }

    pub fn values(&self) -> Vec<f64> {
        self.entries.iter().filter_map(|(_, v)| *v).collect()
    }

    pub fn missing(&self) -> usize {
        self.entries.iter().filter(|(_, v)| v.is_none()).count()
    }

    pub fn name(&self) -> String {
        format!("{} {}", self.kind, self.lookback)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["date", "model", "lookback", "forecast"])?;
        for (d, v) in &self.entries {
            w.write_record([
                d.to_string(),
                self.kind.to_string(),
                self.lookback.to_string(),
                v.map(|x| format!("{x:.10}")).unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Writes one CSV row per fitted parameter.
pub fn write_fits_csv<W: std::io::Write>(fits: &[FitResult], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "model", "param", "value", "std_err", "t_stat", "loglik", "aic", "bic", "n", "start", "end",
    ])?;
    for fit in fits {
        for ((name, value, t), se) in fit.estimates().into_iter().zip(&fit.std_errors) {
            w.write_record([
                fit.kind.to_string(),
                name.to_string(),
                format!("{value:.6e}"),
                format!("{se:.6e}"),
                format!("{t:.4}"),
                format!("{:.4}", fit.loglik),
                format!("{:.4}", fit.aic),
                format!("{:.4}", fit.bic),
                fit.n.to_string(),
                fit.window.0.date_naive().to_string(),
                fit.window.1.date_naive().to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(values: Vec<f64>) -> ReturnSeries {
        ReturnSeries::daily_from_values(NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(), values)
    }

    #[test]
    fn ema_lambda_for_365() {
        assert!((EmaConfig::default().lambda() - 0.005_464_480_874_316_94).abs() < 1e-15);
    }

    #[test]
    fn ema_fixed_point_and_one_step() {
        let cfg = EmaConfig { seed: Some(0.0004), ..Default::default() };
        assert!(ema_variance(&[0.02; 20], &cfg).unwrap().iter().all(|v| (v - 0.0004).abs() < 1e-18));
        let cfg = EmaConfig { seed: Some(0.0001), ..Default::default() };
        let l = 2.0 / 366.0;
        let z = ema_variance(&[0.02], &cfg).unwrap();
        assert_eq!(z, vec![l * 0.0001 + (1.0 - l) * 0.0004]);
        assert!(ema_variance(&[], &cfg).is_err());
    }

    #[test]
    fn ema_conventional_switch() {
        let cfg = EmaConfig { weighting: EmaWeighting::Conventional, ..Default::default() };
        assert!((cfg.lambda() - (1.0 - 2.0 / 366.0)).abs() < 1e-15);
    }

    #[test]
    fn garch_without_dynamics_is_constant() {
        let r = vec![0.05, -0.02, 0.01, 0.03];
        let v = variance_filter(ModelKind::Garch, &GarchParams::garch(2e-4, 0.0, 0.0), &r).unwrap();
        assert!(v[1..].iter().all(|x| *x == 2e-4));
    }

    #[test]
    fn arch_hand_step() {
        let v = next_variance(ModelKind::Arch, &GarchParams::arch(1e-4, 0.2), 0.05, 123.0);
        assert!((v - 6e-4).abs() < 1e-18);
        let path = variance_filter(ModelKind::Arch, &GarchParams::arch(1e-4, 0.2), &[0.05, 0.0]).unwrap();
        assert!((path[1] - 6e-4).abs() < 1e-18);
    }

    #[test]
    fn egarch_symmetric_without_theta() {
        let r = simulate_values(ModelKind::Garch, &GarchParams::garch(1e-5, 0.1, 0.85), 500, 3).unwrap();
        let neg: Vec<f64> = r.iter().map(|x| -x).collect();
        let p = GarchParams::egarch(-0.5, 0.15, 0.0, 0.93);
        let a = variance_filter(ModelKind::Egarch, &p, &r).unwrap();
        let b = variance_filter(ModelKind::Egarch, &p, &neg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!(((x - y) / x).abs() < 1e-12);
        }
        let p = GarchParams::egarch(-0.5, 0.15, 0.2, 0.93);
        let c = variance_filter(ModelKind::Egarch, &p, &r).unwrap();
        let d = variance_filter(ModelKind::Egarch, &p, &neg).unwrap();
        assert!(c.iter().zip(&d).any(|(x, y)| (x - y).abs() > 1e-9));
    }

    #[test]
    fn overflow_reported() {
        let p = GarchParams::egarch(50.0, 50.0, 0.0, 0.99);
        let r = vec![1.0; 500];
        assert!(matches!(
            variance_filter(ModelKind::Egarch, &p, &r),
            Err(Error::NumericalOverflow { .. })
        ));
    }

    #[test]
    fn unconditional_vol_examples() {
        let v = unconditional_vol(&GarchParams::garch(1.36e-4, 0.11, 0.83)).unwrap();
        assert!((v - 0.9096).abs() < 0.002, "{v}");
        let v = unconditional_vol(&GarchParams::garch(4e-4, 0.0, 0.0)).unwrap();
        assert!((v - 0.02 * 365f64.sqrt()).abs() < 1e-15);
        assert!(matches!(
            unconditional_vol(&GarchParams::garch(1e-4, 0.5, 0.5)),
            Err(Error::NonStationary { .. })
        ));
    }

    #[test]
    fn one_step_hand_case() {
        let p = GarchParams::garch(1e-4, 0.1, 0.8);
        let next = next_variance(ModelKind::Garch, &p, 0.02, 4e-4);
        assert!((next - 4.6e-4).abs() < 1e-18);
    }

    #[test]
    fn constant_model_forecast_ignores_data() {
        let p = GarchParams::garch(2.5e-4, 0.0, 0.0);
        let r = series(vec![0.1, -0.3, 0.05, 0.0, 0.2]);
        let fit = FitResult {
            kind: ModelKind::Garch,
            params: p,
            std_errors: vec![],
            tstats: vec![],
            loglik: 0.0,
            aic: 0.0,
            bic: 0.0,
            n: 5,
            window: (r.timestamps()[0], r.timestamps()[4]),
            pinned: vec![],
        };
        let f = forecast_one_step(&fit, &r).unwrap();
        assert!((f - 2.5e-4f64.sqrt() * 365f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn term_structure_hand_case() {
        let p = GarchParams::garch(1e-4, 0.1, 0.8);
        let v = variance_term_structure(ModelKind::Garch, &p, 2e-4, 3).unwrap();
        let expect = [2e-4, 2.8e-4, 3.52e-4];
        for (a, b) in v.iter().zip(expect) {
            assert!((a - b).abs() < 1e-18, "{a} {b}");
        }
        let fixed = variance_term_structure(ModelKind::Garch, &p, 1e-3, 10).unwrap();
        assert!(fixed.iter().all(|x| (x - 1e-3).abs() < 1e-18));
    }

    #[test]
    fn simulation_is_deterministic() {
        let p = GarchParams::garch(1e-5, 0.1, 0.85);
        assert_eq!(
            simulate(ModelKind::Garch, &p, 100, 11).unwrap(),
            simulate(ModelKind::Garch, &p, 100, 11).unwrap()
        );
        assert_ne!(
            simulate(ModelKind::Garch, &p, 100, 11).unwrap(),
            simulate(ModelKind::Garch, &p, 100, 12).unwrap()
        );
        assert!(simulate(ModelKind::Garch, &GarchParams::garch(1e-5, 0.5, 0.6), 10, 1).is_err());
    }

    #[test]
    fn iid_simulation_matches_variance() {
        let a0 = 4e-4;
        let r = simulate_values(ModelKind::Garch, &GarchParams::garch(a0, 0.0, 0.0), 100_000, 5).unwrap();
        let v = sample_variance(&r);
        let se = a0 * (2.0 / 100_000f64).sqrt();
        assert!((v - a0).abs() < 3.0 * se, "{v}");
    }

    #[test]
    fn garch_simulation_long_run_variance() {
        let p = GarchParams::garch(1e-5, 0.1, 0.85);
        let r = simulate_values(ModelKind::Garch, &p, 100_000, 9).unwrap();
        let v = sample_variance(&r);
        let target = p.unconditional_variance().unwrap();
        assert!(((v - target) / target).abs() < 0.05, "{v} vs {target}");
    }

    #[test]
    fn aic_bic_identities() {
        let r = simulate(ModelKind::Garch, &GarchParams::garch(1e-5, 0.1, 0.85), 2000, 1).unwrap();
        for kind in [ModelKind::Arch, ModelKind::Garch, ModelKind::Egarch] {
            let fit = fit_mle(kind, &r).unwrap();
            let k = kind.param_count() as f64;
            assert_eq!(fit.aic, 2.0 * k - 2.0 * fit.loglik);
            assert_eq!(fit.bic, k * (fit.n as f64).ln() - 2.0 * fit.loglik);
            assert_eq!(fit.tstats.len(), kind.param_count());
        }
    }

    #[test]
    fn garch_nests_arch() {
        let r = simulate_values(ModelKind::Arch, &GarchParams::arch(2e-4, 0.3), 1500, 4).unwrap();
        let a = GarchParams::arch(2.1e-4, 0.27);
        let g = GarchParams::garch(2.1e-4, 0.27, 0.0);
        let la = log_likelihood(ModelKind::Arch, &a, &r);
        let lg = log_likelihood(ModelKind::Garch, &g, &r);
        assert!((la - lg).abs() < 1e-9);
    }

    #[test]
    fn iid_returns_give_small_alpha() {
        let r = simulate(ModelKind::Garch, &GarchParams::garch(4e-4, 0.0, 0.0), 10_000, 21).unwrap();
        let fit = fit_mle(ModelKind::Garch, &r).unwrap();
        assert!(fit.params.alpha.abs() < 0.05, "{:?}", fit.params);
    }

    #[test]
    fn too_short_window_rejected() {
        let r = series(vec![0.01; 10]);
        assert!(matches!(fit_mle(ModelKind::Garch, &r), Err(Error::InsufficientData { .. })));
        assert!(matches!(fit_mle(ModelKind::Hist, &r), Err(Error::Unsupported(_))));
    }
}
