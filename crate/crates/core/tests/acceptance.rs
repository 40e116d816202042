//! Acceptance gate: one PASS/FAIL/SKIP line per criterion.
//!
//! Run with `cargo test -p volrace --test acceptance -- --nocapture`.
//! Criterion 10 needs the original datasets; point `VOLRACE_DATA_DIR` at a
//! directory holding `btcusdt_1min.csv`, `btcusd_1min.csv` and
//! `deribit_options.csv` (optionally `btcusd_perpetual_1min.csv`).

use std::path::Path;
use std::time::{Duration as StdDuration, Instant};

use chrono::{DateTime, Duration, NaiveDate, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use volrace::backtest::{
    garch_forecast_schedule, run_backtest, Action, Cents, FeeModel, ForecastSchedule, StrategyConfig, TradeRecord,
};
use volrace::forecast_eval::{
    daily_realized_vols, mae, ols, ols_predict, shift_to_origin, walk_forward, LookbackSpec, WalkForwardOptions,
};
use volrace::market_data::{
    descriptive_stats, load_price_csv, resample, simple_returns, Frequency, PriceBar, PriceSeries,
};
use volrace::models::{
    fit_mle, fit_mle_with, log_likelihood, simulate, unconditional_vol, FitOptions, FitResult, GarchParams, ModelKind,
};
use volrace::options::{
    bs_delta, bs_price, implied_vol, load_option_trades, BsInputs, OptionKind, OptionTrade, RISK_FREE_RATE,
};
use volrace::smile::{adjusted_forecast, slope_on_date, SmileObservation};
use volrace::synthetic::{generate, MarketConfig};

struct Outcome {
    pass: Option<bool>,
    detail: String,
}

fn pass(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass: Some(ok),
        detail: detail.into(),
    }
}

fn skip(detail: impl Into<String>) -> Outcome {
    Outcome {
        pass: None,
        detail: detail.into(),
    }
}

#[test]
fn acceptance() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("1 unconditional-vol anchor", c1_unconditional_vol),
        ("2 GARCH parameter recovery", c2_garch_recovery),
        ("3 nesting and information criteria", c3_nesting),
        ("4 Black-Scholes suite", c4_black_scholes),
        ("5 OLS oracle", c5_ols),
        ("6 backtest ledger oracle", c6_ledger),
        ("7 fee model", c7_fees),
        ("8 causality replay", c8_causality),
        ("9 smile arithmetic", c9_smile),
        ("10 data replication", c10_replication),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        let t = Instant::now();
        let o = check();
        let tag = match o.pass {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "SKIP",
        };
        println!("[{tag}] {name}: {} ({:.2?})", o.detail, t.elapsed());
        if o.pass == Some(false) {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

fn c1_unconditional_vol() -> Outcome {
    let t = Instant::now();
    let v = unconditional_vol(&GarchParams::garch(1.36e-4, 0.11, 0.83)).unwrap();
    let elapsed = t.elapsed();
    pass(
        (v - 0.9096).abs() <= 0.002 && elapsed < StdDuration::from_millis(1),
        format!("{:.4}% in {elapsed:.2?}", v * 100.0),
    )
}

fn c2_garch_recovery() -> Outcome {
    let truth = GarchParams::garch(1e-5, 0.10, 0.85);
    let t = Instant::now();
    let hits: Vec<(u64, bool, f64, f64)> = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let r = simulate(ModelKind::Garch, &truth, 20_000, seed).unwrap();
            match fit_mle(ModelKind::Garch, &r) {
                Ok(f) => {
                    let ok = (f.params.alpha - 0.10).abs() <= 0.03 && (f.params.beta - 0.85).abs() <= 0.03;
                    (seed, ok, f.params.alpha, f.params.beta)
                }
                Err(_) => (seed, false, f64::NAN, f64::NAN),
            }
        })
        .collect();
    let elapsed = t.elapsed();
    let good = hits.iter().filter(|h| h.1).count();
    let misses: Vec<String> = hits
        .iter()
        .filter(|h| !h.1)
        .map(|h| format!("seed {} ({:.3}, {:.3})", h.0, h.2, h.3))
        .collect();
    pass(
        good >= 95 && elapsed < StdDuration::from_secs(300),
        format!("{good}/100 within 0.03 in {elapsed:.1?}; misses: {misses:?}"),
    )
}

fn c3_nesting() -> Outcome {
    let series = [
        (ModelKind::Garch, GarchParams::garch(1e-5, 0.10, 0.85)),
        (ModelKind::Garch, GarchParams::garch(5e-5, 0.05, 0.90)),
        (ModelKind::Arch, GarchParams::arch(2e-4, 0.4)),
        (ModelKind::Arch, GarchParams::arch(4e-4, 0.0)),
        (ModelKind::Egarch, GarchParams::egarch(-0.4, 0.15, -0.05, 0.95)),
    ];
    let mut worst = f64::INFINITY;
    let mut identities = true;
    let mut checked = 0;
    for (i, (kind, p)) in series.iter().enumerate() {
        for seed in 0..4u64 {
            let r = simulate(*kind, p, 1500, 100 * i as u64 + seed).unwrap();
            let g = fit_mle(ModelKind::Garch, &r).unwrap();
            let a = fit_mle(ModelKind::Arch, &r).unwrap();
            worst = worst.min(g.loglik - a.loglik);
            for f in [&g, &a] {
                let k = f.kind.param_count() as f64;
                let n = r.len() as f64;
                identities &= f.aic == 2.0 * k - 2.0 * f.loglik;
                identities &= f.bic == k * n.ln() - 2.0 * f.loglik;
                identities &= f.loglik == log_likelihood(f.kind, &f.params, r.values());
            }
            checked += 1;
        }
    }
    pass(
        worst >= -1e-6 && identities,
        format!("{checked} series; min(LL_garch - LL_arch) = {worst:.3e}; identities exact: {identities}"),
    )
}

fn c4_black_scholes() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut parity = 0.0f64;
    for _ in 0..1000 {
        let s = rng.random_range(0.5..2.0);
        let k = rng.random_range(0.5..2.0);
        let tau = rng.random_range(0.01..2.0);
        let vol = rng.random_range(0.05..2.0);
        let mut call = BsInputs::new(OptionKind::Call, s, k, tau, vol);
        call.rate = rng.random_range(0.0..0.1);
        let put = BsInputs {
            kind: OptionKind::Put,
            ..call
        };
        let lhs = bs_price(&call) - bs_price(&put);
        let rhs = s - k * (-call.rate * tau).exp();
        parity = parity.max((lhs - rhs).abs());
    }

    let mut round_trip = 0.0f64;
    for m in [0.8, 0.9, 1.0, 1.1, 1.2] {
        for tau in [0.05, 0.1, 0.25, 0.5, 1.0] {
            for kind in [OptionKind::Call, OptionKind::Put] {
                let i = BsInputs::new(kind, 8000.0, 8000.0 * m, tau, 0.7);
                let iv = implied_vol(bs_price(&i), &i).unwrap_or(f64::NAN);
                round_trip = round_trip.max((iv - 0.7).abs());
            }
        }
    }

    let mut fd = 0.0f64;
    for _ in 0..200 {
        let s = rng.random_range(4000.0..12000.0);
        let i = BsInputs::new(
            if rng.random_bool(0.5) { OptionKind::Call } else { OptionKind::Put },
            s,
            rng.random_range(4000.0..12000.0),
            rng.random_range(0.02..1.5),
            rng.random_range(0.2..1.5),
        );
        let h = 1e-4 * s;
        let num = (bs_price(&i.with_spot(s + h)) - bs_price(&i.with_spot(s - h))) / (2.0 * h);
        fd = fd.max((num - bs_delta(&i)).abs());
    }
    pass(
        parity <= 1e-10 && round_trip <= 1e-6 && fd <= 1e-6,
        format!("parity {parity:.2e}, IV round-trip {round_trip:.2e}, delta vs FD {fd:.2e}"),
    )
}

fn c5_ols() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut coef_err = 0.0f64;
    let mut adj_exact = true;
    for _ in 0..100 {
        let n = rng.random_range(10..200);
        let (a, b) = (rng.random_range(-1.0..1.0), rng.random_range(-3.0..3.0));
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = x.iter().map(|xi| a + b * xi + rng.random_range(-0.5..0.5)).collect();
        let mx = x.iter().sum::<f64>() / n as f64;
        let my = y.iter().sum::<f64>() / n as f64;
        let sxy: f64 = x.iter().zip(&y).map(|(xi, yi)| (xi - mx) * (yi - my)).sum();
        let sxx: f64 = x.iter().map(|xi| (xi - mx).powi(2)).sum();
        let slope = sxy / sxx;
        let intercept = my - slope * mx;
        let res = ols(&y, &[("x", x.clone())]).unwrap();
        coef_err = coef_err
            .max((res.coefficients[0].estimate - intercept).abs())
            .max((res.coefficients[1].estimate - slope).abs());
        let nf = n as f64;
        adj_exact &= res.adj_r2 == 1.0 - (1.0 - res.r2) * (nf - 1.0) / (nf - 1.0 - 1.0);
    }
    let m = mae(&[0.5, 0.7, 0.9], &[0.6, 0.6, 0.6]).unwrap();
    let mae_ok = (m - 0.3 / 3.0 * 5.0 / 3.0).abs() < 1e-12 && (m - 0.1667).abs() < 5e-5;
    pass(
        coef_err <= 1e-10 && adj_exact && mae_ok,
        format!("max coefficient error {coef_err:.2e}; adj R2 exact: {adj_exact}; MAE {m:.4}"),
    )
}

fn utc(y: i32, m: u32, d: u32, h: u32) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(y, m, d, h, 0, 0).unwrap()
}

fn oracle_call(s: f64, k: f64, tau: f64, vol: f64, r: f64) -> (f64, f64) {
    let n = Normal::new(0.0, 1.0).unwrap();
    let sd = vol * tau.sqrt();
    let d1 = ((s / k).ln() + (r + 0.5 * vol * vol) * tau) / sd;
    let d2 = d1 - sd;
    (s * n.cdf(d1) - k * (-r * tau).exp() * n.cdf(d2), n.cdf(d1))
}

fn c6_ledger() -> Outcome {
    let expiry = NaiveDate::from_ymd_opt(2020, 3, 27).unwrap();
    let expiry_at = utc(2020, 3, 27, 8);
    let forecast = 0.70;
    // (hour, spot, iv): watch, open, rehedge, hold, rehedge, exit
    let path = [
        (1, 8000.0, 0.67),
        (2, 8000.0, 0.64),
        (3, 8400.0, 0.64),
        (4, 8410.0, 0.64),
        (5, 7900.0, 0.66),
        (6, 7900.0, 0.71),
    ];
    let ticks: Vec<OptionTrade> = path
        .iter()
        .map(|&(h, s, iv)| {
            let at = utc(2020, 1, 10, h);
            let tau = (expiry_at - at).num_seconds() as f64 / (365.0 * 86400.0);
            OptionTrade {
                timestamp: at,
                instrument: "BTC8000C27MAR20".into(),
                strike: 8000.0,
                expiry,
                kind: OptionKind::Call,
                premium_usd: oracle_call(s, 8000.0, tau, iv, RISK_FREE_RATE).0,
                volume_usd: 1000.0,
                underlying_price: s,
            }
        })
        .collect();
    // hourly hedge bars: the bar finishing at each tick closes at the tick's spot
    let bars: Vec<PriceBar> = path
        .iter()
        .map(|&(h, s, _)| PriceBar {
            timestamp: utc(2020, 1, 10, h - 1),
            close: s,
            volume: None,
        })
        .collect();
    let hedge = PriceSeries::new("perp", Frequency::Hour1, bars).unwrap();
    let sched = ForecastSchedule::constant(utc(2020, 1, 1, 0), forecast);
    let cfg = StrategyConfig::default();
    let res = match run_backtest(&cfg, &ticks, &hedge, &sched) {
        Ok(r) => r,
        Err(e) => return pass(false, format!("backtest error: {e}")),
    };

    // Hand ledger.
    let delta = |i: usize| {
        let (h, s, iv) = path[i];
        let tau = (expiry_at - utc(2020, 1, 10, h)).num_seconds() as f64 / (365.0 * 86400.0);
        oracle_call(s, 8000.0, tau, iv, RISK_FREE_RATE).1
    };
    let cents = |x: f64| (x * 100.0).round() as i64;
    let prem = |i: usize| cents(ticks[i].premium_usd);
    let (d1, d2, d3, d4) = (delta(1), delta(2), delta(3), delta(4));
    let hold_ok = (d3 - d2).abs() <= 0.02 && (d2 - d1).abs() > 0.02 && (d4 - d2).abs() > 0.02;
    let fee = FeeModel::default();
    let opt_fee = |i: usize| cents(fee.option_fee(ticks[i].premium_usd, path[i].1, 1.0));
    let perp_fee = |qty: f64, px: f64| cents(fee.perpetual_fee(qty.abs() * px));
    let expected: Vec<(Action, DateTime<Utc>, i64, i64, i64, i64, f64, i64, i64)> = vec![
        // action, time, premium, pnl_u, pnl_o, pnl_total, hedge_units_after, option fee, perp fee
        (Action::BuyToOpen, ticks[1].timestamp, prem(1), 0, 0, 0, -d1, opt_fee(1), perp_fee(d1, 8000.0)),
        (
            Action::Rehedge,
            ticks[2].timestamp,
            prem(2),
            cents(-d1 * 400.0),
            0,
            cents(-d1 * 400.0),
            -d2,
            0,
            perp_fee(d2 - d1, 8400.0),
        ),
        (
            Action::Rehedge,
            ticks[4].timestamp,
            prem(4),
            cents(-d2 * -500.0),
            0,
            cents(-d2 * -500.0),
            -d4,
            0,
            perp_fee(d4 - d2, 7900.0),
        ),
        (
            Action::SellToClose,
            ticks[5].timestamp,
            prem(5),
            0,
            prem(5) - prem(1),
            prem(5) - prem(1),
            0.0,
            opt_fee(5),
            perp_fee(d4, 7900.0),
        ),
    ];
    let mut mismatches = Vec::new();
    if res.records.len() != expected.len() {
        mismatches.push(format!("{} records, expected {}", res.records.len(), expected.len()));
    }
    for (i, (r, e)) in res.records.iter().zip(&expected).enumerate() {
        let got = (
            r.action,
            r.timestamp,
            r.option_premium.0,
            r.pnl_underlying.0,
            r.pnl_option.0,
            r.pnl_total.0,
            r.fees.option.0,
            r.fees.perpetual.0,
        );
        let want = (e.0, e.1, e.2, e.3, e.4, e.5, e.7, e.8);
        if got != want || (r.hedge_units - e.6).abs() > 1e-8 {
            mismatches.push(format!("event {i}: got {got:?}/{:.9}, want {want:?}/{:.9}", r.hedge_units, e.6));
        }
    }
    let neutral = res
        .records
        .iter()
        .filter(|r| matches!(r.action, Action::BuyToOpen | Action::SellToOpen | Action::Rehedge))
        .all(|r| r.net_delta.abs() <= 1e-9);
    let conserved = conservation(&res.records, res.curve.last().map(|c| c.1));
    pass(
        mismatches.is_empty() && neutral && conserved && hold_ok,
        format!(
            "{} events vs hand ledger; neutral {neutral}; cents conserved {conserved}; hold tick inside band {hold_ok}{}",
            res.records.len(),
            if mismatches.is_empty() { String::new() } else { format!("; {mismatches:?}") }
        ),
    )
}

fn conservation(records: &[TradeRecord], last: Option<Cents>) -> bool {
    let sum: Cents = records.iter().map(|r| r.pnl_total).sum();
    let parts = records
        .iter()
        .all(|r| r.pnl_total == r.pnl_underlying + r.pnl_option);
    parts && last.unwrap_or(Cents::ZERO) == sum
}

fn c7_fees() -> Outcome {
    let f = FeeModel::default();
    let a = Cents::from_usd(f.option_fee(2000.0, 8000.0, 1.0));
    let b = Cents::from_usd(f.option_fee(10.0, 8000.0, 1.0));
    let c = Cents::from_usd(f.perpetual_fee(8000.0));
    pass(
        a == Cents(320) && b == Cents(125) && c == Cents(600),
        format!("${a}, ${b}, ${c}"),
    )
}

fn c8_causality() -> Outcome {
    let market = generate(&MarketConfig {
        days: 260,
        listing_days: 60,
        ..MarketConfig::default()
    })
    .unwrap();
    let daily = simple_returns(&resample(&market.spot, Frequency::Daily).unwrap()).unwrap();
    let start = market.ticks[0].timestamp.date_naive();
    let opts = WalkForwardOptions::default();
    let fit = FitOptions::default();
    let cfg = StrategyConfig {
        instrument: market.ticks[0].instrument.clone(),
        ..StrategyConfig::default()
    };
    let last_tick = market.ticks.last().unwrap().timestamp;

    let run = |cut: Option<DateTime<Utc>>| {
        let spot = match cut {
            Some(c) => market.spot.truncated_before(c),
            None => market.spot.clone(),
        };
        let ticks: Vec<OptionTrade> = market
            .ticks
            .iter()
            .filter(|t| cut.is_none_or(|c| t.timestamp < c))
            .cloned()
            .collect();
        let returns = match cut {
            Some(c) => daily.up_to(c - Duration::days(1)),
            None => daily.clone(),
        };
        let fc = walk_forward(ModelKind::Garch, LookbackSpec::Whole, &returns, start, &opts).unwrap();
        let to = ticks.last().unwrap().timestamp;
        let sched = garch_forecast_schedule(&spot, start.and_hms_opt(0, 0, 0).unwrap().and_utc(), to, 24, market.expiry, &fit)
            .unwrap();
        let res = run_backtest(&cfg, &ticks, &spot, &sched).unwrap();
        (fc, sched, res)
    };
    let (full_fc, full_sched, full) = run(None);
    if full.records.is_empty() {
        return pass(false, "synthetic scenario produced no trades");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let span = (last_tick - market.ticks[0].timestamp).num_hours();
    let mut bad = Vec::new();
    for _ in 0..10 {
        let cut = market.ticks[0].timestamp + Duration::hours(rng.random_range(24..span));
        let cut = cut.date_naive().and_hms_opt(0, 0, 0).unwrap().and_utc();
        let (fc, sched, res) = run(Some(cut));
        let full_fc_prefix: Vec<_> = full_fc.entries.iter().filter(|e| day_end(e.0) <= cut).collect();
        let fc_prefix: Vec<_> = fc.entries.iter().collect();
        let sched_full: Vec<_> = full_sched.entries().iter().filter(|e| e.0 <= to_cut(cut)).collect();
        let sched_cut: Vec<_> = sched.entries().iter().collect();
        let ledger_full: Vec<String> = full
            .records
            .iter()
            .filter(|r| r.timestamp < cut)
            .map(|r| serde_json::to_string(r).unwrap())
            .collect();
        let ledger_cut: Vec<String> = res
            .records
            .iter()
            .filter(|r| r.reason != volrace::backtest::EventReason::Expiry)
            .map(|r| serde_json::to_string(r).unwrap())
            .collect();
        let fc_ok = format!("{full_fc_prefix:?}") == format!("{fc_prefix:?}");
        let sched_ok = format!("{sched_full:?}") == format!("{sched_cut:?}");
        if !(fc_ok && sched_ok && ledger_full == ledger_cut) {
            bad.push(format!(
                "cut {cut}: forecasts {fc_ok} schedule {sched_ok} ledger {}/{}",
                ledger_cut.len(),
                ledger_full.len()
            ));
        }
    }
    pass(
        bad.is_empty(),
        format!("10 truncations, {} events in full run{}", full.records.len(), if bad.is_empty() { String::new() } else { format!("; {bad:?}") }),
    )
}

fn day_end(d: NaiveDate) -> DateTime<Utc> {
    (d + chrono::Days::new(1)).and_hms_opt(0, 0, 0).unwrap().and_utc()
}

fn to_cut(cut: DateTime<Utc>) -> DateTime<Utc> {
    // the truncated schedule ends at its last tick, which is before the cut
    cut - Duration::seconds(1)
}

fn c9_smile() -> Outcome {
    let d = NaiveDate::from_ymd_opt(2020, 3, 5).unwrap();
    let obs = SmileObservation::new(d, 9000.0, [0.73, 0.70, 0.73], [0.7, 0.5, 0.3]).unwrap();
    let s = slope_on_date(&obs).unwrap();
    let same = adjusted_forecast(0.8123, 0.15, 0.42, 0.42);
    pass(
        (s - 0.15).abs() <= 1e-12 && same == 0.8123,
        format!("slope {s:.15}; unadjusted at equal deltas: {}", same == 0.8123),
    )
}

fn c10_replication() -> Outcome {
    let Ok(dir) = std::env::var("VOLRACE_DATA_DIR") else {
        return skip("VOLRACE_DATA_DIR not set");
    };
    match replicate(Path::new(&dir)) {
        Ok((ok, detail)) => pass(ok, detail),
        Err(e) => pass(false, format!("error: {e}")),
    }
}

fn replicate(dir: &Path) -> volrace::Result<(bool, String)> {
    let end = Utc.with_ymd_and_hms(2020, 3, 27, 0, 0, 0).unwrap();
    let binance = load_price_csv(dir.join("btcusdt_1min.csv"), Frequency::Minute)?.truncated_before(end);
    let daily = simple_returns(&resample(&binance, Frequency::Daily)?)?;
    let stats = descriptive_stats(&daily)?;
    let vol_ok = (stats.annualized_vol - 0.8583).abs() <= 0.005;

    let garch: FitResult = fit_mle_with(ModelKind::Garch, &daily, &FitOptions::default())?;
    let fit_ok = (garch.params.alpha - 0.11).abs() <= 0.02 && (garch.params.beta - 0.83).abs() <= 0.02;

    let target = shift_to_origin(&daily_realized_vols(&binance));
    let fc = walk_forward(
        ModelKind::Garch,
        LookbackSpec::Days(365),
        &daily,
        NaiveDate::from_ymd_opt(2018, 8, 17).unwrap(),
        &WalkForwardOptions::default(),
    )?;
    let reg = ols_predict(&target, &[("GARCH", &fc.to_dated())])?;
    let r2_ok = (reg.adj_r2 - 0.4902).abs() <= 0.02;

    let deribit = load_price_csv(dir.join("btcusd_1min.csv"), Frequency::Minute)?.truncated_before(end);
    let hedge = match load_price_csv(dir.join("btcusd_perpetual_1min.csv"), Frequency::Minute) {
        Ok(p) => p,
        Err(_) => deribit.clone(),
    };
    let trades = load_option_trades(dir.join("deribit_options.csv"))?;
    let cfg = StrategyConfig::new(0.05, 0.0);
    let expiry = NaiveDate::from_ymd_opt(2020, 3, 27).unwrap();
    let sched = garch_forecast_schedule(
        &deribit,
        Utc.with_ymd_and_hms(2019, 9, 10, 0, 0, 0).unwrap(),
        end,
        24,
        expiry,
        &FitOptions::default(),
    )?;
    let bt = run_backtest(&cfg, &trades, &hedge, &sched)?;
    let trades_ok = bt.report.trades.abs_diff(25) <= 3;
    let pnl_ok = (bt.report.total_pnl.usd() - 2251.0).abs() <= 0.15 * 2251.0;
    Ok((
        vol_ok && fit_ok && r2_ok && trades_ok && pnl_ok,
        format!(
            "daily vol {:.2}%, GARCH alpha {:.3} beta {:.3}, 365d adj R2 {:.2}%, trades {}, PNL ${}",
            stats.annualized_vol * 100.0,
            garch.params.alpha,
            garch.params.beta,
            reg.adj_r2 * 100.0,
            bt.report.trades,
            bt.report.total_pnl
        ),
    ))
}
