use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chrono::{TimeZone, Utc};
use volrace::market_data::{write_price_csv, Frequency, PriceSeries};
use volrace::options::{instrument_name, OptionKind};
use volrace::synthetic::{generate, MarketConfig, SyntheticMarket};

fn volrace(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_volrace"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let o = volrace(args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_market(dir: &Path) -> (SyntheticMarket, PathBuf, PathBuf) {
    let m = generate(&MarketConfig {
        days: 120,
        listing_days: 30,
        strikes: vec![7000.0, 8000.0, 9000.0],
        iv_mean: 0.40,
        ..MarketConfig::default()
    })
    .unwrap();
    let spot = dir.join("spot.csv");
    write_price_csv(&m.spot, fs::File::create(&spot).unwrap()).unwrap();
    let opts = dir.join("options.csv");
    let mut w = csv::Writer::from_path(&opts).unwrap();
    w.write_record(["timestamp", "instrument", "premium_usd", "volume_usd", "underlying_price"]).unwrap();
    for t in &m.ticks {
        w.write_record([
            t.timestamp.to_rfc3339(),
            t.instrument.clone(),
            t.premium_usd.to_string(),
            t.volume_usd.to_string(),
            t.underlying_price.to_string(),
        ])
        .unwrap();
    }
    w.flush().unwrap();
    (m, spot, opts)
}

#[test]
fn simulate_then_fit() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let stdout = ok(&["simulate", "--n", "800", "--seed", "3", "--out", s(&out)]);
    assert!(stdout.contains("simulated_prices.csv"));
    let prices = out.join("simulated_prices.csv");
    let fit_out = dir.path().join("fit");
    ok(&["fit", "--model", "GARCH", "--spot", s(&prices), "--spot-frequency", "1d", "--out", s(&fit_out)]);
    let fits = fs::read_to_string(fit_out.join("fits.csv")).unwrap();
    assert!(fits.lines().count() >= 2, "{fits}");
    assert!(fits.contains("GARCH"));
}

#[test]
fn stats_on_constant_prices_report_zero_vol() {
    let dir = tempfile::tempdir().unwrap();
    let t0 = Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap();
    let series = PriceSeries::from_closes("flat", Frequency::Hour1, t0, &vec![7000.0; 24 * 10]).unwrap();
    let spot = dir.path().join("flat.csv");
    write_price_csv(&series, fs::File::create(&spot).unwrap()).unwrap();
    let out = dir.path().join("out");
    ok(&["stats", "--spot", s(&spot), "--spot-frequency", "1h", "--out", s(&out)]);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("stats.json")).unwrap()).unwrap();
    let text = json.to_string();
    assert!(!text.contains("NaN") && !text.contains("null"), "{text}");
    let mut zero_vols = 0;
    fn walk(v: &serde_json::Value, hits: &mut usize) {
        match v {
            serde_json::Value::Object(m) => {
                for (k, x) in m {
                    if k.contains("vol") {
                        if let Some(f) = x.as_f64() {
                            assert_eq!(f, 0.0, "{k}");
                            *hits += 1;
                        }
                    }
                    walk(x, hits);
                }
            }
            serde_json::Value::Array(a) => a.iter().for_each(|x| walk(x, hits)),
            _ => {}
        }
    }
    walk(&json, &mut zero_vols);
    assert!(zero_vols > 0, "{text}");
}

#[test]
fn iv_and_backtest_on_synthetic_market_are_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let (m, spot, opts) = write_market(dir.path());
    let instrument = instrument_name(8000.0, OptionKind::Call, m.expiry);
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        format!(
            "expiry = \"{}\"\n[data]\nspot = \"{}\"\nspot_frequency = \"1h\"\noptions = \"{}\"\n[strategy]\ninstrument = \"{}\"\n",
            m.expiry,
            s(&spot),
            s(&opts),
            instrument
        ),
    )
    .unwrap();

    let iv_out = dir.path().join("iv");
    ok(&["iv", "--config", s(&cfg), "--out", s(&iv_out)]);
    let atm = fs::read_to_string(iv_out.join("atm_iv.csv")).unwrap();
    let rows: Vec<&str> = atm.lines().skip(1).collect();
    assert!(!rows.is_empty());
    for r in rows {
        let iv: f64 = r.split(',').nth(3).unwrap().parse().unwrap();
        assert!((0.1..1.0).contains(&iv), "{r}");
    }

    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["backtest", "--config", s(&cfg), "--out", s(&a)]);
    ok(&["backtest", "--config", s(&cfg), "--out", s(&b)]);
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.iter().any(|n| n.to_string_lossy() == "performance.csv"));
    assert!(names.iter().any(|n| n.to_string_lossy().starts_with("ledger_")));
    for n in &names {
        assert_eq!(fs::read(a.join(n)).unwrap(), fs::read(b.join(n)).unwrap(), "{n:?} differs");
    }
    let sched_name = names.iter().find(|n| n.to_string_lossy().starts_with("forecast_schedule_")).unwrap();
    let sched = fs::read_to_string(a.join(sched_name)).unwrap();
    assert!(sched.lines().count() > 1);
    let ledger_name = names.iter().find(|n| n.to_string_lossy().starts_with("ledger_")).unwrap();
    let ledger = fs::read_to_string(a.join(ledger_name)).unwrap();
    assert!(ledger.lines().count() > 1, "no trades");
}

#[test]
fn bad_config_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "no_such_key = 1\n").unwrap();
    let o = volrace(&["stats", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));

    let o = volrace(&["stats", "--spot", s(&dir.path().join("missing.csv"))]);
    assert!(!o.status.success());

    fs::write(&cfg, "[strategy]\nentry_threshold = 0.0\nexit_threshold = 0.1\n").unwrap();
    let o = volrace(&["stats", "--config", s(&cfg)]);
    assert!(!o.status.success());
}
