//! Simulates a GARCH(1,1) path, fits ARCH, GARCH and EGARCH by maximum
//! likelihood, and prints a variance term structure.

use volrace::models::{fit_mle, forecast_one_step, simulate, unconditional_vol, variance_term_structure, GarchParams, ModelKind};

pub fn run_example() -> volrace::Result<()> {
    let truth = GarchParams::garch(2e-5, 0.10, 0.85);
    let returns = simulate(ModelKind::Garch, &truth, 1500, 11)?;
    println!("true unconditional vol {:.2}%", 100.0 * unconditional_vol(&truth)?);

    for kind in [ModelKind::Arch, ModelKind::Garch, ModelKind::Egarch] {
        let fit = fit_mle(kind, &returns)?;
        let est: Vec<String> = fit
            .estimates()
            .iter()
            .map(|(n, v, t)| format!("{n}={v:.4e} (t={t:.1})"))
            .collect();
        println!("{kind:<6} ll={:.1} aic={:.1} {}", fit.loglik, fit.aic, est.join(" "));
        let next = forecast_one_step(&fit, &returns)?;
        println!("       next-day vol forecast {:.2}%", 100.0 * next);
        if kind == ModelKind::Garch {
            let v1 = (next / 365f64.sqrt()).powi(2);
            let path = variance_term_structure(kind, &fit.params, v1, 5)?;
            println!("       term structure {:?}", path.iter().map(|v| format!("{:.2e}", v)).collect::<Vec<_>>());
        }
    }
    Ok(())
}

fn main() -> volrace::Result<()> {
    run_example()
}
