use serde::Serialize;
use serde_json::json;

use super::commands::{finite_solution, maybe_perturb, SOLVE_HORIZON};
use super::{Context, RunArgs, EXIT_OK, EXIT_VERIFY_FAILED};
use crate::error::Result;
use crate::estimator;
use crate::export;
use crate::finite_horizon::{optimal_cost, stationarity_residuals};
use crate::infinite_horizon::certify;
use crate::oracle::{exact_cost, gain_gradient, gain_gradient_infinite, kalman_oracle};
use crate::policy::StructuredPolicy;
use crate::simulation::{monte_carlo, mss_diagnostics, simulate, SimulationConfig};

const GRADIENT_TOL: f64 = 1e-6;
const IDENTITY_TOL: f64 = 1e-9;
const MSS_STEPS: usize = 100;

#[derive(Clone, Debug, Serialize)]
pub(crate) struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

fn check(name: &'static str, measured: f64, tolerance: f64, detail: impl Into<String>) -> Check {
    Check {
        name,
        passed: measured <= tolerance,
        measured,
        tolerance,
        detail: detail.into(),
    }
}

pub(crate) fn verify(ctx: &Context, args: &RunArgs) -> Result<i32> {
    let header = export::header("verify", args)?;
    let mut checks = Vec::new();
    let horizon = args.horizon_or(SOLVE_HORIZON);
    let (model, cost) = (&ctx.model, &ctx.cost);

    let fin = finite_solution(ctx, args, horizon)?;
    let policy = maybe_perturb(StructuredPolicy::from_finite(&fin), args);

    let grad = gain_gradient(model, &policy, cost, horizon, fin.discounted)?;
    checks.push(check(
        "finite_gradient",
        grad.max_relative,
        GRADIENT_TOL,
        format!("largest relative derivative at gain {:?}", grad.argmax),
    ));

    let config = SimulationConfig::new(horizon + 1, args.seed);
    let trace = simulate(model, cost, &policy, &config, 0)?;
    let recursive = estimator::run(model, &policy, &trace.x0, &trace.u0)?;
    let kalman = kalman_oracle(model, &policy, &trace.x0, &trace.u0)?;
    let scale = 1.0 + recursive.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let gap = recursive.iter().zip(&kalman).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max) / scale;
    checks.push(check("kalman_oracle", gap, IDENTITY_TOL, "relative max distance of the two estimates"));

    let residuals = stationarity_residuals(&fin, &trace);
    checks.push(check("stationarity_measurable", residuals.max_hat(), IDENTITY_TOL, "max over steps"));
    checks.push(check("stationarity_orthogonal", residuals.max_tilde(), IDENTITY_TOL, "max over steps"));

    let mc = monte_carlo(model, cost, &policy, &config, args.trials, fin.discounted)?;
    let exact = exact_cost(model, &policy, cost, horizon, fin.discounted)?;
    let analytic = optimal_cost(&fin, model)?;
    let se = mc.standard_error.max(f64::MIN_POSITIVE);
    checks.push(check(
        "monte_carlo_vs_exact",
        (mc.mean_cost - exact).abs() / se,
        3.0,
        format!("empirical {} exact {} (standard errors)", mc.mean_cost, exact),
    ));
    checks.push(check(
        "monte_carlo_vs_analytic",
        (mc.mean_cost - analytic).abs() / se,
        3.0,
        format!("empirical {} analytic {} (standard errors)", mc.mean_cost, analytic),
    ));

    if cost.gamma.is_some() {
        let (sol, verdict) = certify(&ctx.compact, cost)?;
        checks.push(Check {
            name: "stabilizability_certificate",
            passed: verdict.is_stabilizable(),
            measured: verdict.inequality_margin,
            tolerance: 0.0,
            detail: format!("min eigenvalue of the inequality gap; spectral radius {}", verdict.spectral_radius),
        });
        if let Some(sol) = sol {
            checks.push(check("stationary_fixed_point", sol.fixed_point_residual, IDENTITY_TOL, "relative residual"));
            let stat = maybe_perturb(StructuredPolicy::from_stationary(&sol), args);
            let grad = gain_gradient_infinite(model, &stat, cost, 1e-13)?;
            checks.push(check(
                "stationary_gradient",
                grad.max_relative,
                GRADIENT_TOL,
                format!("largest relative derivative at entry {:?}", grad.argmax),
            ));
            let run = monte_carlo(model, cost, &stat, &SimulationConfig::new(MSS_STEPS, args.seed), args.trials, true)?;
            let mss = mss_diagnostics(&run, Some(verdict.spectral_radius));
            checks.push(Check {
                name: "mean_square_stability",
                passed: mss.mean_square_stable,
                measured: mss.final_mean_norm,
                tolerance: mss.decay_threshold,
                detail: format!("second moment plateau change {}", mss.plateau_relative_change),
            });
        }
    }

    let passed = checks.iter().all(|c| c.passed);
    for c in &checks {
        eprintln!("[{}] {} {:.3e} (tolerance {:.1e})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.measured, c.tolerance);
    }
    export::write_json(
        &args.out.join("verify.json"),
        &header,
        json!({ "model": ctx.name, "passed": passed, "checks": checks }),
    )?;
    Ok(if passed { EXIT_OK } else { EXIT_VERIFY_FAILED })
}
