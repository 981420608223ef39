use serde_json::{json, Value};

use super::{Context, Format, Mode, RunArgs, EXIT_DIVERGED, EXIT_OK};
use crate::auv::{reference, ReferenceTrajectory};
use crate::error::Result;
use crate::export::{self, matrices, matrix, num, Table};
use crate::finite_horizon::{backward_riccati, discounted_backward_riccati, optimal_cost, DecentralizedGains, FiniteHorizonSolution};
use crate::infinite_horizon::{certify, noise_cost_term, observability_rank, solve_stationary_riccati, stationary_cost, StationarySolution};
use crate::linalg;
use crate::oracle::{exact_cost, perturb_policy};
use crate::policy::StructuredPolicy;
use crate::simulation::{monte_carlo, monte_carlo_traces, mss_diagnostics, trial_rng, SimulationConfig, SimulationTrace};

pub(crate) const SOLVE_HORIZON: usize = 20;
const SIMULATE_STEPS: usize = 100;
const CONVERGE_HORIZON: usize = 200;

pub(crate) fn finite_solution(ctx: &Context, args: &RunArgs, horizon: usize) -> Result<FiniteHorizonSolution> {
    if args.discounted {
        discounted_backward_riccati(&ctx.compact, &ctx.cost, horizon)
    } else {
        backward_riccati(&ctx.compact, &ctx.cost, horizon)
    }
}

/// Applies `--perturb-gains`, seeded from `--seed`.
pub(crate) fn maybe_perturb(policy: StructuredPolicy, args: &RunArgs) -> StructuredPolicy {
    match args.perturb_gains {
        Some(delta) => perturb_policy(&policy, delta, &mut trial_rng(args.seed, u64::MAX)),
        None => policy,
    }
}

fn gains_json(g: &DecentralizedGains) -> Value {
    json!({ "k00": matrix(&g.k00), "k01": matrix(&g.k01), "k10": matrix(&g.k10), "k11": matrix(&g.k11) })
}

fn push_gains(t: &mut Table, k: Option<usize>, g: &DecentralizedGains) {
    t.push_matrix(k, "k00", &g.k00);
    t.push_matrix(k, "k01", &g.k01);
    t.push_matrix(k, "k10", &g.k10);
    t.push_matrix(k, "k11", &g.k11);
}

fn push_scalar(t: &mut Table, name: &str, v: f64) {
    t.push(vec![String::new(), name.into(), "0".into(), "0".into(), num(v)]);
}

pub(crate) fn solve(ctx: &Context, args: &RunArgs) -> Result<i32> {
    let header = export::header("solve", args)?;
    let csv = args.format == Format::Csv;
    let path = args.out.join(if csv { "solution.csv" } else { "solution.json" });
    match args.mode {
        Mode::Stationary => {
            let (sol, verdict) = certify(&ctx.compact, &ctx.cost)?;
            let Some(sol) = sol else {
                export::write_json(&args.out.join("solution.json"), &header, json!({ "verdict": verdict }))?;
                eprintln!("lfns solve: {}", verdict.solver_error.as_deref().unwrap_or("no stationary solution"));
                return Ok(EXIT_DIVERGED);
            };
            let gains = sol.gains();
            let analytic = stationary_cost(&sol, &ctx.model)?;
            let noise = noise_cost_term(&sol, &ctx.model.noise_covariance());
            if csv {
                let mut t = Table::long_format();
                t.push_matrix(None, "p", &sol.p);
                t.push_matrix(None, "h", &sol.h);
                push_gains(&mut t, None, &gains);
                push_scalar(&mut t, "analytic_cost", analytic);
                push_scalar(&mut t, "noise_cost_term", noise);
                push_scalar(&mut t, "spectral_radius", verdict.spectral_radius);
                push_scalar(&mut t, "inequality_margin", verdict.inequality_margin);
                push_scalar(&mut t, "stabilizable", f64::from(u8::from(verdict.is_stabilizable())));
                t.write(&path, &header)?;
            } else {
                export::write_json(
                    &path,
                    &header,
                    json!({
                        "model": ctx.name,
                        "mode": "stationary",
                        "gamma": sol.gamma,
                        "iterations": sol.iterations,
                        "residual": sol.residual,
                        "fixed_point_residual": sol.fixed_point_residual,
                        "lyapunov_residual": sol.lyapunov_residual,
                        "monotone": sol.monotone,
                        "p": matrix(&sol.p),
                        "h": matrix(&sol.h),
                        "gains": gains_json(&gains),
                        "verdict": verdict,
                        "observability": observability_rank(&ctx.compact, &ctx.cost),
                        "noise_cost_term": noise,
                        "analytic_cost": analytic,
                    }),
                )?;
            }
        }
        Mode::Finite => {
            let horizon = args.horizon_or(SOLVE_HORIZON);
            let sol = finite_solution(ctx, args, horizon)?;
            let analytic = optimal_cost(&sol, &ctx.model)?;
            let gains = (0..=horizon).map(|k| sol.gains(k)).collect::<Result<Vec<_>>>()?;
            if csv {
                let mut t = Table::long_format();
                for (k, p) in sol.p_seq.iter().enumerate() {
                    t.push_matrix(Some(k), "p", p);
                }
                for (k, g) in sol.k_seq.iter().enumerate() {
                    t.push_matrix(Some(k), "k", g);
                    push_gains(&mut t, Some(k), &gains[k]);
                }
                push_scalar(&mut t, "analytic_cost", analytic);
                t.write(&path, &header)?;
            } else {
                export::write_json(
                    &path,
                    &header,
                    json!({
                        "model": ctx.name,
                        "mode": "finite",
                        "horizon": horizon,
                        "discounted": sol.discounted,
                        "gamma": sol.gamma,
                        "p": matrices(&sol.p_seq),
                        "k": matrices(&sol.k_seq),
                        "gains": gains.iter().map(gains_json).collect::<Vec<_>>(),
                        "asymmetry_flags": sol.asymmetry_flags,
                        "analytic_cost": analytic,
                    }),
                )?;
            }
        }
    }
    Ok(EXIT_OK)
}

enum Solved {
    Finite(FiniteHorizonSolution),
    Stationary(StationarySolution),
}

fn trace_record(t: &SimulationTrace) -> Value {
    let vs = |v: &[nalgebra::DVector<f64>]| v.iter().map(export::vector).collect::<Vec<_>>();
    json!({
        "trial": t.trial,
        "seed": t.seed,
        "diverged": t.diverged,
        "x0": vs(&t.x0),
        "x1": vs(&t.x1),
        "x1hat": vs(&t.x1hat),
        "u0": vs(&t.u0),
        "u1": vs(&t.u1),
        "stage_cost": t.stage_cost,
    })
}

pub(crate) fn simulate(ctx: &Context, args: &RunArgs) -> Result<i32> {
    let header = export::header("simulate", args)?;
    let (policy, solved, steps, discounted) = match args.mode {
        Mode::Stationary => {
            let sol = solve_stationary_riccati(&ctx.compact, &ctx.cost)?;
            let policy = StructuredPolicy::from_stationary(&sol);
            (policy, Solved::Stationary(sol), args.horizon_or(SIMULATE_STEPS), true)
        }
        Mode::Finite => {
            let horizon = args.horizon_or(SOLVE_HORIZON);
            let sol = finite_solution(ctx, args, horizon)?;
            (StructuredPolicy::from_finite(&sol), Solved::Finite(sol), horizon + 1, args.discounted)
        }
    };
    let policy = maybe_perturb(policy, args);
    let config = SimulationConfig::new(steps, args.seed);
    let summary = monte_carlo(&ctx.model, &ctx.cost, &policy, &config, args.trials, discounted)?;
    let exact = exact_cost(&ctx.model, &policy, &ctx.cost, steps.saturating_sub(1), discounted)?;
    let (analytic, mss) = match &solved {
        Solved::Stationary(sol) => {
            let rho = linalg::spectral_radius(&sol.closed_loop(&ctx.compact));
            (stationary_cost(sol, &ctx.model)?, Some(mss_diagnostics(&summary, Some(rho))))
        }
        Solved::Finite(sol) => (optimal_cost(sol, &ctx.model)?, None),
    };

    let kept = args.trials.min(args.max_traces);
    let traces = monte_carlo_traces(&ctx.model, &ctx.cost, &policy, &config, 0, kept)?;
    export::write_jsonl(&args.out.join("traces.jsonl"), &header, traces.iter().map(trace_record))?;

    export::write_json(
        &args.out.join("summary.json"),
        &header,
        json!({
            "model": ctx.name,
            "steps": steps,
            "discounted": discounted,
            "analytic_cost": analytic,
            "exact_cost": exact,
            "monte_carlo": summary,
            "mss": mss,
        }),
    )?;

    let n = ctx.model.n;
    let mut columns = vec!["k".to_string()];
    columns.extend((0..n).map(|i| format!("x0_{i}")));
    columns.extend((0..n).map(|i| format!("x1_{i}")));
    columns.extend(["mean_norm".to_string(), "second_moment".to_string()]);
    let mut t = Table::new(columns);
    for (k, mean) in summary.mean_state.iter().enumerate() {
        let mut row = vec![k.to_string()];
        row.extend(mean.iter().map(|&v| num(v)));
        row.push(num(summary.mean_norm[k]));
        row.push(num(summary.second_moment[k]));
        t.push(row);
    }
    t.write(&args.out.join("mean_errors.csv"), &header)?;

    if ctx.name == "auv-paper" && n == 6 {
        positions_table(&summary.mean_state).write(&args.out.join("positions.csv"), &header)?;
    }
    Ok(EXIT_OK)
}

/// Mean actual pose `z¹ + η_d` against the reference, per vessel and channel.
fn positions_table(mean_state: &[Vec<f64>]) -> Table {
    let refs = [ReferenceTrajectory::leader(), ReferenceTrajectory::follower()];
    let mut t = Table::new(["k", "vessel", "channel", "reference", "actual"]);
    for (k, mean) in mean_state.iter().enumerate() {
        for (vessel, traj) in refs.iter().enumerate() {
            let r = reference(traj, k as i64);
            for (c, channel) in ["x", "y", "psi"].iter().enumerate() {
                let actual = mean[6 * vessel + c] + r[c];
                t.push(vec![k.to_string(), vessel.to_string(), channel.to_string(), num(r[c]), num(actual)]);
            }
        }
    }
    t
}

pub(crate) fn converge(ctx: &Context, args: &RunArgs) -> Result<i32> {
    let header = export::header("converge", args)?;
    ctx.cost.require_gamma()?;
    let max = args.horizon_or(CONVERGE_HORIZON);
    let sol = solve_stationary_riccati(&ctx.compact, &ctx.cost)?;
    let stationary = stationary_cost(&sol, &ctx.model)?;
    let costs = (0..=max)
        .map(|n| optimal_cost(&discounted_backward_riccati(&ctx.compact, &ctx.cost, n)?, &ctx.model))
        .collect::<Result<Vec<_>>>()?;
    let monotone = costs.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-12));
    let gap = |c: f64| (c - stationary).abs() / stationary.abs().max(f64::MIN_POSITIVE);
    if args.format == Format::Csv {
        let mut t = Table::new(["horizon", "cost", "stationary_cost", "relative_gap"]);
        for (n, c) in costs.iter().enumerate() {
            t.push(vec![n.to_string(), num(*c), num(stationary), num(gap(*c))]);
        }
        t.write(&args.out.join("converge.csv"), &header)?;
    } else {
        export::write_json(
            &args.out.join("converge.json"),
            &header,
            json!({
                "model": ctx.name,
                "stationary_cost": stationary,
                "monotone": monotone,
                "final_relative_gap": gap(*costs.last().expect("horizon 0 included")),
                "horizons": (0..=max).collect::<Vec<_>>(),
                "costs": costs,
            }),
        )?;
    }
    Ok(EXIT_OK)
}
