//! `lfns` command line: solve, simulate, converge and verify.
//!
//! Exit codes: 0 success, 1 unreadable input or output failure, 2 invalid
//! model or arguments, 3 solver divergence, 4 verification failure.

mod commands;
mod verify;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::Error;
use crate::model::{assemble_compact, CompactModel, CostSpec, LfnsModel, ModelSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_VERIFY_FAILED: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "lfns", version, about = "Decentralized LQ control of leader-follower networked systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the Riccati recursion or stationary equation and write gains.
    Solve(RunArgs),
    /// Monte Carlo closed-loop runs: traces, summary and plot data.
    Simulate(RunArgs),
    /// Finite-horizon discounted optimal cost against the horizon.
    Converge(RunArgs),
    /// Oracle checks with a pass/fail report.
    Verify(RunArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Finite,
    Stationary,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct RunArgs {
    /// Builtin model name (auv-paper, scalar-demo) or path to a JSON spec.
    #[arg(long)]
    pub model: String,
    #[arg(long, value_enum, default_value = "stationary")]
    pub mode: Mode,
    /// Horizon N (finite mode) or number of simulated steps; the default
    /// depends on the command.
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    pub trials: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Overrides the discount factor of the spec.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Discount the finite-horizon cost (stationary mode always discounts).
    #[arg(long)]
    pub discounted: bool,
    /// Output directory; not echoed into the files.
    #[arg(long, env = "LFNS_OUT_DIR", default_value = ".")]
    #[serde(skip)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
    /// Add seeded N(0, δ²) noise to every gain entry before running.
    #[arg(long, value_name = "DELTA")]
    pub perturb_gains: Option<f64>,
    /// Number of full trajectories kept in traces.jsonl.
    #[arg(long, default_value_t = 10)]
    pub max_traces: u64,
}

impl RunArgs {
    fn horizon_or(&self, default: usize) -> usize {
        self.horizon.unwrap_or(default)
    }
}

/// Loaded and validated model.
pub(crate) struct Context {
    pub name: String,
    pub model: LfnsModel,
    pub cost: CostSpec,
    pub compact: CompactModel,
}

impl Context {
    fn load(args: &RunArgs) -> crate::Result<Self> {
        let mut spec = ModelSpec::resolve(&args.model)?;
        if let Some(g) = args.gamma {
            spec.gamma = Some(g);
        }
        let (model, cost) = spec.validated()?;
        let compact = assemble_compact(&model)?;
        Ok(Context {
            name: spec.name.clone().unwrap_or_else(|| args.model.clone()),
            model,
            cost,
            compact,
        })
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) | Error::Json(_) => EXIT_IO,
        Error::Divergence { .. }
        | Error::NotConverged { .. }
        | Error::NonFinite { .. }
        | Error::NotPositiveSemidefinite { .. } => EXIT_DIVERGED,
        _ => EXIT_INVALID,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    let (name, args) = match &cli.command {
        Command::Solve(a) => ("solve", a),
        Command::Simulate(a) => ("simulate", a),
        Command::Converge(a) => ("converge", a),
        Command::Verify(a) => ("verify", a),
    };
    let outcome = Context::load(args).and_then(|ctx| {
        std::fs::create_dir_all(&args.out)?;
        match &cli.command {
            Command::Solve(_) => commands::solve(&ctx, args),
            Command::Simulate(_) => commands::simulate(&ctx, args),
            Command::Converge(_) => commands::converge(&ctx, args),
            Command::Verify(_) => verify::verify(&ctx, args),
        }
    });
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("lfns {name}: {e}");
            exit_code(&e)
        }
    }
}
