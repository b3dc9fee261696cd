use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use nlgs_core::experiments::{
    cmd_kernel_info, cmd_limit_study, cmd_simulate, cmd_steady_states, load_config, RunConfig,
    EXIT_VIOLATION,
};
use nlgs_core::grid::GridSpec;
use nlgs_core::kernels::{ProfileShape, RadialProfile};
use nlgs_core::limit::LimitStudyConfig;
use nlgs_core::verify::{run_suite, Suite};

#[derive(Parser)]
#[command(name = "nlgs", version, about = "Nonlocal Gray-Scott simulations and checks")]
struct Cli {
    /// Worker threads for grid-parallel kernels and sweeps.
    #[arg(long, global = true, env = "NLGS_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one configuration and write monitors, snapshots, and a report.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed for the random_seeded preset.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare nonlocal runs over a ladder of scales with the local reference.
    LimitStudy {
        /// Study config; the built-in default study when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Homogeneous steady states and their stability as JSON.
    SteadyStates {
        #[arg(long)]
        f: f64,
        #[arg(long)]
        kappa: f64,
    },
    /// Kernel table summary as JSON.
    KernelInfo {
        #[arg(long, value_enum, default_value = "bump")]
        profile: Shape,
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        #[arg(long)]
        j: u32,
        /// Cells per axis on the unit square (or unit interval).
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        dim: usize,
    },
    /// Run an invariant suite; exit 0 iff every check passes.
    Verify {
        #[arg(value_enum)]
        suite: SuiteArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Shape {
    Bump,
    Indicator,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Operator,
    Bounds,
    Decay,
    Dirichlet,
    Limit,
    Steady,
}

impl From<SuiteArg> for Suite {
    fn from(s: SuiteArg) -> Suite {
        match s {
            SuiteArg::Operator => Suite::Operator,
            SuiteArg::Bounds => Suite::Bounds,
            SuiteArg::Decay => Suite::Decay,
            SuiteArg::Dirichlet => Suite::Dirichlet,
            SuiteArg::Limit => Suite::Limit,
            SuiteArg::Steady => Suite::Steady,
        }
    }
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<i32> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Simulate { config, out, seed } => {
            let cfg: RunConfig = load_config(&config)?;
            let cfg = cfg.resolve(out.as_deref(), seed)?;
            let report = cmd_simulate(&cfg)?;
            for v in &report.violations {
                eprintln!(
                    "violation: {:?} at t = {}, x = ({}, {}): value {} exceeds bound {}",
                    v.monitor, v.t, v.x[0], v.x[1], v.value, v.bound
                );
            }
            print_json(&report)?;
            Ok(report.exit_code())
        }
        Command::LimitStudy { config, out } => {
            let cfg = match config {
                Some(path) => load_config(&path)?,
                None => LimitStudyConfig::default_study(),
            };
            let report = cmd_limit_study(&cfg, &out)?;
            print_json(&report)?;
            Ok(if report.passes() { 0 } else { EXIT_VIOLATION })
        }
        Command::SteadyStates { f, kappa } => {
            print_json(&cmd_steady_states(f, kappa)?)?;
            Ok(0)
        }
        Command::KernelInfo { profile, radius, j, n, dim } => {
            let shape = match profile {
                Shape::Bump => ProfileShape::Bump,
                Shape::Indicator => ProfileShape::Indicator,
            };
            let grid = GridSpec {
                dim,
                extents: vec![1.0; dim],
                counts: vec![n; dim],
            };
            print_json(&cmd_kernel_info(&RadialProfile::new(shape, radius)?, j, &grid)?)?;
            Ok(0)
        }
        Command::Verify { suite } => {
            let results = run_suite(suite.into())?;
            for r in &results {
                let status = if r.passed { "PASS" } else { "FAIL" };
                println!(
                    "{status} {:?}/{}: actual {:.3e}, tolerance {:.3e} ({})",
                    r.suite, r.check, r.actual, r.tolerance, r.expected
                );
            }
            Ok(if results.iter().all(|r| r.passed) { 0 } else { EXIT_VIOLATION })
        }
    }
}

/// Usage errors get their own status so they never read as a violation.
const EXIT_USAGE: u8 = 64;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
