//! Run configuration and the command bodies behind the `nlgs` binary.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{NlgsError, Result};
use crate::grid::GridSpec;
use crate::integrator::{
    a_priori_box, integrate, stability_bound, write_monitor_csv, IntegratorConfig, Monitor,
    OperatorPair, Violation,
};
use crate::kernels::{build_kernel_table, BoundaryMode, KernelSpec, KernelSummary, RadialProfile};
use crate::limit::{run_limit_study, write_study, LimitStudyConfig, LimitStudyReport};
use crate::local::{LocalBoundary, LocalDiffusion};
use crate::model::{
    classify_stability_homogeneous, steady_states, HomogeneousState, ModelParams, Regime,
    StabilityReport,
};
use crate::operator::NonlocalOperator;
use crate::presets::InitialData;
use crate::snapshot::save_snapshot;

/// Exit status when a monitor flags an invariant violation.
pub const EXIT_VIOLATION: i32 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorConfig {
    Nonlocal {
        profile: RadialProfile,
        j: u32,
        #[serde(default = "neumann_nonlocal")]
        boundary: BoundaryMode,
    },
    /// Discrete Laplacian with `D_ℓ = m₂ d_ℓ/(2n)` taken from `profile`.
    Local {
        profile: RadialProfile,
        #[serde(default = "neumann_local")]
        bc: LocalBoundary,
    },
}

fn neumann_nonlocal() -> BoundaryMode {
    BoundaryMode::NeumannNonlocal
}
fn neumann_local() -> LocalBoundary {
    LocalBoundary::Neumann
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Output directory; `--out` overrides it.
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelParams,
    pub space: GridSpec,
    pub operator: OperatorConfig,
    pub integrator: IntegratorConfig,
    pub initial: InitialData,
    #[serde(default = "all_monitors")]
    pub monitors: Vec<Monitor>,
    #[serde(default)]
    pub output: OutputConfig,
}

fn all_monitors() -> Vec<Monitor> {
    Monitor::ALL.to_vec()
}

/// Parse a JSON document, reporting line and column on failure.
pub fn parse_json<T: for<'de> Deserialize<'de>>(text: &str, origin: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| {
        NlgsError::Config(format!(
            "{origin}: line {} column {}: {e}",
            e.line(),
            e.column()
        ))
    })
}

pub fn load_config<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    parse_json(&text, &path.display().to_string())
}

impl RunConfig {
    /// Fold command-line overrides into the config so the echoed copy is
    /// the one actually run.
    pub fn resolve(mut self, out: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        if let Some(dir) = out {
            self.output.dir = Some(dir.to_path_buf());
        }
        if self.output.dir.is_none() {
            return Err(NlgsError::Config("no output directory: pass --out or set output.dir".into()));
        }
        if let (Some(s), InitialData::RandomSeeded { seed, .. }) = (seed, &mut self.initial) {
            *seed = s;
        }
        Ok(self)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub operator: String,
    pub steps: usize,
    pub dt: f64,
    pub max_dt: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub final_sup_u: f64,
    pub final_sup_v: f64,
    pub snapshot_count: usize,
    pub wall_clock_s: f64,
    pub violations: Vec<Violation>,
}

impl SimulationReport {
    pub fn exit_code(&self) -> i32 {
        if self.violations.is_empty() {
            0
        } else {
            EXIT_VIOLATION
        }
    }
}

fn snapshot_name(kind: &str, t: f64) -> String {
    format!("{kind}_t{t:012.6}.bin")
}

/// Run a resolved configuration and write `config.json`, `monitor.csv`,
/// `report.json`, and snapshot files under `output.dir`.
pub fn cmd_simulate(config: &RunConfig) -> Result<SimulationReport> {
    let dir = config
        .output
        .dir
        .clone()
        .ok_or_else(|| NlgsError::Config("output directory not resolved".into()))?;
    let grid = config.space.build()?;
    let params = config.model;
    params.validate()?;
    let initial = config.initial.build(&grid, &params, None)?;

    let nonlocal;
    let local;
    let ops = match &config.operator {
        OperatorConfig::Nonlocal { profile, j, boundary } => {
            nonlocal = NonlocalOperator::build(&KernelSpec::new(*profile, *j, *boundary), &grid)?;
            OperatorPair::shared(&nonlocal, params.d1, params.d2)
        }
        OperatorConfig::Local { profile, bc } => {
            local = LocalDiffusion::from_profile(&params, profile, &grid, *bc)?;
            local.ops()
        }
    };
    let bounds = a_priori_box(&params, &ops, &initial.u, &initial.v)?;
    let max_dt = stability_bound(&params, ops.diffusion_bound(), &bounds, config.integrator.safety)?;

    let started = Instant::now();
    let traj = integrate(&initial, &params, &ops, &config.integrator, &config.monitors)?;
    let wall = started.elapsed().as_secs_f64();

    fs::create_dir_all(dir.join("snapshots"))?;
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(config)?)?;
    let mut csv = BufWriter::new(fs::File::create(dir.join("monitor.csv"))?);
    write_monitor_csv(&mut csv, &traj.samples)?;
    csv.flush()?;
    for s in &traj.snapshots {
        save_snapshot(&dir.join("snapshots").join(snapshot_name("u", s.t)), &s.u, s.t, "u")?;
        save_snapshot(&dir.join("snapshots").join(snapshot_name("v", s.t)), &s.v, s.t, "v")?;
    }
    let fin = &traj.final_state;
    save_snapshot(&dir.join("final_u.bin"), &fin.u, fin.t, "u")?;
    save_snapshot(&dir.join("final_v.bin"), &fin.v, fin.t, "v")?;

    let report = SimulationReport {
        operator: ops.u.describe(),
        steps: traj.steps,
        dt: traj.dt,
        max_dt,
        t_start: initial.t,
        t_end: fin.t,
        final_sup_u: fin.u.sup_norm(),
        final_sup_v: fin.v.sup_norm(),
        snapshot_count: traj.snapshots.len(),
        wall_clock_s: wall,
        violations: traj.violations,
    };
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

/// Run a study and write its artifacts under `dir`.
pub fn cmd_limit_study(config: &LimitStudyConfig, dir: &Path) -> Result<LimitStudyReport> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(config)?)?;
    let outcome = run_limit_study(config)?;
    write_study(&outcome, dir)?;
    Ok(outcome.report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedState {
    pub state: HomogeneousState,
    pub stability: StabilityReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteadyStatesOutput {
    pub f: f64,
    pub kappa: f64,
    pub regime: Regime,
    pub discriminant: f64,
    pub states: Vec<ClassifiedState>,
}

pub fn cmd_steady_states(f: f64, kappa: f64) -> Result<SteadyStatesOutput> {
    // Diffusivities do not enter the homogeneous states.
    let params = ModelParams::new(1.0, 1.0, f, kappa)?;
    let report = steady_states(&params);
    Ok(SteadyStatesOutput {
        f,
        kappa,
        regime: report.regime,
        discriminant: report.discriminant,
        states: report
            .states
            .iter()
            .map(|s| ClassifiedState {
                state: *s,
                stability: classify_stability_homogeneous(&params, s),
            })
            .collect(),
    })
}

pub fn cmd_kernel_info(profile: &RadialProfile, j: u32, grid: &GridSpec) -> Result<KernelSummary> {
    let grid = grid.build()?;
    let table = build_kernel_table(&KernelSpec::new(*profile, j, BoundaryMode::NeumannNonlocal), &grid)?;
    Ok(table.summary())
}
