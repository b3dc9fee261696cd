//! Nonlocal-to-local comparison over a ladder of kernel scales `j`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NlgsError, Result};
use crate::grid::{Grid, GridSpec};
use crate::integrator::{
    a_priori_box, integrate, stability_bound, write_monitor_csv, IntegratorConfig, Monitor,
    MonitorSample, OperatorPair, Scheme, State, Trajectory, Violation,
};
use crate::kernels::{BoundaryMode, KernelSpec, RadialProfile};
use crate::local::{LocalBoundary, LocalDiffusion};
use crate::model::ModelParams;
use crate::operator::NonlocalOperator;
use crate::presets::InitialData;
use crate::snapshot::save_snapshot;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitStudyConfig {
    pub params: ModelParams,
    pub grid: GridSpec,
    pub profile: RadialProfile,
    pub j_ladder: Vec<u32>,
    pub t_end: f64,
    /// Shared step; `None` picks the smallest stability bound over all runs.
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default = "default_snapshot_every")]
    pub snapshot_every: usize,
    #[serde(default = "default_initial")]
    pub initial: InitialData,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    #[serde(default = "default_safety")]
    pub safety: f64,
    /// Worker count for the sub-runs; `None` uses the ambient pool.
    #[serde(default)]
    pub threads: Option<usize>,
}

fn default_snapshot_every() -> usize {
    10
}
fn default_initial() -> InitialData {
    InitialData::SmoothBump { center: None }
}
fn default_scheme() -> Scheme {
    Scheme::Rk4Explicit
}
fn default_safety() -> f64 {
    0.5
}

impl LimitStudyConfig {
    /// Unit square at 64², `T = 1`, `j ∈ {4, 8, 16}`, bump data, `d₁ = d₂ = 1`.
    pub fn default_study() -> Self {
        LimitStudyConfig {
            params: ModelParams::new(1.0, 1.0, 0.04, 0.01).expect("valid"),
            grid: GridSpec {
                dim: 2,
                extents: vec![1.0, 1.0],
                counts: vec![64, 64],
            },
            profile: RadialProfile::bump(1.0).expect("valid"),
            j_ladder: vec![4, 8, 16],
            t_end: 1.0,
            dt: None,
            snapshot_every: default_snapshot_every(),
            initial: default_initial(),
            scheme: default_scheme(),
            safety: default_safety(),
            threads: None,
        }
    }

    pub fn validate(&self) -> Result<Grid> {
        self.params.validate()?;
        if self.j_ladder.is_empty() {
            return Err(NlgsError::Config("j_ladder is empty".into()));
        }
        if self.j_ladder.windows(2).any(|w| w[0] >= w[1]) {
            return Err(NlgsError::Config(format!(
                "j_ladder must be strictly increasing, got {:?}",
                self.j_ladder
            )));
        }
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return Err(NlgsError::Config(format!("t_end must be positive, got {}", self.t_end)));
        }
        if self.snapshot_every == 0 {
            return Err(NlgsError::Config("snapshot_every must be at least 1".into()));
        }
        self.grid.build()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitRun {
    pub j: u32,
    pub spacetime_l2_err_u: f64,
    pub spacetime_l2_err_v: f64,
    pub final_l2_err_u: f64,
    pub final_l2_err_v: f64,
    pub wall_clock_s: f64,
    pub violations: Vec<Violation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub j: u32,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitStudyReport {
    pub m2: f64,
    pub diffusivity_u: f64,
    pub diffusivity_v: f64,
    pub dt: f64,
    pub steps: usize,
    pub local_wall_clock_s: f64,
    pub local_violations: Vec<Violation>,
    pub runs: Vec<LimitRun>,
    pub failures: Vec<RunFailure>,
    pub monotone_u: bool,
    pub monotone_v: bool,
    /// `err(j_max) ≤ 0.5·err(j_min)` for both components.
    pub reduction_ok: bool,
}

/// Required ratio `err(j_max)/err(j_min)`.
pub const REDUCTION_FACTOR: f64 = 0.5;

impl LimitStudyReport {
    pub fn passes(&self) -> bool {
        self.failures.is_empty()
            && self.local_violations.is_empty()
            && self.runs.iter().all(|r| r.violations.is_empty())
            && self.monotone_u
            && self.monotone_v
            && self.reduction_ok
    }
}

/// Monitor samples and final state of one sub-run.
#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub label: String,
    pub samples: Vec<MonitorSample>,
    pub final_state: State,
}

#[derive(Clone, Debug)]
pub struct LimitStudyOutcome {
    pub report: LimitStudyReport,
    pub local: RunArtifacts,
    pub runs: Vec<RunArtifacts>,
}

/// `(∫₀ᵀ∫(a − b)²)^{1/2}` for one component, trapezoid over shared snapshots.
fn spacetime_error(a: &[State], b: &[State], pick: impl Fn(&State) -> &crate::grid::Field) -> Result<f64> {
    if a.len() != b.len() {
        return Err(NlgsError::Config(format!(
            "snapshot counts differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let sq: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| Ok(pick(x).zip_map(pick(y), |p, q| p - q)?.l2_norm_squared()))
        .collect::<Result<_>>()?;
    let total: f64 = a
        .windows(2)
        .zip(sq.windows(2))
        .map(|(s, e)| 0.5 * (s[1].t - s[0].t) * (e[0] + e[1]))
        .sum();
    Ok(total.sqrt())
}

fn strictly_decreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] < w[0])
}

fn bound_for(params: &ModelParams, ops: &OperatorPair, initial: &State, safety: f64) -> Result<f64> {
    let b = a_priori_box(params, ops, &initial.u, &initial.v)?;
    stability_bound(params, ops.diffusion_bound(), &b, safety)
}

pub fn run_limit_study(config: &LimitStudyConfig) -> Result<LimitStudyOutcome> {
    match config.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| NlgsError::Config(format!("thread pool: {e}")))?
            .install(|| run_study_inner(config)),
        None => run_study_inner(config),
    }
}

fn run_study_inner(config: &LimitStudyConfig) -> Result<LimitStudyOutcome> {
    let grid = config.validate()?;
    let params = config.params;
    let initial = config.initial.build(&grid, &params, None)?;
    let local = LocalDiffusion::from_profile(&params, &config.profile, &grid, LocalBoundary::Neumann)?;
    let operators = config
        .j_ladder
        .iter()
        .map(|&j| {
            NonlocalOperator::build(
                &KernelSpec::new(config.profile, j, BoundaryMode::NeumannNonlocal),
                &grid,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    fn pair<'a>(op: &'a NonlocalOperator, params: &ModelParams) -> OperatorPair<'a> {
        OperatorPair::shared(op, params.d1, params.d2)
    }

    let mut max_dt = bound_for(&params, &local.ops(), &initial, config.safety)?;
    for op in &operators {
        max_dt = max_dt.min(bound_for(&params, &pair(op, &params), &initial, config.safety)?);
    }
    let span = config.t_end - initial.t;
    let dt = match config.dt {
        Some(dt) => dt,
        None => span / (span / max_dt).ceil(),
    };
    let mut int_cfg = IntegratorConfig::new(dt, config.t_end);
    int_cfg.scheme = config.scheme;
    int_cfg.snapshot_every = config.snapshot_every;
    int_cfg.monitor_every = config.snapshot_every;
    int_cfg.safety = config.safety;

    let started = Instant::now();
    let reference = integrate(&initial, &params, &local.ops(), &int_cfg, &Monitor::ALL)?;
    let local_wall = started.elapsed().as_secs_f64();

    let results: Vec<(u32, Result<(Trajectory, f64)>)> = config
        .j_ladder
        .par_iter()
        .zip(operators.par_iter())
        .map(|(&j, op)| {
            let t0 = Instant::now();
            let out = integrate(&initial, &params, &pair(op, &params), &int_cfg, &Monitor::ALL)
                .map(|traj| (traj, t0.elapsed().as_secs_f64()));
            (j, out)
        })
        .collect();

    let mut runs = Vec::new();
    let mut artifacts = Vec::new();
    let mut failures = Vec::new();
    for (j, res) in results {
        let compared = res.and_then(|(traj, wall)| {
            let eu = spacetime_error(&traj.snapshots, &reference.snapshots, |s| &s.u)?;
            let ev = spacetime_error(&traj.snapshots, &reference.snapshots, |s| &s.v)?;
            let fin = &traj.final_state;
            let fu = fin.u.zip_map(&reference.final_state.u, |a, b| a - b)?.l2_norm();
            let fv = fin.v.zip_map(&reference.final_state.v, |a, b| a - b)?.l2_norm();
            Ok((
                LimitRun {
                    j,
                    spacetime_l2_err_u: eu,
                    spacetime_l2_err_v: ev,
                    final_l2_err_u: fu,
                    final_l2_err_v: fv,
                    wall_clock_s: wall,
                    violations: traj.violations.clone(),
                },
                RunArtifacts {
                    label: format!("j{j}"),
                    samples: traj.samples,
                    final_state: traj.final_state,
                },
            ))
        });
        match compared {
            Ok((run, art)) => {
                runs.push(run);
                artifacts.push(art);
            }
            Err(e) => failures.push(RunFailure { j, error: e.to_string() }),
        }
    }

    let eu: Vec<f64> = runs.iter().map(|r| r.spacetime_l2_err_u).collect();
    let ev: Vec<f64> = runs.iter().map(|r| r.spacetime_l2_err_v).collect();
    let reduced = |e: &[f64]| match (e.first(), e.last()) {
        (Some(a), Some(b)) => *b <= REDUCTION_FACTOR * a || *a == 0.0,
        _ => false,
    };
    let report = LimitStudyReport {
        m2: local.m2,
        diffusivity_u: local.d_u,
        diffusivity_v: local.d_v,
        dt: reference.dt,
        steps: reference.steps,
        local_wall_clock_s: local_wall,
        local_violations: reference.violations.clone(),
        runs,
        failures,
        monotone_u: strictly_decreasing(&eu) || eu.iter().all(|&e| e == 0.0),
        monotone_v: strictly_decreasing(&ev) || ev.iter().all(|&e| e == 0.0),
        reduction_ok: reduced(&eu) && reduced(&ev),
    };
    Ok(LimitStudyOutcome {
        report,
        local: RunArtifacts {
            label: "local".into(),
            samples: reference.samples,
            final_state: reference.final_state,
        },
        runs: artifacts,
    })
}

pub const ERRORS_CSV_HEADER: &str =
    "j,spacetime_l2_err_u,spacetime_l2_err_v,final_l2_err_u,final_l2_err_v,wall_clock_s";

/// Write `report.json`, `errors.csv`, and per-run monitor CSVs and final snapshots.
pub fn write_study(outcome: &LimitStudyOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let report = BufWriter::new(fs::File::create(dir.join("report.json"))?);
    serde_json::to_writer_pretty(report, &outcome.report)?;
    let mut csv = BufWriter::new(fs::File::create(dir.join("errors.csv"))?);
    writeln!(csv, "{ERRORS_CSV_HEADER}")?;
    for r in &outcome.report.runs {
        writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.j, r.spacetime_l2_err_u, r.spacetime_l2_err_v, r.final_l2_err_u, r.final_l2_err_v, r.wall_clock_s
        )?;
    }
    csv.flush()?;
    for art in std::iter::once(&outcome.local).chain(&outcome.runs) {
        let mut w = BufWriter::new(fs::File::create(dir.join(format!("{}_monitor.csv", art.label)))?);
        write_monitor_csv(&mut w, &art.samples)?;
        w.flush()?;
        let s = &art.final_state;
        save_snapshot(&dir.join(format!("{}_u.bin", art.label)), &s.u, s.t, "u")?;
        save_snapshot(&dir.join(format!("{}_v.bin", art.label)), &s.v, s.t, "v")?;
    }
    Ok(())
}
