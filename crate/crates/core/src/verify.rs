//! Quick invariant suites for `nlgs verify`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grid::{Field, Grid, GridSpec};
use crate::integrator::{
    integrate, integrate_diffusion, IntegratorConfig, Monitor, OperatorPair, SpatialOperator,
};
use crate::kernels::{BoundaryMode, KernelSpec, RadialProfile};
use crate::limit::{run_limit_study, LimitStudyConfig};
use crate::model::{reaction_point, steady_states, ModelParams, Regime};
use crate::operator::NonlocalOperator;
use crate::presets::InitialData;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Operator,
    Bounds,
    Decay,
    Dirichlet,
    Limit,
    Steady,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub suite: Suite,
    pub check: String,
    pub passed: bool,
    /// Value the check compares against `tolerance`.
    pub actual: f64,
    pub tolerance: f64,
    pub expected: String,
}

fn check(suite: Suite, name: &str, actual: f64, tolerance: f64, expected: &str) -> CheckResult {
    CheckResult {
        suite,
        check: name.to_string(),
        passed: actual <= tolerance,
        actual,
        tolerance,
        expected: expected.to_string(),
    }
}

fn bump_op(n: usize, j: u32, mode: BoundaryMode) -> Result<NonlocalOperator> {
    NonlocalOperator::build(
        &KernelSpec::new(RadialProfile::bump(1.0)?, j, mode),
        &Grid::unit(2, n)?,
    )
}

pub fn run_suite(suite: Suite) -> Result<Vec<CheckResult>> {
    match suite {
        Suite::Operator => operator_suite(),
        Suite::Bounds => bounds_suite(),
        Suite::Decay => decay_suite(),
        Suite::Dirichlet => dirichlet_suite(),
        Suite::Limit => limit_suite(),
        Suite::Steady => steady_suite(),
    }
}

fn operator_suite() -> Result<Vec<CheckResult>> {
    let s = Suite::Operator;
    let op = bump_op(32, 4, BoundaryMode::NeumannNonlocal)?;
    let grid = *op.grid();
    let mut out = Vec::new();

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let z0 = Field::from_fn(&grid, |_| rng.random_range(0.0..1.0));
    let mut rise: f64 = 0.0;
    let mut undershoot: f64 = 0.0;
    let mut prev = z0.sup_norm();
    let dt = 0.25 / op.gamma_inf();
    integrate_diffusion(&op, 1.0, &z0, dt, 1.0, 1, |_, z| {
        rise = rise.max(z.sup_norm() - prev);
        prev = z.sup_norm();
        undershoot = undershoot.max(-z.min());
    })?;
    out.push(check(s, "contraction", rise, 1e-8, "sup-norm non-increasing"));
    out.push(check(s, "positivity", undershoot, 1e-10, "no negative undershoot"));

    let one = op.apply(&Field::constant(&grid, 1.0))?;
    out.push(check(s, "constant_annihilation", one.sup_norm(), f64::EPSILON, "Γ1 = 0"));

    let quad = op.apply(&Field::from_fn(&grid, |x| x[0] * x[0] + x[1] * x[1]))?;
    let m2 = op.table().m2();
    let mut worst: f64 = 0.0;
    for idx in 0..grid.len() {
        if grid.distance_to_boundary(idx) > op.table().support() {
            worst = worst.max((quad.values()[idx] - m2).abs() / m2);
        }
    }
    let h = grid.max_spacing();
    out.push(check(s, "quadratic_identity", worst, 5.0 * h * h, "Γ|x|² = m₂ away from ∂Ω"));

    let w = Field::from_fn(&grid, |x| (2.0 * PI * x[0]).sin() * (3.0 * x[1]).cos() + 1.5);
    let fast = op.apply(&w)?;
    let dense = op.apply_dense(&w)?;
    let gap = fast.zip_map(&dense, |a, b| a - b)?.sup_norm() / dense.sup_norm();
    out.push(check(s, "dense_fast_agreement", gap, 1e-12, "fast path equals dense loop"));
    Ok(out)
}

fn monitor_slack(suite: Suite, name: &str, count: usize) -> CheckResult {
    check(suite, name, count as f64, 0.0, "no monitor violations")
}

fn bounds_suite() -> Result<Vec<CheckResult>> {
    let op = bump_op(32, 4, BoundaryMode::NeumannNonlocal)?;
    let grid = *op.grid();
    let params = ModelParams::new(1.0, 1.0, 0.04, 0.01)?;
    let init = InitialData::SmoothBump { center: None }.build(&grid, &params, None)?;
    // Raise sup u⁰ to 2.
    let u0 = init.u.map(|x| 2.0 * x);
    let init = crate::integrator::State::new(0.0, u0, init.v)?;
    let ops = OperatorPair::shared(&op, params.d1, params.d2);
    let mut cfg = IntegratorConfig::new(0.015, 20.0);
    cfg.montol = 1e-6;
    let traj = integrate(&init, &params, &ops, &cfg, &[Monitor::Positivity, Monitor::Ubu, Monitor::Ubv])?;
    let worst_u = traj.samples.iter().map(|x| x.bound_ubu_slack).fold(f64::NEG_INFINITY, f64::max);
    let worst_h = traj.samples.iter().map(|x| x.bound_ubv_slack).fold(f64::NEG_INFINITY, f64::max);
    Ok(vec![
        monitor_slack(Suite::Bounds, "monitors", traj.violations.len()),
        check(Suite::Bounds, "u_envelope", worst_u, 1e-6, "u ≤ 1 + e^{-ft}(sup u⁰ − 1)₊"),
        check(Suite::Bounds, "u_plus_v_envelope", worst_h, 1e-6, "u + v below its envelope"),
    ])
}

fn decay_suite() -> Result<Vec<CheckResult>> {
    let op = bump_op(32, 4, BoundaryMode::NeumannNonlocal)?;
    let grid = *op.grid();
    let params = ModelParams::new(1.0, 1.0, 0.04, 0.01)?;
    let init = InitialData::Thm12Decay { delta: 0.0, fraction: 0.5 }.build(&grid, &params, None)?;
    let ops = OperatorPair::shared(&op, params.d1, params.d2);
    let traj = integrate(&init, &params, &ops, &IntegratorConfig::new(0.025, 50.0), &[Monitor::Decay])?;
    let worst = traj
        .samples
        .iter()
        .filter_map(|x| x.decay_slack)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(vec![check(
        Suite::Decay,
        "exponential_envelope",
        worst,
        1e-8,
        "‖v(t)‖∞ ≤ e^{-εt}‖v⁰‖∞",
    )])
}

fn dirichlet_suite() -> Result<Vec<CheckResult>> {
    let op = bump_op(32, 4, BoundaryMode::DirichletExtension)?;
    let grid = *op.grid();
    let mut worst: f64 = f64::NEG_INFINITY;
    let mut undershoot: f64 = 0.0;
    integrate_diffusion(&op, 1.0, &Field::constant(&grid, 1.0), 0.25 / op.gamma_inf(), 1.0, 1, |_, z| {
        worst = worst.max(z.max() - 1.0);
        undershoot = undershoot.max(-z.min());
    })?;
    Ok(vec![
        check(Suite::Dirichlet, "sub_markov", worst, 1e-12, "e^{tΓ}1 ≤ 1"),
        check(Suite::Dirichlet, "positivity", undershoot, 1e-10, "e^{tΓ}1 ≥ 0"),
    ])
}

fn limit_suite() -> Result<Vec<CheckResult>> {
    let config = LimitStudyConfig {
        grid: GridSpec {
            dim: 2,
            extents: vec![1.0, 1.0],
            counts: vec![32, 32],
        },
        j_ladder: vec![2, 4, 8],
        t_end: 0.25,
        ..LimitStudyConfig::default_study()
    };
    let report = run_limit_study(&config)?.report;
    let flag = |b: bool| if b { 0.0 } else { 1.0 };
    Ok(vec![
        check(Suite::Limit, "monotone_u", flag(report.monotone_u), 0.0, "errors decrease in j"),
        check(Suite::Limit, "monotone_v", flag(report.monotone_v), 0.0, "errors decrease in j"),
        check(Suite::Limit, "reduction", flag(report.reduction_ok), 0.0, "err(j_max) ≤ 0.5 err(j_min)"),
    ])
}

fn steady_suite() -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_res: f64 = 0.0;
    let mut worst_prod: f64 = 0.0;
    let mut checked = 0;
    while checked < 100 {
        let f = rng.random_range(0.001..0.25);
        let kappa = rng.random_range(0.0..0.1);
        let p = ModelParams::new(1.0, 1.0, f, kappa)?;
        if p.regime() != Regime::S3 || p.discriminant() <= 0.0 {
            continue;
        }
        checked += 1;
        for s in steady_states(&p).states.iter().skip(1) {
            let (a, b) = reaction_point(s.u, s.v, &p);
            worst_res = worst_res.max(a.abs()).max(b.abs());
            worst_prod = worst_prod.max((s.u * s.v - p.decay_v()).abs());
        }
    }
    Ok(vec![
        check(Suite::Steady, "reaction_residual", worst_res, 1e-12, "F(u±, v±) = 0"),
        check(Suite::Steady, "product_identity", worst_prod, 1e-12, "u±v± = f + κ"),
    ])
}
