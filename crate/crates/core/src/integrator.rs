//! Time integration of `dz/dt = Az + F(z)` with runtime monitors for the
//! a-priori estimates the continuous problem satisfies.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{NlgsError, Result};
use crate::grid::{Field, Grid};
use crate::model::{reaction_point, ModelParams};

/// Linear spatial operator of the form `Σ_y w(x, y)(z(y) − z(x))`, possibly
/// with extra absorption.
pub trait SpatialOperator: Sync {
    fn grid(&self) -> &Grid;

    fn apply_into(&self, z: &[f64], out: &mut [f64]);

    /// Upper bound on every row mass; `‖A‖∞ ≤ 2·gamma_inf`.
    fn gamma_inf(&self) -> f64;

    /// `−2⟨z, Az⟩` evaluated in pair-sum form.
    fn dissipation(&self, z: &Field) -> f64;

    /// True when the operator annihilates constants.
    fn conserves_constants(&self) -> bool {
        let one = vec![1.0; self.grid().len()];
        let mut out = vec![0.0; one.len()];
        self.apply_into(&one, &mut out);
        out.iter().all(|v| v.abs() <= 1e-12 * self.gamma_inf())
    }

    fn describe(&self) -> String;
}

/// The diagonal linear part `A = diag(c_u A_u, c_v A_v)`.
#[derive(Clone, Copy)]
pub struct OperatorPair<'a> {
    pub u: &'a dyn SpatialOperator,
    pub v: &'a dyn SpatialOperator,
    pub coeff_u: f64,
    pub coeff_v: f64,
    /// `ess sup_x ∫ |γ_u − γ_v|(x, y) dy`; zero when both species share a kernel.
    pub kernel_gap: f64,
}

impl<'a> OperatorPair<'a> {
    /// Both species diffuse with the same operator.
    pub fn shared(op: &'a dyn SpatialOperator, coeff_u: f64, coeff_v: f64) -> Self {
        OperatorPair {
            u: op,
            v: op,
            coeff_u,
            coeff_v,
            kernel_gap: 0.0,
        }
    }

    pub fn grid(&self) -> &Grid {
        self.u.grid()
    }

    pub fn gamma_inf(&self) -> f64 {
        self.u.gamma_inf().max(self.v.gamma_inf())
    }

    /// `2·max_ℓ c_ℓ γ∞`, the diffusive part of the time-step restriction.
    pub fn diffusion_bound(&self) -> f64 {
        2.0 * (self.coeff_u * self.u.gamma_inf()).max(self.coeff_v * self.v.gamma_inf())
    }

    fn same_operator(&self) -> bool {
        std::ptr::addr_eq(self.u as *const dyn SpatialOperator, self.v as *const dyn SpatialOperator)
    }

    fn check(&self, grid: &Grid) -> Result<()> {
        if self.u.grid() != grid || self.v.grid() != grid {
            return Err(NlgsError::GridMismatch);
        }
        for c in [self.coeff_u, self.coeff_v] {
            if !(c.is_finite() && c >= 0.0) {
                return Err(NlgsError::InvalidParams(format!(
                    "diffusion coefficient must be non-negative, got {c}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Classical fourth-order Runge-Kutta on the full right-hand side.
    Rk4Explicit,
    /// Fourth-order exponential time differencing: the linear decays `−f u`
    /// and `−(f + κ) v` are integrated exactly, the rest explicitly.
    ImexLinearDecay,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    pub dt: f64,
    pub t_end: f64,
    /// Steps between stored snapshots; 0 keeps only the initial and final states.
    #[serde(default)]
    pub snapshot_every: usize,
    #[serde(default = "default_monitor_every")]
    pub monitor_every: usize,
    #[serde(default = "default_postol")]
    pub postol: f64,
    #[serde(default = "default_montol")]
    pub montol: f64,
    #[serde(default = "default_safety")]
    pub safety: f64,
}

fn default_scheme() -> Scheme {
    Scheme::Rk4Explicit
}
fn default_monitor_every() -> usize {
    1
}
fn default_postol() -> f64 {
    1e-10
}
fn default_montol() -> f64 {
    1e-8
}
fn default_safety() -> f64 {
    0.5
}

impl IntegratorConfig {
    pub fn new(dt: f64, t_end: f64) -> Self {
        IntegratorConfig {
            scheme: default_scheme(),
            dt,
            t_end,
            snapshot_every: 0,
            monitor_every: default_monitor_every(),
            postol: default_postol(),
            montol: default_montol(),
            safety: default_safety(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub t: f64,
    pub u: Field,
    pub v: Field,
}

impl State {
    pub fn new(t: f64, u: Field, v: Field) -> Result<Self> {
        u.same_grid(&v)?;
        Ok(State { t, u, v })
    }

    pub fn grid(&self) -> &Grid {
        self.u.grid()
    }

    fn is_finite(&self) -> bool {
        self.u.values().iter().chain(self.v.values()).all(|x| x.is_finite())
    }
}

/// Upper bounds for `(u, v)` over all time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxBounds {
    pub u_max: f64,
    pub v_max: f64,
}

/// `1 + e^{−ft}(sup u⁰ − 1)₊`.
pub fn ubu_bound(params: &ModelParams, sup_u0: f64, t: f64) -> f64 {
    1.0 + (-params.f * t).exp() * (sup_u0 - 1.0).max(0.0)
}

/// Envelope for `u + v`:
/// `e^{−ft}‖u⁰+v⁰‖ + (1 − e^{−ft})/f · [2(|c_u − c_v|γ∞ + m c_v)(1 + ‖u⁰‖) + f]`.
pub fn ubv_bound(params: &ModelParams, ops: &OperatorPair, sup_u0: f64, sup_h0: f64, t: f64) -> f64 {
    let e = (-params.f * t).exp();
    let forcing = ubv_forcing(params, ops, sup_u0);
    e * sup_h0 + (1.0 - e) / params.f * forcing
}

fn ubv_forcing(params: &ModelParams, ops: &OperatorPair, sup_u0: f64) -> f64 {
    let spread = (ops.coeff_u - ops.coeff_v).abs() * ops.gamma_inf() + ops.kernel_gap * ops.coeff_v;
    2.0 * spread * (1.0 + sup_u0) + params.f
}

/// Box containing the solution for all time, from the two envelopes above.
pub fn a_priori_box(params: &ModelParams, ops: &OperatorPair, u0: &Field, v0: &Field) -> Result<BoxBounds> {
    let sup_u0 = u0.max().max(0.0);
    let sup_h0 = u0.zip_map(v0, |a, b| a + b)?.max().max(0.0);
    let u_max = sup_u0.max(1.0);
    let v_max = sup_h0.max(ubv_forcing(params, ops, sup_u0) / params.f);
    Ok(BoxBounds { u_max, v_max })
}

/// Largest absolute Jacobian row sum of `F` on `[0, U] × [0, V]`.
pub fn reaction_lipschitz(params: &ModelParams, b: &BoxBounds) -> f64 {
    let (u, v) = (b.u_max, b.v_max);
    let row1 = v * v + params.f + 2.0 * u * v;
    let row2 = v * v + (2.0 * u * v - params.decay_v()).max(params.decay_v());
    row1.max(row2)
}

/// `safety / (diffusion_bound + L_F)`.
pub fn stability_bound(
    params: &ModelParams,
    diffusion_bound: f64,
    box_bounds: &BoxBounds,
    safety: f64,
) -> Result<f64> {
    if !(safety.is_finite() && safety > 0.0) {
        return Err(NlgsError::Config(format!(
            "safety factor must be positive, got {safety}"
        )));
    }
    Ok(safety / (diffusion_bound + reaction_lipschitz(params, box_bounds)))
}

/// Stability bound for a nonlocal pair with coefficients `(d₁, d₂)`.
pub fn stability_bound_nonlocal(
    params: &ModelParams,
    gamma_inf: f64,
    box_bounds: &BoxBounds,
    safety: f64,
) -> Result<f64> {
    let d_max = params.d1.max(params.d2);
    stability_bound(params, 2.0 * d_max * gamma_inf, box_bounds, safety)
}

fn rhs(
    u: &[f64],
    v: &[f64],
    params: &ModelParams,
    ops: &OperatorPair,
    out_u: &mut [f64],
    out_v: &mut [f64],
) {
    ops.u.apply_into(u, out_u);
    ops.v.apply_into(v, out_v);
    for i in 0..u.len() {
        let (f1, f2) = reaction_point(u[i], v[i], params);
        out_u[i] = ops.coeff_u * out_u[i] + f1;
        out_v[i] = ops.coeff_v * out_v[i] + f2;
    }
}

/// `φ₁, φ₂, φ₃` at `z`, with a series near zero.
fn phi_functions(z: f64) -> [f64; 3] {
    if z.abs() < 1.0 {
        let mut out = [0.0; 3];
        for (k, slot) in out.iter_mut().enumerate() {
            // Σ_m z^m / (m + k + 1)!
            let mut term = 1.0;
            for i in 1..=(k + 1) {
                term /= i as f64;
            }
            let mut sum = 0.0;
            for m in 0..30 {
                sum += term;
                term *= z / (m + k + 2) as f64;
            }
            *slot = sum;
        }
        out
    } else {
        let p1 = z.exp_m1() / z;
        let p2 = (p1 - 1.0) / z;
        let p3 = (p2 - 0.5) / z;
        [p1, p2, p3]
    }
}

/// Scalar coefficients of the exponential scheme for decay rate `rate`.
struct EtdCoefficients {
    e: f64,
    e_half: f64,
    q: f64,
    f1: f64,
    f2: f64,
    f3: f64,
}

impl EtdCoefficients {
    fn new(rate: f64, dt: f64) -> Self {
        let z = -rate * dt;
        let [p1, p2, p3] = phi_functions(z);
        let [h1, _, _] = phi_functions(0.5 * z);
        EtdCoefficients {
            e: z.exp(),
            e_half: (0.5 * z).exp(),
            q: 0.5 * dt * h1,
            f1: dt * (p1 - 3.0 * p2 + 4.0 * p3),
            f2: dt * (p2 - 2.0 * p3),
            f3: dt * (4.0 * p3 - p2),
        }
    }
}

/// Advance one step of size `dt`.
pub fn step(
    state: &State,
    params: &ModelParams,
    ops: &OperatorPair,
    scheme: Scheme,
    dt: f64,
) -> Result<State> {
    ops.check(state.grid())?;
    let n = state.grid().len();
    let (u, v) = (state.u.values(), state.v.values());
    let mut next_u = state.u.clone();
    let mut next_v = state.v.clone();
    let (nu, nv) = (next_u.values_mut(), next_v.values_mut());
    let mut ku = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut kv = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut su = vec![0.0; n];
    let mut sv = vec![0.0; n];

    match scheme {
        Scheme::Rk4Explicit => {
            rhs(u, v, params, ops, &mut ku[0], &mut kv[0]);
            for stage in 1..4 {
                let c = if stage == 3 { dt } else { 0.5 * dt };
                for i in 0..n {
                    su[i] = u[i] + c * ku[stage - 1][i];
                    sv[i] = v[i] + c * kv[stage - 1][i];
                }
                let (ku_s, kv_s) = (&mut ku[stage], &mut kv[stage]);
                rhs(&su, &sv, params, ops, ku_s, kv_s);
            }
            let w = dt / 6.0;
            for i in 0..n {
                nu[i] = u[i] + w * (ku[0][i] + 2.0 * ku[1][i] + 2.0 * ku[2][i] + ku[3][i]);
                nv[i] = v[i] + w * (kv[0][i] + 2.0 * kv[1][i] + 2.0 * kv[2][i] + kv[3][i]);
            }
        }
        Scheme::ImexLinearDecay => {
            let lu = params.f;
            let lv = params.decay_v();
            let cu = EtdCoefficients::new(lu, dt);
            let cv = EtdCoefficients::new(lv, dt);
            // Nonlinear remainder N(z) = rhs(z) + rate·z.
            let nonlinear = |a: &[f64], b: &[f64], out_u: &mut [f64], out_v: &mut [f64]| {
                rhs(a, b, params, ops, out_u, out_v);
                for i in 0..a.len() {
                    out_u[i] += lu * a[i];
                    out_v[i] += lv * b[i];
                }
            };
            let [n0u, nau, nbu, ncu] = &mut ku;
            let [n0v, nav, nbv, ncv] = &mut kv;
            nonlinear(u, v, n0u, n0v);
            let mut au = vec![0.0; n];
            let mut av = vec![0.0; n];
            for i in 0..n {
                au[i] = cu.e_half * u[i] + cu.q * n0u[i];
                av[i] = cv.e_half * v[i] + cv.q * n0v[i];
            }
            nonlinear(&au, &av, nau, nav);
            for i in 0..n {
                su[i] = cu.e_half * u[i] + cu.q * nau[i];
                sv[i] = cv.e_half * v[i] + cv.q * nav[i];
            }
            nonlinear(&su, &sv, nbu, nbv);
            for i in 0..n {
                su[i] = cu.e_half * au[i] + cu.q * (2.0 * nbu[i] - n0u[i]);
                sv[i] = cv.e_half * av[i] + cv.q * (2.0 * nbv[i] - n0v[i]);
            }
            nonlinear(&su, &sv, ncu, ncv);
            for i in 0..n {
                nu[i] = cu.e * u[i]
                    + cu.f1 * n0u[i]
                    + 2.0 * cu.f2 * (nau[i] + nbu[i])
                    + cu.f3 * ncu[i];
                nv[i] = cv.e * v[i]
                    + cv.f1 * n0v[i]
                    + 2.0 * cv.f2 * (nav[i] + nbv[i])
                    + cv.f3 * ncv[i];
            }
        }
    }
    Ok(State {
        t: state.t + dt,
        u: next_u,
        v: next_v,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    /// `u, v ≥ −postol`.
    Positivity,
    /// `u ≤ 1 + e^{−ft}(sup u⁰ − 1)₊`.
    Ubu,
    /// `u + v` below its a-priori envelope.
    Ubv,
    /// `‖v(t)‖∞ ≤ e^{−εt}‖v⁰‖∞` when the initial data admit it.
    Decay,
    /// `‖u‖₂² + ‖v‖₂²` below the Gronwall envelope.
    Energy,
}

impl Monitor {
    pub const ALL: [Monitor; 5] = [
        Monitor::Positivity,
        Monitor::Ubu,
        Monitor::Ubv,
        Monitor::Decay,
        Monitor::Energy,
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonitorSample {
    pub t: f64,
    pub sup_u: f64,
    pub sup_v: f64,
    pub min_u: f64,
    pub min_v: f64,
    pub l1_u: f64,
    pub l1_v: f64,
    pub l2sq_u: f64,
    pub l2sq_v: f64,
    pub y_u: f64,
    pub y_v: f64,
    pub bound_ubu_slack: f64,
    pub bound_ubv_slack: f64,
    /// `None` when the initial data do not satisfy the decay hypothesis.
    pub decay_slack: Option<f64>,
    pub energy_slack: Option<f64>,
}

pub const MONITOR_CSV_HEADER: &str = "t,sup_u,sup_v,L1_u,L1_v,L2sq_u,L2sq_v,Y_u,Y_v,bound_ubu_slack,bound_ubv_slack,decay_slack";

pub fn write_monitor_csv(w: &mut impl Write, samples: &[MonitorSample]) -> std::io::Result<()> {
    writeln!(w, "{MONITOR_CSV_HEADER}")?;
    for s in samples {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            s.t,
            s.sup_u,
            s.sup_v,
            s.l1_u,
            s.l1_v,
            s.l2sq_u,
            s.l2sq_v,
            s.y_u,
            s.y_v,
            s.bound_ubu_slack,
            s.bound_ubv_slack,
            s.decay_slack.map_or("NaN".to_string(), |d| d.to_string())
        )?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub t: f64,
    pub x: [f64; 2],
    pub monitor: Monitor,
    pub value: f64,
    pub bound: f64,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub snapshots: Vec<State>,
    pub samples: Vec<MonitorSample>,
    pub violations: Vec<Violation>,
    pub final_state: State,
    pub steps: usize,
    pub dt: f64,
}

impl Trajectory {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Quantities fixed by the initial data that the monitors compare against.
struct Envelopes {
    t0: f64,
    sup_u0: f64,
    sup_h0: f64,
    /// (ε, ‖v⁰‖∞) for the exponential decay estimate.
    decay: Option<(f64, f64)>,
    /// (E(0), C₂, factor) for the energy envelope.
    energy: Option<(f64, f64, f64)>,
}

impl Envelopes {
    fn new(initial: &State, params: &ModelParams, ops: &OperatorPair) -> Result<Self> {
        let sup_u0 = initial.u.max().max(0.0);
        let h0 = initial.u.zip_map(&initial.v, |a, b| a + b)?;
        let sup_h0 = h0.max().max(0.0);
        let sup_v0 = initial.v.max().max(0.0);
        let delta = (sup_u0 - 1.0).max(0.0);
        // Largest admissible ε: ‖v⁰‖∞ < (f + κ − ε)/(1 + δ).
        let eps = params.decay_v() - (1.0 + delta) * sup_v0;
        let decay = (eps > 0.0).then_some((eps, sup_v0));
        let energy = if ops.kernel_gap == 0.0
            && ops.same_operator()
            && ops.u.conserves_constants()
            && ops.coeff_u > 0.0
            && ops.coeff_v > 0.0
        {
            let (c1, c2) = (ops.coeff_u, ops.coeff_v);
            let big_c2 = c1 * c2 / (1.0 + (c1 - c2).powi(2));
            let e0 = initial.u.l2_norm_squared() + big_c2 * h0.l2_norm_squared();
            Some((e0, big_c2, 3.0f64.max(2.0 / big_c2)))
        } else {
            None
        };
        Ok(Envelopes {
            t0: initial.t,
            sup_u0,
            sup_h0,
            decay,
            energy,
        })
    }
}

fn sample(
    state: &State,
    params: &ModelParams,
    ops: &OperatorPair,
    env: &Envelopes,
) -> MonitorSample {
    let t = state.t - env.t0;
    let grid = state.grid();
    let h_max = state
        .u
        .values()
        .iter()
        .zip(state.v.values())
        .map(|(a, b)| a + b)
        .fold(f64::NEG_INFINITY, f64::max);
    let l2sq_u = state.u.l2_norm_squared();
    let l2sq_v = state.v.l2_norm_squared();
    let energy_slack = env.energy.map(|(e0, big_c2, factor)| {
        let decay = (-params.f * t).exp();
        let bound = decay * e0 + (1.0 + big_c2) * grid.volume() * (1.0 - decay);
        l2sq_u + l2sq_v - factor * bound
    });
    MonitorSample {
        t: state.t,
        sup_u: state.u.sup_norm(),
        sup_v: state.v.sup_norm(),
        min_u: state.u.min(),
        min_v: state.v.min(),
        l1_u: state.u.l1_norm(),
        l1_v: state.v.l1_norm(),
        l2sq_u,
        l2sq_v,
        y_u: ops.u.dissipation(&state.u),
        y_v: ops.v.dissipation(&state.v),
        bound_ubu_slack: state.u.max() - ubu_bound(params, env.sup_u0, t),
        bound_ubv_slack: h_max - ubv_bound(params, ops, env.sup_u0, env.sup_h0, t),
        decay_slack: env
            .decay
            .map(|(eps, v0)| state.v.sup_norm() - (-eps * t).exp() * v0),
        energy_slack,
    }
}

fn check_sample(
    state: &State,
    s: &MonitorSample,
    monitors: &[Monitor],
    config: &IntegratorConfig,
    out: &mut Vec<Violation>,
) {
    let grid = state.grid();
    for m in monitors {
        let (value, bound, idx) = match m {
            Monitor::Positivity => {
                let (min, idx) = if s.min_u <= s.min_v {
                    (s.min_u, state.u.argmin())
                } else {
                    (s.min_v, state.v.argmin())
                };
                if min >= -config.postol {
                    continue;
                }
                (min, -config.postol, idx)
            }
            Monitor::Ubu => {
                if s.bound_ubu_slack <= config.montol {
                    continue;
                }
                let idx = state.u.argmax();
                (state.u.values()[idx], state.u.values()[idx] - s.bound_ubu_slack, idx)
            }
            Monitor::Ubv => {
                if s.bound_ubv_slack <= config.montol {
                    continue;
                }
                let h = state.u.zip_map(&state.v, |a, b| a + b).expect("same grid");
                let idx = h.argmax();
                (h.values()[idx], h.values()[idx] - s.bound_ubv_slack, idx)
            }
            Monitor::Decay => match s.decay_slack {
                Some(slack) if slack > config.montol => {
                    let idx = state.v.argmax();
                    (s.sup_v, s.sup_v - slack, idx)
                }
                _ => continue,
            },
            Monitor::Energy => match s.energy_slack {
                Some(slack) if slack > config.montol => {
                    let total = s.l2sq_u + s.l2sq_v;
                    (total, total - slack, 0)
                }
                _ => continue,
            },
        };
        out.push(Violation {
            t: state.t,
            x: grid.node(idx),
            monitor: *m,
            value,
            bound,
        });
    }
}

/// Step count and the uniform step actually used to reach `t_end`.
pub fn step_plan(t0: f64, config: &IntegratorConfig) -> Result<(usize, f64)> {
    if !(config.dt.is_finite() && config.dt > 0.0) {
        return Err(NlgsError::Config(format!("dt must be positive, got {}", config.dt)));
    }
    let span = config.t_end - t0;
    if !(span.is_finite() && span >= 0.0) {
        return Err(NlgsError::Config(format!(
            "t_end {} precedes the initial time {t0}",
            config.t_end
        )));
    }
    if span == 0.0 {
        return Ok((0, config.dt));
    }
    let n = (span / config.dt - 1e-9).ceil().max(1.0) as usize;
    Ok((n, span / n as f64))
}

/// Check initial data and time step against the a-priori stability bound.
pub fn validate_run(
    initial: &State,
    params: &ModelParams,
    ops: &OperatorPair,
    config: &IntegratorConfig,
) -> Result<(usize, f64)> {
    params.validate()?;
    ops.check(initial.grid())?;
    initial.u.check_finite("initial u")?;
    initial.v.check_finite("initial v")?;
    if initial.u.min() < 0.0 || initial.v.min() < 0.0 {
        return Err(NlgsError::NegativeInitialData(format!(
            "min u = {}, min v = {}",
            initial.u.min(),
            initial.v.min()
        )));
    }
    let (steps, dt) = step_plan(initial.t, config)?;
    let bounds = a_priori_box(params, ops, &initial.u, &initial.v)?;
    let max_dt = stability_bound(params, ops.diffusion_bound(), &bounds, config.safety)?;
    if config.dt > max_dt {
        return Err(NlgsError::StabilityBound {
            dt: config.dt,
            max_dt,
        });
    }
    Ok((steps, dt))
}

pub fn integrate(
    initial: &State,
    params: &ModelParams,
    ops: &OperatorPair,
    config: &IntegratorConfig,
    monitors: &[Monitor],
) -> Result<Trajectory> {
    integrate_observed(initial, params, ops, config, monitors, |_| {})
}

/// Like [`integrate`], calling `observer` after every step.
pub fn integrate_observed(
    initial: &State,
    params: &ModelParams,
    ops: &OperatorPair,
    config: &IntegratorConfig,
    monitors: &[Monitor],
    mut observer: impl FnMut(&State),
) -> Result<Trajectory> {
    let (steps, dt) = validate_run(initial, params, ops, config)?;
    let env = Envelopes::new(initial, params, ops)?;
    let mut samples = Vec::new();
    let mut violations = Vec::new();
    let mut snapshots = vec![initial.clone()];

    let record = |state: &State, samples: &mut Vec<MonitorSample>, violations: &mut Vec<Violation>| {
        let s = sample(state, params, ops, &env);
        check_sample(state, &s, monitors, config, violations);
        samples.push(s);
    };
    record(initial, &mut samples, &mut violations);

    let mut state = initial.clone();
    for k in 1..=steps {
        let mut next = step(&state, params, ops, config.scheme, dt)?;
        next.t = initial.t + k as f64 * dt;
        if !next.is_finite() {
            return Err(NlgsError::Blowup {
                t: next.t,
                last_t: state.t,
                last_sup_u: state.u.sup_norm(),
                last_sup_v: state.v.sup_norm(),
            });
        }
        state = next;
        observer(&state);
        let last = k == steps;
        if last || (config.monitor_every > 0 && k % config.monitor_every == 0) {
            record(&state, &mut samples, &mut violations);
        }
        if !last && config.snapshot_every > 0 && k % config.snapshot_every == 0 {
            snapshots.push(state.clone());
        }
    }
    if steps > 0 {
        snapshots.push(state.clone());
    }
    Ok(Trajectory {
        snapshots,
        samples,
        violations,
        final_state: state,
        steps,
        dt,
    })
}

/// RK4 for the linear problem `dz/dt = c·Az` with no reaction, calling
/// `observe(t, z)` at the start, every `every` steps, and at the end.
pub fn integrate_diffusion(
    op: &dyn SpatialOperator,
    coeff: f64,
    z0: &Field,
    dt: f64,
    t_end: f64,
    every: usize,
    mut observe: impl FnMut(f64, &Field),
) -> Result<Field> {
    if z0.grid() != op.grid() {
        return Err(NlgsError::GridMismatch);
    }
    // dt·c·γ∞ ≤ 1/4 keeps every RK4 stage polynomial a convex combination.
    let max_dt = default_safety() / (2.0 * coeff * op.gamma_inf()).max(f64::MIN_POSITIVE);
    if dt > max_dt {
        return Err(NlgsError::StabilityBound { dt, max_dt });
    }
    let mut cfg = IntegratorConfig::new(dt, t_end);
    cfg.monitor_every = every;
    let (steps, dt) = step_plan(0.0, &cfg)?;
    let n = z0.values().len();
    let mut z = z0.clone();
    let mut k = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut stage = vec![0.0; n];
    observe(0.0, &z);
    for s in 1..=steps {
        let zv = z.values().to_vec();
        op.apply_into(&zv, &mut k[0]);
        for m in 1..4 {
            let c = if m == 3 { dt } else { 0.5 * dt };
            for i in 0..n {
                stage[i] = zv[i] + c * coeff * k[m - 1][i];
            }
            let (_, rest) = k.split_at_mut(m);
            op.apply_into(&stage, &mut rest[0]);
        }
        let w = dt * coeff / 6.0;
        for (i, x) in z.values_mut().iter_mut().enumerate() {
            *x = zv[i] + w * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
        }
        if s == steps || (every > 0 && s % every == 0) {
            observe(s as f64 * dt, &z);
        }
    }
    Ok(z)
}

/// Per-step residual of the energy identity behind the `L²` dissipation
/// estimate for u.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyDefect {
    /// `|Δ‖u‖₂²/Δt − ½(G(tₙ) + G(tₙ₊₁))|` with
    /// `G = −c_u Y[u] − 2‖uv‖₂² − 2f‖u‖₂² + 2f‖u‖₁` the exact rate of `‖u‖₂²`.
    pub defect: f64,
    /// `Δ‖u‖₂²/Δt + c_u Ȳ + 2‖uv‖₂² + f‖u‖₂² − f|Ω|` with time-averaged terms.
    pub inequality_excess: f64,
}

pub fn energy_identity_defect(
    prev: &State,
    next: &State,
    params: &ModelParams,
    ops: &OperatorPair,
) -> Result<EnergyDefect> {
    prev.u.same_grid(&next.u)?;
    let dt = next.t - prev.t;
    let terms = |s: &State| -> Result<(f64, f64, f64, f64)> {
        let uv = s.u.zip_map(&s.v, |a, b| a * b)?;
        Ok((
            ops.coeff_u * ops.u.dissipation(&s.u),
            uv.l2_norm_squared(),
            s.u.l2_norm_squared(),
            s.u.l1_norm(),
        ))
    };
    let (y0, uv0, n0, l0) = terms(prev)?;
    let (y1, uv1, n1, l1) = terms(next)?;
    let rate = (n1 - n0) / dt;
    let g = |y: f64, uv: f64, n: f64, l: f64| -y - 2.0 * uv - 2.0 * params.f * n + 2.0 * params.f * l;
    let defect = (rate - 0.5 * (g(y0, uv0, n0, l0) + g(y1, uv1, n1, l1))).abs();
    let avg = |a: f64, b: f64| 0.5 * (a + b);
    let lhs = rate + avg(y0, y1) + 2.0 * avg(uv0, uv1) + params.f * avg(n0, n1);
    Ok(EnergyDefect {
        defect,
        inequality_excess: lhs - params.f * prev.grid().volume(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{BoundaryMode, KernelSpec, RadialProfile};
    use crate::operator::NonlocalOperator;

    /// Operator that does nothing, for pure-reaction checks.
    struct Zero(Grid);

    impl SpatialOperator for Zero {
        fn grid(&self) -> &Grid {
            &self.0
        }
        fn apply_into(&self, _z: &[f64], out: &mut [f64]) {
            out.fill(0.0);
        }
        fn gamma_inf(&self) -> f64 {
            0.0
        }
        fn dissipation(&self, _z: &Field) -> f64 {
            0.0
        }
        fn describe(&self) -> String {
            "zero".into()
        }
    }

    fn params() -> ModelParams {
        ModelParams::new(1.0, 1.0, 0.04, 0.01).unwrap()
    }

    #[test]
    fn phi_functions_continuous_across_branch() {
        for z in [-0.999_999_9, -1.000_000_1, 0.999_999_9, 1.000_000_1] {
            let [a, b, c] = phi_functions(z);
            let p1 = z.exp_m1() / z;
            let p2 = (p1 - 1.0) / z;
            let p3 = (p2 - 0.5) / z;
            assert!((a - p1).abs() < 1e-13);
            assert!((b - p2).abs() < 1e-13);
            assert!((c - p3).abs() < 1e-12);
        }
        assert_eq!(phi_functions(0.0), [1.0, 0.5, 1.0 / 6.0]);
    }

    #[test]
    fn exponential_scheme_is_exact_for_linear_relaxation() {
        let g = Grid::unit(1, 8).unwrap();
        let zero = Zero(g);
        let ops = OperatorPair::shared(&zero, 1.0, 1.0);
        let p = params();
        let u0 = 1.7;
        let mut s = State::new(0.0, Field::constant(&g, u0), Field::zeros(&g)).unwrap();
        for _ in 0..100 {
            s = step(&s, &p, &ops, Scheme::ImexLinearDecay, 0.5).unwrap();
        }
        let exact = 1.0 + (u0 - 1.0) * (-p.f * s.t).exp();
        assert!((s.u.values()[0] - exact).abs() < 1e-14);

        let mut r = State::new(0.0, Field::constant(&g, u0), Field::zeros(&g)).unwrap();
        for _ in 0..100 {
            r = step(&r, &p, &ops, Scheme::Rk4Explicit, 0.5).unwrap();
        }
        // Fourth order: (f dt)^5/120 per step, 100 steps.
        assert!((r.u.values()[0] - exact).abs() < 1e-9);
    }

    #[test]
    fn semi_trivial_state_is_fixed() {
        let g = Grid::unit(2, 32).unwrap();
        let op = NonlocalOperator::build(
            &KernelSpec::new(RadialProfile::bump(1.0).unwrap(), 4, BoundaryMode::NeumannNonlocal),
            &g,
        )
        .unwrap();
        let ops = OperatorPair::shared(&op, 1.0, 1.0);
        let s0 = State::new(0.0, Field::constant(&g, 1.0), Field::zeros(&g)).unwrap();
        let s = step(&s0, &params(), &ops, Scheme::Rk4Explicit, 0.01).unwrap();
        assert_eq!(s.u, s0.u);
        assert_eq!(s.v, s0.v);
        let e = step(&s0, &params(), &ops, Scheme::ImexLinearDecay, 0.01).unwrap();
        assert!(e.u.values().iter().all(|x| (x - 1.0).abs() < 1e-15));
        assert_eq!(e.v.sup_norm(), 0.0);
    }

    fn homogeneous_reference(p: &ModelParams, u0: f64, v0: f64, t: f64, dt: f64) -> (f64, f64) {
        let n = (t / dt).round() as usize;
        let (mut u, mut v) = (u0, v0);
        let rhs = |u: f64, v: f64| reaction_point(u, v, p);
        for _ in 0..n {
            let k1 = rhs(u, v);
            let k2 = rhs(u + 0.5 * dt * k1.0, v + 0.5 * dt * k1.1);
            let k3 = rhs(u + 0.5 * dt * k2.0, v + 0.5 * dt * k2.1);
            let k4 = rhs(u + dt * k3.0, v + dt * k3.1);
            u += dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
            v += dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        }
        (u, v)
    }

    #[test]
    fn homogeneous_run_matches_refined_ode() {
        let g = Grid::unit(2, 16).unwrap();
        let op = NonlocalOperator::build(
            &KernelSpec::new(RadialProfile::bump(1.0).unwrap(), 4, BoundaryMode::NeumannNonlocal),
            &g,
        )
        .unwrap();
        let ops = OperatorPair::shared(&op, 1.0, 1.0);
        let p = params();
        let (u0, v0) = (0.9, 0.08);
        let (ur, vr) = homogeneous_reference(&p, u0, v0, 10.0, 1e-4);
        for scheme in [Scheme::Rk4Explicit, Scheme::ImexLinearDecay] {
            let mut cfg = IntegratorConfig::new(0.01, 10.0);
            cfg.scheme = scheme;
            let init = State::new(0.0, Field::constant(&g, u0), Field::constant(&g, v0)).unwrap();
            let traj = integrate(&init, &p, &ops, &cfg, &Monitor::ALL).unwrap();
            let s = traj.final_state;
            assert!((s.u.values()[7] - ur).abs() < 1e-6, "{scheme:?}");
            assert!((s.v.values()[7] - vr).abs() < 1e-6, "{scheme:?}");
        }
    }

    #[test]
    fn stability_bound_regression() {
        // γ∞ = 0, box [0,2]×[0,1]: L_F = 1 + 0.04 + 4 = 5.04.
        let p = params();
        let b = BoxBounds { u_max: 2.0, v_max: 1.0 };
        let dt = stability_bound_nonlocal(&p, 0.0, &b, 0.5).unwrap();
        assert!((dt - 0.5 / 5.04).abs() < 1e-15);
        assert!(stability_bound_nonlocal(&p, 1.0, &b, 0.0).is_err());
        // Diffusion-dominated: doubling γ∞ roughly halves dt.
        let d1 = stability_bound_nonlocal(&p, 1000.0, &b, 0.5).unwrap();
        let d2 = stability_bound_nonlocal(&p, 2000.0, &b, 0.5).unwrap();
        assert!((d1 / d2 - 2.0).abs() < 0.01);
    }

    #[test]
    fn oversized_dt_rejected_before_stepping() {
        let g = Grid::unit(2, 32).unwrap();
        let op = NonlocalOperator::build(
            &KernelSpec::new(RadialProfile::bump(1.0).unwrap(), 4, BoundaryMode::NeumannNonlocal),
            &g,
        )
        .unwrap();
        let ops = OperatorPair::shared(&op, 1.0, 1.0);
        let init = State::new(0.0, Field::constant(&g, 1.0), Field::zeros(&g)).unwrap();
        let cfg = IntegratorConfig::new(1.0, 10.0);
        assert!(matches!(
            integrate(&init, &params(), &ops, &cfg, &[]),
            Err(NlgsError::StabilityBound { .. })
        ));
    }

    #[test]
    fn negative_initial_data_rejected() {
        let g = Grid::unit(1, 8).unwrap();
        let zero = Zero(g);
        let ops = OperatorPair::shared(&zero, 1.0, 1.0);
        let init = State::new(0.0, Field::constant(&g, -0.1), Field::zeros(&g)).unwrap();
        assert!(matches!(
            integrate(&init, &params(), &ops, &IntegratorConfig::new(0.01, 1.0), &[]),
            Err(NlgsError::NegativeInitialData(_))
        ));
    }

    #[test]
    fn semiflow_property_on_shared_step_grid() {
        let g = Grid::unit(2, 32).unwrap();
        let op = NonlocalOperator::build(
            &KernelSpec::new(RadialProfile::bump(1.0).unwrap(), 4, BoundaryMode::NeumannNonlocal),
            &g,
        )
        .unwrap();
        let ops = OperatorPair::shared(&op, 0.1, 0.1);
        let p = params();
        let init = State::new(
            0.0,
            Field::from_fn(&g, |x| 1.0 - 0.5 * (-20.0 * ((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2))).exp()),
            Field::from_fn(&g, |x| 0.25 * (-20.0 * ((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2))).exp()),
        )
        .unwrap();
        let whole = integrate(&init, &p, &ops, &IntegratorConfig::new(0.01, 2.0), &[]).unwrap();
        let half = integrate(&init, &p, &ops, &IntegratorConfig::new(0.01, 1.0), &[]).unwrap();
        let rest = integrate(&half.final_state, &p, &ops, &IntegratorConfig::new(0.01, 2.0), &[]).unwrap();
        assert_eq!(whole.final_state.u, rest.final_state.u);
        assert_eq!(whole.final_state.v, rest.final_state.v);
    }

    #[test]
    fn pure_diffusion_respects_maximum_principle() {
        let g = Grid::unit(2, 32).unwrap();
        let op = NonlocalOperator::build(
            &KernelSpec::new(RadialProfile::bump(1.0).unwrap(), 4, BoundaryMode::NeumannNonlocal),
            &g,
        )
        .unwrap();
        let ops = OperatorPair::shared(&op, 1.0, 1.0);
        // Diffusion only: drop the reaction by stepping dz/dt = Γz by hand.
        let mut z = Field::from_fn(&g, |x| if x[0] < 0.3 { 1.0 } else { 0.0 });
        let dt = 0.25 / op.gamma_inf();
        let mut prev = z.sup_norm();
        let mut buf = vec![0.0; g.len()];
        for _ in 0..200 {
            let stage = |a: &[f64], out: &mut [f64]| SpatialOperator::apply_into(&op, a, out);
            let zv = z.values().to_vec();
            let mut k = [vec![0.0; g.len()], vec![0.0; g.len()], vec![0.0; g.len()], vec![0.0; g.len()]];
            stage(&zv, &mut k[0]);
            for s in 1..4 {
                let c = if s == 3 { dt } else { 0.5 * dt };
                for i in 0..g.len() {
                    buf[i] = zv[i] + c * k[s - 1][i];
                }
                stage(&buf, &mut k[s]);
            }
            for (i, x) in z.values_mut().iter_mut().enumerate() {
                *x = zv[i] + dt / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
            }
            let sup = z.sup_norm();
            assert!(sup <= prev + 1e-14);
            assert!(z.min() >= -1e-14);
            prev = sup;
        }
        let _ = ops;
    }

    #[test]
    fn monitor_csv_columns() {
        let g = Grid::unit(1, 8).unwrap();
        let zero = Zero(g);
        let ops = OperatorPair::shared(&zero, 1.0, 1.0);
        let init = State::new(0.0, Field::constant(&g, 1.0), Field::zeros(&g)).unwrap();
        let traj = integrate(&init, &params(), &ops, &IntegratorConfig::new(0.1, 1.0), &Monitor::ALL).unwrap();
        assert!(traj.is_clean());
        let mut buf = Vec::new();
        write_monitor_csv(&mut buf, &traj.samples).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap().split(',').count(), 12);
        assert_eq!(lines.count(), traj.samples.len());
    }
}
