//! Named initial data.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NlgsError, Result};
use crate::grid::{Field, Grid};
use crate::integrator::State;
use crate::model::ModelParams;
use crate::snapshot::load_snapshot;

/// Width of the Gaussian bump used by the presets.
pub const BUMP_SIGMA: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    /// `(u, v) = (1, 0)`.
    SemiTrivial,
    /// `u = 1`, `v = amplitude · g`.
    PerturbedSemiTrivial {
        #[serde(default = "quarter")]
        amplitude: f64,
    },
    /// `u = 1 + δ − g/4`, `v = fraction · (f + κ)/(1 + δ) · g / max g`, so
    /// that `sup u⁰ = 1 + δ` up to the bump and `‖v⁰‖∞` is exact.
    Thm12Decay {
        #[serde(default)]
        delta: f64,
        #[serde(default = "half")]
        fraction: f64,
    },
    Homogeneous {
        u0: f64,
        v0: f64,
    },
    /// Independent uniform samples, `u ∈ [0, u_max)`, `v ∈ [0, v_max)`.
    RandomSeeded {
        seed: u64,
        #[serde(default = "one")]
        u_max: f64,
        #[serde(default = "half")]
        v_max: f64,
    },
    /// `u = 1 − g/2`, `v = g/4`, with `g` centred at `center` (domain centre
    /// by default).
    SmoothBump {
        #[serde(default)]
        center: Option<[f64; 2]>,
    },
    /// Fields read from snapshot files; the run starts at the stored time.
    Snapshot {
        u: PathBuf,
        v: PathBuf,
    },
}

fn quarter() -> f64 {
    0.25
}
fn half() -> f64 {
    0.5
}
fn one() -> f64 {
    1.0
}

/// Gaussian of width [`BUMP_SIGMA`] centred in the domain.
pub fn centered_bump(grid: &Grid) -> Field {
    let e = grid.extents();
    bump_at(grid, [0.5 * e[0], if grid.dim() == 2 { 0.5 * e[1] } else { 0.0 }])
}

/// Gaussian of width [`BUMP_SIGMA`] centred at `center`.
pub fn bump_at(grid: &Grid, center: [f64; 2]) -> Field {
    let s2 = 2.0 * BUMP_SIGMA * BUMP_SIGMA;
    Field::from_fn(grid, |x| {
        let r2 = (x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2);
        (-r2 / s2).exp()
    })
}

impl InitialData {
    /// Build the initial state; `seed` overrides the seed of `random_seeded`.
    pub fn build(&self, grid: &Grid, params: &ModelParams, seed: Option<u64>) -> Result<State> {
        let state = match self {
            InitialData::SemiTrivial => {
                State::new(0.0, Field::constant(grid, 1.0), Field::zeros(grid))?
            }
            InitialData::PerturbedSemiTrivial { amplitude } => State::new(
                0.0,
                Field::constant(grid, 1.0),
                centered_bump(grid).scaled(*amplitude),
            )?,
            InitialData::Thm12Decay { delta, fraction } => {
                if !(*delta >= 0.0 && *fraction >= 0.0 && *fraction < 1.0) {
                    return Err(NlgsError::Config(format!(
                        "thm12_decay needs delta >= 0 and fraction in [0, 1), got {delta}, {fraction}"
                    )));
                }
                let g = centered_bump(grid);
                let peak = g.max();
                let v_sup = fraction * params.decay_v() / (1.0 + delta);
                State::new(
                    0.0,
                    g.map(|x| 1.0 + delta - 0.25 * x),
                    g.map(|x| v_sup * x / peak),
                )?
            }
            InitialData::Homogeneous { u0, v0 } => {
                State::new(0.0, Field::constant(grid, *u0), Field::constant(grid, *v0))?
            }
            InitialData::RandomSeeded { seed: s, u_max, v_max } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(*s));
                let u = Field::from_fn(grid, |_| rng.random_range(0.0..1.0) * u_max);
                let v = Field::from_fn(grid, |_| rng.random_range(0.0..1.0) * v_max);
                State::new(0.0, u, v)?
            }
            InitialData::SmoothBump { center } => {
                let g = match center {
                    Some(c) => bump_at(grid, *c),
                    None => centered_bump(grid),
                };
                State::new(0.0, g.map(|x| 1.0 - 0.5 * x), g.map(|x| 0.25 * x))?
            }
            InitialData::Snapshot { u, v } => {
                let (fu, hu) = load_snapshot(u)?;
                let (fv, hv) = load_snapshot(v)?;
                if fu.grid() != grid || fv.grid() != grid {
                    return Err(NlgsError::GridMismatch);
                }
                if hu.time != hv.time {
                    return Err(NlgsError::Snapshot(format!(
                        "u and v snapshots disagree on time: {} vs {}",
                        hu.time, hv.time
                    )));
                }
                State::new(hu.time, fu, fv)?
            }
        };
        state.u.check_finite("initial u")?;
        state.v.check_finite("initial v")?;
        Ok(state)
    }
}
