//! Gray-Scott reaction terms and the spatially homogeneous steady states.

use serde::{Deserialize, Serialize};

use crate::error::{NlgsError, Result};
use crate::grid::Field;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub d1: f64,
    pub d2: f64,
    pub f: f64,
    pub kappa: f64,
}

impl ModelParams {
    pub fn new(d1: f64, d2: f64, f: f64, kappa: f64) -> Result<Self> {
        let p = ModelParams { d1, d2, f, kappa };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d1", self.d1),
            ("d2", self.d2),
            ("f", self.f),
            ("kappa", self.kappa),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(NlgsError::InvalidParams(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// `f + κ`, the linear decay rate of v.
    pub fn decay_v(&self) -> f64 {
        self.f + self.kappa
    }

    /// `f² − 4f(f + κ)²`; its sign selects the regime.
    pub fn discriminant(&self) -> f64 {
        let fk = self.decay_v();
        self.f * self.f - 4.0 * self.f * fk * fk
    }

    pub fn regime(&self) -> Regime {
        // Compare f with 4(f+κ)² directly and treat a gap of a few ulps as the
        // degenerate case; the discriminant itself is too cancellation-prone.
        let fk = self.decay_v();
        let threshold = 4.0 * fk * fk;
        let gap = self.f - threshold;
        if gap.abs() <= 8.0 * f64::EPSILON * self.f.max(threshold) {
            Regime::S2
        } else if gap < 0.0 {
            Regime::S1
        } else {
            Regime::S3
        }
    }
}

/// Pointwise `(F₁, F₂) = (−uv² + f(1 − u), uv² − (f + κ)v)`.
#[inline]
pub fn reaction_point(u: f64, v: f64, p: &ModelParams) -> (f64, f64) {
    let uv2 = u * v * v;
    (-uv2 + p.f * (1.0 - u), uv2 - p.decay_v() * v)
}

pub fn reaction(u: &Field, v: &Field, params: &ModelParams) -> Result<(Field, Field)> {
    u.same_grid(v)?;
    let f1 = u.zip_map(v, |a, b| reaction_point(a, b, params).0)?;
    let f2 = u.zip_map(v, |a, b| reaction_point(a, b, params).1)?;
    Ok((f1, f2))
}

/// Jacobian of `(F₁, F₂)` with respect to `(u, v)`.
pub fn reaction_jacobian(u: f64, v: f64, p: &ModelParams) -> [[f64; 2]; 2] {
    [
        [-v * v - p.f, -2.0 * u * v],
        [v * v, 2.0 * u * v - p.decay_v()],
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    S1,
    S2,
    S3,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomogeneousState {
    pub u: f64,
    pub v: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteadyStateReport {
    pub regime: Regime,
    pub states: Vec<HomogeneousState>,
    pub discriminant: f64,
}

pub fn steady_states(params: &ModelParams) -> SteadyStateReport {
    let (f, fk) = (params.f, params.decay_v());
    let disc = params.discriminant();
    let regime = params.regime();
    let mut states = vec![HomogeneousState { u: 1.0, v: 0.0 }];
    match regime {
        Regime::S1 => {}
        Regime::S2 => states.push(HomogeneousState {
            u: 0.5,
            v: 2.0 * fk,
        }),
        Regime::S3 => {
            let root = disc.max(0.0).sqrt();
            for s in [1.0, -1.0] {
                let denom = f + s * root;
                states.push(HomogeneousState {
                    u: 2.0 * fk * fk / denom,
                    v: denom / (2.0 * fk),
                });
            }
        }
    }
    SteadyStateReport {
        regime,
        states,
        discriminant: disc,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stability {
    Stable,
    Unstable,
    Marginal,
}

/// Linear stability of a homogeneous state for the reaction-only ODE.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub class: Stability,
    /// Eigenvalues as (real, imaginary) pairs.
    pub eigenvalues: [(f64, f64); 2],
    pub basis: String,
}

pub fn jacobian_eigenvalues(jac: &[[f64; 2]; 2]) -> [(f64, f64); 2] {
    let tr = jac[0][0] + jac[1][1];
    let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
    let half = 0.5 * tr;
    let disc = half * half - det;
    if disc >= 0.0 {
        let s = disc.sqrt();
        // Stable form for the smaller-magnitude root.
        let big = if half >= 0.0 { half + s } else { half - s };
        let small = if big != 0.0 { det / big } else { 0.0 };
        [(big, 0.0), (small, 0.0)]
    } else {
        let s = (-disc).sqrt();
        [(half, s), (half, -s)]
    }
}

pub fn classify_stability_homogeneous(
    params: &ModelParams,
    state: &HomogeneousState,
) -> StabilityReport {
    let jac = reaction_jacobian(state.u, state.v, params);
    let eigenvalues = jacobian_eigenvalues(&jac);
    let scale = jac.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
    let tol = 1e-12 * scale.max(1e-300);
    let class = if eigenvalues.iter().any(|e| e.0 > tol) {
        Stability::Unstable
    } else if eigenvalues.iter().all(|e| e.0 < -tol) {
        Stability::Stable
    } else {
        Stability::Marginal
    };
    StabilityReport {
        class,
        eigenvalues,
        basis: "reaction-only ODE".to_string(),
    }
}
