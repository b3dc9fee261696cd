//! Classical Gray-Scott reference: cell-centered second-order Laplacian with
//! diffusivities `D_ℓ = m₂ d_ℓ / (2n)`, and the weak-form residual.

use serde::{Deserialize, Serialize};

use crate::error::{NlgsError, Result};
use crate::grid::{Field, Grid};
use crate::integrator::{
    integrate, IntegratorConfig, Monitor, OperatorPair, SpatialOperator, Trajectory,
};
use crate::kernels::{effective_diffusivity, kernel_moments, RadialProfile, DEFAULT_MOMENT_RESOLUTION};
use crate::model::{reaction_point, ModelParams};
use crate::integrator::State;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalBoundary {
    /// Ghost value equals the boundary cell: zero flux.
    Neumann,
    /// Ghost value zero.
    Dirichlet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteLaplacian {
    grid: Grid,
    bc: LocalBoundary,
}

impl DiscreteLaplacian {
    pub fn new(grid: &Grid, bc: LocalBoundary) -> Self {
        DiscreteLaplacian { grid: *grid, bc }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn bc(&self) -> LocalBoundary {
        self.bc
    }

    pub fn apply(&self, z: &Field) -> Result<Field> {
        if z.grid() != &self.grid {
            return Err(NlgsError::GridMismatch);
        }
        let mut out = Field::zeros(&self.grid);
        self.apply_into(z.values(), out.values_mut());
        Ok(out)
    }

    pub fn apply_into(&self, z: &[f64], out: &mut [f64]) {
        let [n0, n1] = self.grid.shape2();
        let h = self.grid.spacing();
        let inv0 = 1.0 / (h[0] * h[0]);
        let inv1 = if self.grid.dim() == 2 { 1.0 / (h[1] * h[1]) } else { 0.0 };
        let ghost = |here: f64| match self.bc {
            LocalBoundary::Neumann => here,
            LocalBoundary::Dirichlet => 0.0,
        };
        for i0 in 0..n0 {
            for i1 in 0..n1 {
                let idx = i0 * n1 + i1;
                let c = z[idx];
                let west = if i0 > 0 { z[idx - n1] } else { ghost(c) };
                let east = if i0 + 1 < n0 { z[idx + n1] } else { ghost(c) };
                let mut acc = (west - 2.0 * c + east) * inv0;
                if self.grid.dim() == 2 {
                    let south = if i1 > 0 { z[idx - 1] } else { ghost(c) };
                    let north = if i1 + 1 < n1 { z[idx + 1] } else { ghost(c) };
                    acc += (south - 2.0 * c + north) * inv1;
                }
                out[idx] = acc;
            }
        }
    }

    /// Discrete gradient on interior faces, one vector per axis; entry
    /// `(i0, i1)` along axis 0 is `(z[i0+1, i1] − z[i0, i1]) / h₀`.
    pub fn face_gradients(&self, z: &Field) -> Result<Vec<Vec<f64>>> {
        if z.grid() != &self.grid {
            return Err(NlgsError::GridMismatch);
        }
        let [n0, n1] = self.grid.shape2();
        let h = self.grid.spacing();
        let zv = z.values();
        let mut out = Vec::with_capacity(self.grid.dim());
        let mut g0 = Vec::with_capacity((n0 - 1) * n1);
        for i0 in 0..n0 - 1 {
            for i1 in 0..n1 {
                g0.push((zv[(i0 + 1) * n1 + i1] - zv[i0 * n1 + i1]) / h[0]);
            }
        }
        out.push(g0);
        if self.grid.dim() == 2 {
            let mut g1 = Vec::with_capacity(n0 * (n1 - 1));
            for i0 in 0..n0 {
                for i1 in 0..n1 - 1 {
                    g1.push((zv[i0 * n1 + i1 + 1] - zv[i0 * n1 + i1]) / h[1]);
                }
            }
            out.push(g1);
        }
        Ok(out)
    }

    /// `Σ_faces ∇_h z · ∇_h w · |cell|` over interior faces.
    pub fn gradient_pairing(&self, z: &Field, w: &Field) -> Result<f64> {
        let gz = self.face_gradients(z)?;
        let gw = self.face_gradients(w)?;
        let sum: f64 = gz
            .iter()
            .zip(&gw)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
            .sum();
        Ok(sum * self.grid.cell_measure())
    }
}

impl SpatialOperator for DiscreteLaplacian {
    fn grid(&self) -> &Grid {
        &self.grid
    }

    fn apply_into(&self, z: &[f64], out: &mut [f64]) {
        DiscreteLaplacian::apply_into(self, z, out)
    }

    /// `Σ_axes 2/h²`: the largest diagonal, equal to the off-diagonal row mass.
    fn gamma_inf(&self) -> f64 {
        let h = self.grid.spacing();
        h.iter().take(self.grid.dim()).map(|h| 2.0 / (h * h)).sum()
    }

    fn dissipation(&self, z: &Field) -> f64 {
        let mut sum: f64 = self
            .face_gradients(z)
            .expect("grid checked by caller")
            .iter()
            .map(|g| g.iter().map(|x| x * x).sum::<f64>())
            .sum();
        if self.bc == LocalBoundary::Dirichlet {
            // Each boundary face contributes (z − 0)²/h².
            let [n0, n1] = self.grid.shape2();
            let h = self.grid.spacing();
            let zv = z.values();
            for i1 in 0..n1 {
                for i0 in [0, n0 - 1] {
                    sum += zv[i0 * n1 + i1].powi(2) / (h[0] * h[0]);
                }
            }
            if self.grid.dim() == 2 {
                for i0 in 0..n0 {
                    for i1 in [0, n1 - 1] {
                        sum += zv[i0 * n1 + i1].powi(2) / (h[1] * h[1]);
                    }
                }
            }
        }
        2.0 * sum * self.grid.cell_measure()
    }

    fn conserves_constants(&self) -> bool {
        self.bc == LocalBoundary::Neumann
    }

    fn describe(&self) -> String {
        format!("discrete laplacian ({:?})", self.bc).to_lowercase()
    }
}

/// Local diffusion pair matched to a nonlocal kernel profile.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalDiffusion {
    pub laplacian: DiscreteLaplacian,
    pub m2: f64,
    pub d_u: f64,
    pub d_v: f64,
}

impl LocalDiffusion {
    /// `D_ℓ = m₂ d_ℓ / (2n)` with `m₂` the second moment of `profile`.
    pub fn from_profile(
        params: &ModelParams,
        profile: &RadialProfile,
        grid: &Grid,
        bc: LocalBoundary,
    ) -> Result<Self> {
        let m2 = kernel_moments(profile, grid.dim(), DEFAULT_MOMENT_RESOLUTION)?.m2;
        Ok(LocalDiffusion {
            laplacian: DiscreteLaplacian::new(grid, bc),
            m2,
            d_u: effective_diffusivity(m2, params.d1, grid.dim()),
            d_v: effective_diffusivity(m2, params.d2, grid.dim()),
        })
    }

    pub fn ops(&self) -> OperatorPair<'_> {
        OperatorPair::shared(&self.laplacian, self.d_u, self.d_v)
    }
}

pub fn integrate_local(
    initial: &State,
    params: &ModelParams,
    local: &LocalDiffusion,
    config: &IntegratorConfig,
    monitors: &[Monitor],
) -> Result<Trajectory> {
    integrate(initial, params, &local.ops(), config, monitors)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    U,
    V,
}

pub const MIN_SNAPSHOTS_PER_UNIT_TIME: f64 = 8.0;

/// Largest defect over snapshot times of the weak form
/// `∫(z(t) − z⁰)ϑ + D∫₀ᵗ∫∇z·∇ϑ − ∫₀ᵗ∫F_z ϑ`, with cell-midpoint sums in
/// space and the trapezoid rule over stored snapshots in time.
pub fn weak_residual(
    trajectory: &Trajectory,
    theta: &Field,
    component: Component,
    params: &ModelParams,
    local: &LocalDiffusion,
) -> Result<f64> {
    let snaps = &trajectory.snapshots;
    let first = snaps.first().ok_or(NlgsError::InsufficientSnapshots { per_unit_time: 0.0 })?;
    let last = snaps.last().expect("non-empty");
    let span = last.t - first.t;
    let density = if span > 0.0 { (snaps.len() - 1) as f64 / span } else { 0.0 };
    if snaps.len() < 2 || density < MIN_SNAPSHOTS_PER_UNIT_TIME {
        return Err(NlgsError::InsufficientSnapshots { per_unit_time: density });
    }
    theta.same_grid(&first.u)?;
    let lap = &local.laplacian;
    let cell = theta.grid().cell_measure();
    fn pick(s: &State, component: Component) -> &Field {
        match component {
            Component::U => &s.u,
            Component::V => &s.v,
        }
    }
    let coeff = match component {
        Component::U => local.d_u,
        Component::V => local.d_v,
    };
    // Integrand of the time integral: −D∫∇z·∇ϑ + ∫F_z ϑ.
    let rate = |s: &State| -> Result<f64> {
        let grad = lap.gradient_pairing(pick(s, component), theta)?;
        let forcing: f64 = s
            .u
            .values()
            .iter()
            .zip(s.v.values())
            .zip(theta.values())
            .map(|((&a, &b), &w)| {
                let (f1, f2) = reaction_point(a, b, params);
                match component {
                    Component::U => f1 * w,
                    Component::V => f2 * w,
                }
            })
            .sum();
        Ok(-coeff * grad + forcing * cell)
    };
    let z0 = pick(first, component);
    let mut worst: f64 = 0.0;
    let mut integral = 0.0;
    let mut prev_rate = rate(first)?;
    for pair in snaps.windows(2) {
        let next_rate = rate(&pair[1])?;
        integral += 0.5 * (pair[1].t - pair[0].t) * (prev_rate + next_rate);
        prev_rate = next_rate;
        let change = pick(&pair[1], component).zip_map(z0, |a, b| a - b)?.inner(theta)?;
        worst = worst.max((change - integral).abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn constant_is_annihilated_with_neumann() {
        let g = Grid::unit(2, 16).unwrap();
        let lap = DiscreteLaplacian::new(&g, LocalBoundary::Neumann);
        let out = lap.apply(&Field::constant(&g, 3.5)).unwrap();
        assert!(out.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn quadratic_is_exact_in_interior() {
        let g = Grid::unit(2, 16).unwrap();
        let lap = DiscreteLaplacian::new(&g, LocalBoundary::Neumann);
        let out = lap.apply(&Field::from_fn(&g, |x| x[0] * x[0])).unwrap();
        for i0 in 1..15 {
            for i1 in 0..16 {
                assert!((out.values()[g.index(i0, i1)] - 2.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn cosine_eigenfunction_second_order() {
        let mut errs = Vec::new();
        for n in [32, 64, 128] {
            let g = Grid::unit(1, n).unwrap();
            let lap = DiscreteLaplacian::new(&g, LocalBoundary::Neumann);
            let z = Field::from_fn(&g, |x| (PI * x[0]).cos());
            let out = lap.apply(&z).unwrap();
            let err = out
                .zip_map(&z, |a, b| a + PI * PI * b)
                .unwrap()
                .sup_norm();
            errs.push(err);
        }
        assert!(errs[0] < 0.05);
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn symmetric_and_divergence_form() {
        for bc in [LocalBoundary::Neumann, LocalBoundary::Dirichlet] {
            let g = Grid::new(2, &[1.0, 2.0], &[12, 20]).unwrap();
            let lap = DiscreteLaplacian::new(&g, bc);
            let z = Field::from_fn(&g, |x| (3.0 * x[0]).sin() + x[1] * x[1]);
            let w = Field::from_fn(&g, |x| (x[0] * x[1]).exp());
            let a = z.inner(&lap.apply(&w).unwrap()).unwrap();
            let b = w.inner(&lap.apply(&z).unwrap()).unwrap();
            assert!((a - b).abs() < 1e-10 * a.abs().max(1.0));
            let q = -2.0 * z.inner(&lap.apply(&z).unwrap()).unwrap();
            assert!((q - lap.dissipation(&z)).abs() < 1e-9 * q.abs());
            if bc == LocalBoundary::Neumann {
                // Column sums vanish: Σ L e_k = 0.
                let total = lap.apply(&w).unwrap().integral();
                assert!(total.abs() < 1e-9);
                // Discrete Green identity.
                let green = -lap.gradient_pairing(&z, &w).unwrap();
                assert!((green - b).abs() < 1e-9 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn homogeneous_local_run_matches_ode() {
        let g = Grid::unit(2, 16).unwrap();
        let p = ModelParams::new(1.0, 1.0, 0.04, 0.01).unwrap();
        let local =
            LocalDiffusion::from_profile(&p, &RadialProfile::bump(1.0).unwrap(), &g, LocalBoundary::Neumann)
                .unwrap();
        let init = State::new(0.0, Field::constant(&g, 0.8), Field::constant(&g, 0.2)).unwrap();
        let cfg = IntegratorConfig::new(0.005, 5.0);
        let traj = integrate_local(&init, &p, &local, &cfg, &Monitor::ALL).unwrap();
        // Reference: same ODE with step dt/100.
        let (mut u, mut v) = (0.8, 0.2);
        let h = 5e-5;
        for _ in 0..100_000 {
            let k1 = reaction_point(u, v, &p);
            let k2 = reaction_point(u + 0.5 * h * k1.0, v + 0.5 * h * k1.1, &p);
            let k3 = reaction_point(u + 0.5 * h * k2.0, v + 0.5 * h * k2.1, &p);
            let k4 = reaction_point(u + h * k3.0, v + h * k3.1, &p);
            u += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
            v += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        }
        let s = &traj.final_state;
        assert!((s.u.max() - u).abs() < 1e-8 && (s.u.min() - u).abs() < 1e-8);
        assert!((s.v.max() - v).abs() < 1e-8 && (s.v.min() - v).abs() < 1e-8);
    }

    #[test]
    fn effective_diffusivity_uses_profile_moment() {
        let g = Grid::unit(2, 8).unwrap();
        let p = ModelParams::new(2.0, 1.0, 0.04, 0.01).unwrap();
        let local =
            LocalDiffusion::from_profile(&p, &RadialProfile::bump(1.0).unwrap(), &g, LocalBoundary::Neumann)
                .unwrap();
        assert!((local.d_u - 2.0 * local.d_v).abs() < 1e-15);
        assert!((local.d_v - 0.12190491487203424 / 4.0).abs() < 1e-10);
    }

    fn steady_trajectory(per_unit: usize) -> (Trajectory, ModelParams, LocalDiffusion) {
        let g = Grid::unit(2, 8).unwrap();
        let p = ModelParams::new(1.0, 1.0, 0.04, 0.01).unwrap();
        let local =
            LocalDiffusion::from_profile(&p, &RadialProfile::bump(1.0).unwrap(), &g, LocalBoundary::Neumann)
                .unwrap();
        let init = State::new(0.0, Field::constant(&g, 1.0), Field::zeros(&g)).unwrap();
        let mut cfg = IntegratorConfig::new(0.01, 1.0);
        cfg.snapshot_every = 100 / per_unit;
        let traj = integrate_local(&init, &p, &local, &cfg, &[]).unwrap();
        (traj, p, local)
    }

    #[test]
    fn steady_state_has_zero_defect() {
        let (traj, p, local) = steady_trajectory(10);
        let theta = Field::from_fn(local.laplacian.grid(), |x| (PI * x[0]).cos() * (PI * x[1]).cos());
        for c in [Component::U, Component::V] {
            assert_eq!(weak_residual(&traj, &theta, c, &p, &local).unwrap(), 0.0);
        }
    }

    #[test]
    fn sparse_snapshots_rejected() {
        let (traj, p, local) = steady_trajectory(4);
        let theta = Field::constant(local.laplacian.grid(), 1.0);
        assert!(matches!(
            weak_residual(&traj, &theta, Component::U, &p, &local),
            Err(NlgsError::InsufficientSnapshots { .. })
        ));
    }
}
