//! Radial profiles, the scaled mollifier family `χ_j(x, y) = j^{n+2} φ(j(x − y))`
//! and its tabulation on a uniform grid.

use serde::{Deserialize, Serialize};

use crate::error::{NlgsError, Result};
use crate::grid::Grid;

/// Quadrature points per axis used when a table needs profile moments.
pub const DEFAULT_MOMENT_RESOLUTION: usize = 1024;

/// Minimum number of grid spacings inside the kernel support.
pub const CELLS_PER_SUPPORT: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileShape {
    /// `exp(−1/(1 − (r/R)²))` inside the ball, zero outside.
    Bump,
    /// Indicator of the open ball. Discontinuous; meant for quadrature checks.
    Indicator,
}

/// Non-negative, non-increasing radial profile with compact support.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadialProfile {
    pub shape: ProfileShape,
    pub radius: f64,
}

impl RadialProfile {
    pub fn new(shape: ProfileShape, radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(NlgsError::InvalidKernel(format!(
                "profile radius must be positive, got {radius}"
            )));
        }
        Ok(RadialProfile { shape, radius })
    }

    pub fn bump(radius: f64) -> Result<Self> {
        Self::new(ProfileShape::Bump, radius)
    }

    pub fn indicator(radius: f64) -> Result<Self> {
        Self::new(ProfileShape::Indicator, radius)
    }

    pub fn name(&self) -> &'static str {
        match self.shape {
            ProfileShape::Bump => "bump",
            ProfileShape::Indicator => "indicator",
        }
    }

    /// φ̃(r) for r ≥ 0.
    pub fn eval(&self, r: f64) -> f64 {
        if r >= self.radius {
            return 0.0;
        }
        match self.shape {
            ProfileShape::Bump => {
                let s = r / self.radius;
                (-1.0 / (1.0 - s * s)).exp()
            }
            ProfileShape::Indicator => 1.0,
        }
    }
}

/// Midpoint rule for `∫ g(|x|) dx` over the box `[−R, R]^dim`.
pub fn midpoint_radial_integral(
    dim: usize,
    radius: f64,
    resolution: usize,
    g: impl Fn(f64) -> f64,
) -> Result<f64> {
    let h = 2.0 * radius / resolution as f64;
    let coord = |i: usize| -radius + (i as f64 + 0.5) * h;
    let mut total = 0.0;
    match dim {
        1 => {
            for i in 0..resolution {
                let v = g(coord(i).abs());
                if !v.is_finite() {
                    return Err(NlgsError::NonFiniteValue {
                        context: "profile evaluation",
                        index: i,
                    });
                }
                total += v;
            }
            Ok(total * h)
        }
        2 => {
            for i in 0..resolution {
                let x = coord(i);
                let mut row = 0.0;
                for k in 0..resolution {
                    let y = coord(k);
                    let v = g((x * x + y * y).sqrt());
                    if !v.is_finite() {
                        return Err(NlgsError::NonFiniteValue {
                            context: "profile evaluation",
                            index: i * resolution + k,
                        });
                    }
                    row += v;
                }
                total += row;
            }
            Ok(total * h * h)
        }
        _ => Err(NlgsError::Unsupported(format!("dimension {dim}"))),
    }
}

/// Zeroth and second moments of a profile over ℝⁿ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub m0: f64,
    pub m2: f64,
}

pub fn kernel_moments(profile: &RadialProfile, dim: usize, resolution: usize) -> Result<Moments> {
    if resolution < 64 {
        return Err(NlgsError::InvalidKernel(format!(
            "moment quadrature needs at least 64 points per axis, got {resolution}"
        )));
    }
    let m0 = midpoint_radial_integral(dim, profile.radius, resolution, |r| profile.eval(r))?;
    let m2 = midpoint_radial_integral(dim, profile.radius, resolution, |r| {
        r * r * profile.eval(r)
    })?;
    if m2 <= 0.0 {
        return Err(NlgsError::InvalidKernel("second moment must be positive".into()));
    }
    Ok(Moments { m0, m2 })
}

/// `D = m₂·d/(2n)`.
pub fn effective_diffusivity(m2: f64, d: f64, dim: usize) -> f64 {
    m2 * d / (2.0 * dim as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    /// Integration restricted to Ω; zero-flux behavior without boundary conditions.
    NeumannNonlocal,
    /// Integration over ℝⁿ with the field extended by zero outside Ω.
    DirichletExtension,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub profile: RadialProfile,
    pub scale_j: u32,
    pub boundary_mode: BoundaryMode,
    #[serde(default = "one")]
    pub diffusivity: f64,
}

fn one() -> f64 {
    1.0
}

impl KernelSpec {
    pub fn new(profile: RadialProfile, scale_j: u32, boundary_mode: BoundaryMode) -> Self {
        KernelSpec {
            profile,
            scale_j,
            boundary_mode,
            diffusivity: 1.0,
        }
    }

    /// Support radius of χ_j, i.e. `radius / j`.
    pub fn support(&self) -> f64 {
        self.profile.radius / self.scale_j as f64
    }

    /// `j^{n+2} φ(j r)`.
    pub fn eval(&self, r: f64, dim: usize) -> f64 {
        let j = self.scale_j as f64;
        j.powi(dim as i32 + 2) * self.profile.eval(j * r)
    }

    fn validate(&self) -> Result<()> {
        if self.scale_j == 0 {
            return Err(NlgsError::InvalidKernel("scale j must be at least 1".into()));
        }
        if !(self.diffusivity.is_finite() && self.diffusivity > 0.0) {
            return Err(NlgsError::InvalidKernel(format!(
                "diffusivity must be positive, got {}",
                self.diffusivity
            )));
        }
        RadialProfile::new(self.profile.shape, self.profile.radius)?;
        Ok(())
    }
}

/// Integer grid shifts `o` with `|o·h| < support`, lexicographically ordered,
/// paired with their physical length.
pub(crate) fn lattice_offsets(grid: &Grid, support: f64) -> Vec<([isize; 2], f64)> {
    let h = grid.spacing2();
    let reach = |a: usize| -> isize {
        if a < grid.dim() {
            (support / h[a]).ceil() as isize
        } else {
            0
        }
    };
    let (k0, k1) = (reach(0), reach(1));
    let mut out = Vec::new();
    for o0 in -k0..=k0 {
        for o1 in -k1..=k1 {
            let (a, b) = (o0 as f64 * h[0], o1 as f64 * h[1]);
            let r = (a * a + b * b).sqrt();
            if r < support {
                out.push(([o0, o1], r));
            }
        }
    }
    out
}

/// Precomputed quadrature weights of χ_j on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelTable {
    spec: KernelSpec,
    grid: Grid,
    offsets: Vec<[isize; 2]>,
    weights: Vec<f64>,
    row_mass_interior: f64,
    gamma_inf: f64,
    moments: Moments,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub struct KernelSummary {
    pub profile: String,
    pub radius: f64,
    pub j: u32,
    #[serde(rename = "M0")]
    pub m0: f64,
    pub m2: f64,
    pub gamma_inf: f64,
    pub offset_count: usize,
}

pub fn build_kernel_table(spec: &KernelSpec, grid: &Grid) -> Result<KernelTable> {
    spec.validate()?;
    let support = spec.support();
    let spacing = grid.max_spacing();
    if support < CELLS_PER_SUPPORT * spacing {
        let j = spec.scale_j as f64;
        let required_counts = grid
            .extents()
            .iter()
            .map(|len| (CELLS_PER_SUPPORT * len * j / spec.profile.radius).ceil() as usize)
            .collect();
        return Err(NlgsError::ResolutionGuard {
            support,
            spacing,
            required_counts,
        });
    }
    let cell = grid.cell_measure();
    let dim = grid.dim();
    let (offsets, weights): (Vec<_>, Vec<_>) = lattice_offsets(grid, support)
        .into_iter()
        .map(|(o, r)| (o, spec.eval(r, dim) * cell))
        .unzip();
    let row_mass_interior: f64 = weights.iter().sum();
    let moments = kernel_moments(&spec.profile, dim, DEFAULT_MOMENT_RESOLUTION)?;
    Ok(KernelTable {
        spec: *spec,
        grid: *grid,
        offsets,
        weights,
        row_mass_interior,
        gamma_inf: row_mass_interior,
        moments,
    })
}

impl KernelTable {
    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn offsets(&self) -> &[[isize; 2]] {
        &self.offsets
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn row_mass_interior(&self) -> f64 {
        self.row_mass_interior
    }

    pub fn gamma_inf(&self) -> f64 {
        self.gamma_inf
    }

    /// Profile-level moments (not the discrete ones).
    pub fn moments(&self) -> Moments {
        self.moments
    }

    pub fn m2(&self) -> f64 {
        self.moments.m2
    }

    pub fn support(&self) -> f64 {
        self.spec.support()
    }

    /// Σ weights·|o·h|², the grid's approximation of m₂.
    pub fn discrete_m2(&self) -> f64 {
        let h = self.grid.spacing2();
        self.offsets
            .iter()
            .zip(&self.weights)
            .map(|(o, w)| {
                let (a, b) = (o[0] as f64 * h[0], o[1] as f64 * h[1]);
                w * (a * a + b * b)
            })
            .sum()
    }

    pub fn summary(&self) -> KernelSummary {
        KernelSummary {
            profile: self.spec.profile.name().to_string(),
            radius: self.spec.profile.radius,
            j: self.spec.scale_j,
            m0: self.moments.m0,
            m2: self.moments.m2,
            gamma_inf: self.gamma_inf,
            offset_count: self.offsets.len(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    // Radial (1D) Gauss-Kronrod reference values, 30 digits, computed offline:
    // M0 = 2π∫₀¹ r e^{−1/(1−r²)} dr, m2 = 2π∫₀¹ r³ e^{−1/(1−r²)} dr.
    const BUMP_2D_M0: f64 = 0.466_512_393_178_330_07;
    const BUMP_2D_M2: f64 = 0.121_904_914_872_034_24;
    const BUMP_1D_M0: f64 = 0.443_993_816_168_079_44;
    const BUMP_1D_M2: f64 = 0.070_201_476_752_975_41;

    #[test]
    fn bump_values() {
        let p = RadialProfile::bump(1.0).unwrap();
        assert_eq!(p.eval(1.0), 0.0);
        assert_eq!(p.eval(1.5), 0.0);
        assert!((p.eval(0.0) - 0.367_879_4).abs() < 1e-7);
        assert!(p.eval(0.2) > p.eval(0.8));
    }

    #[test]
    fn profiles_are_non_increasing() {
        for p in [
            RadialProfile::bump(0.7).unwrap(),
            RadialProfile::indicator(0.7).unwrap(),
        ] {
            let mut prev = p.eval(0.0);
            for k in 1..=200 {
                let v = p.eval(k as f64 * 0.005);
                assert!(v <= prev);
                prev = v;
            }
        }
    }

    #[test]
    fn indicator_moments_match_disc() {
        let p = RadialProfile::indicator(1.0).unwrap();
        let m = kernel_moments(&p, 2, 2048).unwrap();
        assert!((m.m0 - PI).abs() < 1e-3, "{}", m.m0);
        assert!((m.m2 - PI / 2.0).abs() < 1e-3, "{}", m.m2);
    }

    #[test]
    fn bump_moments_match_radial_reference() {
        let p = RadialProfile::bump(1.0).unwrap();
        let m = kernel_moments(&p, 2, 1024).unwrap();
        assert!((m.m0 - BUMP_2D_M0).abs() < 1e-10, "{}", m.m0);
        assert!((m.m2 - BUMP_2D_M2).abs() < 1e-10, "{}", m.m2);
        let m1 = kernel_moments(&p, 1, 1024).unwrap();
        assert!((m1.m0 - BUMP_1D_M0).abs() < 1e-10);
        assert!((m1.m2 - BUMP_1D_M2).abs() < 1e-10);
    }

    #[test]
    fn low_resolution_rejected() {
        let p = RadialProfile::bump(1.0).unwrap();
        assert!(kernel_moments(&p, 2, 32).is_err());
    }

    #[test]
    fn effective_diffusivity_of_indicator() {
        let p = RadialProfile::indicator(1.0).unwrap();
        let m = kernel_moments(&p, 2, 2048).unwrap();
        let d = effective_diffusivity(m.m2, 1.0, 2);
        assert!((d - PI / 8.0).abs() < 1e-3);
        assert_eq!(effective_diffusivity(m.m2, 2.0, 2), 2.0 * d);
    }

    fn spec(j: u32) -> KernelSpec {
        KernelSpec::new(RadialProfile::bump(1.0).unwrap(), j, BoundaryMode::NeumannNonlocal)
    }

    #[test]
    fn table_is_symmetric_and_sorted() {
        let g = Grid::unit(2, 64).unwrap();
        let t = build_kernel_table(&spec(8), &g).unwrap();
        let offs = t.offsets();
        assert!(offs.windows(2).all(|w| w[0] < w[1]));
        for (o, w) in offs.iter().zip(t.weights()) {
            assert!(*w >= 0.0);
            let k = offs.iter().position(|p| *p == [-o[0], -o[1]]).unwrap();
            assert_eq!(t.weights()[k], *w);
        }
        let support = t.support();
        let h = g.spacing2();
        assert!(offs.iter().all(|o| {
            let (a, b) = (o[0] as f64 * h[0], o[1] as f64 * h[1]);
            (a * a + b * b).sqrt() < support
        }));
    }

    #[test]
    fn interior_row_mass_scales_like_j_squared() {
        // Substituting y = x + z/j: Σ weights ≈ j² ∫φ = j² M0.
        let g = Grid::unit(2, 128).unwrap();
        for j in [4u32, 8] {
            let t = build_kernel_table(&spec(j), &g).unwrap();
            let expected = (j * j) as f64 * BUMP_2D_M0;
            assert!(
                (t.row_mass_interior() / expected - 1.0).abs() < 1e-3,
                "j={j}: {} vs {expected}",
                t.row_mass_interior()
            );
        }
        let t4 = build_kernel_table(&spec(4), &g).unwrap();
        let t8 = build_kernel_table(&spec(8), &g).unwrap();
        let ratio = t8.row_mass_interior() / t4.row_mass_interior();
        assert!((ratio - 4.0).abs() < 4e-3, "{ratio}");
    }

    #[test]
    fn discrete_second_moment_tracks_profile() {
        let g = Grid::unit(2, 128).unwrap();
        let t = build_kernel_table(&spec(4), &g).unwrap();
        assert!((t.discrete_m2() / t.m2() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn resolution_guard_names_required_size() {
        let g = Grid::unit(2, 32).unwrap();
        match build_kernel_table(&spec(16), &g) {
            Err(NlgsError::ResolutionGuard {
                required_counts, ..
            }) => assert_eq!(required_counts, vec![64, 64]),
            other => panic!("expected guard error, got {other:?}"),
        }
        assert!(build_kernel_table(&spec(8), &g).is_ok());
    }

    #[test]
    fn radius_rescaling_matches_scale_change() {
        // φ_r(x) = φ_1(x/r) gives χ_j^{(r)} = r^{n+2} χ_{j/r}^{(1)}.
        let g = Grid::unit(2, 64).unwrap();
        let wide = KernelSpec::new(RadialProfile::bump(2.0).unwrap(), 8, BoundaryMode::NeumannNonlocal);
        let t_wide = build_kernel_table(&wide, &g).unwrap();
        let t_unit = build_kernel_table(&spec(4), &g).unwrap();
        assert_eq!(t_wide.offsets(), t_unit.offsets());
        for (a, b) in t_wide.weights().iter().zip(t_unit.weights()) {
            assert!((a - 16.0 * b).abs() <= 1e-13 * a.abs().max(1e-300));
        }
        assert!((t_wide.m2() / t_unit.m2() - 16.0).abs() < 1e-9);
    }

    #[test]
    fn summary_json_keys() {
        let g = Grid::unit(2, 64).unwrap();
        let t = build_kernel_table(&spec(8), &g).unwrap();
        let v = serde_json::to_value(t.summary()).unwrap();
        for key in ["profile", "radius", "j", "M0", "m2", "gamma_inf", "offset_count"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }
}
