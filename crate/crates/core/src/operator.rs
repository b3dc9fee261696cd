//! The nonlocal operator `Γz(x) = ∫ χ(x, y)(z(y) − z(x)) dy` on grid fields,
//! plus the dissipation functional `Y` and the BBM-type seminorm `Λ`.

use rayon::prelude::*;

use crate::error::{NlgsError, Result};
use crate::grid::{Field, Grid};
use crate::integrator::SpatialOperator;
use crate::kernels::{
    build_kernel_table, kernel_moments, lattice_offsets, BoundaryMode, KernelSpec, KernelTable,
    RadialProfile, DEFAULT_MOMENT_RESOLUTION,
};

/// Grids with at least this many cells evaluate rows in parallel.
const PARALLEL_CELLS: usize = 1024;

#[derive(Clone, Debug)]
pub struct NonlocalOperator {
    table: KernelTable,
    mode: BoundaryMode,
    /// Kernel mass inside Ω for each row, accumulated in offset order.
    row_mass: Vec<f64>,
    /// Kernel mass falling outside Ω for each row (zero for interior rows).
    exterior_mass: Vec<f64>,
}

impl NonlocalOperator {
    pub fn new(table: KernelTable) -> Self {
        let grid = *table.grid();
        let mode = table.spec().boundary_mode;
        let [n0, n1] = grid.shape2();
        let mut row_mass = vec![0.0; grid.len()];
        let mut exterior_mass = vec![0.0; grid.len()];
        for i0 in 0..n0 {
            for i1 in 0..n1 {
                let idx = grid.index(i0, i1);
                for (o, w) in table.offsets().iter().zip(table.weights()) {
                    let s0 = i0 as isize + o[0];
                    let s1 = i1 as isize + o[1];
                    if s0 >= 0 && s1 >= 0 && (s0 as usize) < n0 && (s1 as usize) < n1 {
                        row_mass[idx] += w;
                    } else {
                        exterior_mass[idx] += w;
                    }
                }
            }
        }
        NonlocalOperator {
            table,
            mode,
            row_mass,
            exterior_mass,
        }
    }

    pub fn build(spec: &KernelSpec, grid: &Grid) -> Result<Self> {
        Ok(Self::new(build_kernel_table(spec, grid)?))
    }

    pub fn table(&self) -> &KernelTable {
        &self.table
    }

    pub fn mode(&self) -> BoundaryMode {
        self.mode
    }

    pub fn grid(&self) -> &Grid {
        self.table.grid()
    }

    /// Row mass over Ω (Neumann) or over ℝⁿ (Dirichlet) at node `idx`.
    pub fn row_mass(&self, idx: usize) -> f64 {
        match self.mode {
            BoundaryMode::NeumannNonlocal => self.row_mass[idx],
            BoundaryMode::DirichletExtension => self.table.row_mass_interior(),
        }
    }

    pub fn apply(&self, z: &Field) -> Result<Field> {
        if z.grid() != self.grid() {
            return Err(NlgsError::GridMismatch);
        }
        let mut out = Field::zeros(self.grid());
        self.apply_into(z.values(), out.values_mut());
        Ok(out)
    }

    /// Fast path: stencil cross-correlation restricted to Ω. Each output cell
    /// accumulates offsets in table order, so results do not depend on the
    /// thread count.
    pub fn apply_into(&self, z: &[f64], out: &mut [f64]) {
        let grid = self.grid();
        let [n0, n1] = grid.shape2();
        debug_assert_eq!(z.len(), grid.len());
        let offsets = self.table.offsets();
        let weights = self.table.weights();
        let dirichlet = self.mode == BoundaryMode::DirichletExtension;

        let row_kernel = |i0: usize, row: &mut [f64]| {
            row.fill(0.0);
            let here = &z[i0 * n1..(i0 + 1) * n1];
            for (o, &w) in offsets.iter().zip(weights) {
                let s0 = i0 as isize + o[0];
                if s0 < 0 || s0 as usize >= n0 {
                    continue;
                }
                let src = &z[s0 as usize * n1..(s0 as usize + 1) * n1];
                let lo = (-o[1]).max(0) as usize;
                let hi = (n1 as isize - o[1]).min(n1 as isize);
                if hi <= lo as isize {
                    continue;
                }
                let hi = hi as usize;
                let shifted = &src[(lo as isize + o[1]) as usize..(hi as isize + o[1]) as usize];
                for ((r, &y), &x) in row[lo..hi].iter_mut().zip(shifted).zip(&here[lo..hi]) {
                    *r += w * (y - x);
                }
            }
            if dirichlet {
                let ext = &self.exterior_mass[i0 * n1..(i0 + 1) * n1];
                for i1 in 0..n1 {
                    row[i1] -= ext[i1] * here[i1];
                }
            }
        };

        if grid.len() >= PARALLEL_CELLS && n1 > 1 {
            out.par_chunks_mut(n1)
                .enumerate()
                .for_each(|(i0, row)| row_kernel(i0, row));
        } else {
            for (i0, row) in out.chunks_mut(n1).enumerate() {
                row_kernel(i0, row);
            }
        }
    }

    /// Reference path: a dense double loop over node pairs that evaluates the
    /// kernel from node coordinates instead of the offset table. In Dirichlet
    /// mode the loop also visits the lattice points outside Ω covered by the
    /// kernel support, where the extended field is zero.
    pub fn apply_dense(&self, z: &Field) -> Result<Field> {
        if z.grid() != self.grid() {
            return Err(NlgsError::GridMismatch);
        }
        let grid = *self.grid();
        let spec = *self.table.spec();
        let dim = grid.dim();
        let cell = grid.cell_measure();
        let h = grid.spacing2();
        let [n0, n1] = grid.shape2();
        let reach = |a: usize| -> isize {
            if a < dim {
                (spec.support() / h[a]).ceil() as isize
            } else {
                0
            }
        };
        let (k0, k1) = match self.mode {
            BoundaryMode::NeumannNonlocal => (0, 0),
            BoundaryMode::DirichletExtension => (reach(0), reach(1)),
        };
        let coord = |k: isize, a: usize| -> f64 {
            if a < dim {
                (k as f64 + 0.5) * h[a]
            } else {
                0.0
            }
        };
        let zv = z.values();
        let values: Vec<f64> = (0..grid.len())
            .into_par_iter()
            .map(|idx| {
                let x = grid.node(idx);
                let zx = zv[idx];
                let mut acc = 0.0;
                for s0 in -k0..n0 as isize + k0 {
                    for s1 in -k1..n1 as isize + k1 {
                        let (y0, y1) = (coord(s0, 0), coord(s1, 1));
                        let r = ((x[0] - y0).powi(2) + (x[1] - y1).powi(2)).sqrt();
                        let w = spec.eval(r, dim) * cell;
                        if w == 0.0 {
                            continue;
                        }
                        let inside =
                            s0 >= 0 && s1 >= 0 && (s0 as usize) < n0 && (s1 as usize) < n1;
                        let zy = if inside {
                            zv[s0 as usize * n1 + s1 as usize]
                        } else {
                            0.0
                        };
                        acc += w * (zy - zx);
                    }
                }
                acc
            })
            .collect();
        Field::from_values(&grid, values)
    }

    /// `2·max_x (row mass)`, an upper bound for the sup-norm operator norm.
    pub fn operator_norm_estimate(&self) -> f64 {
        let max_mass = match self.mode {
            BoundaryMode::NeumannNonlocal => self.row_mass.iter().copied().fold(0.0, f64::max),
            BoundaryMode::DirichletExtension => self.table.row_mass_interior(),
        };
        let estimate = 2.0 * max_mass;
        debug_assert!(estimate <= 2.0 * self.table.gamma_inf());
        estimate
    }

    /// `Y[z] = ∬_{Ω×Ω} χ(x, y)(z(x) − z(y))²`.
    pub fn dissipation_y(&self, z: &Field) -> Result<f64> {
        if z.grid() != self.grid() {
            return Err(NlgsError::GridMismatch);
        }
        let cell = self.grid().cell_measure();
        let rows = self.pair_sums(z.values(), |w, _r, d| w * d * d);
        Ok(rows.iter().sum::<f64>() * cell)
    }

    /// Per-row sums of `g(weight, |o·h|, z(x) − z(x + o))` over in-Ω pairs.
    fn pair_sums(&self, z: &[f64], g: impl Fn(f64, f64, f64) -> f64 + Sync) -> Vec<f64> {
        let grid = self.grid();
        let [n0, n1] = grid.shape2();
        let h = grid.spacing2();
        let offsets = self.table.offsets();
        let weights = self.table.weights();
        let row = |i0: usize| -> f64 {
            let mut acc = 0.0;
            for i1 in 0..n1 {
                let zx = z[i0 * n1 + i1];
                for (o, &w) in offsets.iter().zip(weights) {
                    let s0 = i0 as isize + o[0];
                    let s1 = i1 as isize + o[1];
                    if s0 < 0 || s1 < 0 || s0 as usize >= n0 || s1 as usize >= n1 {
                        continue;
                    }
                    let zy = z[s0 as usize * n1 + s1 as usize];
                    let (a, b) = (o[0] as f64 * h[0], o[1] as f64 * h[1]);
                    acc += g(w, (a * a + b * b).sqrt(), zx - zy);
                }
            }
            acc
        };
        (0..n0).into_par_iter().map(row).collect()
    }

    /// `−2∫ z·Γz`, the rate at which Γ dissipates ‖z‖₂². Equals `Y[z]` in
    /// Neumann mode; Dirichlet mode adds the absorption `2∫ a·z²`.
    pub fn energy_dissipation(&self, z: &Field) -> Result<f64> {
        let y = self.dissipation_y(z)?;
        match self.mode {
            BoundaryMode::NeumannNonlocal => Ok(y),
            BoundaryMode::DirichletExtension => {
                let cell = self.grid().cell_measure();
                let absorbed: f64 = z
                    .values()
                    .iter()
                    .zip(&self.exterior_mass)
                    .map(|(v, a)| a * v * v)
                    .sum();
                Ok(y + 2.0 * absorbed * cell)
            }
        }
    }

    /// `sup_{interior} |d·ΓW − D·ΔW|` with `D = m₂ d/(2n)`, where interior
    /// means farther than the kernel support from ∂Ω.
    pub fn laplacian_consistency(
        &self,
        d: f64,
        w: impl Fn([f64; 2]) -> f64,
        laplacian_w: impl Fn([f64; 2]) -> f64,
    ) -> Result<f64> {
        let grid = *self.grid();
        let field = Field::from_fn(&grid, &w);
        let gw = self.apply(&field)?;
        let diff = crate::kernels::effective_diffusivity(self.table.m2(), d, grid.dim());
        let support = self.table.support();
        let mut worst: f64 = 0.0;
        for idx in 0..grid.len() {
            if grid.distance_to_boundary(idx) <= support {
                continue;
            }
            let err = (d * gw.values()[idx] - diff * laplacian_w(grid.node(idx))).abs();
            worst = worst.max(err);
        }
        Ok(worst)
    }

    /// `Λ_j(z, Ω) = ∬ |z(x) − z(y)|^p / |x − y|^p · ϱ_j(x − y)` for p = 2,
    /// with `ϱ_j(x) = j^n ϱ(jx)`.
    pub fn seminorm_lambda(rho: &MomentProfile, j: u32, z: &Field, p: u32) -> Result<f64> {
        if p != 2 {
            return Err(NlgsError::Unsupported(format!(
                "Λ seminorm only for p = 2, got p = {p}"
            )));
        }
        if j == 0 {
            return Err(NlgsError::InvalidKernel("scale j must be at least 1".into()));
        }
        let grid = z.grid();
        let dim = grid.dim();
        let jf = j as f64;
        let scale = jf.powi(dim as i32);
        let cell = grid.cell_measure();
        let [n0, n1] = grid.shape2();
        let zv = z.values();
        let offsets: Vec<_> = lattice_offsets(grid, rho.radius() / jf)
            .into_iter()
            .filter(|(o, _)| *o != [0, 0])
            .collect();
        let row = |i0: usize| -> f64 {
            let mut acc = 0.0;
            for i1 in 0..n1 {
                let zx = zv[i0 * n1 + i1];
                for (o, r) in &offsets {
                    let s0 = i0 as isize + o[0];
                    let s1 = i1 as isize + o[1];
                    if s0 < 0 || s1 < 0 || s0 as usize >= n0 || s1 as usize >= n1 {
                        continue;
                    }
                    let dz = zx - zv[s0 as usize * n1 + s1 as usize];
                    acc += dz * dz / (r * r) * scale * rho.eval(jf * r);
                }
            }
            acc
        };
        let rows: Vec<f64> = (0..n0).into_par_iter().map(row).collect();
        Ok(rows.iter().sum::<f64>() * cell * cell)
    }
}

/// `ϱ(x) = |x|² φ(x) / m₂`, the unit-mass profile attached to φ.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentProfile {
    base: RadialProfile,
    m2: f64,
}

impl MomentProfile {
    pub fn from_profile(base: &RadialProfile, dim: usize) -> Result<Self> {
        let m2 = kernel_moments(base, dim, DEFAULT_MOMENT_RESOLUTION)?.m2;
        Ok(MomentProfile { base: *base, m2 })
    }

    pub fn m2(&self) -> f64 {
        self.m2
    }

    pub fn radius(&self) -> f64 {
        self.base.radius
    }

    pub fn eval(&self, r: f64) -> f64 {
        r * r * self.base.eval(r) / self.m2
    }

    /// Quadrature of ϱ over ℝⁿ; one up to rounding.
    pub fn mass(&self, dim: usize) -> Result<f64> {
        crate::kernels::midpoint_radial_integral(
            dim,
            self.base.radius,
            DEFAULT_MOMENT_RESOLUTION,
            |r| self.eval(r),
        )
    }
}

impl SpatialOperator for NonlocalOperator {
    fn grid(&self) -> &Grid {
        self.table.grid()
    }

    fn apply_into(&self, z: &[f64], out: &mut [f64]) {
        NonlocalOperator::apply_into(self, z, out)
    }

    fn gamma_inf(&self) -> f64 {
        self.table.gamma_inf()
    }

    fn dissipation(&self, z: &Field) -> f64 {
        self.energy_dissipation(z).unwrap_or(f64::NAN)
    }

    fn describe(&self) -> String {
        let s = self.table.spec();
        format!(
            "nonlocal {} radius={} j={} {:?}",
            s.profile.name(),
            s.profile.radius,
            s.scale_j,
            s.boundary_mode
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn op(n: usize, j: u32, mode: BoundaryMode) -> NonlocalOperator {
        let g = Grid::unit(2, n).unwrap();
        let spec = KernelSpec::new(RadialProfile::bump(1.0).unwrap(), j, mode);
        NonlocalOperator::build(&spec, &g).unwrap()
    }

    fn random_field(g: &Grid, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Field::from_fn(g, |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn constants_are_annihilated_in_neumann_mode() {
        let a = op(32, 4, BoundaryMode::NeumannNonlocal);
        let out = a.apply(&Field::constant(a.grid(), 3.7)).unwrap();
        assert_eq!(out.sup_norm(), 0.0);
    }

    #[test]
    fn dirichlet_constant_is_absorbed_at_boundary_only() {
        let a = op(32, 4, BoundaryMode::DirichletExtension);
        let out = a.apply(&Field::constant(a.grid(), 1.0)).unwrap();
        for idx in 0..a.grid().len() {
            let v = out.values()[idx];
            assert!(v <= 0.0);
            if a.grid().distance_to_boundary(idx) > a.table().support() {
                assert_eq!(v, 0.0);
            }
        }
        assert!(out.min() < 0.0);
    }

    #[test]
    fn linear_field_has_zero_interior_image() {
        let a = op(64, 8, BoundaryMode::NeumannNonlocal);
        let z = Field::from_fn(a.grid(), |x| x[0]);
        let out = a.apply(&z).unwrap();
        for idx in 0..a.grid().len() {
            if a.grid().distance_to_boundary(idx) > a.table().support() {
                assert!(out.values()[idx].abs() < 1e-12, "{}", out.values()[idx]);
            }
        }
    }

    #[test]
    fn dense_and_fast_paths_agree() {
        for mode in [BoundaryMode::NeumannNonlocal, BoundaryMode::DirichletExtension] {
            let a = op(16, 4, mode);
            let z = random_field(a.grid(), 3);
            let fast = a.apply(&z).unwrap();
            let dense = a.apply_dense(&z).unwrap();
            let diff = fast.zip_map(&dense, |p, q| p - q).unwrap().sup_norm();
            assert!(diff <= 1e-12 * dense.sup_norm(), "{mode:?}: {diff}");
        }
    }

    #[test]
    fn grid_mismatch_is_an_error() {
        let a = op(32, 4, BoundaryMode::NeumannNonlocal);
        let other = Grid::unit(2, 33).unwrap();
        assert!(matches!(
            a.apply(&Field::zeros(&other)),
            Err(NlgsError::GridMismatch)
        ));
    }

    #[test]
    fn norm_estimate_bounds() {
        let a = op(64, 8, BoundaryMode::NeumannNonlocal);
        assert_eq!(a.operator_norm_estimate(), 2.0 * a.table().gamma_inf());
        let d = op(64, 8, BoundaryMode::DirichletExtension);
        assert_eq!(d.operator_norm_estimate(), 2.0 * d.table().gamma_inf());
        // Boundary rows lose mass in Neumann mode.
        assert!(a.row_mass(0) < a.table().gamma_inf());
        assert!((0..a.grid().len()).all(|i| a.row_mass(i) <= a.table().gamma_inf()));
    }

    #[test]
    fn y_of_constant_is_zero_and_matches_quadratic_form() {
        let a = op(32, 4, BoundaryMode::NeumannNonlocal);
        assert_eq!(a.dissipation_y(&Field::constant(a.grid(), 2.0)).unwrap(), 0.0);
        let z = random_field(a.grid(), 11);
        let y = a.dissipation_y(&z).unwrap();
        let form = -2.0 * z.inner(&a.apply(&z).unwrap()).unwrap();
        assert!((y - form).abs() <= 1e-10 * y, "{y} vs {form}");
    }

    #[test]
    fn dirichlet_energy_dissipation_matches_quadratic_form() {
        let a = op(32, 4, BoundaryMode::DirichletExtension);
        let z = random_field(a.grid(), 12);
        let e = a.energy_dissipation(&z).unwrap();
        let form = -2.0 * z.inner(&a.apply(&z).unwrap()).unwrap();
        assert!((e - form).abs() <= 1e-10 * e);
        assert!(e > a.dissipation_y(&z).unwrap());
    }

    #[test]
    fn lambda_is_y_over_m2() {
        let a = op(32, 4, BoundaryMode::NeumannNonlocal);
        let rho = MomentProfile::from_profile(&a.table().spec().profile, 2).unwrap();
        assert!((rho.mass(2).unwrap() - 1.0).abs() < 1e-12);
        let z = random_field(a.grid(), 5);
        let lambda = NonlocalOperator::seminorm_lambda(&rho, 4, &z, 2).unwrap();
        let y = a.dissipation_y(&z).unwrap();
        assert!((lambda - y / rho.m2()).abs() <= 1e-12 * lambda);
        assert_eq!(
            NonlocalOperator::seminorm_lambda(&rho, 4, &Field::constant(a.grid(), 1.0), 2)
                .unwrap(),
            0.0
        );
        assert!(NonlocalOperator::seminorm_lambda(&rho, 4, &z, 3).is_err());
    }

    #[test]
    fn consistency_of_constant_is_zero() {
        let a = op(64, 8, BoundaryMode::NeumannNonlocal);
        let err = a.laplacian_consistency(1.0, |_| 2.5, |_| 0.0).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn one_dimensional_operator() {
        let g = Grid::unit(1, 128).unwrap();
        let spec = KernelSpec::new(RadialProfile::bump(1.0).unwrap(), 8, BoundaryMode::NeumannNonlocal);
        let a = NonlocalOperator::build(&spec, &g).unwrap();
        assert_eq!(a.apply(&Field::constant(&g, 1.0)).unwrap().sup_norm(), 0.0);
        let z = Field::from_fn(&g, |x| x[0] * x[0]);
        let out = a.apply(&z).unwrap();
        let m2 = a.table().m2();
        for idx in 0..g.len() {
            if g.distance_to_boundary(idx) > a.table().support() {
                assert!((out.values()[idx] - m2).abs() < 1e-3 * m2);
            }
        }
        let dense = a.apply_dense(&z).unwrap();
        let diff = out.zip_map(&dense, |p, q| p - q).unwrap().sup_norm();
        assert!(diff <= 1e-12 * dense.sup_norm());
    }
}
