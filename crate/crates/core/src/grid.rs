//! Uniform cell-centered grids on axis-aligned boxes and scalar fields on them.
//!
//! Values are stored row-major: axis 0 varies slowest. A one-dimensional grid
//! is stored with a trailing axis of length one so that every loop in the
//! crate can be written for two axes.

use serde::{Deserialize, Serialize};

use crate::error::{NlgsError, Result};

/// Serializable description of a grid, as it appears in configs and headers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dim: usize,
    pub extents: Vec<f64>,
    pub counts: Vec<usize>,
}

impl GridSpec {
    pub fn build(&self) -> Result<Grid> {
        Grid::new(self.dim, &self.extents, &self.counts)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    dim: usize,
    extents: [f64; 2],
    counts: [usize; 2],
    spacing: [f64; 2],
}

impl Grid {
    pub fn new(dim: usize, extents: &[f64], counts: &[usize]) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(NlgsError::InvalidGrid(format!(
                "dimension must be 1 or 2, got {dim}"
            )));
        }
        if extents.len() != dim || counts.len() != dim {
            return Err(NlgsError::InvalidGrid(format!(
                "expected {dim} extents and counts, got {} and {}",
                extents.len(),
                counts.len()
            )));
        }
        let mut g = Grid {
            dim,
            extents: [1.0; 2],
            counts: [1; 2],
            spacing: [1.0; 2],
        };
        for a in 0..dim {
            let (len, n) = (extents[a], counts[a]);
            if !(len.is_finite() && len > 0.0) {
                return Err(NlgsError::InvalidGrid(format!(
                    "extent along axis {a} must be positive, got {len}"
                )));
            }
            if n < 2 {
                return Err(NlgsError::InvalidGrid(format!(
                    "need at least 2 cells along axis {a}, got {n}"
                )));
            }
            g.extents[a] = len;
            g.counts[a] = n;
            g.spacing[a] = len / n as f64;
        }
        Ok(g)
    }

    /// Unit square (or unit interval) with `n` cells per axis.
    pub fn unit(dim: usize, n: usize) -> Result<Self> {
        Grid::new(dim, &vec![1.0; dim], &vec![n; dim])
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec {
            dim: self.dim,
            extents: self.extents().to_vec(),
            counts: self.counts().to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extents(&self) -> &[f64] {
        &self.extents[..self.dim]
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts[..self.dim]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing[..self.dim]
    }

    /// Counts padded to two axes (trailing axis of length 1 in 1D).
    pub(crate) fn shape2(&self) -> [usize; 2] {
        self.counts
    }

    pub(crate) fn spacing2(&self) -> [f64; 2] {
        if self.dim == 1 {
            [self.spacing[0], 0.0]
        } else {
            self.spacing
        }
    }

    pub fn max_spacing(&self) -> f64 {
        self.spacing().iter().copied().fold(0.0, f64::max)
    }

    pub fn len(&self) -> usize {
        self.counts[0] * self.counts[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_measure(&self) -> f64 {
        self.spacing().iter().product()
    }

    /// |Ω| from the extents.
    pub fn volume(&self) -> f64 {
        self.extents().iter().product()
    }

    pub fn index(&self, i0: usize, i1: usize) -> usize {
        i0 * self.counts[1] + i1
    }

    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        [idx / self.counts[1], idx % self.counts[1]]
    }

    /// Cell-center coordinates; the second entry is 0 in 1D.
    pub fn node(&self, idx: usize) -> [f64; 2] {
        let [i0, i1] = self.multi_index(idx);
        let x0 = (i0 as f64 + 0.5) * self.spacing[0];
        let x1 = if self.dim == 2 {
            (i1 as f64 + 0.5) * self.spacing[1]
        } else {
            0.0
        };
        [x0, x1]
    }

    pub fn nodes_along(&self, axis: usize) -> Vec<f64> {
        (0..self.counts[axis])
            .map(|i| (i as f64 + 0.5) * self.spacing[axis])
            .collect()
    }

    /// Distance from node `idx` to the boundary of the box.
    pub fn distance_to_boundary(&self, idx: usize) -> f64 {
        let x = self.node(idx);
        (0..self.dim)
            .map(|a| x[a].min(self.extents[a] - x[a]))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Sup,
    L1,
    L2,
}

/// Scalar grid function.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: &Grid) -> Self {
        Field::constant(grid, 0.0)
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        Field {
            grid: *grid,
            values: vec![c; grid.len()],
        }
    }

    pub fn from_fn(grid: &Grid, mut f: impl FnMut([f64; 2]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.node(i))).collect();
        Field {
            grid: *grid,
            values,
        }
    }

    pub fn from_values(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(NlgsError::InvalidGrid(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        let field = Field {
            grid: *grid,
            values,
        };
        field.check_finite("field values")?;
        Ok(field)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn check_finite(&self, context: &'static str) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(NlgsError::NonFiniteValue { context, index }),
            None => Ok(()),
        }
    }

    pub fn same_grid(&self, other: &Field) -> Result<()> {
        if self.grid == other.grid {
            Ok(())
        } else {
            Err(NlgsError::GridMismatch)
        }
    }

    pub fn norm(&self, kind: NormKind) -> f64 {
        match kind {
            NormKind::Sup => self.sup_norm(),
            NormKind::L1 => self.l1_norm(),
            NormKind::L2 => self.l2_norm(),
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        best
    }

    pub fn argmin(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v < self.values[best] {
                best = i;
            }
        }
        best
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum::<f64>() * self.grid.cell_measure()
    }

    pub fn l2_norm_squared(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>() * self.grid.cell_measure()
    }

    pub fn l2_norm(&self) -> f64 {
        self.l2_norm_squared().sqrt()
    }

    /// Midpoint quadrature of the field over Ω.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_measure()
    }

    /// L2 inner product with midpoint quadrature.
    pub fn inner(&self, other: &Field) -> Result<f64> {
        self.same_grid(other)?;
        let s: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum();
        Ok(s * self.grid.cell_measure())
    }

    pub fn scaled(&self, c: f64) -> Field {
        self.map(|v| c * v)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
        self.same_grid(other)?;
        Ok(Field {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }
}
