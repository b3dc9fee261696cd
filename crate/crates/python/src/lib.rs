//! Python bindings. Structured results cross the boundary as JSON and are
//! decoded with the `json` module, so Python sees plain dicts and lists.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use nlgs_core::experiments::{cmd_kernel_info, cmd_limit_study, cmd_simulate, cmd_steady_states, parse_json, RunConfig};
use nlgs_core::kernels::{effective_diffusivity as core_effective_diffusivity, kernel_moments as core_kernel_moments};
use nlgs_core::limit::LimitStudyConfig;
use nlgs_core::model::reaction_point;
use nlgs_core::verify::{run_suite, Suite};
use nlgs_core::{BoundaryMode, Field, Grid, GridSpec, KernelSpec, ModelParams, NlgsError, NonlocalOperator, RadialProfile};

fn err(e: NlgsError) -> PyErr {
    match e {
        NlgsError::Io(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_json<T: for<'de> serde::Deserialize<'de>>(text: &str) -> PyResult<T> {
    parse_json(text, "argument").map_err(err)
}

fn profile(shape: &str, radius: f64) -> PyResult<RadialProfile> {
    match shape {
        "bump" => RadialProfile::bump(radius),
        "indicator" => RadialProfile::indicator(radius),
        other => return Err(PyValueError::new_err(format!("unknown profile {other:?}"))),
    }
    .map_err(err)
}

/// Uniform cell-centred grid on a box anchored at the origin.
#[pyclass(name = "Grid", frozen, module = "nlgs", from_py_object)]
#[derive(Clone)]
struct PyGrid(Grid);

#[pymethods]
impl PyGrid {
    #[new]
    fn new(extents: Vec<f64>, counts: Vec<usize>) -> PyResult<Self> {
        Grid::new(extents.len(), &extents, &counts).map(PyGrid).map_err(err)
    }

    /// `n` cells per axis on the unit interval or square.
    #[staticmethod]
    fn unit(dim: usize, n: usize) -> PyResult<Self> {
        Grid::unit(dim, n).map(PyGrid).map_err(err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn counts(&self) -> Vec<usize> {
        self.0.counts().to_vec()
    }

    #[getter]
    fn spacing(&self) -> Vec<f64> {
        self.0.spacing().to_vec()
    }

    #[getter]
    fn cell_measure(&self) -> f64 {
        self.0.cell_measure()
    }

    /// Node coordinates in storage order; the second entry is 0 in 1-D.
    fn nodes(&self) -> Vec<[f64; 2]> {
        (0..self.0.len()).map(|i| self.0.node(i)).collect()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("Grid(extents={:?}, counts={:?})", self.0.extents(), self.0.counts())
    }
}

impl PyGrid {
    fn field(&self, values: Vec<f64>) -> PyResult<Field> {
        Field::from_values(&self.0, values).map_err(err)
    }
}

/// Discrete nonlocal diffusion operator at scale `j`.
#[pyclass(name = "NonlocalOperator", frozen, module = "nlgs")]
struct PyOperator {
    op: NonlocalOperator,
    grid: PyGrid,
}

#[pymethods]
impl PyOperator {
    #[new]
    #[pyo3(signature = (grid, j, profile_shape = "bump", radius = 1.0, boundary = "neumann_nonlocal"))]
    fn new(grid: PyGrid, j: u32, profile_shape: &str, radius: f64, boundary: &str) -> PyResult<Self> {
        let mode = match boundary {
            "neumann_nonlocal" => BoundaryMode::NeumannNonlocal,
            "dirichlet_extension" => BoundaryMode::DirichletExtension,
            other => return Err(PyValueError::new_err(format!("unknown boundary mode {other:?}"))),
        };
        let spec = KernelSpec::new(profile(profile_shape, radius)?, j, mode);
        let op = NonlocalOperator::build(&spec, &grid.0).map_err(err)?;
        Ok(PyOperator { op, grid })
    }

    #[getter]
    fn grid(&self) -> PyGrid {
        self.grid.clone()
    }

    #[getter]
    fn gamma_inf(&self) -> f64 {
        self.op.table().gamma_inf()
    }

    #[getter]
    fn m2(&self) -> f64 {
        self.op.table().m2()
    }

    fn apply(&self, py: Python<'_>, values: Vec<f64>) -> PyResult<Vec<f64>> {
        let z = self.grid.field(values)?;
        py.detach(|| self.op.apply(&z)).map(Field::into_values).map_err(err)
    }

    /// Reference O(N²) evaluation for cross-checking `apply`.
    fn apply_dense(&self, py: Python<'_>, values: Vec<f64>) -> PyResult<Vec<f64>> {
        let z = self.grid.field(values)?;
        py.detach(|| self.op.apply_dense(&z)).map(Field::into_values).map_err(err)
    }

    /// Y(z) = −2∫ zΓz.
    fn dissipation(&self, values: Vec<f64>) -> PyResult<f64> {
        self.op.dissipation_y(&self.grid.field(values)?).map_err(err)
    }

    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.op.table().summary())
    }

    fn __repr__(&self) -> String {
        let s = self.op.table().summary();
        format!("NonlocalOperator(profile={}, j={}, offsets={})", s.profile, s.j, s.offset_count)
    }
}

/// Reaction terms (F, G) at a single point.
#[pyfunction]
fn reaction(u: f64, v: f64, f: f64, kappa: f64) -> PyResult<(f64, f64)> {
    let p = ModelParams::new(1.0, 1.0, f, kappa).map_err(err)?;
    Ok(reaction_point(u, v, &p))
}

#[pyfunction]
fn steady_states(py: Python<'_>, f: f64, kappa: f64) -> PyResult<Bound<'_, PyAny>> {
    to_py(py, &cmd_steady_states(f, kappa).map_err(err)?)
}

#[pyfunction]
#[pyo3(signature = (j, n = 64, dim = 2, profile_shape = "bump", radius = 1.0))]
fn kernel_info<'py>(
    py: Python<'py>,
    j: u32,
    n: usize,
    dim: usize,
    profile_shape: &str,
    radius: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let grid = GridSpec {
        dim,
        extents: vec![1.0; dim],
        counts: vec![n; dim],
    };
    to_py(py, &cmd_kernel_info(&profile(profile_shape, radius)?, j, &grid).map_err(err)?)
}

/// Continuum moments (M0, m2) of the rescaled profile.
#[pyfunction]
#[pyo3(signature = (dim = 2, profile_shape = "bump", radius = 1.0, resolution = 4096))]
fn kernel_moments(dim: usize, profile_shape: &str, radius: f64, resolution: usize) -> PyResult<(f64, f64)> {
    let m = core_kernel_moments(&profile(profile_shape, radius)?, dim, resolution).map_err(err)?;
    Ok((m.m0, m.m2))
}

/// Local diffusivity m2·d/(2n) matching a nonlocal coefficient `d`.
#[pyfunction]
fn effective_diffusivity(m2: f64, d: f64, dim: usize) -> f64 {
    core_effective_diffusivity(m2, d, dim)
}

/// Run a JSON run config; artifacts land in `out_dir` and the report is returned.
#[pyfunction]
#[pyo3(signature = (config_json, out_dir, seed = None))]
fn simulate<'py>(py: Python<'py>, config_json: &str, out_dir: PathBuf, seed: Option<u64>) -> PyResult<Bound<'py, PyAny>> {
    let cfg: RunConfig = from_json(config_json)?;
    let cfg = cfg.resolve(Some(&out_dir), seed).map_err(err)?;
    let report = py.detach(|| cmd_simulate(&cfg)).map_err(err)?;
    to_py(py, &report)
}

/// Run a limit study; `None` selects the built-in default study.
#[pyfunction]
#[pyo3(signature = (out_dir, config_json = None))]
fn limit_study<'py>(py: Python<'py>, out_dir: PathBuf, config_json: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
    let cfg = match config_json {
        Some(text) => from_json::<LimitStudyConfig>(text)?,
        None => LimitStudyConfig::default_study(),
    };
    let report = py.detach(|| cmd_limit_study(&cfg, &out_dir)).map_err(err)?;
    to_py(py, &report)
}

/// Run one invariant suite by name and return its checks.
#[pyfunction]
fn verify<'py>(py: Python<'py>, suite: &str) -> PyResult<Bound<'py, PyAny>> {
    let suite: Suite = from_json(&format!("{suite:?}"))?;
    let results = py.detach(|| run_suite(suite)).map_err(err)?;
    to_py(py, &results)
}

#[pymodule]
fn nlgs(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrid>()?;
    m.add_class::<PyOperator>()?;
    m.add_function(wrap_pyfunction!(reaction, m)?)?;
    m.add_function(wrap_pyfunction!(steady_states, m)?)?;
    m.add_function(wrap_pyfunction!(kernel_info, m)?)?;
    m.add_function(wrap_pyfunction!(kernel_moments, m)?)?;
    m.add_function(wrap_pyfunction!(effective_diffusivity, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(limit_study, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
