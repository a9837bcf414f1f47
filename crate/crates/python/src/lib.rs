//! Python bindings: meshes, curves, stationary solves and config-driven runs.

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::sync::Arc;

use dgline::assembly::{DGSpec, LengthScale};
use dgline::curve::{Curve, SineParams};
use dgline::elliptic::{solve_elliptic as solve, EllipticProblem, LogLineSolution};
use dgline::expr::Expression;
use dgline::field::FieldFunction;
use dgline::mesh::{build_box_mesh, BoxDomain, Mesh, Point};
use dgline::norms::{self, Region};
use dgline::solver::SolverConfig;
use dgline::study::{self, RunOptions, StudyConfig};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: dgline::Error) -> PyErr {
    use dgline::Error::*;
    match e {
        Io(e) => PyIOError::new_err(e.to_string()),
        NotConverged { .. } | Breakdown { .. } | TimeStep { .. } | Assembly(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn region(lo: Option<[f64; 3]>, hi: Option<[f64; 3]>) -> PyResult<Region> {
    match (lo, hi) {
        (None, None) => Ok(Region::WholeDomain),
        (Some(lo), Some(hi)) => Ok(Region::Box(BoxDomain { lo, hi })),
        _ => Err(PyValueError::new_err("give both lo and hi, or neither")),
    }
}

#[pyclass(name = "Mesh", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyMesh(Arc<Mesh>);

#[pymethods]
impl PyMesh {
    /// Kuhn tetrahedral mesh of the box `[lo, hi]` with `cells` cubes per axis.
    #[new]
    fn new(lo: [f64; 3], hi: [f64; 3], cells: [usize; 3]) -> PyResult<Self> {
        let domain = BoxDomain::new(lo, hi).map_err(err)?;
        Ok(PyMesh(Arc::new(build_box_mesh(domain, cells).map_err(err)?)))
    }

    #[getter]
    fn num_elements(&self) -> usize {
        self.0.num_elements()
    }

    #[getter]
    fn cells(&self) -> [usize; 3] {
        self.0.cells()
    }

    /// Largest element diameter.
    #[getter]
    fn h(&self) -> f64 {
        self.0.h()
    }

    /// Largest cube edge.
    #[getter]
    fn spacing(&self) -> f64 {
        self.0.spacing()
    }

    fn __repr__(&self) -> String {
        let d = self.0.domain();
        format!("Mesh(lo={:?}, hi={:?}, cells={:?})", d.lo, d.hi, self.0.cells())
    }
}

#[pyclass(name = "Curve", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyCurve(Arc<Curve>);

#[pymethods]
impl PyCurve {
    /// Polyline through the given points.
    #[new]
    fn new(points: Vec<[f64; 3]>) -> PyResult<Self> {
        let pts = points.into_iter().map(Point::from).collect();
        Ok(PyCurve(Arc::new(Curve::new(pts).map_err(err)?)))
    }

    #[staticmethod]
    fn straight(a: [f64; 3], b: [f64; 3]) -> PyResult<Self> {
        Ok(PyCurve(Arc::new(Curve::straight(a.into(), b.into()).map_err(err)?)))
    }

    #[staticmethod]
    #[pyo3(signature = (mesh, amplitude, periods, axis=2, samples=64, center=None, span=None))]
    fn sine(
        mesh: &PyMesh,
        amplitude: f64,
        periods: f64,
        axis: usize,
        samples: usize,
        center: Option<[f64; 2]>,
        span: Option<[f64; 2]>,
    ) -> PyResult<Self> {
        let p = SineParams { amplitude, periods, axis, samples, center, span };
        Ok(PyCurve(Arc::new(Curve::sine(mesh.0.domain(), &p).map_err(err)?)))
    }

    #[getter]
    fn length(&self) -> f64 {
        self.0.length()
    }

    #[getter]
    fn points(&self) -> Vec<[f64; 3]> {
        self.0.points().iter().map(|p| [p.x, p.y, p.z]).collect()
    }

    fn distance(&self, x: [f64; 3]) -> f64 {
        self.0.distance(&x.into())
    }

    fn __len__(&self) -> usize {
        self.0.num_segments()
    }
}

#[pyclass(name = "DGSpec", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDGSpec(DGSpec);

#[pymethods]
impl PyDGSpec {
    /// `epsilon = -1` is SIPG, `0` IIPG, `1` NIPG. Penalty defaults follow
    /// the degree; `diameter=True` measures it in element diameters.
    #[new]
    #[pyo3(signature = (k, epsilon=-1, sigma=None, beta=None, diameter=false))]
    fn new(k: usize, epsilon: i32, sigma: Option<f64>, beta: Option<f64>, diameter: bool) -> PyResult<Self> {
        let d = study::Discretization {
            k,
            epsilon,
            sigma,
            beta,
            length: if diameter { LengthScale::Diameter } else { LengthScale::Spacing },
        };
        Ok(PyDGSpec(d.spec().map_err(err)?))
    }

    #[getter]
    fn k(&self) -> usize {
        self.0.k
    }

    #[getter]
    fn epsilon(&self) -> i32 {
        self.0.epsilon
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.0.sigma
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.0.beta
    }

    fn __repr__(&self) -> String {
        let s = &self.0;
        format!("DGSpec(k={}, epsilon={}, sigma={}, beta={})", s.k, s.epsilon, s.sigma, s.beta)
    }
}

#[pyclass(name = "Field", frozen)]
struct PyField {
    field: FieldFunction,
    #[pyo3(get)]
    iterations: usize,
    #[pyo3(get)]
    residual: f64,
}

#[pymethods]
impl PyField {
    /// Value at `x`, or None outside the domain.
    fn eval(&self, x: [f64; 3]) -> Option<f64> {
        self.field.eval(&x.into())
    }

    #[getter]
    fn degree(&self) -> usize {
        self.field.degree()
    }

    #[getter]
    fn coeffs(&self) -> Vec<f64> {
        self.field.coeffs().to_vec()
    }

    fn element_means(&self) -> Vec<f64> {
        self.field.element_means()
    }

    #[pyo3(signature = (lo=None, hi=None))]
    fn l2_norm(&self, lo: Option<[f64; 3]>, hi: Option<[f64; 3]>) -> PyResult<f64> {
        norms::l2_norm(&self.field, &region(lo, hi)?).map_err(err)
    }

    /// L2 error against `-scale ln(r) / 2π` around the vertical line through `center`.
    #[pyo3(signature = (center, scale=1.0, lo=None, hi=None))]
    fn log_line_error(&self, center: [f64; 2], scale: f64, lo: Option<[f64; 3]>, hi: Option<[f64; 3]>) -> PyResult<f64> {
        let sol = LogLineSolution { center };
        let u = |x: &Point| scale * sol.value(x);
        norms::l2_error(&self.field, &u, &region(lo, hi)?).map_err(err)
    }

    fn write_vtk(&self, path: PathBuf) -> PyResult<()> {
        let f = File::create(&path).map_err(|e| PyIOError::new_err(format!("{}: {e}", path.display())))?;
        dgline::vtk::write_vtk(BufWriter::new(f), "dgline field", &[("u", &self.field)], &[]).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.field.coeffs().len()
    }
}

/// Line density: a number or an expression over arclength `s`.
#[derive(FromPyObject)]
enum Density {
    Constant(f64),
    Expression(String),
}

/// Solves `-Δu = f δ_Λ` with Dirichlet data `dirichlet`, an expression over
/// `x, y, z` (zero if omitted). The GIL is released while solving.
#[pyfunction]
#[pyo3(signature = (mesh, spec, curve, density=Density::Constant(1.0), dirichlet=None, rel_tol=1e-10))]
fn solve_elliptic(
    py: Python<'_>,
    mesh: &PyMesh,
    spec: &PyDGSpec,
    curve: &PyCurve,
    density: Density,
    dirichlet: Option<String>,
    rel_tol: f64,
) -> PyResult<PyField> {
    let f = match &density {
        Density::Constant(c) => Err(*c),
        Density::Expression(s) => Ok(Expression::parse(s, &["s"]).map_err(err)?),
    };
    let g = dirichlet.map(|s| Expression::parse(&s, &["x", "y", "z"])).transpose().map_err(err)?;
    let (mesh, spec, curve) = (mesh.0.clone(), spec.0, curve.0.clone());
    let sol = py
        .detach(move || {
            let density = |s: f64| f.as_ref().map_or_else(|c| *c, |e| e.value(&[s]));
            let boundary = |x: &Point| g.as_ref().map_or(0.0, |e| e.value(&[x.x, x.y, x.z]));
            let problem = EllipticProblem {
                line: Some((&curve, &density)),
                line_degree: if f.is_ok() { 2 } else { 0 },
                volume_load: None,
                dirichlet: Some(&boundary),
            };
            let cfg = SolverConfig { rel_tol, ..Default::default() };
            solve(mesh, &spec, &problem, &cfg)
        })
        .map_err(err)?;
    Ok(PyField { field: sol.field, iterations: sol.iterations, residual: sol.residual })
}

#[pyfunction]
fn convergence_rates(errors: Vec<f64>, hs: Vec<f64>) -> PyResult<Vec<f64>> {
    norms::convergence_rates(&errors, &hs).map_err(err)
}

#[pyclass(name = "StudyConfig", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyStudyConfig(StudyConfig);

#[pymethods]
impl PyStudyConfig {
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(PyStudyConfig(StudyConfig::from_toml(text).map_err(err)?))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyStudyConfig(StudyConfig::load(&path).map_err(err)?))
    }

    /// The reference vertical-line experiment at degree `k`.
    #[staticmethod]
    fn benchmark(k: usize) -> Self {
        PyStudyConfig(StudyConfig::benchmark(k))
    }

    /// Copy restricted to the first `n` levels.
    fn with_levels(&self, n: usize) -> PyResult<Self> {
        let mut c = self.0.clone();
        if n == 0 || n > c.levels.len() {
            return Err(PyValueError::new_err(format!("need 1..={} levels", c.levels.len())));
        }
        c.levels.truncate(n);
        Ok(PyStudyConfig(c))
    }

    fn to_toml(&self) -> String {
        self.0.to_toml()
    }

    #[getter]
    fn levels(&self) -> Vec<[usize; 3]> {
        self.0.levels.clone()
    }

    fn __eq__(&self, other: &PyStudyConfig) -> bool {
        self.0 == other.0
    }
}

/// Runs a convergence study; returns `{"levels": [...], "rates": {...}, "failures": [...]}`.
#[pyfunction]
#[pyo3(signature = (config, out_dir, vtk=false))]
fn run_study<'py>(py: Python<'py>, config: &PyStudyConfig, out_dir: PathBuf, vtk: bool) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config.0.clone();
    let report = py.detach(move || study::run_study(&cfg, &RunOptions { out_dir, vtk })).map_err(err)?;
    let levels = report
        .levels
        .iter()
        .map(|l| {
            let d = PyDict::new(py);
            d.set_item("cells", l.cells)?;
            d.set_item("h", l.h)?;
            d.set_item("num_dofs", l.num_dofs)?;
            d.set_item("iterations", l.iterations)?;
            for (c, v) in &l.values {
                d.set_item(c, v)?;
            }
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    let rates = PyDict::new(py);
    for (c, r) in &report.rates {
        rates.set_item(c, r.clone())?;
    }
    let out = PyDict::new(py);
    out.set_item("levels", levels)?;
    out.set_item("rates", rates)?;
    out.set_item("failures", report.failures)?;
    Ok(out)
}

/// Runs a parabolic config; returns one dict per level.
#[pyfunction]
#[pyo3(signature = (config, out_dir, vtk=false))]
fn run_parabolic<'py>(py: Python<'py>, config: &PyStudyConfig, out_dir: PathBuf, vtk: bool) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = config.0.clone();
    let report = py.detach(move || study::run_parabolic(&cfg, &RunOptions { out_dir, vtk })).map_err(err)?;
    report
        .levels
        .iter()
        .map(|l| {
            let d = PyDict::new(py);
            d.set_item("cells", l.cells)?;
            d.set_item("h", l.h)?;
            d.set_item("steps", l.steps)?;
            d.set_item("final_l2", l.final_l2)?;
            d.set_item("final_dg", l.final_dg)?;
            d.set_item("max_stability_ratio", l.max_stability_ratio)?;
            d.set_item("steady_state_distance", l.steady_state_distance)?;
            Ok(d)
        })
        .collect()
}

#[pymodule(name = "dgline")]
pub fn dgline_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMesh>()?;
    m.add_class::<PyCurve>()?;
    m.add_class::<PyDGSpec>()?;
    m.add_class::<PyField>()?;
    m.add_class::<PyStudyConfig>()?;
    m.add_function(wrap_pyfunction!(solve_elliptic, m)?)?;
    m.add_function(wrap_pyfunction!(convergence_rates, m)?)?;
    m.add_function(wrap_pyfunction!(run_study, m)?)?;
    m.add_function(wrap_pyfunction!(run_parabolic, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
