//! Configuration-driven runs: single solves, convergence studies and time
//! integration, with CSV, VTK and metadata output.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::assembly::{DGSpec, LengthScale};
use crate::basis::make_basis;
use crate::curve::{build_restrictions, compute_fh_field, Curve, SineParams};
use crate::elliptic::{solve_elliptic, EllipticProblem, LogLineSolution};
use crate::error::{invalid, Error, Result};
use crate::expr::Expression;
use crate::field::FieldFunction;
use crate::mesh::{build_box_mesh, BoxDomain, Mesh, Point};
use crate::norms::{convergence_rates, dg_energy_error, l2_error, l2_norm, Region};
use crate::parabolic::{
    project_initial, run_backward_euler, LineSource, ParabolicProblem, StepRecord, TimeGrid,
};
use crate::solver::SolverConfig;
use crate::vtk::write_vtk;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Elliptic,
    Parabolic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CurveSpec {
    /// Polyline read from a text file of `x y z` lines.
    File { path: PathBuf },
    /// Straight segment from `a` to `b`.
    Line { a: [f64; 3], b: [f64; 3] },
    /// Sinusoidal polyline, see [`SineParams`].
    Sine {
        amplitude: f64,
        periods: f64,
        axis: usize,
        samples: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center: Option<[f64; 2]>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        span: Option<[f64; 2]>,
    },
}

impl CurveSpec {
    pub fn build(&self, domain: &BoxDomain) -> Result<Curve> {
        let curve = match self {
            CurveSpec::File { path } => {
                let f = File::open(path).map_err(|e| Error::Config(format!("cannot open curve file {}: {e}", path.display())))?;
                Curve::read(BufReader::new(f))?
            }
            CurveSpec::Line { a, b } => Curve::straight(Point::from(*a), Point::from(*b))?,
            CurveSpec::Sine { amplitude, periods, axis, samples, center, span } => Curve::sine(
                domain,
                &SineParams {
                    amplitude: *amplitude,
                    periods: *periods,
                    axis: *axis,
                    samples: *samples,
                    center: *center,
                    span: *span,
                },
            )?,
        };
        curve.check_inside(domain, 0.0)?;
        Ok(curve)
    }
}

/// A scalar given either as a constant or as an expression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScalarSpec {
    Constant { value: f64 },
    Expression { expr: String },
}

impl ScalarSpec {
    pub fn constant(&self) -> Option<f64> {
        match self {
            ScalarSpec::Constant { value } => Some(*value),
            ScalarSpec::Expression { .. } => None,
        }
    }

    fn compile(&self, variables: &[&'static str]) -> Result<Compiled> {
        Ok(match self {
            ScalarSpec::Constant { value } => Compiled::Constant(*value),
            ScalarSpec::Expression { expr } => Compiled::Expr(Expression::parse(expr, variables)?),
        })
    }
}

enum Compiled {
    Constant(f64),
    Expr(Expression),
}

impl Compiled {
    fn eval(&self, values: &[f64]) -> f64 {
        match self {
            Compiled::Constant(c) => *c,
            Compiled::Expr(e) => e.value(values),
        }
    }

    fn uses(&self, name: &str) -> bool {
        matches!(self, Compiled::Expr(e) if e.uses(name))
    }
}

fn one() -> ScalarSpec {
    ScalarSpec::Constant { value: 1.0 }
}

fn zero() -> ScalarSpec {
    ScalarSpec::Constant { value: 0.0 }
}

fn symmetric_epsilon() -> i32 {
    -1
}

/// Penalty parameters; `sigma` and `beta` default per degree and variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Discretization {
    pub k: usize,
    #[serde(default = "symmetric_epsilon")]
    pub epsilon: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default)]
    pub length: LengthScale,
}

impl Discretization {
    pub fn spec(&self) -> Result<DGSpec> {
        let base = DGSpec::symmetric(self.k);
        let beta = self.beta.unwrap_or(if self.epsilon == -1 { 1.0 } else { 2.0 });
        let s = DGSpec {
            k: self.k,
            epsilon: self.epsilon,
            sigma: self.sigma.unwrap_or(base.sigma),
            beta,
            length: self.length,
        };
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedRegion {
    pub name: String,
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl NamedRegion {
    pub fn region(&self) -> Region {
        Region::Box(BoxDomain { lo: self.lo, hi: self.hi })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExactSpec {
    #[default]
    None,
    /// `-c ln(r) / 2π` around the configured vertical line, `c` the constant
    /// line density; Dirichlet data are taken from it.
    LogLine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParabolicSpec {
    pub t_final: f64,
    /// Number of steps; alternatively give `tau`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    /// Initial datum over `x, y, z`.
    #[serde(default = "zero")]
    pub u0: ScalarSpec,
    /// Write a VTK snapshot every this many steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_every: Option<usize>,
    /// Also solve the stationary problem and report the distance of the
    /// final snapshot to it.
    #[serde(default)]
    pub compare_steady_state: bool,
    /// Fail when that relative distance exceeds this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steady_state_tolerance: Option<f64>,
}

impl ParabolicSpec {
    pub fn grid(&self) -> Result<TimeGrid> {
        let cfg = |m: String| Error::Config(m);
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(cfg(format!("t_final must be positive, got {}", self.t_final)));
        }
        let steps = match (self.steps, self.tau) {
            (Some(n), None) => n,
            (None, Some(tau)) => {
                if !(tau > 0.0) {
                    return Err(cfg(format!("tau must be positive, got {tau}")));
                }
                if tau > self.t_final {
                    return Err(cfg(format!("tau = {tau} exceeds t_final = {}", self.t_final)));
                }
                (self.t_final / tau).round().max(1.0) as usize
            }
            _ => return Err(cfg("give exactly one of `steps` and `tau`".into())),
        };
        if steps == 0 {
            return Err(cfg("steps must be at least 1".into()));
        }
        if self.snapshot_every == Some(0) {
            return Err(cfg("snapshot_every must be at least 1".into()));
        }
        TimeGrid::new(self.t_final, steps)
    }
}

/// Bounds on the finest-pair rate of one output column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateAssertion {
    pub column: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default)]
    pub mode: Mode,
    pub domain: BoxDomain,
    pub curve: CurveSpec,
    /// Line density over arclength `s` and time `t`.
    #[serde(default = "one")]
    pub source: ScalarSpec,
    pub discretization: Discretization,
    /// Grid resolutions `[nx, ny, nz]`, coarse to fine.
    pub levels: Vec<[usize; 3]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub regions: Vec<NamedRegion>,
    #[serde(default)]
    pub exact: ExactSpec,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parabolic: Option<ParabolicSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub assert_rate: Vec<RateAssertion>,
}

impl StudyConfig {
    /// Parses TOML text. Errors carry the line and column of the problem.
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: StudyConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// Reads a config file; curve file paths are taken relative to it.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut c = Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let CurveSpec::File { path: p } = &mut c.curve {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Error::Config(m);
        self.domain.validate()?;
        self.discretization.spec()?;
        self.solver.validate()?;
        if self.levels.is_empty() {
            return Err(cfg("at least one refinement level is required".into()));
        }
        if let Some(l) = self.levels.iter().find(|l| l.contains(&0)) {
            return Err(cfg(format!("level {l:?} has a zero cell count")));
        }
        for r in &self.regions {
            if r.name.is_empty() || !r.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(cfg(format!("region name `{}` must be alphanumeric", r.name)));
            }
            BoxDomain { lo: r.lo, hi: r.hi }.validate()?;
        }
        match (self.mode, &self.parabolic) {
            (Mode::Parabolic, None) => return Err(cfg("mode = \"parabolic\" needs a [parabolic] table".into())),
            (Mode::Elliptic, Some(_)) => return Err(cfg("[parabolic] given but mode is elliptic".into())),
            (Mode::Parabolic, Some(p)) => {
                p.grid()?;
                p.u0.compile(&["x", "y", "z"])?;
                if self.exact != ExactSpec::None {
                    return Err(cfg("no exact solution is available in parabolic mode".into()));
                }
            }
            _ => {}
        }
        self.source.compile(&["s", "t"])?;
        if self.exact == ExactSpec::LogLine {
            self.log_line()?;
        }
        for a in &self.assert_rate {
            if a.min.is_none() && a.max.is_none() {
                return Err(cfg(format!("rate assertion on `{}` has neither min nor max", a.column)));
            }
        }
        Ok(())
    }

    /// The built-in exact solution for a constant density on a vertical line.
    fn log_line(&self) -> Result<(LogLineSolution, f64)> {
        let CurveSpec::Line { a, b } = &self.curve else {
            return Err(Error::Config("exact = \"log-line\" needs a `line` curve".into()));
        };
        if a[0] != b[0] || a[1] != b[1] {
            return Err(Error::Config("exact = \"log-line\" needs a line parallel to the z axis".into()));
        }
        let Some(c) = self.source.constant() else {
            return Err(Error::Config("exact = \"log-line\" needs a constant source".into()));
        };
        Ok((LogLineSolution { center: [a[0], a[1]] }, c))
    }

    /// The reference experiment with the given degree.
    pub fn benchmark(k: usize) -> Self {
        use crate::elliptic::benchmark;
        let region = |name: &str, r: Region| match r {
            Region::Box(b) => NamedRegion { name: name.into(), lo: b.lo, hi: b.hi },
            Region::WholeDomain => unreachable!(),
        };
        let [x, y] = benchmark::exact().center;
        StudyConfig {
            mode: Mode::Elliptic,
            domain: benchmark::domain(),
            curve: CurveSpec::Line { a: [x, y, 0.0], b: [x, y, 0.25] },
            source: one(),
            discretization: Discretization { k, epsilon: -1, sigma: None, beta: None, length: LengthScale::Spacing },
            levels: benchmark::levels(),
            regions: vec![region("C1", benchmark::c1()), region("C2", benchmark::c2())],
            exact: ExactSpec::LogLine,
            solver: SolverConfig { rel_tol: 1e-12, ..Default::default() },
            parabolic: None,
            assert_rate: Vec::new(),
        }
    }
}

/// Where and what to write.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub vtk: bool,
}

/// Results on one mesh level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelResult {
    pub level: usize,
    pub cells: [usize; 3],
    /// Grid spacing, the `h` used for rates.
    pub h: f64,
    pub num_elements: usize,
    pub num_dofs: usize,
    pub iterations: usize,
    pub residual: f64,
    /// Named values in CSV column order (errors, `h * |f_h|`, ...).
    pub values: Vec<(String, f64)>,
}

impl LevelResult {
    pub fn value(&self, column: &str) -> Option<f64> {
        self.values.iter().find(|(c, _)| c == column).map(|(_, v)| *v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub levels: Vec<LevelResult>,
    /// Pairwise rates per column (columns whose values are all positive).
    pub rates: Vec<(String, Vec<f64>)>,
    /// Messages of failed rate assertions.
    pub failures: Vec<String>,
}

impl StudyReport {
    pub fn rates_of(&self, column: &str) -> Option<&[f64]> {
        self.rates.iter().find(|(c, _)| c == column).map(|(_, r)| r.as_slice())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Metadata {
    run: RunInfo,
    config: StudyConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunInfo {
    command: String,
    version: String,
    wall_time_seconds: f64,
    levels: Vec<LevelInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LevelInfo {
    cells: [usize; 3],
    num_dofs: usize,
    iterations: usize,
    residual: f64,
}

/// Parses the `[config]` table of a metadata sidecar.
pub fn config_from_metadata(text: &str) -> Result<StudyConfig> {
    let m: Metadata = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    m.config.validate()?;
    Ok(m.config)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_metadata(opts: &RunOptions, command: &str, config: &StudyConfig, levels: &[LevelResult], start: Instant) -> Result<()> {
    let meta = Metadata {
        run: RunInfo {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            wall_time_seconds: start.elapsed().as_secs_f64(),
            levels: levels
                .iter()
                .map(|l| LevelInfo { cells: l.cells, num_dofs: l.num_dofs, iterations: l.iterations, residual: l.residual })
                .collect(),
        },
        config: config.clone(),
    };
    let text = toml::to_string(&meta).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(opts.out_dir.join("metadata.toml"), text)?;
    Ok(())
}

fn fmt(v: f64) -> String {
    format!("{v:.10e}")
}

fn write_levels_csv(opts: &RunOptions, k: usize, levels: &[LevelResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(&opts.out_dir, "errors.csv")?);
    let extra: Vec<&str> = levels.first().map_or(vec![], |l| l.values.iter().map(|(c, _)| c.as_str()).collect());
    let mut header = vec!["k", "level", "nx", "ny", "nz", "h", "n_dof", "iterations", "residual"];
    header.extend(&extra);
    w.write_record(&header).map_err(csv_err)?;
    for l in levels {
        let mut row = vec![
            k.to_string(),
            l.level.to_string(),
            l.cells[0].to_string(),
            l.cells[1].to_string(),
            l.cells[2].to_string(),
            fmt(l.h),
            l.num_dofs.to_string(),
            l.iterations.to_string(),
            fmt(l.residual),
        ];
        row.extend(l.values.iter().map(|(_, v)| fmt(*v)));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Solves the stationary problem on one level and measures it.
fn solve_level(config: &StudyConfig, curve: &Curve, level: usize, opts: &RunOptions) -> Result<(LevelResult, FieldFunction)> {
    let cells = config.levels[level];
    let spec = config.discretization.spec()?;
    let mesh = Arc::new(build_box_mesh(config.domain, cells)?);
    for r in &config.regions {
        r.region().check(&mesh).map_err(|e| Error::Config(format!("region {}: {e}", r.name)))?;
    }
    let source = config.source.compile(&["s", "t"])?;
    let density = |s: f64| source.eval(&[s, 0.0]);
    let exact = match config.exact {
        ExactSpec::LogLine => Some(config.log_line()?),
        ExactSpec::None => None,
    };
    let u = |x: &Point| exact.map_or(0.0, |(sol, c)| c * sol.value(x));
    let grad = |x: &Point| exact.map_or(crate::mesh::Vector::zeros(), |(sol, c)| c * sol.gradient(x));
    let line_degree = if source.uses("s") { 2 } else { 0 };
    let problem = EllipticProblem {
        line: Some((curve, &density)),
        line_degree,
        volume_load: None,
        dirichlet: exact.map(|_| &u as &(dyn Fn(&Point) -> f64 + Sync)),
    };
    log::info!("level {level}: cells {cells:?}, {} elements", mesh.num_elements());
    let sol = solve_elliptic(mesh.clone(), &spec, &problem, &config.solver)?;

    let mut values = Vec::new();
    if exact.is_some() {
        values.push(("err_l2_global".to_string(), l2_error(&sol.field, &u, &Region::WholeDomain)?));
        for r in &config.regions {
            values.push((format!("err_l2_{}", r.name), l2_error(&sol.field, &u, &r.region())?));
        }
        let w = spec.jump_weight(&mesh);
        values.push(("err_dg_global".to_string(), dg_energy_error(&sol.field, &u, &grad, w, &Region::WholeDomain)?));
        for r in &config.regions {
            values.push((format!("err_dg_{}", r.name), dg_energy_error(&sol.field, &u, &grad, w, &r.region())?));
        }
    }
    let restrictions = build_restrictions(curve, &mesh)?;
    let fh = compute_fh_field(&restrictions, curve, &density, mesh.clone(), sol.field.basis(), line_degree)?;
    values.push(("h_fh_l2".to_string(), mesh.spacing() * l2_norm(&fh, &Region::WholeDomain)?));

    if opts.vtk {
        let means = sol.field.element_means();
        let fh_means = fh.element_means();
        let mut cell: Vec<(&str, &[f64])> = vec![("u_mean", &means), ("f_h", &fh_means)];
        let err;
        if exact.is_some() {
            err = element_errors(&sol.field, &u)?;
            cell.push(("l2_error", &err));
        }
        let title = format!("level {level}, cells {cells:?}, k = {}", spec.k);
        write_vtk(create(&opts.out_dir, &format!("solution_level{level}.vtk"))?, &title, &[("u", &sol.field)], &cell)?;
    }
    Ok((
        LevelResult {
            level,
            cells,
            h: mesh.spacing(),
            num_elements: mesh.num_elements(),
            num_dofs: sol.num_dofs,
            iterations: sol.iterations,
            residual: sol.residual,
            values,
        },
        sol.field,
    ))
}

/// Per-element L2 errors for visualisation.
fn element_errors(field: &FieldFunction, u: &(dyn Fn(&Point) -> f64 + Sync)) -> Result<Vec<f64>> {
    let mesh = field.mesh();
    let basis = field.basis();
    let rule = crate::quadrature::tet_quadrature(2 * basis.degree() + 2)?;
    (0..mesh.num_elements())
        .map(|e| {
            let map = crate::basis::AffineMap::new(&mesh.element_points(e))?;
            let mut s = 0.0;
            for (xi, w) in rule.iter() {
                let d = field.eval_reference(e, xi) - u(&map.to_physical(xi));
                s += w * d * d;
            }
            Ok((s * map.abs_det()).sqrt())
        })
        .collect()
}

fn prepare(config: &StudyConfig, opts: &RunOptions, mode: Mode) -> Result<Curve> {
    config.validate()?;
    if config.mode != mode {
        return Err(Error::Config(format!("config mode is {:?}, command needs {mode:?}", config.mode)));
    }
    std::fs::create_dir_all(&opts.out_dir)?;
    config.curve.build(&config.domain)
}

fn elliptic_levels(config: &StudyConfig, opts: &RunOptions) -> Result<Vec<LevelResult>> {
    let curve = prepare(config, opts, Mode::Elliptic)?;
    (0..config.levels.len()).map(|i| solve_level(config, &curve, i, opts).map(|r| r.0)).collect()
}

/// Solves on every configured level; writes `errors.csv`, `metadata.toml`
/// and, if enabled, one VTK file per level.
pub fn run_elliptic(config: &StudyConfig, opts: &RunOptions) -> Result<Vec<LevelResult>> {
    let start = Instant::now();
    let levels = elliptic_levels(config, opts)?;
    write_levels_csv(opts, config.discretization.k, &levels)?;
    write_metadata(opts, "solve-elliptic", config, &levels, start)?;
    Ok(levels)
}

/// Convergence study over at least two levels. Besides the files of
/// [`run_elliptic`] writes `rates.csv` and `rates.txt`, and evaluates the
/// configured rate assertions.
pub fn run_study(config: &StudyConfig, opts: &RunOptions) -> Result<StudyReport> {
    let start = Instant::now();
    if config.levels.len() < 2 {
        return Err(Error::Config("a study needs at least two levels".into()));
    }
    let hs: Vec<f64> = config
        .levels
        .iter()
        .map(|&n| build_box_mesh(config.domain, n).map(|m| m.spacing()))
        .collect::<Result<_>>()?;
    if hs.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(invalid("levels must be strictly refining (grid spacing decreasing)"));
    }
    let levels = elliptic_levels(config, opts)?;
    write_levels_csv(opts, config.discretization.k, &levels)?;

    let mut rates = Vec::new();
    for (col, _) in &levels[0].values {
        let errs: Vec<f64> = levels.iter().map(|l| l.value(col).unwrap_or(f64::NAN)).collect();
        if errs.iter().all(|&e| e > 0.0 && e.is_finite()) {
            rates.push((col.clone(), convergence_rates(&errs, &hs)?));
        }
    }
    let mut failures = Vec::new();
    for a in &config.assert_rate {
        let Some(r) = rates.iter().find(|(c, _)| *c == a.column) else {
            failures.push(format!("no rates for column `{}`", a.column));
            continue;
        };
        let last = *r.1.last().expect("at least one rate");
        if a.min.is_some_and(|m| last < m) || a.max.is_some_and(|m| last > m) {
            failures.push(format!(
                "finest-pair rate of {} is {last:.3}, outside [{}, {}]",
                a.column,
                a.min.map_or("-inf".into(), |m| m.to_string()),
                a.max.map_or("inf".into(), |m| m.to_string())
            ));
        }
    }
    let report = StudyReport { levels, rates, failures };
    write_rates(opts, config, &report)?;
    write_metadata(opts, "study", config, &report.levels, start)?;
    Ok(report)
}

fn write_rates(opts: &RunOptions, config: &StudyConfig, report: &StudyReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(&opts.out_dir, "rates.csv")?);
    let mut header = vec!["k".to_string(), "from_level".into(), "to_level".into()];
    header.extend(report.rates.iter().map(|(c, _)| format!("rate_{}", c.trim_start_matches("err_"))));
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..report.levels.len() - 1 {
        let mut row = vec![config.discretization.k.to_string(), i.to_string(), (i + 1).to_string()];
        row.extend(report.rates.iter().map(|(_, r)| format!("{:.4}", r[i])));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    std::fs::write(opts.out_dir.join("rates.txt"), rate_table(config.discretization.k, report))?;
    Ok(())
}

/// Human-readable table of values and rates.
pub fn rate_table(k: usize, report: &StudyReport) -> String {
    let cols: Vec<&str> = report.rates.iter().map(|(c, _)| c.as_str()).collect();
    let mut s = format!("k = {k}\n{:>8} {:>10}", "h", "n_dof");
    for c in &cols {
        s += &format!(" {:>22}", c);
    }
    s.push('\n');
    for (i, l) in report.levels.iter().enumerate() {
        s += &format!("{:>8.5} {:>10}", l.h, l.num_dofs);
        for (c, r) in report.rates.iter().map(|(c, r)| (c, r)) {
            let v = l.value(c).unwrap_or(f64::NAN);
            let rate = if i == 0 { String::from("-") } else { format!("{:.2}", r[i - 1]) };
            s += &format!(" {:>15.3e} {:>6}", v, rate);
        }
        s.push('\n');
    }
    for f in &report.failures {
        s += &format!("FAILED: {f}\n");
    }
    s
}

/// Per-level summary of a time integration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParabolicLevel {
    pub level: usize,
    pub cells: [usize; 3],
    pub h: f64,
    pub num_dofs: usize,
    pub steps: usize,
    pub final_l2: f64,
    pub final_dg: f64,
    pub max_stability_ratio: f64,
    /// Relative L2 distance of the final snapshot to the stationary solution.
    pub steady_state_distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParabolicReport {
    pub levels: Vec<ParabolicLevel>,
    pub failures: Vec<String>,
}

/// Backward Euler on every level; writes `stability_level{i}.csv`,
/// `summary.csv`, `metadata.toml` and optional VTK snapshots.
pub fn run_parabolic(config: &StudyConfig, opts: &RunOptions) -> Result<ParabolicReport> {
    let start = Instant::now();
    let curve = prepare(config, opts, Mode::Parabolic)?;
    let p = config.parabolic.as_ref().expect("validated");
    let grid = p.grid()?;
    let spec = config.discretization.spec()?;
    let source = config.source.compile(&["s", "t"])?;
    let density = |t: f64, s: f64| source.eval(&[s, t]);
    let u0 = p.u0.compile(&["x", "y", "z"])?;
    let u0f = |x: &Point| u0.eval(&[x.x, x.y, x.z]);
    let line = LineSource {
        curve: &curve,
        density: &density,
        time_dependent: source.uses("t"),
        degree: if source.uses("s") { 2 } else { 0 },
    };
    let problem = ParabolicProblem { line: Some(line), volume_load: None };

    let mut levels = Vec::new();
    let mut failures = Vec::new();
    let mut infos = Vec::new();
    for (i, &cells) in config.levels.iter().enumerate() {
        let mesh: Arc<Mesh> = Arc::new(build_box_mesh(config.domain, cells)?);
        let basis = make_basis(spec.k)?;
        let initial = project_initial(&u0f, mesh.clone(), &basis)?;
        let mut csv = csv::Writer::from_writer(create(&opts.out_dir, &format!("stability_level{i}.csv"))?);
        csv.write_record(["step", "time", "l2", "dg", "iterations", "stability", "bound", "ratio"]).map_err(csv_err)?;
        let snapshot_every = p.snapshot_every.filter(|_| opts.vtk);
        if snapshot_every.is_some() {
            write_snapshot(opts, i, 0, &initial)?;
        }
        let mut observer = |r: &StepRecord, f: &FieldFunction| -> Result<()> {
            csv.write_record([
                r.step.to_string(),
                fmt(r.time),
                fmt(r.l2),
                fmt(r.dg),
                r.iterations.to_string(),
                fmt(r.stability),
                fmt(r.stability_bound),
                fmt(r.stability_ratio()),
            ])
            .map_err(csv_err)?;
            if snapshot_every.is_some_and(|m| r.step % m == 0 || r.step == grid.steps) {
                write_snapshot(opts, i, r.step, f)?;
            }
            Ok(())
        };
        let run = run_backward_euler(&spec, &problem, initial, &grid, &config.solver, &mut observer)?;
        csv.flush()?;
        let last = run.records.last().expect("at least one step");
        let mut steady_state_distance = None;
        if p.compare_steady_state {
            let f_end = |s: f64| source.eval(&[s, grid.t_final]);
            let steady = solve_elliptic(
                mesh.clone(),
                &spec,
                &EllipticProblem { line: Some((&curve, &f_end)), line_degree: line.degree, ..Default::default() },
                &config.solver,
            )?;
            let mut d = run.series.last().clone();
            d.axpy(-1.0, &steady.field);
            let scale = l2_norm(&steady.field, &Region::WholeDomain)?;
            let dist = l2_norm(&d, &Region::WholeDomain)? / if scale > 0.0 { scale } else { 1.0 };
            if let Some(tol) = p.steady_state_tolerance {
                if dist > tol {
                    failures.push(format!("level {i}: distance to steady state {dist:.3e} exceeds {tol:.3e}"));
                }
            }
            steady_state_distance = Some(dist);
        }
        infos.push(LevelResult {
            level: i,
            cells,
            h: mesh.spacing(),
            num_elements: mesh.num_elements(),
            num_dofs: run.series.last().coeffs().len(),
            iterations: run.records.iter().map(|r| r.iterations).sum(),
            residual: 0.0,
            values: vec![],
        });
        levels.push(ParabolicLevel {
            level: i,
            cells,
            h: mesh.spacing(),
            num_dofs: run.series.last().coeffs().len(),
            steps: grid.steps,
            final_l2: last.l2,
            final_dg: last.dg,
            max_stability_ratio: run.records.iter().map(StepRecord::stability_ratio).fold(0.0, f64::max),
            steady_state_distance,
        });
    }
    let mut w = csv::Writer::from_writer(create(&opts.out_dir, "summary.csv")?);
    w.write_record(["level", "nx", "ny", "nz", "h", "n_dof", "steps", "final_l2", "final_dg", "max_stability_ratio", "steady_state_distance"])
        .map_err(csv_err)?;
    for l in &levels {
        w.write_record([
            l.level.to_string(),
            l.cells[0].to_string(),
            l.cells[1].to_string(),
            l.cells[2].to_string(),
            fmt(l.h),
            l.num_dofs.to_string(),
            l.steps.to_string(),
            fmt(l.final_l2),
            fmt(l.final_dg),
            fmt(l.max_stability_ratio),
            l.steady_state_distance.map_or(String::new(), fmt),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    write_metadata(opts, "solve-parabolic", config, &infos, start)?;
    Ok(ParabolicReport { levels, failures })
}

fn write_snapshot(opts: &RunOptions, level: usize, step: usize, f: &FieldFunction) -> Result<()> {
    let name = format!("snapshot_level{level}_step{step:05}.vtk");
    write_vtk(create(&opts.out_dir, &name)?, &format!("level {level}, step {step}"), &[("u", f)], &[])
}
