//! Stationary problem: assemble, solve, and wrap the result as a field.

use std::sync::Arc;

use crate::assembly::{assemble_dirichlet_rhs, assemble_stiffness, assemble_volume_load, DGSpec, SparseSystem};
use crate::basis::make_basis;
use crate::curve::{assemble_line_rhs, build_restrictions, Curve};
use crate::error::Result;
use crate::field::FieldFunction;
use crate::mesh::{BoxDomain, Mesh, Point, Vector};
use crate::norms::{Region, ScalarFn};
use crate::solver::{solve, Method, SolverConfig};

/// Line density as a function of arclength.
pub type LineDensity<'a> = &'a (dyn Fn(f64) -> f64 + Sync);

/// Right-hand side and boundary data of `-Δu = f δ_Λ + F` with `u = g` on the boundary.
#[derive(Clone, Copy, Default)]
pub struct EllipticProblem<'a> {
    pub line: Option<(&'a Curve, LineDensity<'a>)>,
    /// Polynomial degree assumed for the line density when picking quadrature.
    pub line_degree: usize,
    pub volume_load: Option<ScalarFn<'a>>,
    pub dirichlet: Option<ScalarFn<'a>>,
}

#[derive(Debug, Clone)]
pub struct EllipticSolution {
    pub field: FieldFunction,
    pub iterations: usize,
    pub residual: f64,
    pub num_dofs: usize,
    pub nnz: usize,
}

/// Assembled right-hand side of `problem`.
pub fn assemble_rhs(mesh: &Mesh, spec: &DGSpec, problem: &EllipticProblem) -> Result<Vec<f64>> {
    let basis = make_basis(spec.k)?;
    let mut b = vec![0.0; mesh.num_elements() * basis.dim()];
    let mut add = |v: Vec<f64>| b.iter_mut().zip(v).for_each(|(a, x)| *a += x);
    if let Some((curve, f)) = problem.line {
        let restrictions = build_restrictions(curve, mesh)?;
        add(assemble_line_rhs(&restrictions, curve, f, mesh, &basis, problem.line_degree)?);
    }
    if let Some(load) = problem.volume_load {
        add(assemble_volume_load(mesh, &basis, load, 2 * spec.k + 2)?);
    }
    if let Some(g) = problem.dirichlet {
        add(assemble_dirichlet_rhs(mesh, spec, &basis, g)?);
    }
    Ok(b)
}

/// CG needs a symmetric matrix; nonsymmetric variants fall back to BiCGStab.
pub fn effective_config(spec: &DGSpec, config: &SolverConfig) -> SolverConfig {
    let mut c = *config;
    if !spec.is_symmetric() && c.method == Method::Cg {
        log::info!("epsilon = {} gives a nonsymmetric matrix; using BiCGStab", spec.epsilon);
        c.method = Method::Bicgstab;
    }
    c
}

pub fn solve_elliptic(
    mesh: Arc<Mesh>,
    spec: &DGSpec,
    problem: &EllipticProblem,
    config: &SolverConfig,
) -> Result<EllipticSolution> {
    spec.validate()?;
    let basis = make_basis(spec.k)?;
    let system: SparseSystem = assemble_stiffness(&mesh, spec, &basis)?;
    let b = assemble_rhs(&mesh, spec, problem)?;
    let out = solve(&system, &b, &effective_config(spec, config))?;
    Ok(EllipticSolution {
        num_dofs: system.num_dofs(),
        nnz: system.matrix.nnz(),
        iterations: out.iterations,
        residual: out.residual,
        field: FieldFunction::new(mesh, basis, out.x)?,
    })
}

/// `u = -ln(r) / 2π`, `r` the distance to a vertical line through `center`.
///
/// This is the free-space solution of `-Δu = δ_Λ` for an infinite straight
/// line with unit density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLineSolution {
    pub center: [f64; 2],
}

/// Points closer to the line than this are evaluated at this distance.
const MIN_RADIUS: f64 = 1e-12;

impl LogLineSolution {
    pub fn value(&self, x: &Point) -> f64 {
        let r = self.radius(x).max(MIN_RADIUS);
        -r.ln() / (2.0 * std::f64::consts::PI)
    }

    pub fn gradient(&self, x: &Point) -> Vector {
        let dx = x.x - self.center[0];
        let dy = x.y - self.center[1];
        let r2 = (dx * dx + dy * dy).max(MIN_RADIUS * MIN_RADIUS);
        -Vector::new(dx, dy, 0.0) / (2.0 * std::f64::consts::PI * r2)
    }

    fn radius(&self, x: &Point) -> f64 {
        (x.x - self.center[0]).hypot(x.y - self.center[1])
    }
}

/// The reference experiment: a vertical line through `(2/3, 1/3)` crossing a
/// thin box, unit density, exact solution [`LogLineSolution`].
pub mod benchmark {
    use super::*;

    pub fn domain() -> BoxDomain {
        BoxDomain { lo: [0.0, 0.0, 0.0], hi: [1.0, 1.0, 0.25] }
    }

    pub fn exact() -> LogLineSolution {
        LogLineSolution { center: [2.0 / 3.0, 1.0 / 3.0] }
    }

    pub fn curve() -> Curve {
        let [x, y] = exact().center;
        Curve::straight(Point::new(x, y, 0.0), Point::new(x, y, 0.25)).expect("valid segment")
    }

    /// Subdomain near the line.
    pub fn c1() -> Region {
        Region::Box(BoxDomain { lo: [0.25, 0.5, 0.0], hi: [0.5, 0.75, 0.25] })
    }

    /// Subdomain in the far corner.
    pub fn c2() -> Region {
        Region::Box(BoxDomain { lo: [0.0, 0.75, 0.0], hi: [0.25, 1.0, 0.25] })
    }

    /// Grid resolutions, coarse to fine.
    pub fn levels() -> Vec<[usize; 3]> {
        vec![[4, 4, 1], [8, 8, 2], [16, 16, 4], [32, 32, 8]]
    }

    pub fn spec(k: usize) -> DGSpec {
        DGSpec::symmetric(k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::DGSpec;
    use crate::mesh::build_box_mesh;
    use crate::norms::dg_energy_error;

    #[test]
    fn log_solution_is_harmonic() {
        let u = benchmark::exact();
        let x = Point::new(0.2, 0.9, 0.1);
        let h = 1e-3;
        let mut lap = 0.0;
        for a in 0..3 {
            let mut p = x;
            let mut m = x;
            p[a] += h;
            m[a] -= h;
            lap += (u.value(&p) - 2.0 * u.value(&x) + u.value(&m)) / (h * h);
            let fd = (u.value(&p) - u.value(&m)) / (2.0 * h);
            assert!((fd - u.gradient(&x)[a]).abs() < 1e-6);
        }
        assert!(lap.abs() < 1e-5);
        assert!(u.value(&Point::new(2.0 / 3.0, 1.0 / 3.0, 0.1)).is_finite());
    }

    #[test]
    fn constant_dirichlet_data_is_reproduced() {
        let mesh = Arc::new(build_box_mesh(benchmark::domain(), [4, 4, 1]).unwrap());
        let one = |_: &Point| 1.0;
        let problem = EllipticProblem { dirichlet: Some(&one), ..Default::default() };
        let cfg = SolverConfig { rel_tol: 1e-12, ..Default::default() };
        let sol = solve_elliptic(mesh, &DGSpec::symmetric(1), &problem, &cfg).unwrap();
        assert!(sol.field.coeffs().iter().all(|c| (c - 1.0).abs() < 1e-9));
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let mesh = Arc::new(build_box_mesh(benchmark::domain(), [4, 4, 1]).unwrap());
        let sol = solve_elliptic(mesh, &DGSpec::symmetric(2), &EllipticProblem::default(), &SolverConfig::default())
            .unwrap();
        assert!(sol.field.coeffs().iter().all(|&c| c == 0.0));
        assert_eq!(sol.iterations, 0);
    }

    #[test]
    fn nonsymmetric_variants_use_bicgstab() {
        let mesh = Arc::new(build_box_mesh(benchmark::domain(), [4, 4, 1]).unwrap());
        let u = |x: &Point| 1.0 + x.x - 0.5 * x.y + 2.0 * x.z;
        let gu = |_: &Point| Vector::new(1.0, -0.5, 2.0);
        let problem = EllipticProblem { dirichlet: Some(&u), ..Default::default() };
        let cfg = SolverConfig { rel_tol: 1e-13, ..Default::default() };
        let spec = DGSpec::new(1, 1, 5.0, 2.0).unwrap();
        let sol = solve_elliptic(mesh, &spec, &problem, &cfg).unwrap();
        assert!(dg_energy_error(&sol.field, &u, &gu, 5.0, &Region::WholeDomain).unwrap() < 1e-8);
    }
}
