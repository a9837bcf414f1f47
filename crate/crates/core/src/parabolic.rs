//! Backward Euler time stepping for `u_t - Δu = f δ_Λ` with homogeneous
//! Dirichlet data.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_dg_norm, assemble_stiffness, assemble_volume_load, l2_project, mass_blocks, DGSpec};
use crate::basis::{make_basis, LagrangeBasis};
use crate::curve::{assemble_line_rhs, build_restrictions, Curve, LineRestriction};
use crate::elliptic::effective_config;
use crate::error::{invalid, Error, Result};
use crate::field::FieldFunction;
use crate::mesh::{Mesh, Point};
use crate::norms::{l2_error, Region};
use crate::quadrature::segment_quadrature;
use crate::solver::{solve_from, SolverConfig};
use crate::sparse::dot;

/// Uniform partition of `[0, T]` into `steps` intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub t_final: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t_final: f64, steps: usize) -> Result<Self> {
        let g = TimeGrid { t_final, steps };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(invalid(format!("final time must be positive, got {}", self.t_final)));
        }
        if self.steps == 0 {
            return Err(invalid("number of time steps must be at least 1"));
        }
        Ok(())
    }

    pub fn tau(&self) -> f64 {
        self.t_final / self.steps as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        if n == self.steps {
            self.t_final
        } else {
            n as f64 * self.tau()
        }
    }
}

/// Snapshots `u^0, ..., u^N` and their piecewise constant reconstruction
/// `u(t) = u^n` for `t^{n-1} < t <= t^n`.
#[derive(Debug, Clone)]
pub struct TimeSeries {
    grid: TimeGrid,
    snapshots: Vec<FieldFunction>,
}

impl TimeSeries {
    pub fn new(grid: TimeGrid, snapshots: Vec<FieldFunction>) -> Result<Self> {
        grid.validate()?;
        if snapshots.len() != grid.steps + 1 {
            return Err(invalid(format!("expected {} snapshots, got {}", grid.steps + 1, snapshots.len())));
        }
        let first = &snapshots[0];
        if snapshots
            .iter()
            .any(|s| !Arc::ptr_eq(s.mesh(), first.mesh()) || s.degree() != first.degree())
        {
            return Err(invalid("snapshots must share mesh and degree"));
        }
        Ok(TimeSeries { grid, snapshots })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn snapshots(&self) -> &[FieldFunction] {
        &self.snapshots
    }

    pub fn last(&self) -> &FieldFunction {
        self.snapshots.last().expect("at least one snapshot")
    }

    /// Index of the snapshot that represents time `t`.
    pub fn index_at(&self, t: f64) -> usize {
        if t <= 0.0 {
            return 0;
        }
        ((t / self.grid.tau()).ceil() as usize).clamp(1, self.grid.steps)
    }

    pub fn at(&self, t: f64) -> &FieldFunction {
        &self.snapshots[self.index_at(t)]
    }
}

/// Element-wise L2 projection of the initial datum.
pub fn project_initial(
    u0: &(dyn Fn(&Point) -> f64 + Sync),
    mesh: Arc<Mesh>,
    basis: &LagrangeBasis,
) -> Result<FieldFunction> {
    let c = l2_project(&mesh, basis, u0)?;
    FieldFunction::new(mesh, basis.clone(), c)
}

/// Line density `f(t, s)` of time and arclength.
pub type TimeLineDensity<'a> = &'a (dyn Fn(f64, f64) -> f64 + Sync);
/// Volume load `F(t, x)`.
pub type TimeVolumeLoad<'a> = &'a (dyn Fn(f64, &Point) -> f64 + Sync);

#[derive(Clone, Copy)]
pub struct LineSource<'a> {
    pub curve: &'a Curve,
    pub density: TimeLineDensity<'a>,
    /// When false the load vector is built once.
    pub time_dependent: bool,
    /// Polynomial degree in arclength assumed for quadrature.
    pub degree: usize,
}

#[derive(Clone, Copy, Default)]
pub struct ParabolicProblem<'a> {
    pub line: Option<LineSource<'a>>,
    pub volume_load: Option<TimeVolumeLoad<'a>>,
}

/// Per-step diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub time: f64,
    pub l2: f64,
    pub dg: f64,
    pub iterations: usize,
    /// `sum_{n<=m} |u^n - u^{n-1}|^2 + tau sum_{n<=m} |u^n - u^{n-1}|_DG^2 + tau |u^m|_DG^2`.
    pub stability: f64,
    /// `tau h^-2 (|u^0|^2 + tau sum_{n<=m} |f(t^n)|^2_{L2(curve)})`.
    pub stability_bound: f64,
}

impl StepRecord {
    /// Observed constant of the stability estimate at this step.
    pub fn stability_ratio(&self) -> f64 {
        if self.stability_bound > 0.0 {
            self.stability / self.stability_bound
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParabolicRun {
    pub series: TimeSeries,
    pub records: Vec<StepRecord>,
}

fn block_mul(blocks: &[DMatrix<f64>], x: &[f64]) -> Vec<f64> {
    let nb = blocks.first().map_or(0, |b| b.nrows());
    let mut y = vec![0.0; x.len()];
    y.par_chunks_mut(nb).zip(x.par_chunks(nb)).zip(blocks).for_each(|((out, xe), m)| {
        let r = m * DVector::from_column_slice(xe);
        out.copy_from_slice(r.as_slice());
    });
    y
}

/// `int_curve f(t, s)^2 ds` by Gauss quadrature on each segment.
fn line_norm_sq(line: &LineSource, t: f64) -> Result<f64> {
    let rule = segment_quadrature(2 * line.degree.max(1) + 2)?;
    let mut s = 0.0;
    for i in 0..line.curve.num_segments() {
        let len = line.curve.segment_length(i);
        for (q, w) in rule.iter() {
            let f = (line.density)(t, line.curve.arclength(i, q[0]));
            s += w * len * f * f;
        }
    }
    Ok(s)
}

struct LoadBuilder<'a> {
    mesh: &'a Mesh,
    basis: &'a LagrangeBasis,
    problem: &'a ParabolicProblem<'a>,
    restrictions: Vec<LineRestriction>,
    fixed_line: Option<Vec<f64>>,
}

impl<'a> LoadBuilder<'a> {
    fn new(mesh: &'a Mesh, basis: &'a LagrangeBasis, problem: &'a ParabolicProblem<'a>) -> Result<Self> {
        let mut b = LoadBuilder { mesh, basis, problem, restrictions: Vec::new(), fixed_line: None };
        if let Some(line) = &problem.line {
            b.restrictions = build_restrictions(line.curve, mesh)?;
            if !line.time_dependent {
                b.fixed_line = Some(b.line_load(line, 0.0)?);
            }
        }
        Ok(b)
    }

    fn line_load(&self, line: &LineSource, t: f64) -> Result<Vec<f64>> {
        let f = |s: f64| (line.density)(t, s);
        assemble_line_rhs(&self.restrictions, line.curve, &f, self.mesh, self.basis, line.degree)
    }

    fn at(&self, t: f64) -> Result<Vec<f64>> {
        let mut b = vec![0.0; self.mesh.num_elements() * self.basis.dim()];
        if let Some(line) = &self.problem.line {
            let v = match &self.fixed_line {
                Some(v) => v.clone(),
                None => self.line_load(line, t)?,
            };
            b.iter_mut().zip(v).for_each(|(a, x)| *a += x);
        }
        if let Some(load) = self.problem.volume_load {
            let f = |x: &Point| load(t, x);
            let v = assemble_volume_load(self.mesh, self.basis, &f, 2 * self.basis.degree() + 2)?;
            b.iter_mut().zip(v).for_each(|(a, x)| *a += x);
        }
        Ok(b)
    }
}

/// Solves `(M + tau A) u^n = M u^{n-1} + tau b(t^n)` for `n = 1..=N`.
///
/// `observer` sees every new snapshot; returning an error aborts the run.
pub fn run_backward_euler(
    spec: &DGSpec,
    problem: &ParabolicProblem,
    u0: FieldFunction,
    grid: &TimeGrid,
    config: &SolverConfig,
    observer: &mut dyn FnMut(&StepRecord, &FieldFunction) -> Result<()>,
) -> Result<ParabolicRun> {
    spec.validate()?;
    grid.validate()?;
    if u0.degree() != spec.k {
        return Err(invalid(format!("initial field has degree {}, spec has {}", u0.degree(), spec.k)));
    }
    let mesh = u0.mesh().clone();
    let basis = make_basis(spec.k)?;
    let nb = basis.dim();
    let tau = grid.tau();
    let masses = mass_blocks(&mesh, &basis)?;
    let mut system = assemble_stiffness(&mesh, spec, &basis)?;
    system.matrix.values_mut().iter_mut().for_each(|v| *v *= tau);
    system.matrix.add_block_diagonal(nb, &masses, 1.0)?;
    let dg = assemble_dg_norm(&mesh, spec.jump_weight(&mesh), &basis)?;
    let loads = LoadBuilder::new(&mesh, &basis, problem)?;
    let cfg = effective_config(spec, config);

    let dg_sq = |v: &[f64]| dot(v, &dg.matrix.mul_vec(v));
    let h = spec.mesh_size(&mesh);
    let u0_sq = dot(u0.coeffs(), &block_mul(&masses, u0.coeffs()));
    let mut line_acc = 0.0;
    let mut diff_acc = 0.0;

    let mut snapshots = vec![u0];
    let mut records = Vec::with_capacity(grid.steps);
    for n in 1..=grid.steps {
        let t = grid.time(n);
        let prev = snapshots[n - 1].coeffs();
        let wrap = |e: Error| Error::TimeStep { step: n, source: Box::new(e) };
        let mut rhs = block_mul(&masses, prev);
        let b = loads.at(t).map_err(wrap)?;
        rhs.iter_mut().zip(&b).for_each(|(r, x)| *r += tau * x);
        let out = solve_from(&system, &rhs, Some(prev), &cfg, &mut |_, _| {}).map_err(wrap)?;

        let delta: Vec<f64> = out.x.iter().zip(prev).map(|(a, b)| a - b).collect();
        diff_acc += dot(&delta, &block_mul(&masses, &delta)) + tau * dg_sq(&delta);
        if let Some(line) = &problem.line {
            line_acc += tau * line_norm_sq(line, t).map_err(wrap)?;
        }
        let dg_now = dg_sq(&out.x);
        let record = StepRecord {
            step: n,
            time: t,
            l2: dot(&out.x, &block_mul(&masses, &out.x)).max(0.0).sqrt(),
            dg: dg_now.max(0.0).sqrt(),
            iterations: out.iterations,
            stability: diff_acc + tau * dg_now,
            stability_bound: tau / (h * h) * (u0_sq + line_acc),
        };
        let field = FieldFunction::new(mesh.clone(), basis.clone(), out.x)?;
        observer(&record, &field)?;
        log::debug!("step {n}: t = {t:.4e}, {} iterations", record.iterations);
        records.push(record);
        snapshots.push(field);
    }
    Ok(ParabolicRun { series: TimeSeries::new(*grid, snapshots)?, records })
}

/// `(int_0^T |u_{h,tau}(t) - u(t)|^2_{L2} dt)^{1/2}` with two Gauss points
/// per time interval.
pub fn spacetime_l2_error(series: &TimeSeries, exact: &(dyn Fn(f64, &Point) -> f64 + Sync)) -> Result<f64> {
    let grid = series.grid();
    let tau = grid.tau();
    let g = 0.5 / 3f64.sqrt();
    let mut total = 0.0;
    for n in 1..=grid.steps {
        let mid = grid.time(n - 1) + 0.5 * tau;
        for t in [mid - g * tau, mid + g * tau] {
            let u = |x: &Point| exact(t, x);
            let e = l2_error(&series.snapshots[n], &u, &Region::WholeDomain)?;
            total += 0.5 * tau * e * e;
        }
    }
    Ok(total.sqrt())
}
