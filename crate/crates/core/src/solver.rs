//! Preconditioned Krylov solvers for the assembled systems.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::SparseSystem;
use crate::error::{invalid, Error, Result};
use crate::sparse::{dot, norm2, CsrMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Cg,
    Bicgstab,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preconditioner {
    None,
    Jacobi,
    BlockJacobi,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub method: Method,
    pub rel_tol: f64,
    /// Defaults to ten times the number of unknowns.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    pub preconditioner: Preconditioner,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { method: Method::Cg, rel_tol: 1e-10, max_iter: None, preconditioner: Preconditioner::BlockJacobi }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(invalid(format!("rel_tol must lie in (0, 1), got {}", self.rel_tol)));
        }
        if self.max_iter == Some(0) {
            return Err(invalid("max_iter must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// `||b - A x|| / ||b||` of the returned iterate.
    pub residual: f64,
}

enum Precond {
    Identity,
    Diagonal(Vec<f64>),
    Blocks { size: usize, inverses: Vec<DMatrix<f64>> },
}

impl Precond {
    fn build(kind: Preconditioner, system: &SparseSystem) -> Result<Self> {
        let a = &system.matrix;
        Ok(match kind {
            Preconditioner::None => Precond::Identity,
            Preconditioner::Jacobi => {
                let d = a.diagonal();
                if let Some(i) = d.iter().position(|&v| v == 0.0 || !v.is_finite()) {
                    return Err(Error::Breakdown { iteration: 0, reason: format!("zero or non-finite diagonal entry at row {i}") });
                }
                Precond::Diagonal(d.into_iter().map(|v| 1.0 / v).collect())
            }
            Preconditioner::BlockJacobi => {
                let size = system.block_size;
                if size == 0 || a.nrows() % size != 0 {
                    return Err(invalid("matrix size is not a multiple of the block size"));
                }
                let inverses = (0..a.nrows() / size)
                    .into_par_iter()
                    .map(|e| {
                        a.dense_block(e * size, e * size, size).try_inverse().ok_or_else(|| Error::Breakdown {
                            iteration: 0,
                            reason: format!("singular diagonal block {e}"),
                        })
                    })
                    .collect::<Result<_>>()?;
                Precond::Blocks { size, inverses }
            }
        })
    }

    fn apply(&self, r: &[f64], z: &mut [f64]) {
        match self {
            Precond::Identity => z.copy_from_slice(r),
            Precond::Diagonal(inv) => z.par_iter_mut().zip(r).zip(inv).for_each(|((z, r), d)| *z = r * d),
            Precond::Blocks { size, inverses } => {
                z.par_chunks_mut(*size).zip(r.par_chunks(*size)).zip(inverses).for_each(|((z, r), inv)| {
                    for i in 0..*size {
                        z[i] = (0..*size).map(|j| inv[(i, j)] * r[j]).sum();
                    }
                })
            }
        }
    }
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.par_iter_mut().zip(x).for_each(|(y, x)| *y += alpha * x);
}

/// Solves `A x = b` from a zero initial guess.
pub fn solve(system: &SparseSystem, b: &[f64], config: &SolverConfig) -> Result<SolveOutcome> {
    solve_from(system, b, None, config, &mut |_, _| {})
}

/// Solves `A x = b` from an optional initial guess, calling `monitor`
/// with every iterate.
pub fn solve_from(
    system: &SparseSystem,
    b: &[f64],
    guess: Option<&[f64]>,
    config: &SolverConfig,
    monitor: &mut dyn FnMut(usize, &[f64]),
) -> Result<SolveOutcome> {
    config.validate()?;
    let a = &system.matrix;
    let n = a.nrows();
    if a.ncols() != n || b.len() != n || guess.is_some_and(|g| g.len() != n) {
        return Err(invalid(format!("dimension mismatch: matrix {}x{}, rhs {}", n, a.ncols(), b.len())));
    }
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok(SolveOutcome { x: vec![0.0; n], iterations: 0, residual: 0.0 });
    }
    let max_iter = config.max_iter.unwrap_or(10 * n.max(1));
    let pc = Precond::build(config.preconditioner, system)?;
    let x0 = guess.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
    match config.method {
        Method::Cg => {
            let asym = a.asymmetry();
            if asym > 1e-10 {
                return Err(invalid(format!("CG needs a symmetric matrix (relative asymmetry {asym:.2e})")));
            }
            cg(a, b, x0, bnorm, config.rel_tol, max_iter, &pc, monitor)
        }
        Method::Bicgstab => bicgstab(a, b, x0, bnorm, config.rel_tol, max_iter, &pc, monitor),
    }
}

fn residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> Vec<f64> {
    let mut r = a.mul_vec(x);
    r.par_iter_mut().zip(b).for_each(|(r, b)| *r = b - *r);
    r
}

#[allow(clippy::too_many_arguments)]
fn cg(
    a: &CsrMatrix,
    b: &[f64],
    mut x: Vec<f64>,
    bnorm: f64,
    tol: f64,
    max_iter: usize,
    pc: &Precond,
    monitor: &mut dyn FnMut(usize, &[f64]),
) -> Result<SolveOutcome> {
    let n = b.len();
    let mut r = residual(a, &x, b);
    let mut rel = norm2(&r) / bnorm;
    if rel <= tol {
        return Ok(SolveOutcome { x, iterations: 0, residual: rel });
    }
    let mut z = vec![0.0; n];
    pc.apply(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        a.matvec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::Breakdown {
                iteration: it,
                reason: format!("p^T A p = {pap:e}; the matrix is not positive definite (penalty too small?)"),
            });
        }
        let alpha = rz / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        monitor(it, &x);
        rel = norm2(&r) / bnorm;
        if !rel.is_finite() {
            return Err(Error::Breakdown { iteration: it, reason: "non-finite residual".into() });
        }
        if rel <= tol {
            // Confirm against the true residual; recursion drift can hide error.
            let true_rel = norm2(&residual(a, &x, b)) / bnorm;
            if true_rel <= tol {
                return Ok(SolveOutcome { x, iterations: it, residual: true_rel });
            }
            r = residual(a, &x, b);
        }
        pc.apply(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.par_iter_mut().zip(&z).for_each(|(p, z)| *p = z + beta * *p);
    }
    let residual = norm2(&residual(a, &x, b)) / bnorm;
    Err(Error::NotConverged { iterations: max_iter, residual, best: x })
}

#[allow(clippy::too_many_arguments)]
fn bicgstab(
    a: &CsrMatrix,
    b: &[f64],
    mut x: Vec<f64>,
    bnorm: f64,
    tol: f64,
    max_iter: usize,
    pc: &Precond,
    monitor: &mut dyn FnMut(usize, &[f64]),
) -> Result<SolveOutcome> {
    let n = b.len();
    let mut r = residual(a, &x, b);
    let mut rel = norm2(&r) / bnorm;
    if rel <= tol {
        return Ok(SolveOutcome { x, iterations: 0, residual: rel });
    }
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut phat = vec![0.0; n];
    let mut shat = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut best = (rel, x.clone());
    for it in 1..=max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || !rho_new.is_finite() {
            return Err(Error::Breakdown { iteration: it, reason: "rho vanished".into() });
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        p.par_iter_mut()
            .zip(&r)
            .zip(&v)
            .for_each(|((p, r), v)| *p = r + beta * (*p - omega * v));
        pc.apply(&p, &mut phat);
        a.matvec(&phat, &mut v);
        let rv = dot(&r_hat, &v);
        if rv == 0.0 || !rv.is_finite() {
            return Err(Error::Breakdown { iteration: it, reason: "r_hat . v vanished".into() });
        }
        alpha = rho / rv;
        // r becomes s.
        axpy(-alpha, &v, &mut r);
        axpy(alpha, &phat, &mut x);
        if norm2(&r) / bnorm <= tol {
            let true_rel = norm2(&residual(a, &x, b)) / bnorm;
            if true_rel <= tol {
                monitor(it, &x);
                return Ok(SolveOutcome { x, iterations: it, residual: true_rel });
            }
        }
        pc.apply(&r, &mut shat);
        a.matvec(&shat, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &r) / tt } else { 0.0 };
        axpy(omega, &shat, &mut x);
        axpy(-omega, &t, &mut r);
        monitor(it, &x);
        rel = norm2(&r) / bnorm;
        if !rel.is_finite() {
            return Err(Error::Breakdown { iteration: it, reason: "non-finite residual".into() });
        }
        if rel < best.0 {
            best = (rel, x.clone());
        }
        if rel <= tol {
            let true_rel = norm2(&residual(a, &x, b)) / bnorm;
            if true_rel <= tol {
                return Ok(SolveOutcome { x, iterations: it, residual: true_rel });
            }
            r = residual(a, &x, b);
        }
        if omega == 0.0 {
            return Err(Error::Breakdown { iteration: it, reason: "omega vanished".into() });
        }
    }
    let residual = norm2(&residual(a, &best.1, b)) / bnorm;
    Err(Error::NotConverged { iterations: max_iter, residual, best: best.1 })
}
