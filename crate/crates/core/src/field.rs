//! Discrete fields in the broken polynomial space.

use std::sync::Arc;

use crate::basis::{AffineMap, LagrangeBasis};
use crate::error::{invalid, Result};
use crate::mesh::{Mesh, Point, Vector};

/// A piecewise polynomial with one coefficient block per element.
///
/// The coefficient vector uses the same element-block layout as the
/// assembled systems: entries `e * dim .. (e + 1) * dim` belong to element `e`.
#[derive(Debug, Clone)]
pub struct FieldFunction {
    mesh: Arc<Mesh>,
    basis: LagrangeBasis,
    coeffs: Vec<f64>,
}

impl FieldFunction {
    pub fn new(mesh: Arc<Mesh>, basis: LagrangeBasis, coeffs: Vec<f64>) -> Result<Self> {
        let expected = mesh.num_elements() * basis.dim();
        if coeffs.len() != expected {
            return Err(invalid(format!(
                "coefficient vector has length {}, expected {expected}",
                coeffs.len()
            )));
        }
        Ok(FieldFunction { mesh, basis, coeffs })
    }

    pub fn zeros(mesh: Arc<Mesh>, basis: LagrangeBasis) -> Self {
        let n = mesh.num_elements() * basis.dim();
        FieldFunction { mesh, basis, coeffs: vec![0.0; n] }
    }

    /// Element-wise nodal interpolant of `f`.
    pub fn interpolate(mesh: Arc<Mesh>, basis: LagrangeBasis, f: impl Fn(&Point) -> f64) -> Result<Self> {
        let mut coeffs = Vec::with_capacity(mesh.num_elements() * basis.dim());
        for e in 0..mesh.num_elements() {
            let map = AffineMap::new(&mesh.element_points(e))?;
            coeffs.extend(basis.interpolate(&map, &f));
        }
        Ok(FieldFunction { mesh, basis, coeffs })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn basis(&self) -> &LagrangeBasis {
        &self.basis
    }

    pub fn degree(&self) -> usize {
        self.basis.degree()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn block(&self, e: usize) -> &[f64] {
        let nb = self.basis.dim();
        &self.coeffs[e * nb..(e + 1) * nb]
    }

    /// Same mesh and basis, new coefficients.
    pub fn with_coeffs(&self, coeffs: Vec<f64>) -> Result<Self> {
        FieldFunction::new(self.mesh.clone(), self.basis.clone(), coeffs)
    }

    pub fn eval_reference(&self, e: usize, xi: &[f64; 3]) -> f64 {
        self.basis.values(xi).iter().zip(self.block(e)).map(|(p, c)| p * c).sum()
    }

    /// Value of the restriction to element `e` at `x` (which may lie outside `e`).
    pub fn eval_in(&self, e: usize, x: &Point) -> Result<f64> {
        let map = AffineMap::new(&self.mesh.element_points(e))?;
        Ok(self.eval_reference(e, &map.to_reference(x)))
    }

    pub fn grad_in(&self, e: usize, x: &Point) -> Result<Vector> {
        let map = AffineMap::new(&self.mesh.element_points(e))?;
        let xi = map.to_reference(x);
        let g = self.basis.gradients(&xi);
        let mut r = [0.0; 3];
        for (gi, c) in g.iter().zip(self.block(e)) {
            for a in 0..3 {
                r[a] += c * gi[a];
            }
        }
        Ok(map.push_gradient(&r))
    }

    /// Value at `x`, using whichever element the point is located in.
    pub fn eval(&self, x: &Point) -> Option<f64> {
        let e = self.mesh.locate(x)?;
        self.eval_in(e, x).ok()
    }

    /// Values at the four vertices of every element (discontinuous, for output).
    pub fn vertex_values(&self) -> Vec<[f64; 4]> {
        const VERTS: [[f64; 3]; 4] = [[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        (0..self.mesh.num_elements())
            .map(|e| VERTS.map(|xi| self.eval_reference(e, &xi)))
            .collect()
    }

    /// Element averages (value at the centroid for `k = 1`).
    pub fn element_means(&self) -> Vec<f64> {
        let c = [0.25; 3];
        (0..self.mesh.num_elements()).map(|e| self.eval_reference(e, &c)).collect()
    }

    pub fn axpy(&mut self, alpha: f64, other: &FieldFunction) {
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += alpha * b;
        }
    }
}
