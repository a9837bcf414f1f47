//! Interior penalty assembly over the broken polynomial space.
//!
//! The bilinear form is
//!
//! ```text
//! a(u, v) = sum_E int_E grad u . grad v
//!         - sum_e int_e {grad u} . n_e [v]
//!         + eps sum_e int_e {grad v} . n_e [u]
//!         + sum_e int_e sigma / h^beta [u] [v]
//! ```
//!
//! summed over interior and boundary faces. On a boundary face the jump and
//! the average are the one-sided trace. `h` is a single global length, see
//! [`LengthScale`].

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{AffineMap, LagrangeBasis};
use crate::error::{invalid, Result};
use crate::mesh::{FaceRef, Mesh, Point, Vector};
use crate::quadrature::{tet_quadrature, tri_quadrature, TriangleRule};
use crate::sparse::CsrMatrix;

/// Discretization parameters of the interior penalty form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DGSpec {
    /// Polynomial degree.
    pub k: usize,
    /// -1 symmetric, 0 incomplete, +1 nonsymmetric.
    pub epsilon: i32,
    pub sigma: f64,
    pub beta: f64,
    /// Length used for `h` in the penalty and in the energy norm.
    #[serde(default)]
    pub length: LengthScale,
}

/// Choice of the global mesh length `h` in `sigma / h^beta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LengthScale {
    /// Grid spacing of the underlying box grid.
    #[default]
    Spacing,
    /// Largest element diameter.
    Diameter,
}

/// Penalties below these values give an indefinite symmetric form on cubic
/// Kuhn meshes, indexed by degree, with `h` the grid spacing. Measured from
/// the smallest eigenvalue of the assembled matrix; multiply by `sqrt(3)`
/// for the diameter convention.
pub const COERCIVITY_FLOOR: [f64; 4] = [0.0, 3.5, 7.5, 14.0];

impl DGSpec {
    pub fn new(k: usize, epsilon: i32, sigma: f64, beta: f64) -> Result<Self> {
        let s = DGSpec { k, epsilon, sigma, beta, length: LengthScale::Spacing };
        s.validate()?;
        Ok(s)
    }

    /// Symmetric variant with `beta = 1` and the penalties used for the
    /// line-source experiments: 5 for `k = 1`, 12 for `k = 2`.
    pub fn symmetric(k: usize) -> Self {
        let sigma = match k {
            1 => 5.0,
            2 => 12.0,
            _ => 20.0,
        };
        DGSpec { k, epsilon: -1, sigma, beta: 1.0, length: LengthScale::Spacing }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k >= COERCIVITY_FLOOR.len() {
            return Err(invalid(format!("degree {} outside 1..={}", self.k, COERCIVITY_FLOOR.len() - 1)));
        }
        if !matches!(self.epsilon, -1..=1) {
            return Err(invalid(format!("epsilon must be -1, 0 or 1, got {}", self.epsilon)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(invalid(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.beta >= 1.0 && self.beta.is_finite()) {
            return Err(invalid(format!("beta must be >= 1, got {}", self.beta)));
        }
        let floor = match self.length {
            LengthScale::Spacing => COERCIVITY_FLOOR[self.k],
            LengthScale::Diameter => COERCIVITY_FLOOR[self.k] * 3f64.sqrt(),
        };
        if self.epsilon <= 0 && self.sigma < floor {
            return Err(invalid(format!(
                "sigma = {} is below the coercivity floor {floor:.3} for k = {} and epsilon = {}",
                self.sigma, self.k, self.epsilon
            )));
        }
        Ok(())
    }

    pub fn is_symmetric(&self) -> bool {
        self.epsilon == -1
    }

    pub fn mesh_size(&self, mesh: &Mesh) -> f64 {
        match self.length {
            LengthScale::Spacing => mesh.spacing(),
            LengthScale::Diameter => mesh.h(),
        }
    }

    /// `sigma / h^beta`.
    pub fn penalty(&self, mesh: &Mesh) -> f64 {
        self.sigma / self.mesh_size(mesh).powf(self.beta)
    }

    /// `sigma / h`, the jump weight of the energy norm.
    pub fn jump_weight(&self, mesh: &Mesh) -> f64 {
        self.sigma / self.mesh_size(mesh)
    }
}

/// Assembled matrix over element-blocked degrees of freedom.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    pub matrix: CsrMatrix,
    pub block_size: usize,
    pub num_elements: usize,
}

impl SparseSystem {
    pub fn num_dofs(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Which parts of the form to assemble.
#[derive(Debug, Clone, Copy)]
struct Terms {
    volume: bool,
    flux: bool,
    epsilon: f64,
    /// Jump penalty coefficient (already divided by `h^beta`); 0 disables it.
    penalty: f64,
}

/// Sorted list of elements coupled to each element (itself and face neighbours).
fn couplings(mesh: &Mesh) -> Vec<Vec<usize>> {
    (0..mesh.num_elements())
        .map(|e| {
            let mut n = vec![e];
            for f in mesh.element_faces(e) {
                if let FaceRef::Interior(i) = *f {
                    let face = &mesh.interior_faces()[i];
                    n.push(if face.left == e { face.right } else { face.left });
                }
            }
            n.sort_unstable();
            n
        })
        .collect()
}

/// Quadrature points and weights on a physical triangle.
pub(crate) fn face_points<'a>(rule: &'a TriangleRule, q: &[Point; 3], area: f64) -> impl Iterator<Item = (Point, f64)> + 'a {
    let (o, e1, e2) = (q[0], q[1] - q[0], q[2] - q[0]);
    rule.iter().map(move |(p, w)| (o + e1 * p[0] + e2 * p[1], w * 2.0 * area))
}

/// Basis values and physical gradients at a physical point.
pub(crate) fn eval_at(basis: &LagrangeBasis, map: &AffineMap, x: &Point, vals: &mut [f64], grads: &mut [Vector]) {
    let xi = map.to_reference(x);
    basis.eval(&xi, vals);
    let rg = basis.gradients(&xi);
    for (g, r) in grads.iter_mut().zip(&rg) {
        *g = map.push_gradient(r);
    }
}

fn assemble(mesh: &Mesh, basis: &LagrangeBasis, terms: Terms) -> Result<SparseSystem> {
    let nb = basis.dim();
    let k = basis.degree();
    let ne = mesh.num_elements();
    let coupled = couplings(mesh);

    let mut row_ptr = Vec::with_capacity(ne * nb + 1);
    row_ptr.push(0);
    let mut col_idx = Vec::new();
    for nbrs in &coupled {
        for _ in 0..nb {
            for &f in nbrs {
                col_idx.extend(f * nb..(f + 1) * nb);
            }
            row_ptr.push(col_idx.len());
        }
    }
    let mut values = vec![0.0; col_idx.len()];

    let vol_rule = tet_quadrature(2 * k)?;
    let face_rule = tri_quadrature(2 * k + 1)?;
    let ref_grads: Vec<Vec<[f64; 3]>> = vol_rule.points.iter().map(|xi| basis.gradients(xi)).collect();

    let mut slices: Vec<&mut [f64]> = Vec::with_capacity(ne);
    let mut rest = values.as_mut_slice();
    for nbrs in &coupled {
        let (head, tail) = rest.split_at_mut(nb * nbrs.len() * nb);
        slices.push(head);
        rest = tail;
    }

    slices.into_par_iter().enumerate().try_for_each(|(e, out)| -> Result<()> {
        let nbrs = &coupled[e];
        let mut blocks: Vec<DMatrix<f64>> = vec![DMatrix::zeros(nb, nb); nbrs.len()];
        let slot = |f: usize| nbrs.binary_search(&f).expect("coupled element");
        let me = slot(e);
        let map = AffineMap::new(&mesh.element_points(e))?;

        if terms.volume {
            let mut g = vec![Vector::zeros(); nb];
            let blk = &mut blocks[me];
            for ((_, w), rg) in vol_rule.iter().zip(&ref_grads) {
                for (gi, r) in g.iter_mut().zip(rg) {
                    *gi = map.push_gradient(r);
                }
                let wd = w * map.abs_det();
                for i in 0..nb {
                    for j in 0..nb {
                        blk[(i, j)] += wd * g[i].dot(&g[j]);
                    }
                }
            }
        }

        let (mut phi, mut gphi) = (vec![0.0; nb], vec![Vector::zeros(); nb]);
        let (mut psi, mut gpsi) = (vec![0.0; nb], vec![Vector::zeros(); nb]);
        for face in mesh.element_faces(e) {
            match *face {
                FaceRef::Interior(fi) => {
                    let f = &mesh.interior_faces()[fi];
                    let (other, n) = if f.left == e { (f.right, f.normal) } else { (f.left, -f.normal) };
                    let omap = AffineMap::new(&mesh.element_points(other))?;
                    let so = slot(other);
                    for (x, w) in face_points(&face_rule, &mesh.face_points(&f.vertices), f.area) {
                        eval_at(basis, &map, &x, &mut phi, &mut gphi);
                        eval_at(basis, &omap, &x, &mut psi, &mut gpsi);
                        for i in 0..nb {
                            for j in 0..nb {
                                let mut own = 0.0;
                                let mut cross = 0.0;
                                if terms.flux {
                                    own += -0.5 * gphi[j].dot(&n) * phi[i] + terms.epsilon * 0.5 * gphi[i].dot(&n) * phi[j];
                                    cross += -0.5 * gpsi[j].dot(&n) * phi[i] - terms.epsilon * 0.5 * gphi[i].dot(&n) * psi[j];
                                }
                                own += terms.penalty * phi[i] * phi[j];
                                cross -= terms.penalty * phi[i] * psi[j];
                                blocks[me][(i, j)] += w * own;
                                blocks[so][(i, j)] += w * cross;
                            }
                        }
                    }
                }
                FaceRef::Boundary(fi) => {
                    let f = &mesh.boundary_faces()[fi];
                    let n = f.normal;
                    for (x, w) in face_points(&face_rule, &mesh.face_points(&f.vertices), f.area) {
                        eval_at(basis, &map, &x, &mut phi, &mut gphi);
                        for i in 0..nb {
                            for j in 0..nb {
                                let mut v = terms.penalty * phi[i] * phi[j];
                                if terms.flux {
                                    v += -gphi[j].dot(&n) * phi[i] + terms.epsilon * gphi[i].dot(&n) * phi[j];
                                }
                                blocks[me][(i, j)] += w * v;
                            }
                        }
                    }
                }
            }
        }

        let width = nbrs.len() * nb;
        for i in 0..nb {
            for (s, blk) in blocks.iter().enumerate() {
                for j in 0..nb {
                    out[i * width + s * nb + j] = blk[(i, j)];
                }
            }
        }
        Ok(())
    })?;

    Ok(SparseSystem {
        matrix: CsrMatrix::new(ne * nb, ne * nb, row_ptr, col_idx, values)?,
        block_size: nb,
        num_elements: ne,
    })
}

fn check_degree(spec: &DGSpec, basis: &LagrangeBasis) -> Result<()> {
    spec.validate()?;
    if spec.k != basis.degree() {
        return Err(invalid(format!("spec degree {} does not match basis degree {}", spec.k, basis.degree())));
    }
    Ok(())
}

/// Stiffness matrix of the interior penalty form.
pub fn assemble_stiffness(mesh: &Mesh, spec: &DGSpec, basis: &LagrangeBasis) -> Result<SparseSystem> {
    check_degree(spec, basis)?;
    let terms = Terms { volume: true, flux: true, epsilon: spec.epsilon as f64, penalty: spec.penalty(mesh) };
    assemble(mesh, basis, terms)
}

/// Only the jump-penalty part `sum_e int_e sigma / h^beta [u] [v]`.
pub fn assemble_penalty(mesh: &Mesh, spec: &DGSpec, basis: &LagrangeBasis) -> Result<SparseSystem> {
    check_degree(spec, basis)?;
    let terms = Terms { volume: false, flux: false, epsilon: 0.0, penalty: spec.penalty(mesh) };
    assemble(mesh, basis, terms)
}

/// Matrix of the squared energy norm
/// `sum_E |grad v|^2_E + sum_e w |[v]|^2_e` with jump weight `w = sigma / h`.
pub fn assemble_dg_norm(mesh: &Mesh, jump_weight: f64, basis: &LagrangeBasis) -> Result<SparseSystem> {
    let terms = Terms { volume: true, flux: false, epsilon: 0.0, penalty: jump_weight };
    assemble(mesh, basis, terms)
}

/// Element mass matrices `int_E phi_i phi_j`.
pub fn mass_blocks(mesh: &Mesh, basis: &LagrangeBasis) -> Result<Vec<DMatrix<f64>>> {
    let reference = basis.reference_mass()?;
    (0..mesh.num_elements())
        .map(|e| Ok(&reference * AffineMap::new(&mesh.element_points(e))?.abs_det()))
        .collect()
}

/// Block-diagonal mass matrix of the broken space.
pub fn assemble_mass(mesh: &Mesh, basis: &LagrangeBasis) -> Result<SparseSystem> {
    let nb = basis.dim();
    let ne = mesh.num_elements();
    let blocks = mass_blocks(mesh, basis)?;
    let mut row_ptr = vec![0];
    let mut col_idx = Vec::with_capacity(ne * nb * nb);
    let mut values = Vec::with_capacity(ne * nb * nb);
    for (e, b) in blocks.iter().enumerate() {
        for i in 0..nb {
            for j in 0..nb {
                col_idx.push(e * nb + j);
                values.push(b[(i, j)]);
            }
            row_ptr.push(col_idx.len());
        }
    }
    Ok(SparseSystem { matrix: CsrMatrix::new(ne * nb, ne * nb, row_ptr, col_idx, values)?, block_size: nb, num_elements: ne })
}

/// Weak (Nitsche) imposition of Dirichlet data `g`:
/// `sum_{e on boundary} int_e (eps grad v . n + sigma / h^beta v) g`.
pub fn assemble_dirichlet_rhs(
    mesh: &Mesh,
    spec: &DGSpec,
    basis: &LagrangeBasis,
    g: &(dyn Fn(&Point) -> f64 + Sync),
) -> Result<Vec<f64>> {
    check_degree(spec, basis)?;
    let nb = basis.dim();
    let rule = tri_quadrature(2 * spec.k + 2)?;
    let pen = spec.penalty(mesh);
    let eps = spec.epsilon as f64;
    let contributions: Vec<(usize, Vec<f64>)> = mesh
        .boundary_faces()
        .par_iter()
        .map(|f| {
            let map = AffineMap::new(&mesh.element_points(f.element))?;
            let (mut phi, mut gphi) = (vec![0.0; nb], vec![Vector::zeros(); nb]);
            let mut local = vec![0.0; nb];
            for (x, w) in face_points(&rule, &mesh.face_points(&f.vertices), f.area) {
                let gx = g(&x);
                if gx == 0.0 {
                    continue;
                }
                eval_at(basis, &map, &x, &mut phi, &mut gphi);
                for i in 0..nb {
                    local[i] += w * gx * (eps * gphi[i].dot(&f.normal) + pen * phi[i]);
                }
            }
            Ok((f.element, local))
        })
        .collect::<Result<_>>()?;
    let mut rhs = vec![0.0; mesh.num_elements() * nb];
    for (e, local) in contributions {
        for (r, l) in rhs[e * nb..(e + 1) * nb].iter_mut().zip(local) {
            *r += l;
        }
    }
    Ok(rhs)
}

/// Volume load `int_Omega F v`. Used for manufactured smooth solutions.
pub fn assemble_volume_load(
    mesh: &Mesh,
    basis: &LagrangeBasis,
    load: &(dyn Fn(&Point) -> f64 + Sync),
    exactness: usize,
) -> Result<Vec<f64>> {
    let nb = basis.dim();
    let rule = tet_quadrature(exactness)?;
    let tables: Vec<Vec<f64>> = rule.points.iter().map(|xi| basis.values(xi)).collect();
    let mut rhs = vec![0.0; mesh.num_elements() * nb];
    rhs.par_chunks_mut(nb).enumerate().try_for_each(|(e, out)| -> Result<()> {
        let map = AffineMap::new(&mesh.element_points(e))?;
        for ((xi, w), phi) in rule.iter().zip(&tables) {
            let fw = w * map.abs_det() * load(&map.to_physical(xi));
            for (o, p) in out.iter_mut().zip(phi) {
                *o += fw * p;
            }
        }
        Ok(())
    })?;
    Ok(rhs)
}

/// L2 projection of `f` onto the broken space, element by element.
///
/// The load integrals use a rule of exactness `2k + 6` since `f` is
/// usually not a polynomial.
pub fn l2_project(mesh: &Mesh, basis: &LagrangeBasis, f: &(dyn Fn(&Point) -> f64 + Sync)) -> Result<Vec<f64>> {
    let nb = basis.dim();
    let mut rhs = assemble_volume_load(mesh, basis, f, 2 * basis.degree() + 6)?;
    let reference = basis.reference_mass()?;
    let chol = reference
        .cholesky()
        .ok_or_else(|| crate::error::Error::Assembly("reference mass matrix is not SPD".into()))?;
    rhs.par_chunks_mut(nb).enumerate().try_for_each(|(e, block)| -> Result<()> {
        let det = AffineMap::new(&mesh.element_points(e))?.abs_det();
        let x = chol.solve(&nalgebra::DVector::from_column_slice(block)) / det;
        block.copy_from_slice(x.as_slice());
        Ok(())
    })?;
    Ok(rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::make_basis;
    use crate::mesh::{build_box_mesh, BoxDomain};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn section7() -> BoxDomain {
        BoxDomain::new([0.0; 3], [1.0, 1.0, 0.25]).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(DGSpec::new(1, -1, 5.0, 1.0).is_ok());
        assert!(DGSpec::new(1, 2, 5.0, 1.0).is_err());
        assert!(DGSpec::new(1, -1, 0.5, 1.0).is_err());
        assert!(DGSpec::new(1, 1, 0.5, 2.0).is_ok());
        assert!(DGSpec::new(1, -1, 5.0, 0.5).is_err());
        assert!(DGSpec::new(0, -1, 5.0, 1.0).is_err());
        assert_eq!(DGSpec::symmetric(2).sigma, 12.0);
    }

    #[test]
    fn symmetric_variant_gives_symmetric_matrix() {
        let mesh = build_box_mesh(section7(), [2, 2, 1]).unwrap();
        for k in 1..=2 {
            let basis = make_basis(k).unwrap();
            let a = assemble_stiffness(&mesh, &DGSpec::symmetric(k), &basis).unwrap();
            assert!(a.matrix.asymmetry() < 1e-12);
            assert!(a.matrix.diagonal().iter().all(|&d| d > 0.0));
            let nonsym = assemble_stiffness(&mesh, &DGSpec::new(k, 1, 5.0, 2.0).unwrap(), &basis).unwrap();
            assert!(nonsym.matrix.asymmetry() > 1e-3);
        }
    }

    #[test]
    fn constants_only_see_the_boundary() {
        let mesh = build_box_mesh(BoxDomain::unit_cube(), [3, 3, 3]).unwrap();
        let basis = make_basis(1).unwrap();
        let a = assemble_stiffness(&mesh, &DGSpec::symmetric(1), &basis).unwrap();
        let ones = vec![1.0; a.num_dofs()];
        let r = a.matrix.mul_vec(&ones);
        let scale = a.matrix.max_abs();
        let mut interior_elements = 0;
        for e in 0..mesh.num_elements() {
            let touches = mesh.element_faces(e).iter().any(|f| matches!(f, FaceRef::Boundary(_)));
            if !touches {
                interior_elements += 1;
                for i in 0..4 {
                    assert!(r[e * 4 + i].abs() < 1e-12 * scale);
                }
            }
        }
        assert!(interior_elements > 0);
    }

    #[test]
    fn penalty_scales_linearly() {
        let mesh = build_box_mesh(section7(), [2, 2, 1]).unwrap();
        let basis = make_basis(1).unwrap();
        let s1 = DGSpec::symmetric(1);
        let s2 = DGSpec { sigma: 2.0 * s1.sigma, ..s1 };
        let a1 = assemble_stiffness(&mesh, &s1, &basis).unwrap();
        let a2 = assemble_stiffness(&mesh, &s2, &basis).unwrap();
        let p = assemble_penalty(&mesh, &s1, &basis).unwrap();
        let diff = a2.matrix.add_same_pattern(-1.0, &a1.matrix).unwrap();
        let check = diff.add_same_pattern(-1.0, &p.matrix).unwrap();
        assert!(check.max_abs() < 1e-12 * a1.matrix.max_abs());
    }

    #[test]
    fn mass_matrix_properties() {
        let mesh = build_box_mesh(section7(), [4, 4, 1]).unwrap();
        let basis = make_basis(2).unwrap();
        let m = assemble_mass(&mesh, &basis).unwrap();
        let ones = vec![1.0; m.num_dofs()];
        let q = crate::sparse::dot(&ones, &m.matrix.mul_vec(&ones));
        assert!((q - 0.25).abs() < 1e-12);
        for b in mass_blocks(&mesh, &basis).unwrap() {
            assert!(b.cholesky().is_some());
        }
    }

    #[test]
    fn p1_mass_matches_closed_form() {
        // (|E| / 20) (I + ones) on the reference tet.
        let basis = make_basis(1).unwrap();
        let m = basis.reference_mass().unwrap() * 6.0;
        let vol = 1.0 / 6.0;
        for i in 0..4 {
            for j in 0..4 {
                let exact = vol / 20.0 * if i == j { 2.0 } else { 1.0 };
                assert!((m[(i, j)] / 6.0 - exact).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn coercivity_probe() {
        let mesh = build_box_mesh(section7(), [2, 2, 1]).unwrap();
        let basis = make_basis(1).unwrap();
        let spec = DGSpec::symmetric(1);
        let a = assemble_stiffness(&mesh, &spec, &basis).unwrap();
        let norm = assemble_dg_norm(&mesh, spec.jump_weight(&mesh), &basis).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let w: Vec<f64> = (0..a.num_dofs()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let aw = crate::sparse::dot(&w, &a.matrix.mul_vec(&w));
            let nw = crate::sparse::dot(&w, &norm.matrix.mul_vec(&w));
            assert!(aw >= 0.5 * nw, "{aw} < 0.5 * {nw}");
        }
    }

    fn smallest_eigenvalue(s: &SparseSystem) -> f64 {
        let n = s.num_dofs();
        let a = s.matrix.dense_block(0, 0, n);
        a.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn default_penalties_are_positive_definite_on_cubic_cells() {
        let mesh = build_box_mesh(section7(), [4, 4, 1]).unwrap();
        for k in 1..=3 {
            let spec = DGSpec::symmetric(k);
            let a = assemble_stiffness(&mesh, &spec, &make_basis(k).unwrap()).unwrap();
            assert!(smallest_eigenvalue(&a) > 0.0, "k = {k}");
        }
        // The same sigma over the element diameter gives an indefinite form,
        // and validation rejects it.
        for (k, sigma) in [(1, 5.0), (2, 12.0)] {
            let terms = Terms { volume: true, flux: true, epsilon: -1.0, penalty: sigma / mesh.h() };
            let a = assemble(&mesh, &make_basis(k).unwrap(), terms).unwrap();
            assert!(smallest_eigenvalue(&a) < 0.0, "k = {k}");
            let spec = DGSpec { length: LengthScale::Diameter, ..DGSpec::symmetric(k) };
            assert!(spec.validate().is_err());
        }
    }

    #[test]
    fn floor_is_below_the_definiteness_threshold() {
        let mesh = build_box_mesh(section7(), [4, 4, 1]).unwrap();
        for k in 1..=2 {
            let basis = make_basis(k).unwrap();
            let mut spec = DGSpec::symmetric(k);
            spec.sigma = COERCIVITY_FLOOR[k] * 0.95;
            let terms = Terms { volume: true, flux: true, epsilon: -1.0, penalty: spec.penalty(&mesh) };
            let a = assemble(&mesh, &basis, terms).unwrap();
            assert!(smallest_eigenvalue(&a) < 0.0, "k = {k}");
        }
    }

    #[test]
    fn zero_dirichlet_data_gives_zero_vector() {
        let mesh = build_box_mesh(section7(), [2, 2, 1]).unwrap();
        let basis = make_basis(2).unwrap();
        let r = assemble_dirichlet_rhs(&mesh, &DGSpec::symmetric(2), &basis, &|_| 0.0).unwrap();
        assert!(r.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn projection_reproduces_polynomials() {
        let mesh = build_box_mesh(section7(), [2, 2, 1]).unwrap();
        let basis = make_basis(2).unwrap();
        let f = |x: &Point| 1.0 - x.x * x.z + 3.0 * x.y * x.y;
        let proj = l2_project(&mesh, &basis, &f).unwrap();
        let interp = crate::field::FieldFunction::interpolate(std::sync::Arc::new(mesh), basis, f).unwrap();
        for (a, b) in proj.iter().zip(interp.coeffs()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
