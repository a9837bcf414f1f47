//! Error norms: global and subdomain L2, broken energy, and norms weighted
//! by a power of the distance to the source curve.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::face_points;
use crate::basis::AffineMap;
use crate::curve::Curve;
use crate::error::{invalid, Result};
use crate::field::FieldFunction;
use crate::mesh::{BoxDomain, Mesh, Point, Vector};
use crate::quadrature::{tet_quadrature, tri_quadrature};

pub type ScalarFn<'a> = &'a (dyn Fn(&Point) -> f64 + Sync);
pub type GradientFn<'a> = &'a (dyn Fn(&Point) -> Vector + Sync);

/// Where an error is measured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Region {
    WholeDomain,
    Box(BoxDomain),
}

impl Region {
    /// Checks that the region lies in the domain with faces on grid planes.
    pub fn check(&self, mesh: &Mesh) -> Result<()> {
        let Region::Box(b) = self else { return Ok(()) };
        b.validate()?;
        let d = mesh.domain();
        let dx = mesh.cell_size();
        if !d.contains_box(b, 1e-12) {
            return Err(invalid(format!("region {b:?} is not inside the domain")));
        }
        for a in 0..3 {
            for v in [b.lo[a], b.hi[a]] {
                let t = (v - d.lo[a]) / dx[a];
                if (t - t.round()).abs() > 1e-9 {
                    return Err(invalid(format!(
                        "region face at {v} on axis {a} is not aligned with the mesh (cell size {})",
                        dx[a]
                    )));
                }
            }
        }
        Ok(())
    }

    fn contains_element(&self, mesh: &Mesh, e: usize) -> bool {
        match self {
            Region::WholeDomain => true,
            Region::Box(b) => {
                let c = mesh.centroid(e);
                (0..3).all(|a| c[a] > b.lo[a] && c[a] < b.hi[a])
            }
        }
    }

    /// Interior faces count when their centroid is strictly inside the box;
    /// boundary faces of the domain when it is inside the closed box.
    fn contains_face(&self, c: &Point, on_boundary: bool, tol: f64) -> bool {
        match self {
            Region::WholeDomain => true,
            Region::Box(b) => {
                if on_boundary {
                    b.contains(c, tol)
                } else {
                    (0..3).all(|a| c[a] > b.lo[a] + tol && c[a] < b.hi[a] - tol)
                }
            }
        }
    }
}

fn centroid3(p: &[Point; 3]) -> Point {
    Point::from((p[0].coords + p[1].coords + p[2].coords) / 3.0)
}

/// Sums per-element contributions in element order.
fn sum_elements(mesh: &Mesh, region: &Region, f: impl Fn(usize, &AffineMap) -> Result<f64> + Sync) -> Result<f64> {
    let parts: Vec<f64> = (0..mesh.num_elements())
        .into_par_iter()
        .map(|e| {
            if !region.contains_element(mesh, e) {
                return Ok(0.0);
            }
            f(e, &AffineMap::new(&mesh.element_points(e))?)
        })
        .collect::<Result<_>>()?;
    Ok(parts.iter().sum())
}

/// `sum_e int_e weight [u_h - u]^2` over the faces selected by `region`.
fn sum_faces(
    mesh: &Mesh,
    region: &Region,
    exactness: usize,
    weight: &(dyn Fn(&Point) -> f64 + Sync),
    field: &FieldFunction,
    exact: Option<ScalarFn>,
) -> Result<f64> {
    let rule = tri_quadrature(exactness)?;
    let tol = 1e-12 * mesh.h();
    let interior: Vec<f64> = mesh
        .interior_faces()
        .par_iter()
        .map(|f| {
            let pts = mesh.face_points(&f.vertices);
            if !region.contains_face(&centroid3(&pts), false, tol) {
                return Ok(0.0);
            }
            let ml = AffineMap::new(&mesh.element_points(f.left))?;
            let mr = AffineMap::new(&mesh.element_points(f.right))?;
            let mut s = 0.0;
            for (x, w) in face_points(&rule, &pts, f.area) {
                // The exact solution is continuous, so it drops out of interior jumps.
                let j = field.eval_reference(f.left, &ml.to_reference(&x))
                    - field.eval_reference(f.right, &mr.to_reference(&x));
                s += w * weight(&x) * j * j;
            }
            Ok(s)
        })
        .collect::<Result<_>>()?;
    let boundary: Vec<f64> = mesh
        .boundary_faces()
        .par_iter()
        .map(|f| {
            let pts = mesh.face_points(&f.vertices);
            if !region.contains_face(&centroid3(&pts), true, tol) {
                return Ok(0.0);
            }
            let m = AffineMap::new(&mesh.element_points(f.element))?;
            let mut s = 0.0;
            for (x, w) in face_points(&rule, &pts, f.area) {
                let j = field.eval_reference(f.element, &m.to_reference(&x)) - exact.map_or(0.0, |u| u(&x));
                s += w * weight(&x) * j * j;
            }
            Ok(s)
        })
        .collect::<Result<_>>()?;
    Ok(interior.iter().sum::<f64>() + boundary.iter().sum::<f64>())
}

fn check_field(field: &FieldFunction, region: &Region) -> Result<()> {
    region.check(field.mesh())
}

/// `(int_region w(x) (u_h - u)^2)^{1/2}` over the elements in `region`.
fn weighted_l2(field: &FieldFunction, exact: Option<ScalarFn>, region: &Region, weight: ScalarFn) -> Result<f64> {
    check_field(field, region)?;
    let mesh = field.mesh();
    let rule = tet_quadrature(2 * field.degree() + 2)?;
    let basis = field.basis();
    let tables: Vec<Vec<f64>> = rule.points.iter().map(|xi| basis.values(xi)).collect();
    let s = sum_elements(mesh, region, |e, map| {
        let block = field.block(e);
        let mut s = 0.0;
        for ((xi, w), phi) in rule.iter().zip(&tables) {
            let x = map.to_physical(xi);
            let uh: f64 = phi.iter().zip(block).map(|(p, c)| p * c).sum();
            let d = uh - exact.map_or(0.0, |u| u(&x));
            s += w * weight(&x) * d * d;
        }
        Ok(s * map.abs_det())
    })?;
    Ok(s.sqrt())
}

/// Squared broken gradient error `sum_E int_E w(x) |grad(u_h - u)|^2`.
fn weighted_grad_sq(field: &FieldFunction, grad: Option<GradientFn>, region: &Region, weight: ScalarFn) -> Result<f64> {
    let mesh = field.mesh();
    let rule = tet_quadrature(2 * field.degree() + 2)?;
    let basis = field.basis();
    let tables: Vec<Vec<[f64; 3]>> = rule.points.iter().map(|xi| basis.gradients(xi)).collect();
    sum_elements(mesh, region, |e, map| {
        let block = field.block(e);
        let mut s = 0.0;
        for ((xi, w), rg) in rule.iter().zip(&tables) {
            let x = map.to_physical(xi);
            let mut r = [0.0; 3];
            for (g, c) in rg.iter().zip(block) {
                for a in 0..3 {
                    r[a] += c * g[a];
                }
            }
            let d = map.push_gradient(&r) - grad.map_or(Vector::zeros(), |g| g(&x));
            s += w * weight(&x) * d.norm_squared();
        }
        Ok(s * map.abs_det())
    })
}

/// L2 norm of `u_h - u` over `region`.
pub fn l2_error(field: &FieldFunction, exact: ScalarFn, region: &Region) -> Result<f64> {
    weighted_l2(field, Some(exact), region, &|_| 1.0)
}

pub fn l2_norm(field: &FieldFunction, region: &Region) -> Result<f64> {
    weighted_l2(field, None, region, &|_| 1.0)
}

/// Broken energy error
/// `(sum_E |grad(u_h - u)|^2 + sum_e w |[u_h - u]|^2)^{1/2}`, `w = sigma / h`,
/// restricted to `region`. The exact solution is assumed continuous, so
/// its jump across interior faces vanishes; on boundary faces the trace
/// error `u_h - u` is used.
pub fn dg_energy_error(
    field: &FieldFunction,
    exact: ScalarFn,
    grad: GradientFn,
    jump_weight: f64,
    region: &Region,
) -> Result<f64> {
    check_field(field, region)?;
    let vol = weighted_grad_sq(field, Some(grad), region, &|_| 1.0)?;
    let jumps = sum_faces(field.mesh(), region, 2 * field.degree() + 2, &|_| 1.0, field, Some(exact))?;
    Ok((vol + jump_weight * jumps).sqrt())
}

/// Energy norm of a discrete field over the whole domain.
pub fn dg_norm(field: &FieldFunction, jump_weight: f64) -> Result<f64> {
    let region = Region::WholeDomain;
    let vol = weighted_grad_sq(field, None, &region, &|_| 1.0)?;
    let jumps = sum_faces(field.mesh(), &region, 2 * field.degree(), &|_| 1.0, field, None)?;
    Ok((vol + jump_weight * jumps).sqrt())
}

fn check_alpha(alpha: f64, lo: f64, hi: f64, what: &str) -> Result<()> {
    if !(alpha > lo && alpha < hi) {
        return Err(invalid(format!("{what}: alpha must lie in ({lo}, {hi}), got {alpha}")));
    }
    Ok(())
}

/// `(int |u_h - u|^2 d^{2 alpha})^{1/2}`, `d` the distance to the curve,
/// `alpha` in `(-1, 1)`. Pass `exact = None` for the norm of `u_h`.
pub fn weighted_l2_norm(
    field: &FieldFunction,
    exact: Option<ScalarFn>,
    alpha: f64,
    curve: &Curve,
    region: &Region,
) -> Result<f64> {
    check_alpha(alpha, -1.0, 1.0, "weighted L2 norm")?;
    if alpha == 0.0 {
        return weighted_l2(field, exact, region, &|_| 1.0);
    }
    weighted_l2(field, exact, region, &|x| curve.distance(x).powf(2.0 * alpha))
}

/// `(sum_E int_E |grad_h(u_h - u)|^2 d^{2 alpha})^{1/2}`, `alpha` in `(-1, 1)`.
pub fn weighted_gradient_norm(
    field: &FieldFunction,
    grad: Option<GradientFn>,
    alpha: f64,
    curve: &Curve,
    region: &Region,
) -> Result<f64> {
    check_alpha(alpha, -1.0, 1.0, "weighted gradient norm")?;
    check_field(field, region)?;
    Ok(weighted_grad_sq(field, grad, region, &|x| curve.distance(x).powf(2.0 * alpha))?.sqrt())
}

/// Weighted energy norm
/// `(sum_E |d^alpha grad v|^2_E + sum_e w |d^alpha [v]|^2_e)^{1/2}`
/// of `v = u_h - u` (or of `u_h` when `exact` is `None`), `alpha` in `(0, 1)`.
pub fn weighted_dg_norm(
    field: &FieldFunction,
    exact: Option<(ScalarFn, GradientFn)>,
    alpha: f64,
    jump_weight: f64,
    curve: &Curve,
) -> Result<f64> {
    check_alpha(alpha, 0.0, 1.0, "weighted energy norm")?;
    let region = Region::WholeDomain;
    let weight = |x: &Point| curve.distance(x).powf(2.0 * alpha);
    let vol = weighted_grad_sq(field, exact.map(|e| e.1), &region, &weight)?;
    let jumps = sum_faces(field.mesh(), &region, 2 * field.degree() + 2, &weight, field, exact.map(|e| e.0))?;
    Ok((vol + jump_weight * jumps).sqrt())
}

/// Observed orders `log(e_i / e_{i+1}) / log(h_i / h_{i+1})`.
pub fn convergence_rates(errors: &[f64], hs: &[f64]) -> Result<Vec<f64>> {
    if errors.len() != hs.len() || errors.len() < 2 {
        return Err(invalid("need matching error and mesh-size lists with at least two entries"));
    }
    if let Some(e) = errors.iter().find(|&&e| !(e > 0.0 && e.is_finite())) {
        return Err(invalid(format!("errors must be positive, got {e}")));
    }
    if hs.windows(2).any(|w| !(w[1] < w[0]) || w[1] <= 0.0) {
        return Err(invalid("mesh sizes must be positive and strictly decreasing"));
    }
    Ok(errors
        .windows(2)
        .zip(hs.windows(2))
        .map(|(e, h)| (e[0] / e[1]).ln() / (h[0] / h[1]).ln())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::make_basis;
    use crate::mesh::build_box_mesh;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn section7() -> BoxDomain {
        BoxDomain::new([0.0; 3], [1.0, 1.0, 0.25]).unwrap()
    }

    fn c1() -> Region {
        Region::Box(BoxDomain::new([0.25, 0.5, 0.0], [0.5, 0.75, 0.25]).unwrap())
    }

    fn line() -> Curve {
        Curve::straight(Point::new(2.0 / 3.0, 1.0 / 3.0, 0.0), Point::new(2.0 / 3.0, 1.0 / 3.0, 0.25)).unwrap()
    }

    fn mesh(n: [usize; 3]) -> Arc<Mesh> {
        Arc::new(build_box_mesh(section7(), n).unwrap())
    }

    #[test]
    fn rates() {
        assert_eq!(convergence_rates(&[4.0, 1.0], &[2.0, 1.0]).unwrap(), vec![2.0]);
        let r = convergence_rates(&[1.28e-4, 3.00e-5], &[0.25, 0.125]).unwrap();
        assert!((r[0] - 2.09).abs() < 0.005);
        let r = convergence_rates(&[7.48e-7, 1.11e-7], &[0.125, 0.0625]).unwrap();
        assert!((r[0] - 2.75).abs() < 0.005);
        assert!(convergence_rates(&[1.0, 0.0], &[2.0, 1.0]).is_err());
        assert!(convergence_rates(&[1.0, 0.5], &[1.0, 1.0]).is_err());
        assert!(convergence_rates(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn region_alignment() {
        let m = mesh([4, 4, 1]);
        assert!(c1().check(&m).is_ok());
        let bad = Region::Box(BoxDomain::new([0.3, 0.5, 0.0], [0.5, 0.75, 0.25]).unwrap());
        assert!(bad.check(&m).is_err());
        let outside = Region::Box(BoxDomain::new([0.5, 0.5, 0.0], [1.25, 0.75, 0.25]).unwrap());
        assert!(outside.check(&m).is_err());
    }

    #[test]
    fn interpolated_polynomials_have_zero_error() {
        let m = mesh([4, 4, 1]);
        for k in 1..=2 {
            let u = move |x: &Point| if k == 1 { 1.0 + x.x - 2.0 * x.z } else { x.x * x.y + x.z * x.z - x.y };
            let gu = move |x: &Point| {
                if k == 1 {
                    Vector::new(1.0, 0.0, -2.0)
                } else {
                    Vector::new(x.y, x.x - 1.0, 2.0 * x.z)
                }
            };
            let f = FieldFunction::interpolate(m.clone(), make_basis(k).unwrap(), u).unwrap();
            assert!(l2_error(&f, &u, &Region::WholeDomain).unwrap() < 1e-12);
            assert!(l2_error(&f, &u, &c1()).unwrap() < 1e-12);
            assert!(dg_energy_error(&f, &u, &gu, 5.0, &Region::WholeDomain).unwrap() < 1e-11);
            // A continuous field has no jumps.
            let jumps = sum_faces(&m, &Region::WholeDomain, 4, &|_| 1.0, &f, None).unwrap();
            let boundary_only = sum_faces(&m, &Region::WholeDomain, 4, &|_| 1.0, &f, Some(&u)).unwrap();
            assert!(boundary_only < 1e-24);
            assert!(jumps > 0.0); // boundary traces of u_h itself
        }
    }

    #[test]
    fn zero_field_zero_exact() {
        let m = mesh([4, 4, 1]);
        let f = FieldFunction::zeros(m, make_basis(1).unwrap());
        assert_eq!(l2_error(&f, &|_| 0.0, &Region::WholeDomain).unwrap(), 0.0);
        assert_eq!(dg_energy_error(&f, &|_| 0.0, &|_| Vector::zeros(), 5.0, &c1()).unwrap(), 0.0);
    }

    #[test]
    fn constant_l2_norm_is_volume() {
        let m = mesh([4, 4, 1]);
        let f = FieldFunction::interpolate(m, make_basis(1).unwrap(), |_| 1.0).unwrap();
        assert!((l2_norm(&f, &Region::WholeDomain).unwrap() - 0.5).abs() < 1e-14);
        assert!((l2_norm(&f, &c1()).unwrap() - (0.25f64 * 0.25 * 0.25).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn region_norm_bounded_by_global() {
        let m = mesh([4, 4, 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let coeffs: Vec<f64> = (0..m.num_elements() * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = FieldFunction::new(m, make_basis(1).unwrap(), coeffs).unwrap();
        let u = |x: &Point| x.x.sin();
        assert!(l2_error(&f, &u, &c1()).unwrap() <= l2_error(&f, &u, &Region::WholeDomain).unwrap());
    }

    #[test]
    fn alpha_zero_is_unweighted() {
        let m = mesh([4, 4, 1]);
        let f = FieldFunction::interpolate(m, make_basis(2).unwrap(), |x| x.x * x.y - x.z).unwrap();
        let a = weighted_l2_norm(&f, None, 0.0, &line(), &Region::WholeDomain).unwrap();
        let b = l2_norm(&f, &Region::WholeDomain).unwrap();
        assert!((a - b).abs() < 1e-12 * b);
        assert!(weighted_l2_norm(&f, None, 1.0, &line(), &Region::WholeDomain).is_err());
        assert!(weighted_dg_norm(&f, None, 0.0, 5.0, &line()).is_err());
    }

    #[test]
    fn weighted_norm_matches_monte_carlo() {
        let m = mesh([8, 8, 2]);
        let f = FieldFunction::interpolate(m, make_basis(1).unwrap(), |_| 1.0).unwrap();
        let c = line();
        let alpha = 0.5;
        let q = weighted_l2_norm(&f, None, alpha, &c, &Region::WholeDomain).unwrap().powi(2);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 1_000_000;
        let mut s = 0.0;
        for _ in 0..n {
            let x = Point::new(rng.random(), rng.random(), 0.25 * rng.random::<f64>());
            s += c.distance(&x).powf(2.0 * alpha);
        }
        let mc = 0.25 * s / n as f64;
        assert!((q - mc).abs() / mc < 1e-2, "{q} vs {mc}");
    }

    #[test]
    fn weighted_norms_tend_to_unweighted() {
        let m = mesh([4, 4, 1]);
        let f = FieldFunction::interpolate(m, make_basis(1).unwrap(), |x| 1.0 + x.x - x.y * 2.0).unwrap();
        let c = line();
        let plain = l2_norm(&f, &Region::WholeDomain).unwrap();
        let plain_dg = dg_norm(&f, 5.0).unwrap();
        let mut prev_l2 = f64::INFINITY;
        let mut prev_dg = f64::INFINITY;
        for alpha in [0.5, 0.25, 0.1, 0.01] {
            let l2 = (weighted_l2_norm(&f, None, alpha, &c, &Region::WholeDomain).unwrap() - plain).abs();
            let dg = (weighted_dg_norm(&f, None, alpha, 5.0, &c).unwrap() - plain_dg).abs();
            assert!(l2 < prev_l2 && dg < prev_dg);
            prev_l2 = l2;
            prev_dg = dg;
        }
        assert!(prev_l2 < 0.05 * plain && prev_dg < 0.05 * plain_dg);
    }

    #[test]
    fn triangle_inequality() {
        let m = mesh([4, 4, 1]);
        let basis = make_basis(1).unwrap();
        let c = line();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..5 {
            let mut rand_field = || {
                let v: Vec<f64> = (0..m.num_elements() * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
                FieldFunction::new(m.clone(), basis.clone(), v).unwrap()
            };
            let a = rand_field();
            let b = rand_field();
            let mut s = a.clone();
            s.axpy(1.0, &b);
            let norms: Vec<Box<dyn Fn(&FieldFunction) -> f64>> = vec![
                Box::new(|f| l2_norm(f, &Region::WholeDomain).unwrap()),
                Box::new(|f| l2_norm(f, &c1()).unwrap()),
                Box::new(|f| dg_norm(f, 5.0).unwrap()),
                Box::new(|f| dg_energy_error(f, &|_| 0.0, &|_| Vector::zeros(), 5.0, &c1()).unwrap()),
                Box::new(|f| weighted_l2_norm(f, None, -0.3, &c, &Region::WholeDomain).unwrap()),
                Box::new(|f| weighted_gradient_norm(f, None, 0.4, &c, &Region::WholeDomain).unwrap()),
                Box::new(|f| weighted_dg_norm(f, None, 0.6, 5.0, &c).unwrap()),
            ];
            for n in &norms {
                assert!(n(&s) <= n(&a) + n(&b) + 1e-12);
            }
        }
    }
}
