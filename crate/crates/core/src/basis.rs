//! Nodal Lagrange bases on the reference tetrahedron and affine element maps.

use nalgebra::{DMatrix, Matrix3};

use crate::error::{Error, Result};
use crate::mesh::{Point, Vector};
use crate::quadrature::tet_quadrature;

/// Highest polynomial degree provided by [`make_basis`].
pub const MAX_DEGREE: usize = 3;

/// Number of basis functions of `P^k` in three dimensions.
pub fn dim_pk(k: usize) -> usize {
    (k + 1) * (k + 2) * (k + 3) / 6
}

/// Equispaced nodal Lagrange basis of degree `k` on the reference
/// tetrahedron with vertices `0, e_x, e_y, e_z`.
///
/// Each basis function is attached to a node with barycentric multi-index
/// `alpha` (`|alpha| = k`) and is the product
/// `prod_j prod_{m < alpha_j} (k lambda_j - m) / (m + 1)`.
#[derive(Debug, Clone)]
pub struct LagrangeBasis {
    degree: usize,
    nodes: Vec<[usize; 4]>,
}

pub fn make_basis(k: usize) -> Result<LagrangeBasis> {
    if k == 0 || k > MAX_DEGREE {
        return Err(Error::Capability(format!("polynomial degree {k} not supported (1..={MAX_DEGREE})")));
    }
    let mut nodes = Vec::with_capacity(dim_pk(k));
    // Vertex nodes first, in reference vertex order.
    for v in 0..4 {
        let mut a = [0; 4];
        a[v] = k;
        nodes.push(a);
    }
    for a1 in 0..=k {
        for a2 in 0..=k - a1 {
            for a3 in 0..=k - a1 - a2 {
                let a = [k - a1 - a2 - a3, a1, a2, a3];
                if a.iter().any(|&c| c == k) {
                    continue;
                }
                nodes.push(a);
            }
        }
    }
    debug_assert_eq!(nodes.len(), dim_pk(k));
    Ok(LagrangeBasis { degree: k, nodes })
}

fn barycentric(xi: &[f64; 3]) -> [f64; 4] {
    [1.0 - xi[0] - xi[1] - xi[2], xi[0], xi[1], xi[2]]
}

impl LagrangeBasis {
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn dim(&self) -> usize {
        self.nodes.len()
    }

    /// Reference coordinates of the interpolation nodes.
    pub fn nodes(&self) -> Vec<[f64; 3]> {
        let k = self.degree as f64;
        self.nodes.iter().map(|a| [a[1] as f64 / k, a[2] as f64 / k, a[3] as f64 / k]).collect()
    }

    /// Values of all basis functions at reference point `xi`.
    pub fn eval(&self, xi: &[f64; 3], out: &mut [f64]) {
        let lam = barycentric(xi);
        let k = self.degree as f64;
        for (o, a) in out.iter_mut().zip(&self.nodes) {
            let mut v = 1.0;
            for j in 0..4 {
                for m in 0..a[j] {
                    v *= (k * lam[j] - m as f64) / (m + 1) as f64;
                }
            }
            *o = v;
        }
    }

    pub fn values(&self, xi: &[f64; 3]) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        self.eval(xi, &mut v);
        v
    }

    /// Reference gradients of all basis functions at `xi`.
    pub fn eval_grad(&self, xi: &[f64; 3], out: &mut [[f64; 3]]) {
        let lam = barycentric(xi);
        let k = self.degree as f64;
        for (o, a) in out.iter_mut().zip(&self.nodes) {
            // Factor value per barycentric coordinate and its derivative.
            let mut f = [1.0; 4];
            let mut df = [0.0; 4];
            for j in 0..4 {
                for m in 0..a[j] {
                    let c = 1.0 / (m + 1) as f64;
                    let t = (k * lam[j] - m as f64) * c;
                    df[j] = df[j] * t + f[j] * k * c;
                    f[j] *= t;
                }
            }
            let mut dlam = [0.0; 4];
            for j in 0..4 {
                let mut p = df[j];
                for (i, fi) in f.iter().enumerate() {
                    if i != j {
                        p *= fi;
                    }
                }
                dlam[j] = p;
            }
            *o = [dlam[1] - dlam[0], dlam[2] - dlam[0], dlam[3] - dlam[0]];
        }
    }

    pub fn gradients(&self, xi: &[f64; 3]) -> Vec<[f64; 3]> {
        let mut g = vec![[0.0; 3]; self.dim()];
        self.eval_grad(xi, &mut g);
        g
    }

    /// Mass matrix on the reference tetrahedron; the element mass matrix is
    /// this times `|det J|`.
    pub fn reference_mass(&self) -> Result<DMatrix<f64>> {
        let n = self.dim();
        let rule = tet_quadrature(2 * self.degree)?;
        let mut m = DMatrix::zeros(n, n);
        let mut phi = vec![0.0; n];
        for (xi, w) in rule.iter() {
            self.eval(xi, &mut phi);
            for i in 0..n {
                for j in 0..n {
                    m[(i, j)] += w * phi[i] * phi[j];
                }
            }
        }
        Ok(m)
    }

    /// Nodal interpolation coefficients of `f` on an element.
    pub fn interpolate(&self, map: &AffineMap, f: impl Fn(&Point) -> f64) -> Vec<f64> {
        self.nodes().iter().map(|xi| f(&map.to_physical(xi))).collect()
    }
}

/// Affine map `x = origin + J xi` from the reference tetrahedron.
#[derive(Debug, Clone, Copy)]
pub struct AffineMap {
    pub origin: Point,
    pub jacobian: Matrix3<f64>,
    pub inverse: Matrix3<f64>,
    pub det: f64,
}

impl AffineMap {
    pub fn new(p: &[Point; 4]) -> Result<Self> {
        let jacobian = Matrix3::from_columns(&[p[1] - p[0], p[2] - p[0], p[3] - p[0]]);
        let det = jacobian.determinant();
        let scale = (p[1] - p[0]).norm().max((p[2] - p[0]).norm()).max((p[3] - p[0]).norm());
        if !(det.abs() > 1e-14 * scale.powi(3)) {
            return Err(Error::Geometry(format!("singular element map (det J = {det:e})")));
        }
        let inverse = jacobian.try_inverse().ok_or_else(|| Error::Geometry("singular element map".into()))?;
        Ok(AffineMap { origin: p[0], jacobian, inverse, det })
    }

    pub fn to_physical(&self, xi: &[f64; 3]) -> Point {
        self.origin + self.jacobian * Vector::new(xi[0], xi[1], xi[2])
    }

    pub fn to_reference(&self, x: &Point) -> [f64; 3] {
        let r = self.inverse * (x - self.origin);
        [r.x, r.y, r.z]
    }

    /// Physical gradient `J^{-T} g` of a reference gradient `g`.
    pub fn push_gradient(&self, g: &[f64; 3]) -> Vector {
        self.inverse.transpose() * Vector::new(g[0], g[1], g[2])
    }

    /// `|det J|`, i.e. six times the element volume.
    pub fn abs_det(&self) -> f64 {
        self.det.abs()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn reference() -> [Point; 4] {
        [Point::origin(), Point::new(1.0, 0.0, 0.0), Point::new(0.0, 1.0, 0.0), Point::new(0.0, 0.0, 1.0)]
    }

    fn random_tet(rng: &mut ChaCha8Rng) -> [Point; 4] {
        loop {
            let p = std::array::from_fn(|_| Point::new(rng.random(), rng.random(), rng.random()));
            if let Ok(m) = AffineMap::new(&p) {
                if m.abs_det() > 0.05 {
                    return p;
                }
            }
        }
    }

    #[test]
    fn dimensions() {
        assert_eq!(make_basis(1).unwrap().dim(), 4);
        assert_eq!(make_basis(2).unwrap().dim(), 10);
        assert_eq!(make_basis(3).unwrap().dim(), 20);
        assert!(matches!(make_basis(0), Err(Error::Capability(_))));
        assert!(matches!(make_basis(4), Err(Error::Capability(_))));
    }

    #[test]
    fn nodal_property_and_partition_of_unity() {
        for k in 1..=MAX_DEGREE {
            let b = make_basis(k).unwrap();
            for (j, xi) in b.nodes().iter().enumerate() {
                let v = b.values(xi);
                for (i, vi) in v.iter().enumerate() {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((vi - expect).abs() < 1e-13, "k={k} i={i} j={j}");
                }
            }
            let xi = [0.2, 0.15, 0.3];
            assert!((b.values(&xi).iter().sum::<f64>() - 1.0).abs() < 1e-13);
            let g = b.gradients(&xi);
            for a in 0..3 {
                assert!(g.iter().map(|gi| gi[a]).sum::<f64>().abs() < 1e-12);
            }
        }
        // k = 1 vertex functions are the barycentric coordinates.
        let b = make_basis(1).unwrap();
        let xi = [0.1, 0.2, 0.3];
        let v = b.values(&xi);
        assert!((v[0] - 0.4).abs() < 1e-15 && (v[3] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn interpolation_reproduces_polynomials() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for k in 1..=MAX_DEGREE {
            let b = make_basis(k).unwrap();
            let map = AffineMap::new(&random_tet(&mut rng)).unwrap();
            let c: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let poly = |x: &Point| {
                let lin = c[0] + c[1] * x.x + c[2] * x.y + c[3] * x.z;
                lin.powi(k as i32)
            };
            let coeffs = b.interpolate(&map, poly);
            for _ in 0..100 {
                let xi: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..0.33));
                let v: f64 = b.values(&xi).iter().zip(&coeffs).map(|(a, b)| a * b).sum();
                assert!((v - poly(&map.to_physical(&xi))).abs() < 1e-12, "k={k}");
            }
        }
    }

    #[test]
    fn gradient_push_forward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let step = 1e-6;
        for k in 1..=MAX_DEGREE {
            let b = make_basis(k).unwrap();
            let map = AffineMap::new(&random_tet(&mut rng)).unwrap();
            for _ in 0..10 {
                let xi: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.05..0.3));
                let x = map.to_physical(&xi);
                let g = b.gradients(&xi);
                for a in 0..3 {
                    let mut xp = x;
                    let mut xm = x;
                    xp[a] += step;
                    xm[a] -= step;
                    let vp = b.values(&map.to_reference(&xp));
                    let vm = b.values(&map.to_reference(&xm));
                    for i in 0..b.dim() {
                        let fd = (vp[i] - vm[i]) / (2.0 * step);
                        let exact = map.push_gradient(&g[i])[a];
                        assert!((fd - exact).abs() < 1e-6 * (1.0 + exact.abs()), "k={k} i={i}");
                    }
                }
            }
        }
    }

    #[test]
    fn affine_map_properties() {
        let id = AffineMap::new(&reference()).unwrap();
        assert_eq!(id.jacobian, Matrix3::identity());
        let s = 2.5;
        let scaled = AffineMap::new(&reference().map(|p| Point::from(p.coords * s))).unwrap();
        assert!((scaled.det - s * s * s).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = tet_quadrature(2).unwrap();
        for _ in 0..20 {
            let p = random_tet(&mut rng);
            let map = AffineMap::new(&p).unwrap();
            let vol_q: f64 = q.weights.iter().sum::<f64>() * map.abs_det();
            let triple = ((p[1] - p[0]).dot(&(p[2] - p[0]).cross(&(p[3] - p[0])))).abs() / 6.0;
            assert!((vol_q - triple).abs() < 1e-14);
        }

        let flat = [Point::origin(), Point::new(1.0, 0.0, 0.0), Point::new(0.0, 1.0, 0.0), Point::new(1.0, 1.0, 0.0)];
        assert!(matches!(AffineMap::new(&flat), Err(Error::Geometry(_))));
    }
}
