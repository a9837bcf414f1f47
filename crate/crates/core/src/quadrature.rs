//! Quadrature on the reference segment `[0,1]`, triangle and tetrahedron.
//!
//! Simplex rules are collapsed (Duffy) tensor products of Gauss-Legendre
//! rules, so they exist for any exactness degree, have positive weights,
//! and all points lie strictly inside the reference element.

use crate::error::{Error, Result};

/// Highest exactness degree served by the rule constructors.
pub const MAX_EXACTNESS: usize = 30;

/// Quadrature rule on a `D`-dimensional reference element.
#[derive(Debug, Clone)]
pub struct QuadRule<const D: usize> {
    pub points: Vec<[f64; D]>,
    pub weights: Vec<f64>,
    /// Polynomials of total degree up to this value are integrated exactly.
    pub exactness: usize,
}

pub type SegmentRule = QuadRule<1>;
pub type TriangleRule = QuadRule<2>;
pub type TetRule = QuadRule<3>;

impl<const D: usize> QuadRule<D> {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64; D], f64)> {
        self.points.iter().zip(self.weights.iter().copied())
    }
}

/// Gauss-Legendre nodes and weights on `[0,1]`.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 1);
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    for i in 0..m.div_ceil(2) {
        // Initial guess for the i-th root of P_m on [-1,1].
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, d) = legendre(m, z);
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(m, z);
        let wt = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = 0.5 * (1.0 - z);
        x[m - 1 - i] = 0.5 * (1.0 + z);
        w[i] = 0.5 * wt;
        w[m - 1 - i] = 0.5 * wt;
    }
    if m % 2 == 1 {
        x[m / 2] = 0.5;
    }
    (x, w)
}

/// Value and derivative of the Legendre polynomial `P_m` at `z`.
fn legendre(m: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    if m == 0 {
        return (1.0, 0.0);
    }
    for j in 2..=m {
        let p2 = ((2 * j - 1) as f64 * z * p1 - (j - 1) as f64 * p0) / j as f64;
        p0 = p1;
        p1 = p2;
    }
    (p1, m as f64 * (z * p1 - p0) / (z * z - 1.0))
}

fn check(exactness: usize) -> Result<()> {
    if exactness > MAX_EXACTNESS {
        return Err(Error::Capability(format!(
            "quadrature exactness {exactness} exceeds the supported maximum {MAX_EXACTNESS}"
        )));
    }
    Ok(())
}

/// Gauss rule on `[0,1]`, exact for degree `min_exactness` (and `2m-1 >= min_exactness`).
pub fn segment_quadrature(min_exactness: usize) -> Result<SegmentRule> {
    check(min_exactness)?;
    let m = (min_exactness + 2) / 2;
    let (x, w) = gauss_legendre(m);
    Ok(QuadRule { points: x.into_iter().map(|t| [t]).collect(), weights: w, exactness: 2 * m - 1 })
}

/// Rule on the triangle `{x, y >= 0, x + y <= 1}` (area 1/2).
pub fn tri_quadrature(min_exactness: usize) -> Result<TriangleRule> {
    check(min_exactness)?;
    // The collapsed integrand has degree p + 1 in the collapsed direction.
    let m = (min_exactness + 2).div_ceil(2);
    let (x, w) = gauss_legendre(m);
    let mut points = Vec::with_capacity(m * m);
    let mut weights = Vec::with_capacity(m * m);
    for (b, wb) in x.iter().zip(&w) {
        for (a, wa) in x.iter().zip(&w) {
            points.push([a * (1.0 - b), *b]);
            weights.push(wa * wb * (1.0 - b));
        }
    }
    Ok(QuadRule { points, weights, exactness: 2 * m - 2 })
}

/// Rule on the tetrahedron `{x, y, z >= 0, x + y + z <= 1}` (volume 1/6).
pub fn tet_quadrature(min_exactness: usize) -> Result<TetRule> {
    check(min_exactness)?;
    // The collapsed integrand has degree p + 2 in the last direction.
    let m = (min_exactness + 3).div_ceil(2);
    let (x, w) = gauss_legendre(m);
    let mut points = Vec::with_capacity(m * m * m);
    let mut weights = Vec::with_capacity(m * m * m);
    for (c, wc) in x.iter().zip(&w) {
        for (b, wb) in x.iter().zip(&w) {
            for (a, wa) in x.iter().zip(&w) {
                points.push([a * (1.0 - b) * (1.0 - c), b * (1.0 - c), *c]);
                weights.push(wa * wb * wc * (1.0 - b) * (1.0 - c) * (1.0 - c));
            }
        }
    }
    Ok(QuadRule { points, weights, exactness: 2 * m - 3 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    // Closed form: int_T x^a y^b z^c = a! b! c! / (a+b+c+3)!
    fn tet_monomial(a: u32, b: u32, c: u32) -> f64 {
        factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + 3)
    }

    fn tri_monomial(a: u32, b: u32) -> f64 {
        factorial(a) * factorial(b) / factorial(a + b + 2)
    }

    #[test]
    fn gauss_legendre_small() {
        let (x, w) = gauss_legendre(1);
        assert_eq!(x, vec![0.5]);
        assert!((w[0] - 1.0).abs() < 1e-15);
        let (x, w) = gauss_legendre(2);
        let r = 0.5 / 3f64.sqrt();
        assert!((x[0] - (0.5 - r)).abs() < 1e-15 && (x[1] - (0.5 + r)).abs() < 1e-15);
        assert!((w[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn segment_rule_exactness() {
        let r = segment_quadrature(2).unwrap();
        let v: f64 = r.iter().map(|(p, w)| w * p[0] * p[0]).sum();
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
        for p in 0..=20 {
            let r = segment_quadrature(p).unwrap();
            assert!(r.exactness >= p);
            for d in 0..=r.exactness as i32 {
                let v: f64 = r.iter().map(|(x, w)| w * x[0].powi(d)).sum();
                let exact = 1.0 / (d as f64 + 1.0);
                assert!((v - exact).abs() <= 1e-13 * exact, "m={} d={d}", r.len());
            }
        }
    }

    #[test]
    fn tet_rule_monomials() {
        for p in 0..=10usize {
            let r = tet_quadrature(p).unwrap();
            assert!(r.exactness >= p);
            let wsum: f64 = r.weights.iter().sum();
            assert!((wsum - 1.0 / 6.0).abs() < 1e-15);
            for q in &r.points {
                assert!(q.iter().all(|&c| c >= 0.0) && q.iter().sum::<f64>() <= 1.0);
            }
            let e = r.exactness as u32;
            for a in 0..=e {
                for b in 0..=e - a {
                    for c in 0..=e - a - b {
                        let v: f64 = r
                            .iter()
                            .map(|(x, w)| w * x[0].powi(a as i32) * x[1].powi(b as i32) * x[2].powi(c as i32))
                            .sum();
                        let exact = tet_monomial(a, b, c);
                        assert!((v - exact).abs() <= 1e-13 * exact, "p={p} ({a},{b},{c})");
                    }
                }
            }
        }
    }

    #[test]
    fn triangle_rule_monomials() {
        for p in 0..=12usize {
            let r = tri_quadrature(p).unwrap();
            assert!(r.exactness >= p);
            let wsum: f64 = r.weights.iter().sum();
            assert!((wsum - 0.5).abs() < 1e-15);
            let e = r.exactness as u32;
            for a in 0..=e {
                for b in 0..=e - a {
                    let v: f64 = r.iter().map(|(x, w)| w * x[0].powi(a as i32) * x[1].powi(b as i32)).sum();
                    let exact = tri_monomial(a, b);
                    assert!((v - exact).abs() <= 1e-13 * exact, "p={p} ({a},{b})");
                }
            }
        }
    }

    #[test]
    fn excessive_exactness_is_a_capability_error() {
        assert!(matches!(tet_quadrature(MAX_EXACTNESS + 1), Err(Error::Capability(_))));
        assert!(matches!(segment_quadrature(99), Err(Error::Capability(_))));
    }
}
