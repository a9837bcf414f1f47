//! The source curve: a polyline embedded in the domain, its distance field,
//! its restriction to mesh elements, and the line-source load vector.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{AffineMap, LagrangeBasis};
use crate::error::{invalid, Error, Result};
use crate::field::FieldFunction;
use crate::mesh::{BoxDomain, Mesh, Point};
use crate::quadrature::segment_quadrature;

/// Ordered polyline with at least one segment and no zero-length segments.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    points: Vec<Point>,
    /// Arclength at each point; `cumulative[0] == 0`.
    cumulative: Vec<f64>,
}

/// Parameters of the sinusoidal curve generator.
///
/// The curve runs along `axis` from `span[0]` to `span[1]` and oscillates
/// in the first transverse axis around `center`:
/// `offset(t) = amplitude * sin(2 pi periods t)`, `t` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SineParams {
    pub amplitude: f64,
    pub periods: f64,
    /// 0, 1 or 2 for x, y, z.
    pub axis: usize,
    /// Number of segments.
    pub samples: usize,
    /// Transverse coordinates of the mean line (ascending axis order);
    /// defaults to the domain center.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<[f64; 2]>,
    /// Axial extent; defaults to the full domain extent along `axis`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<[f64; 2]>,
}

impl Curve {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.len() < 2 {
            return Err(invalid(format!("a curve needs at least 2 points, got {}", points.len())));
        }
        if points.iter().any(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(invalid("curve point with non-finite coordinate"));
        }
        let mut cumulative = Vec::with_capacity(points.len());
        cumulative.push(0.0);
        let scale = points.iter().map(|p| p.coords.amax()).fold(1.0, f64::max);
        for (i, w) in points.windows(2).enumerate() {
            let len = (w[1] - w[0]).norm();
            if len <= 1e-14 * scale {
                return Err(invalid(format!("curve segment {i} has zero length")));
            }
            cumulative.push(cumulative[i] + len);
        }
        Ok(Curve { points, cumulative })
    }

    pub fn straight(a: Point, b: Point) -> Result<Self> {
        Curve::new(vec![a, b])
    }

    pub fn sine(domain: &BoxDomain, p: &SineParams) -> Result<Self> {
        if p.axis > 2 {
            return Err(invalid(format!("sine axis must be 0, 1 or 2, got {}", p.axis)));
        }
        if p.samples == 0 {
            return Err(invalid("sine curve needs at least one segment"));
        }
        let transverse: [usize; 2] = match p.axis {
            0 => [1, 2],
            1 => [0, 2],
            _ => [0, 1],
        };
        let center = p.center.unwrap_or_else(|| {
            transverse.map(|a| 0.5 * (domain.lo[a] + domain.hi[a]))
        });
        let span = p.span.unwrap_or([domain.lo[p.axis], domain.hi[p.axis]]);
        let points = (0..=p.samples)
            .map(|i| {
                let t = i as f64 / p.samples as f64;
                let mut x = [0.0; 3];
                x[p.axis] = span[0] + t * (span[1] - span[0]);
                x[transverse[0]] = center[0] + p.amplitude * (2.0 * std::f64::consts::PI * p.periods * t).sin();
                x[transverse[1]] = center[1];
                Point::from(x)
            })
            .collect();
        Curve::new(points)
    }

    /// Reads whitespace-separated `x y z` triples, one per line. Blank lines
    /// and lines starting with `#` are skipped.
    pub fn read(reader: impl BufRead) -> Result<Self> {
        let mut points = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let vals: Vec<f64> = t
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| invalid(format!("curve line {}: {e}", lineno + 1)))?;
            if vals.len() != 3 {
                return Err(invalid(format!("curve line {}: expected 3 coordinates, got {}", lineno + 1, vals.len())));
            }
            points.push(Point::new(vals[0], vals[1], vals[2]));
        }
        Curve::new(points)
    }

    pub fn write(&self, mut w: impl std::io::Write) -> std::io::Result<()> {
        for p in &self.points {
            writeln!(w, "{:.17e} {:.17e} {:.17e}", p.x, p.y, p.z)?;
        }
        Ok(())
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn num_segments(&self) -> usize {
        self.points.len() - 1
    }

    pub fn segment(&self, i: usize) -> (Point, Point) {
        (self.points[i], self.points[i + 1])
    }

    pub fn segment_length(&self, i: usize) -> f64 {
        self.cumulative[i + 1] - self.cumulative[i]
    }

    /// Arclength at parameter `t` in `[0,1]` of segment `i`.
    pub fn arclength(&self, i: usize, t: f64) -> f64 {
        self.cumulative[i] + t * self.segment_length(i)
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// Checks that every point lies in `domain` shrunk by `margin >= 0`.
    ///
    /// A zero margin accepts curves that end on the boundary.
    pub fn check_inside(&self, domain: &BoxDomain, margin: f64) -> Result<()> {
        if margin < 0.0 {
            return Err(invalid("curve margin must be non-negative"));
        }
        let tol = 1e-12 * domain.extent().iter().copied().fold(0.0, f64::max);
        for (i, p) in self.points.iter().enumerate() {
            let ok = (0..3).all(|a| p[a] >= domain.lo[a] + margin - tol && p[a] <= domain.hi[a] - margin + tol);
            if !ok {
                return Err(invalid(format!(
                    "curve point {i} ({}, {}, {}) is outside the domain (margin {margin})",
                    p.x, p.y, p.z
                )));
            }
        }
        Ok(())
    }

    /// Euclidean distance from `x` to the polyline.
    pub fn distance(&self, x: &Point) -> f64 {
        self.points
            .windows(2)
            .map(|w| point_segment_distance(x, &w[0], &w[1]))
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn point_segment_distance(x: &Point, a: &Point, b: &Point) -> f64 {
    let d = b - a;
    let t = ((x - a).dot(&d) / d.norm_squared()).clamp(0.0, 1.0);
    (x - (a + d * t)).norm()
}

/// Parameter interval `[t0, t1]` of the segment `a + t (b - a)`, `t` in
/// `[0, 1]`, that lies inside the closed tetrahedron `tet`.
///
/// Lengths below `1e-12 h` count as empty.
pub fn clip_segment_tet(a: &Point, b: &Point, tet: &[Point; 4], h: f64) -> Option<(f64, f64)> {
    let map = AffineMap::new(tet).ok()?;
    let bary = |x: &Point| {
        let r = map.to_reference(x);
        [1.0 - r[0] - r[1] - r[2], r[0], r[1], r[2]]
    };
    let la = bary(a);
    let lb = bary(b);
    const TOL: f64 = 1e-12;
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for i in 0..4 {
        // lambda_i(t) = la + t (lb - la) >= -TOL
        let d = lb[i] - la[i];
        if d.abs() < 1e-300 {
            if la[i] < -TOL {
                return None;
            }
            continue;
        }
        let t = (-TOL - la[i]) / d;
        if d > 0.0 {
            t0 = t0.max(t);
        } else {
            t1 = t1.min(t);
        }
        if t0 > t1 {
            return None;
        }
    }
    if (t1 - t0) * (b - a).norm() < 1e-12 * h {
        return None;
    }
    Some((t0, t1))
}

/// Piece of one curve segment inside an element.
#[derive(Debug, Clone, PartialEq)]
pub struct SubSegment {
    pub segment: usize,
    pub t0: f64,
    pub t1: f64,
    pub start: Point,
    pub end: Point,
    pub length: f64,
}

/// The portion of the curve inside one element.
#[derive(Debug, Clone, PartialEq)]
pub struct LineRestriction {
    pub element: usize,
    pub pieces: Vec<SubSegment>,
}

impl LineRestriction {
    pub fn length(&self) -> f64 {
        self.pieces.iter().map(|s| s.length).sum()
    }
}

/// Splits the curve into element-wise pieces.
///
/// Pieces are half-open parameter intervals: where two elements both claim
/// the same stretch (a segment running inside a shared face, or tolerance
/// overlap at a crossing) the earlier interval, then the lower element
/// index, wins.
pub fn build_restrictions(curve: &Curve, mesh: &Mesh) -> Result<Vec<LineRestriction>> {
    curve.check_inside(mesh.domain(), 0.0)?;
    let h = mesh.h();
    let per_segment: Vec<Vec<(usize, SubSegment)>> = (0..curve.num_segments())
        .into_par_iter()
        .map(|s| {
            let (a, b) = curve.segment(s);
            let seg_len = curve.segment_length(s);
            let mut cand: Vec<(f64, usize, f64)> = candidate_elements(mesh, &a, &b)
                .into_iter()
                .filter_map(|e| clip_segment_tet(&a, &b, &mesh.element_points(e), h).map(|(t0, t1)| (t0, e, t1)))
                .collect();
            cand.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            let mut covered = 0.0f64;
            let mut out = Vec::new();
            for (t0, e, t1) in cand {
                let t0 = t0.max(covered).max(0.0);
                let t1 = t1.min(1.0);
                if (t1 - t0) * seg_len < 1e-12 * h {
                    continue;
                }
                covered = covered.max(t1);
                let d = b - a;
                out.push((
                    e,
                    SubSegment { segment: s, t0, t1, start: a + d * t0, end: a + d * t1, length: (t1 - t0) * seg_len },
                ));
            }
            out
        })
        .collect();

    let mut by_element: BTreeMap<usize, Vec<SubSegment>> = BTreeMap::new();
    for (e, piece) in per_segment.into_iter().flatten() {
        by_element.entry(e).or_default().push(piece);
    }
    let restrictions: Vec<LineRestriction> =
        by_element.into_iter().map(|(element, pieces)| LineRestriction { element, pieces }).collect();
    let long = restrictions.iter().filter(|r| r.length() > 2.0 * h).count();
    if long > 0 {
        log::warn!("{long} elements hold more than 2h of curve length; the line-source bounds assume |curve in E| <= C h");
    }
    Ok(restrictions)
}

/// Elements of the grid cells overlapped by the bounding box of segment `ab`.
fn candidate_elements(mesh: &Mesh, a: &Point, b: &Point) -> Vec<usize> {
    let d = mesh.domain();
    let dx = mesh.cell_size();
    let n = mesh.cells();
    let mut range = [(0usize, 0usize); 3];
    for ax in 0..3 {
        let lo = a[ax].min(b[ax]);
        let hi = a[ax].max(b[ax]);
        let eps = 1e-9 * dx[ax];
        let i0 = ((lo - d.lo[ax] - eps) / dx[ax]).floor().max(0.0) as usize;
        let i1 = ((hi - d.lo[ax] + eps) / dx[ax]).floor().max(0.0) as usize;
        range[ax] = (i0.min(n[ax] - 1), i1.min(n[ax] - 1));
    }
    let mut out = Vec::new();
    for k in range[2].0..=range[2].1 {
        for j in range[1].0..=range[1].1 {
            for i in range[0].0..=range[0].1 {
                let base = 6 * (i + n[0] * (j + n[1] * k));
                out.extend(base..base + 6);
            }
        }
    }
    out
}

/// Load vector `b_i = int_curve f phi_i ds` over the broken space.
///
/// `f` is a function of arclength. `extra_degree` is the polynomial degree
/// assumed for `f` when choosing the segment rule.
pub fn assemble_line_rhs(
    restrictions: &[LineRestriction],
    curve: &Curve,
    f: &(dyn Fn(f64) -> f64 + Sync),
    mesh: &Mesh,
    basis: &LagrangeBasis,
    extra_degree: usize,
) -> Result<Vec<f64>> {
    let nb = basis.dim();
    let rule = segment_quadrature(basis.degree() + extra_degree)?;
    let blocks: Vec<(usize, Vec<f64>)> = restrictions
        .par_iter()
        .map(|r| {
            let map = AffineMap::new(&mesh.element_points(r.element))?;
            let mut local = vec![0.0; nb];
            let mut phi = vec![0.0; nb];
            for piece in &r.pieces {
                for (q, w) in rule.iter() {
                    let t = piece.t0 + q[0] * (piece.t1 - piece.t0);
                    let x = piece.start + (piece.end - piece.start) * q[0];
                    let s = curve.arclength(piece.segment, t);
                    let fw = w * piece.length * f(s);
                    basis.eval(&map.to_reference(&x), &mut phi);
                    for (l, p) in local.iter_mut().zip(&phi) {
                        *l += fw * p;
                    }
                }
            }
            Ok((r.element, local))
        })
        .collect::<Result<_>>()?;
    let mut b = vec![0.0; mesh.num_elements() * nb];
    for (e, local) in blocks {
        b[e * nb..(e + 1) * nb].copy_from_slice(&local);
    }
    Ok(b)
}

/// Element-wise L2 representation `f_h` of the line functional:
/// `int_E f_h v = int_{E cap curve} f v` for all `v` in `P^k(E)`, and
/// `f_h = 0` on elements the curve misses.
pub fn compute_fh_field(
    restrictions: &[LineRestriction],
    curve: &Curve,
    f: &(dyn Fn(f64) -> f64 + Sync),
    mesh: Arc<Mesh>,
    basis: &LagrangeBasis,
    extra_degree: usize,
) -> Result<FieldFunction> {
    let nb = basis.dim();
    let mut b = assemble_line_rhs(restrictions, curve, f, &mesh, basis, extra_degree)?;
    let ref_mass = basis.reference_mass()?;
    for r in restrictions {
        let map = AffineMap::new(&mesh.element_points(r.element))?;
        let local: DMatrix<f64> = &ref_mass * map.abs_det();
        let chol = local
            .cholesky()
            .ok_or_else(|| Error::Assembly(format!("singular local mass matrix on element {}", r.element)))?;
        let block = &mut b[r.element * nb..(r.element + 1) * nb];
        let x = chol.solve(&nalgebra::DVector::from_column_slice(block));
        block.copy_from_slice(x.as_slice());
    }
    FieldFunction::new(mesh, basis.clone(), b)
}
