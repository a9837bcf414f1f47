//! Conforming tetrahedral meshes of axis-aligned boxes.
//!
//! Every hexahedral cell of a structured grid is split into six tetrahedra
//! sharing the cell's main diagonal (Kuhn/Freudenthal split). Neighbouring
//! cells use the same split, so the result is conforming, and all tetrahedra
//! of one level are congruent up to reflection.

use std::collections::HashMap;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub type Point = Point3<f64>;
pub type Vector = Vector3<f64>;

/// Axis-aligned box `lo < x < hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxDomain {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl BoxDomain {
    pub fn new(lo: [f64; 3], hi: [f64; 3]) -> Result<Self> {
        let d = BoxDomain { lo, hi };
        d.validate()?;
        Ok(d)
    }

    pub fn unit_cube() -> Self {
        BoxDomain { lo: [0.0; 3], hi: [1.0; 3] }
    }

    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            if !(self.lo[a].is_finite() && self.hi[a].is_finite()) || self.hi[a] <= self.lo[a] {
                return Err(invalid(format!(
                    "box needs hi > lo on every axis (axis {a}: lo={}, hi={})",
                    self.lo[a], self.hi[a]
                )));
            }
        }
        Ok(())
    }

    pub fn extent(&self) -> [f64; 3] {
        [self.hi[0] - self.lo[0], self.hi[1] - self.lo[1], self.hi[2] - self.lo[2]]
    }

    pub fn volume(&self) -> f64 {
        let e = self.extent();
        e[0] * e[1] * e[2]
    }

    /// `true` if `p` lies in the closed box enlarged by `tol`.
    pub fn contains(&self, p: &Point, tol: f64) -> bool {
        (0..3).all(|a| p[a] >= self.lo[a] - tol && p[a] <= self.hi[a] + tol)
    }

    /// `true` if `other` is contained in the closed box (up to `tol`).
    pub fn contains_box(&self, other: &BoxDomain, tol: f64) -> bool {
        (0..3).all(|a| other.lo[a] >= self.lo[a] - tol && other.hi[a] <= self.hi[a] + tol)
    }
}

/// A face shared by two elements. `normal` points from `left` to `right`,
/// and `left < right`.
#[derive(Debug, Clone)]
pub struct InteriorFace {
    pub vertices: [usize; 3],
    pub left: usize,
    pub right: usize,
    pub normal: Vector,
    pub area: f64,
}

/// A face on the domain boundary with its outward unit normal.
#[derive(Debug, Clone)]
pub struct BoundaryFace {
    pub vertices: [usize; 3],
    pub element: usize,
    pub normal: Vector,
    pub area: f64,
}

/// What lies across one of the four faces of an element.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaceRef {
    Interior(usize),
    Boundary(usize),
}

#[derive(Debug, Clone)]
pub struct Mesh {
    domain: BoxDomain,
    cells: [usize; 3],
    vertices: Vec<Point>,
    tets: Vec<[usize; 4]>,
    interior_faces: Vec<InteriorFace>,
    boundary_faces: Vec<BoundaryFace>,
    element_faces: Vec<[FaceRef; 4]>,
    h: f64,
}

/// Local vertex indices of the face opposite vertex `i`.
pub const LOCAL_FACES: [[usize; 3]; 4] = [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]];

/// Builds the Kuhn-split tetrahedral mesh of `domain` with `n` cells per axis.
pub fn build_box_mesh(domain: BoxDomain, n: [usize; 3]) -> Result<Mesh> {
    domain.validate()?;
    if n.iter().any(|&c| c == 0) {
        return Err(invalid(format!("cell counts must be >= 1, got {n:?}")));
    }
    let ext = domain.extent();
    let dx = [ext[0] / n[0] as f64, ext[1] / n[1] as f64, ext[2] / n[2] as f64];

    let (nx, ny, nz) = (n[0] + 1, n[1] + 1, n[2] + 1);
    let vid = |i: usize, j: usize, k: usize| i + nx * (j + ny * k);
    let mut vertices = Vec::with_capacity(nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                // Snap the last plane onto `hi` so the box is reproduced exactly.
                let coord = |a: usize, idx: usize| {
                    if idx == n[a] {
                        domain.hi[a]
                    } else {
                        domain.lo[a] + idx as f64 * dx[a]
                    }
                };
                vertices.push(Point::new(coord(0, i), coord(1, j), coord(2, k)));
            }
        }
    }

    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut tets = Vec::with_capacity(6 * n[0] * n[1] * n[2]);
    for k in 0..n[2] {
        for j in 0..n[1] {
            for i in 0..n[0] {
                for perm in PERMS {
                    let mut idx = [i, j, k];
                    let mut tet = [vid(i, j, k); 4];
                    for (step, &axis) in perm.iter().enumerate() {
                        idx[axis] += 1;
                        tet[step + 1] = vid(idx[0], idx[1], idx[2]);
                    }
                    if signed_volume(&vertices, &tet) < 0.0 {
                        tet.swap(2, 3);
                    }
                    tets.push(tet);
                }
            }
        }
    }

    let mut mesh = Mesh {
        domain,
        cells: n,
        vertices,
        tets,
        interior_faces: Vec::new(),
        boundary_faces: Vec::new(),
        element_faces: Vec::new(),
        h: (dx[0] * dx[0] + dx[1] * dx[1] + dx[2] * dx[2]).sqrt(),
    };
    mesh.connect()?;
    Ok(mesh)
}

fn signed_volume(vertices: &[Point], tet: &[usize; 4]) -> f64 {
    let a = vertices[tet[0]];
    let b = vertices[tet[1]] - a;
    let c = vertices[tet[2]] - a;
    let d = vertices[tet[3]] - a;
    b.dot(&c.cross(&d)) / 6.0
}

/// Area and unit normal of a triangle, normal following the right-hand rule.
pub fn face_area_and_normal(p: [Point; 3]) -> Result<(f64, Vector)> {
    let e1 = p[1] - p[0];
    let e2 = p[2] - p[0];
    let c = e1.cross(&e2);
    let norm = c.norm();
    let scale = e1.norm_squared().max(e2.norm_squared());
    if !(norm > 1e-14 * scale) {
        return Err(Error::Geometry(format!("degenerate face {p:?}")));
    }
    Ok((0.5 * norm, c / norm))
}

impl Mesh {
    fn connect(&mut self) -> Result<()> {
        let mut incidences: HashMap<[usize; 3], Vec<(usize, usize)>> = HashMap::new();
        for (e, tet) in self.tets.iter().enumerate() {
            for (lf, face) in LOCAL_FACES.iter().enumerate() {
                let mut key = [tet[face[0]], tet[face[1]], tet[face[2]]];
                key.sort_unstable();
                incidences.entry(key).or_default().push((e, lf));
            }
        }
        let mut keys: Vec<_> = incidences.keys().copied().collect();
        keys.sort_unstable();

        let placeholder = FaceRef::Boundary(usize::MAX);
        let mut element_faces = vec![[placeholder; 4]; self.tets.len()];
        for key in keys {
            let inc = &incidences[&key];
            let pts = [self.vertices[key[0]], self.vertices[key[1]], self.vertices[key[2]]];
            let (area, mut normal) = face_area_and_normal(pts)?;
            let centroid = Point::from((pts[0].coords + pts[1].coords + pts[2].coords) / 3.0);
            match inc.as_slice() {
                [(e, lf)] => {
                    let inner = self.vertices[self.tets[*e][*lf]];
                    if normal.dot(&(centroid - inner)) < 0.0 {
                        normal = -normal;
                    }
                    element_faces[*e][*lf] = FaceRef::Boundary(self.boundary_faces.len());
                    self.boundary_faces.push(BoundaryFace { vertices: key, element: *e, normal, area });
                }
                [a, b] => {
                    let (l, r) = if a.0 < b.0 { (*a, *b) } else { (*b, *a) };
                    let inner = self.vertices[self.tets[l.0][l.1]];
                    if normal.dot(&(centroid - inner)) < 0.0 {
                        normal = -normal;
                    }
                    let idx = FaceRef::Interior(self.interior_faces.len());
                    element_faces[l.0][l.1] = idx;
                    element_faces[r.0][r.1] = idx;
                    self.interior_faces.push(InteriorFace {
                        vertices: key,
                        left: l.0,
                        right: r.0,
                        normal,
                        area,
                    });
                }
                other => {
                    return Err(Error::Geometry(format!(
                        "non-conforming mesh: face {key:?} shared by {} elements",
                        other.len()
                    )))
                }
            }
        }
        self.element_faces = element_faces;
        Ok(())
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn cells(&self) -> [usize; 3] {
        self.cells
    }

    /// Edge lengths of the structured grid cells.
    pub fn cell_size(&self) -> [f64; 3] {
        let e = self.domain.extent();
        [e[0] / self.cells[0] as f64, e[1] / self.cells[1] as f64, e[2] / self.cells[2] as f64]
    }

    /// Global mesh size: the largest element diameter (the cell diagonal).
    pub fn h(&self) -> f64 {
        self.h
    }

    /// Largest grid spacing over the three axes (the cell edge for cubic cells).
    pub fn spacing(&self) -> f64 {
        self.cell_size().into_iter().fold(0.0, f64::max)
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn tets(&self) -> &[[usize; 4]] {
        &self.tets
    }

    pub fn num_elements(&self) -> usize {
        self.tets.len()
    }

    pub fn interior_faces(&self) -> &[InteriorFace] {
        &self.interior_faces
    }

    pub fn boundary_faces(&self) -> &[BoundaryFace] {
        &self.boundary_faces
    }

    /// Faces of element `e`, indexed by the local vertex they are opposite to.
    pub fn element_faces(&self, e: usize) -> &[FaceRef; 4] {
        &self.element_faces[e]
    }

    pub fn element_points(&self, e: usize) -> [Point; 4] {
        let t = &self.tets[e];
        [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]], self.vertices[t[3]]]
    }

    pub fn face_points(&self, vertices: &[usize; 3]) -> [Point; 3] {
        [self.vertices[vertices[0]], self.vertices[vertices[1]], self.vertices[vertices[2]]]
    }

    pub fn volume(&self, e: usize) -> f64 {
        signed_volume(&self.vertices, &self.tets[e])
    }

    pub fn centroid(&self, e: usize) -> Point {
        let p = self.element_points(e);
        Point::from((p[0].coords + p[1].coords + p[2].coords + p[3].coords) * 0.25)
    }

    /// Longest edge of element `e`.
    pub fn diameter(&self, e: usize) -> f64 {
        let p = self.element_points(e);
        let mut d: f64 = 0.0;
        for i in 0..4 {
            for j in i + 1..4 {
                d = d.max((p[i] - p[j]).norm());
            }
        }
        d
    }

    /// Radius of the inscribed sphere of element `e`.
    pub fn inradius(&self, e: usize) -> f64 {
        let p = self.element_points(e);
        let surface: f64 = LOCAL_FACES
            .iter()
            .map(|f| 0.5 * (p[f[1]] - p[f[0]]).cross(&(p[f[2]] - p[f[0]])).norm())
            .sum();
        3.0 * self.volume(e) / surface
    }

    /// Axis-aligned bounding box of element `e`.
    pub fn element_bounds(&self, e: usize) -> ([f64; 3], [f64; 3]) {
        let p = self.element_points(e);
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for q in &p {
            for a in 0..3 {
                lo[a] = lo[a].min(q[a]);
                hi[a] = hi[a].max(q[a]);
            }
        }
        (lo, hi)
    }

    /// Barycentric coordinates of `x` with respect to element `e`.
    pub fn barycentric(&self, e: usize, x: &Point) -> [f64; 4] {
        let p = self.element_points(e);
        let vol = self.volume(e);
        let mut lam = [0.0; 4];
        for (i, l) in lam.iter_mut().enumerate() {
            // Replace vertex i by x and take the signed volume ratio.
            let mut q = p;
            q[i] = *x;
            let a = q[0];
            *l = (q[1] - a).dot(&(q[2] - a).cross(&(q[3] - a))) / 6.0 / vol;
        }
        lam
    }

    /// Finds an element containing `x` (closed, up to a small tolerance).
    pub fn locate(&self, x: &Point) -> Option<usize> {
        let tol = 1e-12 * self.h;
        if !self.domain.contains(x, tol) {
            return None;
        }
        let dx = self.cell_size();
        let mut cell = [0usize; 3];
        for a in 0..3 {
            let t = ((x[a] - self.domain.lo[a]) / dx[a]).floor();
            cell[a] = (t.max(0.0) as usize).min(self.cells[a] - 1);
        }
        // The point may sit on a cell boundary; scan the neighbouring cells too.
        let mut best: Option<(usize, f64)> = None;
        for dk in -1i64..=1 {
            for dj in -1i64..=1 {
                for di in -1i64..=1 {
                    let c = [cell[0] as i64 + di, cell[1] as i64 + dj, cell[2] as i64 + dk];
                    if (0..3).any(|a| c[a] < 0 || c[a] >= self.cells[a] as i64) {
                        continue;
                    }
                    let base = 6 * (c[0] as usize + self.cells[0] * (c[1] as usize + self.cells[1] * c[2] as usize));
                    for e in base..base + 6 {
                        let lam = self.barycentric(e, x);
                        let m = lam.iter().copied().fold(f64::INFINITY, f64::min);
                        if m >= 0.0 {
                            return Some(e);
                        }
                        if best.is_none_or(|(_, bm)| m > bm) {
                            best = Some((e, m));
                        }
                    }
                }
            }
        }
        best.filter(|&(_, m)| m > -1e-10).map(|(e, _)| e)
    }
}
