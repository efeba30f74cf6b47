//! Triangle meshes: primitive builders, watertightness checks, interior and surface sampling.

use std::collections::HashMap;

use rand::Rng;

use super::cloud::{Point, PointCloud};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Point>,
    pub triangles: Vec<[usize; 3]>,
}

const PROBE_ROUND: usize = 20_000;
const MIN_ACCEPTANCE: f64 = 1e-4;

/// Ray directions tried in order when a parity ray grazes an edge or vertex.
const RAY_DIRECTIONS: [Point; 4] = [
    [1.0, 0.0, 0.0],
    [0.998_61, 0.037_17, 0.037_41],
    [0.997_9, -0.051_3, 0.039_7],
    [0.996_1, 0.063_1, -0.061_9],
];

impl TriMesh {
    pub fn new(vertices: Vec<Point>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i >= vertices.len())) {
            return Err(Error::InvalidArgument(format!("triangle {t:?} indexes past {} vertices", vertices.len())));
        }
        Ok(Self { vertices, triangles })
    }

    /// Axis-aligned box centred at the origin.
    pub fn cuboid(extents: Point) -> Self {
        let [hx, hy, hz] = extents.map(|e| e / 2.0);
        let poly = [[-hx, -hz], [hx, -hz], [hx, hz], [-hx, hz]];
        Self::extrude_xz(&poly, -hy, hy).expect("rectangle is a valid polygon")
    }

    /// Regular `segments`-gon prism standing on the xz-plane, centred at the origin.
    pub fn cylinder(radius: f64, height: f64, segments: usize) -> Self {
        let poly: Vec<[f64; 2]> = (0..segments)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / segments as f64;
                [radius * a.cos(), radius * a.sin()]
            })
            .collect();
        Self::extrude_xz(&poly, -height / 2.0, height / 2.0).expect("regular polygon is valid")
    }

    /// Square frustum: `bottom` and `top` are full side lengths.
    pub fn frustum(bottom: f64, top: f64, height: f64) -> Self {
        let (b, t, h) = (bottom / 2.0, top / 2.0, height / 2.0);
        let vertices = vec![
            [-b, -h, -b],
            [b, -h, -b],
            [b, -h, b],
            [-b, -h, b],
            [-t, h, -t],
            [t, h, -t],
            [t, h, t],
            [-t, h, t],
        ];
        let triangles = vec![
            [0, 2, 1],
            [0, 3, 2],
            [4, 5, 6],
            [4, 6, 7],
            [0, 1, 5],
            [0, 5, 4],
            [1, 2, 6],
            [1, 6, 5],
            [2, 3, 7],
            [2, 7, 6],
            [3, 0, 4],
            [3, 4, 7],
        ];
        Self { vertices, triangles }
    }

    /// Prism over a simple polygon given as `(x, z)` pairs, spanning `y0..y1`.
    pub fn extrude_xz(polygon: &[[f64; 2]], y0: f64, y1: f64) -> Result<Self> {
        let n = polygon.len();
        if n < 3 || y1 <= y0 {
            return Err(Error::Degenerate("extrusion needs a polygon and positive height".into()));
        }
        let caps = ear_clip(polygon)?;
        let mut vertices = Vec::with_capacity(2 * n);
        vertices.extend(polygon.iter().map(|p| [p[0], y0, p[1]]));
        vertices.extend(polygon.iter().map(|p| [p[0], y1, p[1]]));
        let mut triangles = Vec::new();
        for [a, b, c] in caps {
            triangles.push([a, c, b]);
            triangles.push([a + n, b + n, c + n]);
        }
        for i in 0..n {
            let j = (i + 1) % n;
            triangles.push([i, j, j + n]);
            triangles.push([i, j + n, i + n]);
        }
        Ok(Self { vertices, triangles })
    }

    /// True when every undirected edge is shared by exactly two triangles.
    pub fn is_watertight(&self) -> bool {
        let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        !self.triangles.is_empty() && edges.values().all(|&c| c == 2)
    }

    pub fn bounds(&self) -> (Point, Point) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }

    pub fn transformed(&self, f: impl Fn(Point) -> Point) -> Self {
        Self {
            vertices: self.vertices.iter().map(|&v| f(v)).collect(),
            triangles: self.triangles.clone(),
        }
    }

    fn triangle(&self, i: usize) -> [Point; 3] {
        self.triangles[i].map(|v| self.vertices[v])
    }

    /// Ray-parity inside test; grazing hits retry with the next fixed direction.
    pub fn contains(&self, p: Point) -> bool {
        for dir in RAY_DIRECTIONS {
            if let Some(crossings) = self.crossings(p, dir) {
                return crossings % 2 == 1;
            }
        }
        false
    }

    fn crossings(&self, origin: Point, dir: Point) -> Option<usize> {
        const EPS: f64 = 1e-10;
        let mut count = 0;
        for i in 0..self.triangles.len() {
            let [a, b, c] = self.triangle(i);
            let e1 = sub(b, a);
            let e2 = sub(c, a);
            let h = cross(dir, e2);
            let det = dot(e1, h);
            if det.abs() < 1e-14 {
                continue;
            }
            let inv = 1.0 / det;
            let s = sub(origin, a);
            let u = inv * dot(s, h);
            let q = cross(s, e1);
            let v = inv * dot(dir, q);
            let t = inv * dot(e2, q);
            if u < -EPS || v < -EPS || u + v > 1.0 + EPS || t < -EPS {
                continue;
            }
            if u < EPS || v < EPS || u + v > 1.0 - EPS || t < EPS {
                return None;
            }
            count += 1;
        }
        Some(count)
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|i| tri_area(self.triangle(i))).sum()
    }

    /// Signed volume by the divergence theorem; positive for outward-facing triangles.
    pub fn volume(&self) -> f64 {
        (0..self.triangles.len())
            .map(|i| {
                let [a, b, c] = self.triangle(i);
                dot(a, cross(b, c)) / 6.0
            })
            .sum()
    }
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: Point, b: Point) -> Point {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn tri_area([a, b, c]: [Point; 3]) -> f64 {
    let n = cross(sub(b, a), sub(c, a));
    0.5 * dot(n, n).sqrt()
}

/// Triangulates a simple polygon; output winding is counter-clockwise in `(x, z)`.
fn ear_clip(poly: &[[f64; 2]]) -> Result<Vec<[usize; 3]>> {
    let signed: f64 = (0..poly.len())
        .map(|i| {
            let (p, q) = (poly[i], poly[(i + 1) % poly.len()]);
            p[0] * q[1] - q[0] * p[1]
        })
        .sum();
    let mut idx: Vec<usize> = (0..poly.len()).collect();
    if signed < 0.0 {
        idx.reverse();
    }
    let cross2 = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut out = Vec::new();
    while idx.len() > 3 {
        let m = idx.len();
        let ear = (0..m).find(|&i| {
            let (a, b, c) = (idx[(i + m - 1) % m], idx[i], idx[(i + 1) % m]);
            if cross2(poly[a], poly[b], poly[c]) <= 0.0 {
                return false;
            }
            idx.iter().all(|&p| {
                if p == a || p == b || p == c {
                    return true;
                }
                let q = poly[p];
                !(cross2(poly[a], poly[b], q) >= 0.0 && cross2(poly[b], poly[c], q) >= 0.0 && cross2(poly[c], poly[a], q) >= 0.0)
            })
        });
        let Some(i) = ear else {
            return Err(Error::Degenerate("polygon is not simple".into()));
        };
        out.push([idx[(i + m - 1) % m], idx[i], idx[(i + 1) % m]]);
        idx.remove(i);
    }
    out.push([idx[0], idx[1], idx[2]]);
    Ok(out)
}

/// `n` points uniformly distributed in the solid interior, by rejection against the bounding box.
pub fn sample_mesh_interior<R: Rng>(mesh: &TriMesh, n: usize, rng: &mut R) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    if !mesh.is_watertight() {
        return Err(Error::Degenerate("mesh is not watertight (open or non-manifold edges)".into()));
    }
    let (lo, hi) = mesh.bounds();
    let mut points = Vec::with_capacity(n);
    let mut tries = 0usize;
    while points.len() < n {
        let p = [
            rng.random_range(lo[0]..=hi[0]),
            rng.random_range(lo[1]..=hi[1]),
            rng.random_range(lo[2]..=hi[2]),
        ];
        tries += 1;
        if mesh.contains(p) {
            points.push(p);
        }
        if tries == PROBE_ROUND && (points.len() as f64 / tries as f64) < MIN_ACCEPTANCE {
            return Err(Error::Degenerate(format!(
                "interior acceptance {} / {tries} is below {MIN_ACCEPTANCE}; is the mesh watertight?",
                points.len()
            )));
        }
    }
    PointCloud::new(points)
}

/// `n` points uniformly distributed over the surface (area-weighted triangles).
pub fn sample_mesh_surface<R: Rng>(mesh: &TriMesh, n: usize, rng: &mut R) -> Result<PointCloud> {
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for i in 0..mesh.triangles.len() {
        total += tri_area(mesh.triangle(i));
        cumulative.push(total);
    }
    if n == 0 || total <= 0.0 {
        return Err(Error::Degenerate("mesh has no surface area".into()));
    }
    let points = (0..n)
        .map(|_| {
            let x = rng.random_range(0.0..total);
            let i = cumulative.partition_point(|&c| c <= x).min(cumulative.len() - 1);
            let [a, b, c] = mesh.triangle(i);
            let (r1, r2): (f64, f64) = (rng.random(), rng.random());
            let s = r1.sqrt();
            let (wa, wb, wc) = (1.0 - s, s * (1.0 - r2), s * r2);
            [0, 1, 2].map(|k| wa * a[k] + wb * b[k] + wc * c[k])
        })
        .collect();
    PointCloud::new(points)
}
