//! Triangle soups. Meshes may be open; nothing here assumes an inside.

use nalgebra::Rotation3;
use rand::Rng;

use super::ray::Ray;
use super::Vec3;
use crate::error::{Error, Result};

/// Smallest admissible triangle area, in square meters.
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    /// Optional per-face category ids, one per triangle.
    pub labels: Option<Vec<u32>>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>, labels: Option<Vec<u32>>) -> Result<Self> {
        let mesh = TriangleMesh {
            vertices,
            triangles,
            labels,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if let Some(v) = self.vertices.iter().find(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid(format!("non-finite vertex {v:?}")));
        }
        for (i, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&k| k as usize >= n) {
                return Err(Error::invalid(format!("triangle {i} references a missing vertex")));
            }
            if self.area(i) <= MIN_TRIANGLE_AREA {
                return Err(Error::invalid(format!("triangle {i} is degenerate")));
            }
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.triangles.len() {
                return Err(Error::invalid("label count differs from triangle count"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn corners(&self, tri: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[tri];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn area(&self, tri: usize) -> f64 {
        let [a, b, c] = self.corners(tri);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Unit geometric normal (orientation follows the winding order).
    pub fn normal(&self, tri: usize) -> Vec3 {
        let [a, b, c] = self.corners(tri);
        (b - a).cross(&(c - a)).normalize()
    }

    pub fn label(&self, tri: usize) -> Option<u32> {
        self.labels.as_ref().map(|l| l[tri])
    }

    /// Appends `other`, keeping labels only when both sides carry them.
    pub fn append(&mut self, other: &TriangleMesh) {
        let base = self.vertices.len() as u32;
        let had_tris = !self.triangles.is_empty();
        self.labels = match (self.labels.take(), &other.labels) {
            (Some(mut a), Some(b)) => {
                a.extend_from_slice(b);
                Some(a)
            }
            (None, Some(b)) if !had_tris => Some(b.clone()),
            (Some(a), None) if other.triangles.is_empty() => Some(a),
            _ => None,
        };
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles
            .extend(other.triangles.iter().map(|t| [t[0] + base, t[1] + base, t[2] + base]));
    }

    /// Rigidly moved copy, `x -> R x + t`.
    pub fn transformed(&self, rotation: &Rotation3<f64>, translation: &Vec3) -> Self {
        TriangleMesh {
            vertices: self.vertices.iter().map(|v| rotation * v + translation).collect(),
            triangles: self.triangles.clone(),
            labels: self.labels.clone(),
        }
    }

    pub fn total_area(&self) -> f64 {
        (0..self.len()).map(|i| self.area(i)).sum()
    }

    /// Area-weighted uniform samples on the surface, as `(point, triangle)`.
    pub fn sample_surface<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<(Vec3, usize)> {
        if self.is_empty() || n == 0 {
            return Vec::new();
        }
        let mut cdf = Vec::with_capacity(self.len());
        let mut acc = 0.0;
        for i in 0..self.len() {
            acc += self.area(i);
            cdf.push(acc);
        }
        (0..n)
            .map(|_| {
                let r = rng.gen::<f64>() * acc;
                let tri = cdf.partition_point(|&c| c < r).min(self.len() - 1);
                let [a, b, c] = self.corners(tri);
                let (mut s, mut t) = (rng.gen::<f64>(), rng.gen::<f64>());
                if s + t > 1.0 {
                    s = 1.0 - s;
                    t = 1.0 - t;
                }
                (a + (b - a) * s + (c - a) * t, tri)
            })
            .collect()
    }

    /// Euclidean distance from `p` to the closest point of triangle `tri`.
    pub fn point_triangle_distance(&self, p: &Vec3, tri: usize) -> f64 {
        let [a, b, c] = self.corners(tri);
        (p - closest_point_on_triangle(p, &a, &b, &c)).norm()
    }
}

/// Möller–Trumbore ray/triangle test, double-sided. Returns the ray parameter.
#[inline]
pub fn intersect_triangle(ray: &Ray, a: &Vec3, b: &Vec3, c: &Vec3) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let p = ray.direction.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = ray.origin - a;
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = ray.direction.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    Some(e2.dot(&q) * inv)
}

/// Closest point on a triangle (Ericson, Real-Time Collision Detection 5.1.5).
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

/// Incremental mesh construction from primitive pieces.
#[derive(Debug, Default)]
pub struct MeshBuilder {
    vertices: Vec<Vec3>,
    triangles: Vec<[u32; 3]>,
    labels: Vec<u32>,
}

impl MeshBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    /// Quad `a, b, c, d` in order around its boundary.
    pub fn quad(&mut self, a: Vec3, b: Vec3, c: Vec3, d: Vec3, label: u32) -> &mut Self {
        let base = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&[a, b, c, d]);
        self.triangles.push([base, base + 1, base + 2]);
        self.triangles.push([base, base + 2, base + 3]);
        self.labels.extend_from_slice(&[label, label]);
        self
    }

    /// Axis-aligned box between `lo` and `hi`; `skip_top` leaves it open at +y.
    pub fn aabb_box(&mut self, lo: Vec3, hi: Vec3, label: u32, skip_top: bool) -> &mut Self {
        let p = |x: f64, y: f64, z: f64| Vec3::new(x, y, z);
        let (x0, y0, z0, x1, y1, z1) = (lo.x, lo.y, lo.z, hi.x, hi.y, hi.z);
        self.quad(p(x0, y0, z0), p(x1, y0, z0), p(x1, y0, z1), p(x0, y0, z1), label);
        if !skip_top {
            self.quad(p(x0, y1, z0), p(x0, y1, z1), p(x1, y1, z1), p(x1, y1, z0), label);
        }
        self.quad(p(x0, y0, z0), p(x0, y1, z0), p(x1, y1, z0), p(x1, y0, z0), label);
        self.quad(p(x0, y0, z1), p(x1, y0, z1), p(x1, y1, z1), p(x0, y1, z1), label);
        self.quad(p(x0, y0, z0), p(x0, y0, z1), p(x0, y1, z1), p(x0, y1, z0), label);
        self.quad(p(x1, y0, z0), p(x1, y1, z0), p(x1, y1, z1), p(x1, y0, z1), label);
        self
    }

    pub fn build(self) -> Result<TriangleMesh> {
        TriangleMesh::new(self.vertices, self.triangles, Some(self.labels))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_bad_indices_and_degenerates() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
        assert!(TriangleMesh::new(v.clone(), vec![[0, 1, 3]], None).is_err());
        assert!(TriangleMesh::new(v.clone(), vec![[0, 1, 1]], None).is_err());
        assert!(TriangleMesh::new(v.clone(), vec![[0, 1, 2]], Some(vec![])).is_err());
        assert!(TriangleMesh::new(v, vec![[0, 1, 2]], Some(vec![7])).is_ok());
    }

    #[test]
    fn open_meshes_are_fine() {
        let mut b = MeshBuilder::new();
        b.aabb_box(Vec3::zeros(), Vec3::repeat(1.0), 0, true);
        let m = b.build().unwrap();
        assert_eq!(m.len(), 10);
        assert!((m.total_area() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn surface_samples_lie_on_their_triangles() {
        let mut b = MeshBuilder::new();
        b.aabb_box(Vec3::zeros(), Vec3::new(1.0, 2.0, 0.5), 0, false);
        let m = b.build().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (p, tri) in m.sample_surface(500, &mut rng) {
            assert!(m.point_triangle_distance(&p, tri) < 1e-12);
        }
    }

    #[test]
    fn closest_point_regions() {
        let (a, b, c) = (Vec3::zeros(), Vec3::x(), Vec3::y());
        let q = closest_point_on_triangle(&Vec3::new(0.2, 0.2, 1.0), &a, &b, &c);
        assert!((q - Vec3::new(0.2, 0.2, 0.0)).norm() < 1e-12);
        let q = closest_point_on_triangle(&Vec3::new(-1.0, -1.0, 0.0), &a, &b, &c);
        assert_eq!(q, a);
        let q = closest_point_on_triangle(&Vec3::new(1.0, 1.0, 0.0), &a, &b, &c);
        assert!((q - Vec3::new(0.5, 0.5, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn append_offsets_indices() {
        let mut b = MeshBuilder::new();
        b.quad(Vec3::zeros(), Vec3::x(), Vec3::new(1.0, 1.0, 0.0), Vec3::y(), 1);
        let q = b.build().unwrap();
        let mut m = q.clone();
        m.append(&q);
        assert_eq!(m.len(), 4);
        assert_eq!(m.triangles[2], [4, 5, 6]);
        assert_eq!(m.labels.as_ref().unwrap().len(), 4);
        m.validate().unwrap();
    }
}
