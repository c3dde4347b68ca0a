//! Bounding volume hierarchy over a [`TriangleMesh`], returning every hit
//! along a ray rather than only the closest one.

use super::mesh::{intersect_triangle, TriangleMesh};
use super::ray::Ray;
use super::Vec3;

/// Hits closer than this to the ray origin are ignored.
pub const SELF_HIT_EPSILON: f64 = 1e-6;
/// Hits closer than this to the previous kept hit are merged (shared edges).
pub const DEDUP_EPSILON: f64 = 1e-6;

const LEAF_SIZE: usize = 4;
const BOX_PAD: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn empty() -> Self {
        Aabb {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    pub fn contains(&self, other: &Aabb) -> bool {
        (0..3).all(|k| self.min[k] <= other.min[k] && self.max[k] >= other.max[k])
    }

    fn padded(&self) -> Aabb {
        Aabb {
            min: self.min.add_scalar(-BOX_PAD),
            max: self.max.add_scalar(BOX_PAD),
        }
    }

    /// Slab test against `[0, t_max]`.
    #[inline]
    fn hit(&self, ray: &Ray, inv_dir: &Vec3, t_max: f64) -> bool {
        let mut lo = 0.0f64;
        let mut hi = t_max;
        for k in 0..3 {
            if ray.direction[k] == 0.0 {
                if ray.origin[k] < self.min[k] || ray.origin[k] > self.max[k] {
                    return false;
                }
                continue;
            }
            let t1 = (self.min[k] - ray.origin[k]) * inv_dir[k];
            let t2 = (self.max[k] - ray.origin[k]) * inv_dir[k];
            lo = lo.max(t1.min(t2));
            hi = hi.min(t1.max(t2));
            if lo > hi {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone)]
pub struct BvhNode {
    pub bounds: Aabb,
    /// Leaf: first index into the triangle permutation. Interior: left child.
    pub first: u32,
    /// Leaf: number of triangles. Interior: zero.
    pub count: u32,
    /// Interior: right child index.
    pub right: u32,
}

impl BvhNode {
    pub fn is_leaf(&self) -> bool {
        self.count > 0
    }
}

#[derive(Debug, Clone, Default)]
pub struct Bvh {
    pub nodes: Vec<BvhNode>,
    /// Triangle indices in leaf order.
    pub order: Vec<u32>,
}

impl Bvh {
    pub fn build(mesh: &TriangleMesh) -> Self {
        let n = mesh.len();
        if n == 0 {
            return Bvh::default();
        }
        let boxes: Vec<Aabb> = (0..n)
            .map(|i| {
                let mut b = Aabb::empty();
                for v in mesh.corners(i) {
                    b.grow(&v);
                }
                b.padded()
            })
            .collect();
        let centroids: Vec<Vec3> = boxes.iter().map(|b| (b.min + b.max) * 0.5).collect();
        let mut bvh = Bvh {
            nodes: Vec::with_capacity(2 * n / LEAF_SIZE + 1),
            order: (0..n as u32).collect(),
        };
        bvh.build_node(&boxes, &centroids, 0, n);
        bvh
    }

    fn build_node(&mut self, boxes: &[Aabb], centroids: &[Vec3], start: usize, end: usize) -> u32 {
        let mut bounds = Aabb::empty();
        let mut cbounds = Aabb::empty();
        for &t in &self.order[start..end] {
            bounds = bounds.union(&boxes[t as usize]);
            cbounds.grow(&centroids[t as usize]);
        }
        let index = self.nodes.len() as u32;
        let extent = cbounds.max - cbounds.min;
        let axis = extent.imax();
        if end - start <= LEAF_SIZE || extent[axis] <= 0.0 {
            self.nodes.push(BvhNode {
                bounds,
                first: start as u32,
                count: (end - start) as u32,
                right: 0,
            });
            return index;
        }
        self.order[start..end].sort_by(|&a, &b| {
            centroids[a as usize][axis].total_cmp(&centroids[b as usize][axis])
        });
        let mid = start + (end - start) / 2;
        self.nodes.push(BvhNode {
            bounds,
            first: 0,
            count: 0,
            right: 0,
        });
        let left = self.build_node(boxes, centroids, start, mid);
        let right = self.build_node(boxes, centroids, mid, end);
        self.nodes[index as usize].first = left;
        self.nodes[index as usize].right = right;
        index
    }

    /// Visits the triangles of every leaf whose box the ray enters before `t_max`.
    fn traverse(&self, ray: &Ray, t_max: f64, mut visit: impl FnMut(usize) -> bool) {
        if self.nodes.is_empty() {
            return;
        }
        let inv = ray.direction.map(|d| 1.0 / d);
        let mut stack = Vec::with_capacity(64);
        stack.push(0u32);
        while let Some(i) = stack.pop() {
            let node = &self.nodes[i as usize];
            if !node.bounds.hit(ray, &inv, t_max) {
                continue;
            }
            if node.is_leaf() {
                let range = node.first as usize..(node.first + node.count) as usize;
                for &tri in &self.order[range] {
                    if !visit(tri as usize) {
                        return;
                    }
                }
            } else {
                stack.push(node.right);
                stack.push(node.first);
            }
        }
    }

    /// All intersection distances in `(SELF_HIT_EPSILON, z_max]`, sorted and deduplicated.
    pub fn intersect_all(&self, mesh: &TriangleMesh, ray: &Ray, z_max: f64) -> Vec<f64> {
        let mut hits = Vec::new();
        self.traverse(ray, z_max, |tri| {
            let [a, b, c] = mesh.corners(tri);
            if let Some(t) = intersect_triangle(ray, &a, &b, &c) {
                if t > SELF_HIT_EPSILON && t <= z_max {
                    hits.push(t);
                }
            }
            true
        });
        sort_and_dedup(hits)
    }

    /// Closest hit in `(SELF_HIT_EPSILON, z_max]` as `(distance, triangle)`.
    pub fn first_hit(&self, mesh: &TriangleMesh, ray: &Ray, z_max: f64) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        if self.nodes.is_empty() {
            return None;
        }
        let inv = ray.direction.map(|d| 1.0 / d);
        let mut stack = Vec::with_capacity(64);
        stack.push(0u32);
        while let Some(i) = stack.pop() {
            let node = &self.nodes[i as usize];
            let limit = best.map_or(z_max, |b| b.0);
            if !node.bounds.hit(ray, &inv, limit) {
                continue;
            }
            if node.is_leaf() {
                for &tri in &self.order[node.first as usize..(node.first + node.count) as usize] {
                    let [a, b, c] = mesh.corners(tri as usize);
                    if let Some(t) = intersect_triangle(ray, &a, &b, &c) {
                        let better = match best {
                            None => true,
                            Some((bt, btri)) => t < bt || (t == bt && (tri as usize) < btri),
                        };
                        if t > SELF_HIT_EPSILON && t <= z_max && better {
                            best = Some((t, tri as usize));
                        }
                    }
                }
            } else {
                stack.push(node.right);
                stack.push(node.first);
            }
        }
        best
    }

    /// Whether anything is hit in `(SELF_HIT_EPSILON, t_max)`.
    pub fn occluded(&self, mesh: &TriangleMesh, ray: &Ray, t_max: f64) -> bool {
        let mut found = false;
        self.traverse(ray, t_max, |tri| {
            let [a, b, c] = mesh.corners(tri);
            if let Some(t) = intersect_triangle(ray, &a, &b, &c) {
                if t > SELF_HIT_EPSILON && t < t_max {
                    found = true;
                    return false;
                }
            }
            true
        });
        found
    }
}

/// Every-triangle sweep with the same hit filter and dedup rule as the BVH.
pub fn intersect_brute_force(mesh: &TriangleMesh, ray: &Ray, z_max: f64) -> Vec<f64> {
    let hits = (0..mesh.len())
        .filter_map(|tri| {
            let [a, b, c] = mesh.corners(tri);
            intersect_triangle(ray, &a, &b, &c)
        })
        .filter(|&t| t > SELF_HIT_EPSILON && t <= z_max)
        .collect();
    sort_and_dedup(hits)
}

fn sort_and_dedup(mut hits: Vec<f64>) -> Vec<f64> {
    hits.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = Vec::with_capacity(hits.len());
    for t in hits {
        match out.last() {
            Some(&last) if t - last <= DEDUP_EPSILON => {}
            _ => out.push(t),
        }
    }
    out
}

/// A mesh together with its acceleration structure.
#[derive(Debug, Clone)]
pub struct Scene {
    pub mesh: TriangleMesh,
    pub bvh: Bvh,
}

impl Scene {
    pub fn new(mesh: TriangleMesh) -> Self {
        let bvh = Bvh::build(&mesh);
        Scene { mesh, bvh }
    }

    pub fn intersect_ray(&self, ray: &Ray, z_max: f64) -> Vec<f64> {
        self.bvh.intersect_all(&self.mesh, ray, z_max)
    }

    pub fn first_hit(&self, ray: &Ray, z_max: f64) -> Option<(f64, usize)> {
        self.bvh.first_hit(&self.mesh, ray, z_max)
    }

    pub fn occluded(&self, ray: &Ray, t_max: f64) -> bool {
        self.bvh.occluded(&self.mesh, ray, t_max)
    }
}
