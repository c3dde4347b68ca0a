//! Random geometry shared by unit and integration tests.

use rand::Rng;

use super::mesh::TriangleMesh;
use super::Vec3;

/// Random non-degenerate triangles scattered in `[-2, 2]^3`.
pub fn random_soup<R: Rng>(rng: &mut R, n: usize) -> TriangleMesh {
    let mut vertices = Vec::with_capacity(3 * n);
    let mut triangles = Vec::with_capacity(n);
    while triangles.len() < n {
        let c = Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let mut jitter = || Vec3::new(rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8));
        let (a, b, d) = (c + jitter(), c + jitter(), c + jitter());
        if (b - a).cross(&(d - a)).norm() < 1e-3 {
            continue;
        }
        let base = vertices.len() as u32;
        vertices.extend_from_slice(&[a, b, d]);
        triangles.push([base, base + 1, base + 2]);
    }
    TriangleMesh::new(vertices, triangles, None).expect("valid soup")
}
