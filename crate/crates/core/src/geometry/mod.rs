//! Cameras, rays, triangle meshes and accelerated ray casting.

pub mod bvh;
pub mod camera;
pub mod cloud;
pub mod io;
pub mod mesh;
pub mod ray;
#[doc(hidden)]
pub mod testing;

pub use bvh::{intersect_brute_force, Aabb, Bvh, Scene};
pub use camera::{Camera, Projection};
pub use cloud::PointCloud;
pub use mesh::{MeshBuilder, TriangleMesh};
pub use ray::Ray;

pub type Vec3 = nalgebra::Vector3<f64>;
