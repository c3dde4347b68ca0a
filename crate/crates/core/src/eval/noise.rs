//! Synthetic camera-pose noise in the so(3) tangent space.

use nalgebra::Matrix3;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{Camera, Vec3};

/// `exp([w]x)` by Rodrigues' formula.
pub fn so3_exp(w: &Vec3) -> Matrix3<f64> {
    let theta = w.norm();
    let k = Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0);
    if theta < 1e-12 {
        // Second-order series keeps tiny rotations orthonormal to rounding.
        return Matrix3::identity() + k + k * k * 0.5;
    }
    let (s, c) = theta.sin_cos();
    Matrix3::identity() + k * (s / theta) + k * k * ((1.0 - c) / (theta * theta))
}

/// Geodesic angle of a rotation matrix, in radians.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

/// Left-multiplies the extrinsic rotation by `exp([w]x)` and adds Gaussian
/// noise to the extrinsic translation.
pub fn perturb_pose<R: Rng + ?Sized>(camera: &Camera, sigma_r: f64, sigma_t: f64, rng: &mut R) -> Result<Camera> {
    if !(sigma_r >= 0.0 && sigma_t >= 0.0) {
        return Err(Error::invalid("noise sigmas must be non-negative"));
    }
    let (w, d) = draw_noise(sigma_r, sigma_t, rng);
    Ok(camera.with_pose(so3_exp(&w) * camera.rotation, camera.translation + d))
}

/// Rotation vector and translation offset for one perturbation.
pub fn draw_noise<R: Rng + ?Sized>(sigma_r: f64, sigma_t: f64, rng: &mut R) -> (Vec3, Vec3) {
    let mut draw = |sigma: f64| {
        if sigma == 0.0 {
            Vec3::zeros()
        } else {
            let n = Normal::new(0.0, sigma).expect("finite sigma");
            Vec3::new(n.sample(rng), n.sample(rng), n.sample(rng))
        }
    };
    let w = draw(sigma_r);
    let d = draw(sigma_t);
    (w, d)
}

/// Nearest-rank percentile (`q` in `[0, 1]`) of unsorted data.
pub fn percentile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let rank = ((q * values.len() as f64).ceil() as usize).clamp(1, values.len());
    values[rank - 1]
}

/// 95th percentiles of the rotation angle (degrees, measured on the perturbed
/// matrix) and translation offset norm (meters) over `draws` samples.
pub fn noise_percentiles<R: Rng + ?Sized>(sigma_r: f64, sigma_t: f64, draws: usize, rng: &mut R) -> (f64, f64) {
    let base = Camera::canonical(8, 8, 0.0, 8.0);
    let mut angles = Vec::with_capacity(draws);
    let mut shifts = Vec::with_capacity(draws);
    for _ in 0..draws {
        let cam = perturb_pose(&base, sigma_r, sigma_t, rng).expect("valid sigmas");
        angles.push(rotation_angle(&(cam.rotation * base.rotation.transpose())).to_degrees());
        shifts.push((cam.translation - base.translation).norm());
    }
    (percentile(&mut angles, 0.95), percentile(&mut shifts, 0.95))
}
