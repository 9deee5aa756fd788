//! Spherical look-at cameras, relative view deltas, and target rays.
//!
//! A pose sits at `r (cos phi cos theta, cos phi sin theta, sin phi)` looking
//! at the origin with world `+z` as up. Camera space is right-handed with the
//! camera looking down `-z`.

use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};

use num_traits::{Euclid, Float};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    Float::sqrt(dot(a, a))
}

#[inline]
pub fn normalize(a: Vec3) -> Vec3 {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = Euclid::rem_euclid(&(a + PI), &TAU) - PI;
    if w <= -PI {
        w + TAU
    } else {
        w
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPose {
    /// Azimuth in `[0, 2 pi)`.
    pub theta: f64,
    /// Elevation, strictly inside `(-pi/2, pi/2)`.
    pub phi: f64,
    pub radius: f64,
}

/// World-to-camera rigid transform `x_cam = R x_world + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Extrinsics {
    pub rotation: [[f64; 3]; 3],
    pub translation: Vec3,
}

impl Extrinsics {
    pub fn apply(&self, p: Vec3) -> Vec3 {
        let r = &self.rotation;
        [dot(r[0], p) + self.translation[0], dot(r[1], p) + self.translation[1], dot(r[2], p) + self.translation[2]]
    }

    /// `R^T v`: a camera-space direction in world space.
    pub fn rotate_inverse(&self, v: Vec3) -> Vec3 {
        let r = &self.rotation;
        [
            r[0][0] * v[0] + r[1][0] * v[1] + r[2][0] * v[2],
            r[0][1] * v[0] + r[1][1] * v[1] + r[2][1] * v[2],
            r[0][2] * v[0] + r[1][2] * v[1] + r[2][2] * v[2],
        ]
    }

    pub fn apply_inverse(&self, p: Vec3) -> Vec3 {
        let t = self.translation;
        self.rotate_inverse([p[0] - t[0], p[1] - t[1], p[2] - t[2]])
    }

    pub fn determinant(&self) -> f64 {
        let r = &self.rotation;
        dot(r[0], cross(r[1], r[2]))
    }
}

impl CameraPose {
    /// Radians; azimuth is wrapped into `[0, 2 pi)`.
    pub fn new(theta: f64, phi: f64, radius: f64) -> Result<Self> {
        if !(theta.is_finite() && phi.is_finite() && radius.is_finite()) || radius <= 0.0 {
            return Err(Error::Invalid(alloc::format!(
                "camera pose ({theta}, {phi}, {radius}) is not finite with positive radius"
            )));
        }
        if phi.abs() >= PI / 2.0 || Float::cos(phi) < 1e-9 {
            return Err(Error::GimbalPose(phi));
        }
        let mut theta = Euclid::rem_euclid(&theta, &TAU);
        if theta >= TAU {
            theta = 0.0;
        }
        Ok(CameraPose { theta, phi, radius })
    }

    /// Degrees. The azimuth is reduced modulo 360 before conversion, so
    /// `theta_deg` and `theta_deg + 360` give bitwise identical poses.
    pub fn from_degrees(theta_deg: f64, phi_deg: f64, radius: f64) -> Result<Self> {
        if !theta_deg.is_finite() {
            return Err(Error::Invalid(alloc::format!("azimuth {theta_deg} is not finite")));
        }
        Self::new(Euclid::rem_euclid(&theta_deg, &360.0).to_radians(), phi_deg.to_radians(), radius)
    }

    pub fn theta_deg(&self) -> f64 {
        self.theta.to_degrees()
    }

    pub fn phi_deg(&self) -> f64 {
        self.phi.to_degrees()
    }

    pub fn position(&self) -> Vec3 {
        let (st, ct) = Float::sin_cos(self.theta);
        let (sp, cp) = Float::sin_cos(self.phi);
        [self.radius * cp * ct, self.radius * cp * st, self.radius * sp]
    }

    pub fn extrinsics(&self) -> Extrinsics {
        let c = self.position();
        let z = normalize(c);
        let forward = [-z[0], -z[1], -z[2]];
        let x = normalize(cross(forward, [0.0, 0.0, 1.0]));
        let y = cross(z, x);
        let rotation = [x, y, z];
        let translation = [-dot(x, c), -dot(y, c), -dot(z, c)];
        Extrinsics { rotation, translation }
    }

    pub fn world_to_camera(&self, points: &[Vec3]) -> Vec<Vec3> {
        let e = self.extrinsics();
        points.iter().map(|&p| e.apply(p)).collect()
    }
}

/// Relative pose change; the azimuth part is wrapped into `(-pi, pi]`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct ViewDelta {
    pub d_theta: f64,
    pub d_phi: f64,
    pub d_radius: f64,
}

pub fn view_delta(from: &CameraPose, to: &CameraPose) -> ViewDelta {
    ViewDelta {
        d_theta: wrap_angle(to.theta - from.theta),
        d_phi: to.phi - from.phi,
        d_radius: to.radius - from.radius,
    }
}

impl ViewDelta {
    /// `[d_theta, sin d_phi, cos d_phi, d_radius]`.
    pub fn embed(&self) -> [f64; 4] {
        [self.d_theta, Float::sin(self.d_phi), Float::cos(self.d_phi), self.d_radius]
    }
}

/// One ray per pixel, row-major, through pixel centers.
#[derive(Clone, Debug, PartialEq)]
pub struct RayBatch {
    pub height: usize,
    pub width: usize,
    pub origins: Vec<Vec3>,
    pub directions: Vec<Vec3>,
    pub near: f64,
    pub far: f64,
}

/// Camera-space direction of the ray through pixel `(i, j)`.
pub fn pixel_direction(i: usize, j: usize, height: usize, width: usize, fov_deg: f64) -> Vec3 {
    let tan_half = Float::tan(fov_deg.to_radians() / 2.0);
    let aspect = width as f64 / height as f64;
    let x = (2.0 * (j as f64 + 0.5) / width as f64 - 1.0) * tan_half * aspect;
    let y = -(2.0 * (i as f64 + 0.5) / height as f64 - 1.0) * tan_half;
    normalize([x, y, -1.0])
}

pub fn target_rays(pose: &CameraPose, height: usize, width: usize, fov_deg: f64) -> Result<RayBatch> {
    if height < 2 || width < 2 {
        return Err(Error::Invalid(alloc::format!("ray grid {height}x{width} must be at least 2x2")));
    }
    if !(fov_deg > 0.0 && fov_deg < 120.0) {
        return Err(Error::Invalid(alloc::format!("field of view {fov_deg} outside (0, 120) degrees")));
    }
    let e = pose.extrinsics();
    let origin = pose.position();
    let mut directions = Vec::with_capacity(height * width);
    for i in 0..height {
        for j in 0..width {
            directions.push(normalize(e.rotate_inverse(pixel_direction(i, j, height, width, fov_deg))));
        }
    }
    let half_diag = Float::sqrt(3.0);
    Ok(RayBatch {
        height,
        width,
        origins: alloc::vec![origin; height * width],
        directions,
        near: (pose.radius - half_diag).max(1e-6),
        far: pose.radius + half_diag,
    })
}

/// Entry and exit distances of a ray through `[-extent, extent]^3`.
pub fn ray_cube_interval(origin: Vec3, dir: Vec3, extent: f64) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for k in 0..3 {
        if dir[k].abs() < 1e-12 {
            if origin[k].abs() > extent {
                return None;
            }
            continue;
        }
        let a = (-extent - origin[k]) / dir[k];
        let b = (extent - origin[k]) / dir[k];
        t0 = t0.max(a.min(b));
        t1 = t1.min(a.max(b));
    }
    let t0 = t0.max(0.0);
    (t1 > t0).then_some((t0, t1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_aligned_pose() {
        let p = CameraPose::new(0.0, 0.0, 2.0).unwrap();
        let pos = p.position();
        assert!((pos[0] - 2.0).abs() < 1e-15 && pos[1].abs() < 1e-15 && pos[2].abs() < 1e-15);
        let o = p.extrinsics().apply([0.0; 3]);
        assert!(o[0].abs() < 1e-12 && o[1].abs() < 1e-12 && (o[2] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn pole_is_rejected() {
        assert_eq!(CameraPose::new(0.0, PI / 2.0, 1.0), Err(Error::GimbalPose(PI / 2.0)));
        assert!(CameraPose::from_degrees(10.0, -90.0, 1.0).is_err());
        assert!(CameraPose::new(0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn wrapping_boundary_is_plus_pi() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
    }

    #[test]
    fn cube_interval_of_axis_ray() {
        let (a, b) = ray_cube_interval([2.0, 0.0, 0.0], [-1.0, 0.0, 0.0], 1.0).unwrap();
        assert!((a - 1.0).abs() < 1e-12 && (b - 3.0).abs() < 1e-12);
        assert!(ray_cube_interval([2.0, 0.0, 0.0], [0.0, 1.0, 0.0], 1.0).is_none());
    }
}
