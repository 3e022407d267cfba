//! Pinhole camera with a world-from-camera pose.
//!
//! Camera frame: x right, y down, z forward. Pixel `(u, v)` has its center
//! at image coordinates `(u, v)`; the pixel area spans `[u - 0.5, u + 0.5)`.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::util::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    /// Focal length in pixels.
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-from-camera rotation as a unit quaternion `[w, x, y, z]`.
    pub rotation: [f64; 4],
    /// Camera center in world coordinates.
    pub translation: Vec3,
}

impl Camera {
    pub fn new(focal: f64, cx: f64, cy: f64, rotation: &UnitQuaternion<f64>, translation: Vec3) -> Self {
        let q = rotation.quaternion();
        Self {
            focal,
            cx,
            cy,
            rotation: [q.w, q.i, q.j, q.k],
            translation,
        }
    }

    /// Camera at `eye` looking at `target`; image-down is opposite to `up`.
    pub fn look_at(focal: f64, cx: f64, cy: f64, eye: Vec3, target: Vec3, up: Vec3) -> Self {
        let forward = (Vector3::from(target) - Vector3::from(eye)).normalize();
        let right = forward.cross(&Vector3::from(up)).normalize();
        let down = forward.cross(&right);
        let m = Matrix3::from_columns(&[right, down, forward]);
        let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m));
        Self::new(focal, cx, cy, &rot, eye)
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        let [w, x, y, z] = self.rotation;
        UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z))
    }

    /// World-from-camera rotation matrix.
    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.quaternion().to_rotation_matrix().into_inner()
    }

    pub fn world_to_camera(&self, x: Vec3) -> Vec3 {
        let r = self.rotation_matrix();
        let d = Vector3::from(x) - Vector3::from(self.translation);
        (r.transpose() * d).into()
    }

    /// Image coordinates and camera-frame depth of a world point. Returns
    /// `None` when the point is not strictly in front of the camera.
    pub fn project(&self, x: Vec3) -> Option<([f64; 2], f64)> {
        let c = self.world_to_camera(x);
        if !(c[2] > 0.0) {
            return None;
        }
        Some((
            [self.focal * c[0] / c[2] + self.cx, self.focal * c[1] / c[2] + self.cy],
            c[2],
        ))
    }

    /// World-space ray through image coordinates `px`: origin and a
    /// direction whose camera-frame z component is 1, so the ray
    /// parameter equals camera depth.
    pub fn pixel_ray(&self, px: [f64; 2]) -> (Vec3, Vec3) {
        let dc = Vector3::new((px[0] - self.cx) / self.focal, (px[1] - self.cy) / self.focal, 1.0);
        let dw = self.rotation_matrix() * dc;
        (self.translation, dw.into())
    }

    /// Pixel `(u, v)` whose area contains image coordinates `px`.
    pub fn pixel_of(px: [f64; 2], width: usize, height: usize) -> Option<(usize, usize)> {
        let u = (px[0] + 0.5).floor();
        let v = (px[1] + 0.5).floor();
        if u < 0.0 || v < 0.0 || u >= width as f64 || v >= height as f64 {
            return None;
        }
        Some((u as usize, v as usize))
    }
}
