//! Analytic ray-cast scenes with exact dense ground truth.
//!
//! A [`Scene`] is a list of spheres, boxes and planes, each carrying a rigid
//! motion (translation path plus a spin about its own center, the spin
//! realized as a unit-quaternion path) and optionally a radial pulsation
//! `s(t) = 1 + a·sin(2π f t)` (spheres only). A primitive maps rest-frame
//! material points to the world by
//!
//! `x(t) = c + T(t) + s(t) · R(t) · (x_rest − c)`
//!
//! where `c` is the shape's rest center. Ground truth follows material
//! points through this map, so trajectories are exact.
//!
//! Presets (world y up, room floor at y = 0, back wall at z = 10, side
//! walls at x = ±5; `seed` jitters object placement by at most ±0.3):
//!
//! | preset               | camera  | moving content                                         |
//! |----------------------|---------|--------------------------------------------------------|
//! | `static_room`        | moving  | none (table, ball, pillar)                             |
//! | `rigid_orbit`        | moving  | box orbiting a vertical axis while spinning; ball on a Bézier path |
//! | `pulsing_sphere`     | static  | one sphere, r ∈ [0.8, 1.0], pulsation a ∈ [0.3, 0.4], f = 1 |
//! | `two_body_occlusion` | static  | near sphere and far box crossing in opposite directions |
//! | `mixed`              | static  | fronto-parallel panel sliding 0.875 along −x, pulsing sphere, orbiting box |
//!
//! The `mixed` panel sits 4 units in front of a camera with `f = W`, so for
//! `N = 8`, `W = 64` it moves exactly 2 px per frame and its pixels have
//! exact cross-frame correspondences.

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::{Correspondence, GroundTruthBundle, PixelRef, NO_SEGMENT};
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::field::default_timestamps;
use crate::util::{add, dist, dot, norm, scale, sub, Vec3};

/// Smallest accepted ray parameter.
const RAY_EPS: f64 = 1e-9;
/// Visibility depth tolerance, relative to scene scale.
pub const VISIBILITY_TOL: f64 = 1e-4;
/// Material-point agreement required for a correspondence, relative to scene scale.
pub const CORRESPONDENCE_TOL: f64 = 1e-9;
/// Cap on stored correspondences per sequence.
pub const MAX_CORRESPONDENCES: usize = 10_000;

pub const PRESETS: [&str; 5] = ["static_room", "rigid_orbit", "pulsing_sphere", "two_body_occlusion", "mixed"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Sphere { center: Vec3, radius: f64 },
    Box { center: Vec3, half_extents: Vec3 },
    Plane { point: Vec3, normal: Vec3 },
}

impl Shape {
    pub fn center(&self) -> Vec3 {
        match *self {
            Shape::Sphere { center, .. } | Shape::Box { center, .. } => center,
            Shape::Plane { point, .. } => point,
        }
    }

    /// Nearest ray parameter `λ > RAY_EPS` with `o + λ d` on the surface.
    fn intersect(&self, o: Vec3, d: Vec3) -> Option<f64> {
        match *self {
            Shape::Sphere { center, radius } => {
                let oc = sub(o, center);
                let a = dot(d, d);
                let b = dot(oc, d);
                let c = dot(oc, oc) - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                // Numerically stable roots of a λ² + 2bλ + c.
                let q = if b >= 0.0 { -(b + sq) } else { -b + sq };
                let (r1, r2) = if q != 0.0 { (q / a, c / q) } else { (0.0, 0.0) };
                let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
                if lo > RAY_EPS {
                    Some(lo)
                } else if hi > RAY_EPS {
                    Some(hi)
                } else {
                    None
                }
            }
            Shape::Box { center, half_extents } => {
                let mut near = f64::NEG_INFINITY;
                let mut far = f64::INFINITY;
                for a in 0..3 {
                    let lo = center[a] - half_extents[a];
                    let hi = center[a] + half_extents[a];
                    if d[a] == 0.0 {
                        if o[a] < lo || o[a] > hi {
                            return None;
                        }
                        continue;
                    }
                    let t1 = (lo - o[a]) / d[a];
                    let t2 = (hi - o[a]) / d[a];
                    near = near.max(t1.min(t2));
                    far = far.min(t1.max(t2));
                }
                if near > far {
                    None
                } else if near > RAY_EPS {
                    Some(near)
                } else if far > RAY_EPS {
                    Some(far)
                } else {
                    None
                }
            }
            Shape::Plane { point, normal } => {
                let denom = dot(normal, d);
                if denom.abs() <= 1e-12 * norm(d) * norm(normal) {
                    return None;
                }
                let lambda = dot(normal, sub(point, o)) / denom;
                (lambda > RAY_EPS).then_some(lambda)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TranslationPath {
    Fixed,
    /// `T(t) = t · velocity`.
    Linear { velocity: Vec3 },
    /// Cubic Bézier offsets; the first control point should be 0.
    Bezier { control: [Vec3; 4] },
    /// The center revolves about `pivot` around `axis` by `angle · t` radians.
    Orbit { pivot: Vec3, axis: Vec3, angle: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spin {
    pub axis: Vec3,
    /// Total rotation over `t ∈ [0, 1]`, radians.
    pub angle: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Motion {
    pub translation: TranslationPath,
    pub spin: Option<Spin>,
}

impl Motion {
    pub const STATIC: Motion = Motion {
        translation: TranslationPath::Fixed,
        spin: None,
    };

    pub fn is_identity(&self) -> bool {
        matches!(self.translation, TranslationPath::Fixed) && self.spin.is_none()
    }

    pub fn rotation(&self, t: f64) -> UnitQuaternion<f64> {
        match self.spin {
            Some(s) => axis_angle(s.axis, s.angle * t),
            None => UnitQuaternion::identity(),
        }
    }

    pub fn translation(&self, center: Vec3, t: f64) -> Vec3 {
        match self.translation {
            TranslationPath::Fixed => [0.0; 3],
            TranslationPath::Linear { velocity } => scale(velocity, t),
            TranslationPath::Bezier { control } => {
                let s = 1.0 - t;
                let w = [s * s * s, 3.0 * s * s * t, 3.0 * s * t * t, t * t * t];
                let mut acc = [0.0; 3];
                for (c, w) in control.iter().zip(w) {
                    acc = add(acc, scale(*c, w));
                }
                acc
            }
            TranslationPath::Orbit { pivot, axis, angle } => {
                let r = axis_angle(axis, angle * t);
                let rel = Vector3::from(sub(center, pivot));
                let moved: Vec3 = (r * rel).into();
                sub(add(moved, pivot), center)
            }
        }
    }
}

fn axis_angle(axis: Vec3, angle: f64) -> UnitQuaternion<f64> {
    let a = nalgebra::Unit::new_normalize(Vector3::from(axis));
    UnitQuaternion::from_axis_angle(&a, angle)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pulsation {
    pub amplitude: f64,
    pub frequency: f64,
}

impl Pulsation {
    pub fn scale_at(&self, t: f64) -> f64 {
        1.0 + self.amplitude * (2.0 * std::f64::consts::PI * self.frequency * t).sin()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub motion: Motion,
    pub pulsation: Option<Pulsation>,
    pub segment_id: i32,
    pub is_static: bool,
}

impl Primitive {
    pub fn fixed(shape: Shape) -> Self {
        Self {
            shape,
            motion: Motion::STATIC,
            pulsation: None,
            segment_id: 0,
            is_static: true,
        }
    }

    fn moving(shape: Shape, motion: Motion, segment_id: i32) -> Self {
        Self {
            shape,
            motion,
            pulsation: None,
            segment_id,
            is_static: false,
        }
    }

    fn validate(&self) -> Result<()> {
        match self.shape {
            Shape::Sphere { radius, .. } if !(radius > 0.0) => {
                return Err(Error::Config("sphere radius must be > 0".into()))
            }
            Shape::Box { half_extents, .. } if half_extents.iter().any(|h| !(*h > 0.0)) => {
                return Err(Error::Config("box half-extents must be > 0".into()))
            }
            Shape::Plane { normal, .. } if !(norm(normal) > 0.0) => {
                return Err(Error::Config("plane normal must be non-zero".into()))
            }
            _ => {}
        }
        if let Some(p) = self.pulsation {
            if !matches!(self.shape, Shape::Sphere { .. }) {
                return Err(Error::Config("pulsation is only supported on spheres".into()));
            }
            if !(p.amplitude.abs() < 1.0) {
                return Err(Error::Config("pulsation amplitude must be < 1".into()));
            }
        }
        let moves = !self.motion.is_identity() || self.pulsation.is_some();
        if moves == self.is_static {
            return Err(Error::Config("is_static must match the primitive's motion".into()));
        }
        Ok(())
    }

    fn scale_at(&self, t: f64) -> f64 {
        self.pulsation.map_or(1.0, |p| p.scale_at(t))
    }

    /// World position at time `t` of rest-frame material point `x`.
    pub fn forward(&self, x: Vec3, t: f64) -> Vec3 {
        if self.is_static {
            return x;
        }
        let c = self.shape.center();
        let rel = Vector3::from(sub(x, c)) * self.scale_at(t);
        let rotated: Vec3 = (self.motion.rotation(t) * rel).into();
        add(add(c, self.motion.translation(c, t)), rotated)
    }

    /// Rest-frame coordinates of world point `x` at time `t`.
    pub fn inverse(&self, x: Vec3, t: f64) -> Vec3 {
        if self.is_static {
            return x;
        }
        let c = self.shape.center();
        let rel = Vector3::from(sub(sub(x, c), self.motion.translation(c, t)));
        let back: Vec3 = (self.motion.rotation(t).inverse() * rel).into();
        add(c, scale(back, 1.0 / self.scale_at(t)))
    }

    /// Ray in the rest frame: the affine map preserves ray parameters.
    fn ray_to_rest(&self, o: Vec3, d: Vec3, t: f64) -> (Vec3, Vec3) {
        if self.is_static {
            return (o, d);
        }
        let inv_rot = self.motion.rotation(t).inverse();
        let dr: Vec3 = (inv_rot * Vector3::from(d) / self.scale_at(t)).into();
        (self.inverse(o, t), dr)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EyePath {
    Fixed { eye: Vec3 },
    Linear { start: Vec3, end: Vec3 },
}

/// Look-at camera whose eye follows a path; intrinsics scale with image
/// width (`f = focal_scale · W`, principal point at the image center).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPath {
    pub focal_scale: f64,
    pub eye: EyePath,
    pub target: Vec3,
    pub up: Vec3,
}

impl CameraPath {
    pub fn camera(&self, t: f64, width: usize, height: usize) -> Camera {
        let eye = match self.eye {
            EyePath::Fixed { eye } => eye,
            EyePath::Linear { start, end } => add(scale(start, 1.0 - t), scale(end, t)),
        };
        Camera::look_at(
            self.focal_scale * width as f64,
            width as f64 / 2.0,
            height as f64 / 2.0,
            eye,
            self.target,
            self.up,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub preset: String,
    pub seed: u64,
    pub primitives: Vec<Primitive>,
    pub camera_path: CameraPath,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        if !(self.camera_path.focal_scale > 0.0) {
            return Err(Error::Config("focal length must be > 0".into()));
        }
        for p in &self.primitives {
            p.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub primitive: usize,
    /// Hit point in the primitive's rest frame.
    pub material: Vec3,
    pub world: Vec3,
    /// Camera-frame depth.
    pub depth: f64,
}

/// Nearest intersection of the ray through image coordinates `px`.
pub fn ray_cast_px(scene: &Scene, t: f64, camera: &Camera, px: [f64; 2]) -> Option<Hit> {
    let (o, d) = camera.pixel_ray(px);
    let mut best: Option<(usize, f64, Vec3)> = None;
    for (idx, prim) in scene.primitives.iter().enumerate() {
        let (ro, rd) = prim.ray_to_rest(o, d, t);
        if let Some(lambda) = prim.shape.intersect(ro, rd) {
            if best.is_none_or(|(_, l, _)| lambda < l) {
                let material = add(ro, scale(rd, lambda));
                best = Some((idx, lambda, material));
            }
        }
    }
    best.map(|(primitive, lambda, material)| Hit {
        primitive,
        material,
        world: add(o, scale(d, lambda)),
        depth: lambda,
    })
}

/// Nearest intersection for pixel `(u, v)` at time `t`.
pub fn ray_cast(scene: &Scene, t: f64, camera: &Camera, u: usize, v: usize) -> Option<Hit> {
    ray_cast_px(scene, t, camera, [u as f64, v as f64])
}

/// The hit's material point at time `t`.
pub fn material_trajectory(scene: &Scene, hit: &Hit, t: f64) -> Vec3 {
    scene.primitives[hit.primitive].forward(hit.material, t)
}

fn room(rng: &mut ChaCha8Rng) -> Vec<Primitive> {
    let mut j = |x: f64| jitter(rng, x);
    vec![
        Primitive::fixed(Shape::Plane { point: [0.0; 3], normal: [0.0, 1.0, 0.0] }),
        Primitive::fixed(Shape::Plane { point: [0.0, 0.0, 10.0], normal: [0.0, 0.0, -1.0] }),
        Primitive::fixed(Shape::Plane { point: [-5.0, 0.0, 0.0], normal: [1.0, 0.0, 0.0] }),
        Primitive::fixed(Shape::Plane { point: [5.0, 0.0, 0.0], normal: [-1.0, 0.0, 0.0] }),
        Primitive::fixed(Shape::Box { center: [j(-2.2), 0.5, j(7.0)], half_extents: [0.8, 0.5, 0.6] }),
        Primitive::fixed(Shape::Sphere { center: [j(2.6), 0.7, j(7.5)], radius: 0.7 }),
        Primitive::fixed(Shape::Box { center: [j(3.2), 1.2, j(9.0)], half_extents: [0.5, 1.2, 0.5] }),
    ]
}

fn jitter(rng: &mut ChaCha8Rng, x: f64) -> f64 {
    x + rng.random_range(-0.3..=0.3)
}

const UP: Vec3 = [0.0, 1.0, 0.0];

fn moving_camera() -> CameraPath {
    CameraPath {
        focal_scale: 1.0,
        eye: EyePath::Linear { start: [-1.5, 2.0, -1.0], end: [1.5, 2.6, 0.2] },
        target: [0.0, 1.0, 6.0],
        up: UP,
    }
}

fn static_camera() -> CameraPath {
    CameraPath {
        focal_scale: 1.0,
        eye: EyePath::Fixed { eye: [0.0, 1.5, -2.0] },
        target: [0.0, 1.5, 8.0],
        up: UP,
    }
}

fn pulsing(center: Vec3, radius: f64, amplitude: f64) -> Primitive {
    Primitive {
        shape: Shape::Sphere { center, radius },
        motion: Motion::STATIC,
        pulsation: Some(Pulsation { amplitude, frequency: 1.0 }),
        segment_id: NO_SEGMENT,
        is_static: false,
    }
}

/// Deterministic scene for a named preset (see the module table).
pub fn build_scene(preset: &str, seed: u64) -> Result<Scene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prims = room(&mut rng);
    let camera_path = match preset {
        "static_room" => moving_camera(),
        "rigid_orbit" => {
            let c = [jitter(&mut rng, 0.0), 0.6, 5.5];
            prims.push(Primitive::moving(
                Shape::Box { center: c, half_extents: [0.5, 0.5, 0.5] },
                Motion {
                    translation: TranslationPath::Orbit {
                        pivot: [c[0] + 1.0, 0.6, 5.5],
                        axis: UP,
                        angle: std::f64::consts::PI,
                    },
                    spin: Some(Spin { axis: UP, angle: std::f64::consts::FRAC_PI_2 }),
                },
                1,
            ));
            prims.push(Primitive::moving(
                Shape::Sphere { center: [jitter(&mut rng, -1.5), 0.5, 3.5], radius: 0.5 },
                Motion {
                    translation: TranslationPath::Bezier {
                        control: [[0.0; 3], [0.8, 0.6, 0.0], [1.6, 0.6, 0.5], [2.4, 0.0, 0.5]],
                    },
                    spin: None,
                },
                2,
            ));
            moving_camera()
        }
        "pulsing_sphere" => {
            let r = rng.random_range(0.8..=1.0);
            let a = rng.random_range(0.3..=0.4);
            prims.push(pulsing([0.0, 1.3, 5.0], r, a));
            static_camera()
        }
        "two_body_occlusion" => {
            prims.push(Primitive::moving(
                Shape::Sphere { center: [-2.5, 1.2, jitter(&mut rng, 3.5)], radius: 0.6 },
                Motion { translation: TranslationPath::Linear { velocity: [5.0, 0.0, 0.0] }, spin: None },
                1,
            ));
            prims.push(Primitive::moving(
                Shape::Box { center: [2.0, 1.2, jitter(&mut rng, 6.5)], half_extents: [0.7, 0.7, 0.7] },
                Motion { translation: TranslationPath::Linear { velocity: [-4.0, 0.0, 0.0] }, spin: None },
                2,
            ));
            static_camera()
        }
        "mixed" => {
            // Front face at z = 2, four units in front of the static eye.
            prims.push(Primitive::moving(
                Shape::Box { center: [0.2, 1.0, 2.05], half_extents: [0.6, 0.5, 0.05] },
                Motion { translation: TranslationPath::Linear { velocity: [-0.875, 0.0, 0.0] }, spin: None },
                1,
            ));
            let r = rng.random_range(0.85..=0.95);
            prims.push(pulsing([1.8, 1.1, 5.0], r, 0.4));
            let c = [jitter(&mut rng, -1.8), 0.5, 6.0];
            prims.push(Primitive::moving(
                Shape::Box { center: c, half_extents: [0.4, 0.4, 0.4] },
                Motion {
                    translation: TranslationPath::Orbit {
                        pivot: [c[0], 0.5, 6.8],
                        axis: UP,
                        angle: std::f64::consts::PI,
                    },
                    spin: Some(Spin { axis: UP, angle: 1.0 }),
                },
                2,
            ));
            static_camera()
        }
        other => {
            return Err(Error::Config(format!(
                "unknown preset `{other}`; expected one of {PRESETS:?}"
            )))
        }
    };
    let scene = Scene {
        preset: preset.to_string(),
        seed,
        primitives: prims,
        camera_path,
    };
    scene.validate()?;
    Ok(scene)
}

/// Dense all-to-all ground truth for `n` frames at `height × width`.
///
/// Visibility of `X^gt_{i→j}` casts the ray through its exact projection in
/// camera `j` and accepts it when nothing lies more than
/// `VISIBILITY_TOL · scene_scale` in front. Correspondences pair pixel
/// `(i, u, v)` with the pixel nearest to its projection in frame `j > i`
/// when both see the same material point; at most
/// [`MAX_CORRESPONDENCES`] are kept (seeded subsample, original order).
pub fn generate_bundle(scene: &Scene, n: usize, height: usize, width: usize) -> Result<GroundTruthBundle> {
    scene.validate()?;
    if height == 0 || width == 0 {
        return Err(Error::Config("image size must be positive".into()));
    }
    let ts = default_timestamps(n)?;
    let hw = height * width;
    let cameras: Vec<Camera> = ts.iter().map(|&t| scene.camera_path.camera(t, width, height)).collect();

    let hits: Vec<Option<Hit>> = (0..n * hw)
        .into_par_iter()
        .map(|pix| {
            let (i, p) = (pix / hw, pix % hw);
            ray_cast(scene, ts[i], &cameras[i], p % width, p / width)
        })
        .collect();

    let mut positions = vec![0.0; n * n * hw * 3];
    let mut valid = vec![false; n * n * hw];
    for i in 0..n {
        for p in 0..hw {
            let Some(hit) = hits[i * hw + p] else { continue };
            for j in 0..n {
                let idx = (i * n + j) * hw + p;
                let x = if j == i { hit.world } else { material_trajectory(scene, &hit, ts[j]) };
                positions[idx * 3..idx * 3 + 3].copy_from_slice(&x);
                valid[idx] = true;
            }
        }
    }
    let mut gt = GroundTruthBundle::new(n, height, width, ts.clone(), positions, valid)?;
    let scale_ = gt.scene_scale;
    let vis_tol = VISIBILITY_TOL * scale_;
    let corr_tol = CORRESPONDENCE_TOL * scale_;

    // Visibility and correspondence candidates per source pixel.
    let per_pixel: Vec<(Vec<bool>, Vec<Correspondence>)> = (0..n * hw)
        .into_par_iter()
        .map(|pix| {
            let (i, p) = (pix / hw, pix % hw);
            let mut vis = vec![false; n];
            let mut corr = Vec::new();
            let Some(hit) = hits[pix] else { return (vis, corr) };
            for j in 0..n {
                let x = gt.position(i, j, p);
                let Some((px, depth)) = cameras[j].project(x) else { continue };
                let Some((uj, vj)) = Camera::pixel_of(px, width, height) else { continue };
                let seen = ray_cast_px(scene, ts[j], &cameras[j], px);
                vis[j] = seen.is_some_and(|h| h.depth >= depth - vis_tol);
                if vis[j] && j > i {
                    if let Some(other) = hits[j * hw + vj * width + uj] {
                        if other.primitive == hit.primitive && dist(other.material, hit.material) <= corr_tol {
                            corr.push(Correspondence {
                                a: PixelRef::new(i, p % width, p / width),
                                b: PixelRef::new(j, uj, vj),
                            });
                        }
                    }
                }
            }
            (vis, corr)
        })
        .collect();

    let mut visible = vec![false; n * n * hw];
    let mut correspondences = Vec::new();
    for (pix, (vis, corr)) in per_pixel.into_iter().enumerate() {
        let (i, p) = (pix / hw, pix % hw);
        for (j, v) in vis.into_iter().enumerate() {
            visible[(i * n + j) * hw + p] = v;
        }
        correspondences.extend(corr);
    }
    if correspondences.len() > MAX_CORRESPONDENCES {
        let mut rng = ChaCha8Rng::seed_from_u64(scene.seed ^ 0x636f_7272);
        let mut keep = rand::seq::index::sample(&mut rng, correspondences.len(), MAX_CORRESPONDENCES).into_vec();
        keep.sort_unstable();
        correspondences = keep.into_iter().map(|k| correspondences[k]).collect();
    }

    let mut static_mask = vec![false; n * hw];
    let mut labels = vec![NO_SEGMENT; n * hw];
    let mut depth = vec![0.0; n * hw];
    for (pix, hit) in hits.iter().enumerate() {
        if let Some(h) = hit {
            let prim = &scene.primitives[h.primitive];
            static_mask[pix] = prim.is_static;
            labels[pix] = if prim.pulsation.is_some() { NO_SEGMENT } else { prim.segment_id };
            depth[pix] = h.depth;
        }
    }
    gt.visible = Some(visible);
    gt.static_mask = Some(static_mask);
    gt.rigid_labels = Some(labels);
    gt.depth = Some(depth);
    gt.cameras = Some(cameras);
    gt.correspondences = correspondences;
    gt.validate()?;
    Ok(gt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axis_camera(width: usize, height: usize) -> Camera {
        Camera::new(100.0, width as f64 / 2.0, height as f64 / 2.0, &UnitQuaternion::identity(), [0.0; 3])
    }

    fn scene_of(prims: Vec<Primitive>) -> Scene {
        Scene {
            preset: "test".into(),
            seed: 0,
            primitives: prims,
            camera_path: static_camera(),
        }
    }

    #[test]
    fn sphere_on_axis() {
        let scene = scene_of(vec![Primitive::fixed(Shape::Sphere { center: [0.0, 0.0, 5.0], radius: 1.0 })]);
        let cam = axis_camera(64, 64);
        let hit = ray_cast(&scene, 0.3, &cam, 32, 32).unwrap();
        assert_eq!(hit.world, [0.0, 0.0, 4.0]);
        assert_eq!(hit.depth, 4.0);
        assert_eq!(hit.primitive, 0);
        assert!(ray_cast(&scene, 0.3, &cam, 0, 0).is_none());
    }

    #[test]
    fn plane_hit_matches_closed_form() {
        let scene = scene_of(vec![Primitive::fixed(Shape::Plane { point: [0.0; 3], normal: [0.0, 1.0, 0.0] })]);
        let cam = Camera::look_at(50.0, 16.0, 16.0, [0.3, 2.0, -1.0], [0.0, 0.0, 4.0], UP);
        for (u, v) in [(16, 16), (3, 29), (30, 20)] {
            let (o, d) = cam.pixel_ray([u as f64, v as f64]);
            let lambda = -o[1] / d[1];
            let hit = ray_cast(&scene, 0.0, &cam, u, v).unwrap();
            for c in 0..3 {
                assert!((hit.world[c] - (o[c] + lambda * d[c])).abs() < 1e-12);
            }
            assert!(hit.world[1].abs() < 1e-12);
        }
        // Ray parallel to the plane.
        let flat = Camera::new(50.0, 16.0, 16.0, &UnitQuaternion::identity(), [0.0, 1.0, 0.0]);
        assert!(ray_cast(&scene, 0.0, &flat, 16, 16).is_none());
    }

    #[test]
    fn material_trajectories() {
        let still = Primitive::fixed(Shape::Sphere { center: [1.0, 2.0, 3.0], radius: 0.5 });
        let x = [1.5, 2.0, 3.0];
        assert_eq!(still.forward(x, 0.7), x);
        let shift = Primitive::moving(
            Shape::Box { center: [0.0; 3], half_extents: [1.0; 3] },
            Motion {
                translation: TranslationPath::Bezier { control: [[0.0; 3], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 2.0]] },
                spin: None,
            },
            1,
        );
        let t = 0.4;
        let p = shift.motion.translation([0.0; 3], t);
        let y = shift.forward([1.0, 0.2, -0.3], t);
        for c in 0..3 {
            assert!((y[c] - ([1.0, 0.2, -0.3][c] + p[c])).abs() < 1e-15);
        }
        let pulse = pulsing([0.0; 3], 1.0, 0.2);
        let z = pulse.forward([1.0, 0.0, 0.0], 0.25);
        assert!((z[0] - 1.2).abs() < 1e-15 && z[1] == 0.0 && z[2] == 0.0);
        let back = pulse.inverse(z, 0.25);
        assert!((back[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn presets() {
        let s = build_scene("static_room", 3).unwrap();
        assert!(s.primitives.iter().all(|p| p.is_static));
        assert_eq!(build_scene("rigid_orbit", 7).unwrap(), build_scene("rigid_orbit", 7).unwrap());
        assert_ne!(build_scene("rigid_orbit", 7).unwrap(), build_scene("rigid_orbit", 8).unwrap());
        let p = build_scene("pulsing_sphere", 11).unwrap();
        assert_eq!(p.primitives.iter().filter(|p| p.pulsation.is_some()).count(), 1);
        for name in PRESETS {
            let s = build_scene(name, 0).unwrap();
            assert!(s.primitives.iter().any(|p| p.is_static));
        }
        assert!(matches!(build_scene("forest", 0), Err(Error::Config(_))));
    }

    #[test]
    fn spinning_box_inverse_round_trip() {
        let s = build_scene("rigid_orbit", 1).unwrap();
        let prim = &s.primitives[7];
        let x = [0.3, 0.9, 5.2];
        for t in [0.0, 0.35, 1.0] {
            let w = prim.forward(x, t);
            let back = prim.inverse(w, t);
            assert!(dist(back, x) < 1e-12);
        }
    }
}
