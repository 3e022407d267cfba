//! Products derived from a trajectory field: 2D tracks, dynamic masks,
//! scene flow, tangent forecasting, canonical-frame fusion and per-frame
//! camera recovery from self point maps.

use nalgebra::{DMatrix, Matrix3, Matrix4, Rotation3, SMatrix, SVector, UnitQuaternion, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::PixelRef;
use crate::camera::Camera;
use crate::curve;
use crate::error::{Error, Result};
use crate::field::TrajectoryField;
use crate::util::{add, point_variance, scale, sub, Vec3};

/// Relative dynamic-mask threshold: `threshold = DEFAULT_MASK_THRESHOLD · scene_scale²`.
pub const DEFAULT_MASK_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub t: f64,
    /// Camera used: the frame whose timestamp is nearest to `t`.
    pub frame: usize,
    pub pixel: [f64; 2],
    pub depth: f64,
    /// False when the point is not in front of the camera; `pixel` is then NaN.
    pub in_front: bool,
}

/// Projects `x_{i,u,v}(t)` at `samples` uniform times in `[0, 1]`.
pub fn project_2d(
    field: &TrajectoryField,
    cameras: &[Camera],
    i: usize,
    u: usize,
    v: usize,
    samples: usize,
) -> Result<Vec<TrackPoint>> {
    field.check_index(i, u, v)?;
    if samples < 2 {
        return Err(Error::Config("need at least 2 samples".into()));
    }
    if cameras.len() != field.num_frames() {
        return Err(Error::Shape(format!("{} cameras for {} frames", cameras.len(), field.num_frames())));
    }
    let ts = field.timestamps();
    let pixel = field.pixel_index(i, u, v);
    Ok((0..samples)
        .map(|k| {
            let t = k as f64 / (samples - 1) as f64;
            // Ties go to the earlier frame.
            let frame = (0..ts.len())
                .min_by(|&a, &b| (ts[a] - t).abs().total_cmp(&(ts[b] - t).abs()))
                .unwrap_or(0);
            let x = field.eval_pixel(pixel, t);
            match cameras[frame].project(x) {
                Some((px, depth)) => TrackPoint { t, frame, pixel: px, depth, in_front: true },
                None => TrackPoint {
                    t,
                    frame,
                    pixel: [f64::NAN; 2],
                    depth: cameras[frame].world_to_camera(x)[2],
                    in_front: false,
                },
            }
        })
        .collect())
}

/// `N×H×W` flags: control-point variance above `threshold`. Invalid
/// pixels are never dynamic.
pub fn dynamic_mask(field: &TrajectoryField, threshold: f64) -> Result<Vec<bool>> {
    if !(threshold > 0.0) {
        return Err(Error::Config("mask threshold must be > 0".into()));
    }
    Ok((0..field.num_pixels())
        .into_par_iter()
        .map(|pix| field.valid()[pix] && point_variance(&field.pixel_points(pix)) > threshold)
        .collect())
}

/// `x(1) − x(0)` for every pixel of frame `i` (the endpoint control-point
/// difference for clamped families).
pub fn scene_flow(field: &TrajectoryField, i: usize) -> Result<Vec<Vec3>> {
    field.check_frame(i)?;
    let hw = field.pixels_per_frame();
    Ok((i * hw..(i + 1) * hw)
        .into_par_iter()
        .map(|pix| sub(field.eval_pixel(pix, 1.0), field.eval_pixel(pix, 0.0)))
        .collect())
}

/// Tangent continuation `x(1) + dt · x′(1)`.
pub fn forecast(field: &TrajectoryField, i: usize, u: usize, v: usize, dt: f64) -> Result<Vec3> {
    field.check_index(i, u, v)?;
    if !(dt >= 0.0) || !dt.is_finite() {
        return Err(Error::Config(format!("forecast horizon must be finite and >= 0, got {dt}")));
    }
    let pts = field.pixel_points(field.pixel_index(i, u, v));
    let end = curve::eval_curve(&pts, field.spec(), 1.0)?;
    let vel = curve::eval_curve_velocity(&pts, field.spec(), 1.0)?;
    Ok(add(end, scale(vel, dt)))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    /// Source pixel of each point.
    pub labels: Vec<PixelRef>,
}

/// All valid pixels of the source frames carried to time `t_j`.
pub fn fuse_canonical(field: &TrajectoryField, j: usize, sources: &[usize]) -> Result<PointCloud> {
    field.check_frame(j)?;
    if sources.is_empty() {
        return Err(Error::Input("no source frames to fuse".into()));
    }
    let mut cloud = PointCloud::default();
    for &i in sources {
        let map = field.query_cross_frame(i, j)?;
        for v in 0..map.height {
            for u in 0..map.width {
                if let Some(x) = map.get(u, v) {
                    cloud.points.push(x);
                    cloud.labels.push(PixelRef::new(i, u, v));
                }
            }
        }
    }
    Ok(cloud)
}

/// Camera-recovery knobs. Defaults search `f ∈ [0.2W, 5W]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraSearch {
    pub min_focal_ratio: f64,
    pub max_focal_ratio: f64,
    pub grid_size: usize,
    pub golden_iters: usize,
    pub irls_iters: usize,
    /// Huber scale in pixels.
    pub huber: f64,
    /// Pixels used per frame (evenly strided over valid pixels).
    pub max_points: usize,
}

impl Default for CameraSearch {
    fn default() -> Self {
        Self {
            min_focal_ratio: 0.2,
            max_focal_ratio: 5.0,
            grid_size: 25,
            golden_iters: 40,
            irls_iters: 10,
            huber: 1.0,
            max_points: 400,
        }
    }
}

/// Camera of one frame with its median reprojection error in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraEstimate {
    pub camera: Camera,
    pub median_reprojection: f64,
}

/// Per-frame camera from the frame's self point map, principal point at
/// the image center. Frames with too few or degenerate points yield an
/// error entry; the others are still returned.
pub fn estimate_cameras(field: &TrajectoryField, search: &CameraSearch) -> Vec<Result<CameraEstimate>> {
    (0..field.num_frames())
        .into_par_iter()
        .map(|i| {
            let map = field.self_point_map(i)?;
            let mut obs = Vec::new();
            for v in 0..map.height {
                for u in 0..map.width {
                    if let Some(x) = map.get(u, v) {
                        obs.push(([u as f64, v as f64], x));
                    }
                }
            }
            estimate_camera(&obs, field.width(), field.height(), search)
                .map_err(|e| Error::Camera(format!("frame {i}: {e}")))
        })
        .collect()
}

/// Camera from 2D–3D correspondences `(pixel, world point)`.
pub fn estimate_camera(
    obs: &[([f64; 2], Vec3)],
    width: usize,
    height: usize,
    search: &CameraSearch,
) -> Result<CameraEstimate> {
    if obs.len() < 6 {
        return Err(Error::Camera(format!("need at least 6 valid pixels, got {}", obs.len())));
    }
    let stride = obs.len().div_ceil(search.max_points.max(6));
    let obs: Vec<([f64; 2], Vec3)> = obs.iter().step_by(stride).copied().collect();
    let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
    let w = width as f64;
    let lo = (search.min_focal_ratio * w).ln();
    let hi = (search.max_focal_ratio * w).ln();
    if !(hi > lo) || search.grid_size < 3 {
        return Err(Error::Config("invalid focal search range".into()));
    }

    let solve = |lf: f64| -> Result<CameraEstimate> { pose_for_focal(&obs, lf.exp(), cx, cy, search) };
    let score = |lf: f64| solve(lf).map_or(f64::INFINITY, |e| e.median_reprojection);

    let grid: Vec<f64> = (0..search.grid_size)
        .map(|k| lo + (hi - lo) * k as f64 / (search.grid_size - 1) as f64)
        .collect();
    let scores: Vec<f64> = grid.iter().map(|&g| score(g)).collect();
    let best = (0..grid.len()).min_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap_or(0);
    if !scores[best].is_finite() {
        // The DLT fails identically for every focal on degenerate input.
        return solve(grid[best]);
    }
    let (mut a, mut b) = (grid[best.saturating_sub(1)], grid[(best + 1).min(grid.len() - 1)]);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (score(c), score(d));
    for _ in 0..search.golden_iters {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = score(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = score(d);
        }
    }
    let refined = if fc <= fd { c } else { d };
    let pick = if score(refined) <= scores[best] { refined } else { grid[best] };
    solve(pick)
}

/// DLT pose for a fixed focal length, refined by Huber-weighted
/// Gauss–Newton on pixel residuals.
fn pose_for_focal(obs: &[([f64; 2], Vec3)], f: f64, cx: f64, cy: f64, search: &CameraSearch) -> Result<CameraEstimate> {
    let (rot, t) = dlt_pose(obs, f, cx, cy)?;
    let (rot, t) = refine_pose(obs, f, cx, cy, rot, t, search);
    let mut errs: Vec<f64> = obs.iter().map(|(px, x)| reprojection(f, cx, cy, &rot, &t, *x, *px)).collect();
    errs.sort_by(f64::total_cmp);
    let m = errs.len();
    let median = if m % 2 == 1 { errs[m / 2] } else { 0.5 * (errs[m / 2 - 1] + errs[m / 2]) };
    // Camera-from-world (R, t) to world-from-camera rotation and center.
    let r_wc = rot.transpose();
    let center: Vec3 = (-(r_wc * t)).into();
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r_wc));
    Ok(CameraEstimate { camera: Camera::new(f, cx, cy, &q, center), median_reprojection: median })
}

fn reprojection(f: f64, cx: f64, cy: f64, rot: &Matrix3<f64>, t: &Vector3<f64>, x: Vec3, px: [f64; 2]) -> f64 {
    let c = rot * Vector3::from(x) + t;
    if !(c.z > 0.0) {
        return f64::INFINITY;
    }
    let du = f * c.x / c.z + cx - px[0];
    let dv = f * c.y / c.z + cy - px[1];
    (du * du + dv * dv).sqrt()
}

/// Calibrated DLT with Hartley normalization of the 3D points; returns
/// camera-from-world `(R, t)`.
fn dlt_pose(obs: &[([f64; 2], Vec3)], f: f64, cx: f64, cy: f64) -> Result<(Matrix3<f64>, Vector3<f64>)> {
    let n = obs.len();
    let mean: Vector3<f64> = obs.iter().map(|(_, x)| Vector3::from(*x)).sum::<Vector3<f64>>() / n as f64;
    let spread = obs.iter().map(|(_, x)| (Vector3::from(*x) - mean).norm()).sum::<f64>() / n as f64;
    if !(spread > 0.0) {
        return Err(Error::Camera("all points coincide".into()));
    }
    let k = 3f64.sqrt() / spread;
    let mut a = DMatrix::<f64>::zeros(2 * n, 12);
    for (r, (px, x)) in obs.iter().enumerate() {
        let xn = (Vector3::from(*x) - mean) * k;
        let hom = [xn.x, xn.y, xn.z, 1.0];
        let (un, vn) = ((px[0] - cx) / f, (px[1] - cy) / f);
        for c in 0..4 {
            // Rows of P: p1 (0..4), p2 (4..8), p3 (8..12).
            a[(2 * r, c)] = hom[c];
            a[(2 * r, 8 + c)] = -un * hom[c];
            a[(2 * r + 1, 4 + c)] = hom[c];
            a[(2 * r + 1, 8 + c)] = -vn * hom[c];
        }
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t.ok_or_else(|| Error::Camera("SVD failed".into()))?;
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&x, &y| sv[x].total_cmp(&sv[y]));
    let (smallest, second) = (order[0], order[1]);
    if !(sv[second] > 1e-9 * sv[order[sv.len() - 1]]) {
        return Err(Error::Camera("degenerate geometry (e.g. coplanar points)".into()));
    }
    let p_vec: Vec<f64> = vt.row(smallest).iter().copied().collect();
    let mut p = SMatrix::<f64, 3, 4>::from_row_slice(&p_vec);
    // Undo the 3D normalization: X_n = k (X − mean).
    let mut norm_t = Matrix4::<f64>::identity() * k;
    norm_t[(3, 3)] = 1.0;
    for c in 0..3 {
        norm_t[(c, 3)] = -k * mean[c];
    }
    p *= norm_t;
    let mut m: Matrix3<f64> = p.fixed_view::<3, 3>(0, 0).into();
    if m.determinant() < 0.0 {
        p = -p;
        m = -m;
    }
    let msvd = m.svd(true, true);
    let (u, vt3) = (msvd.u.unwrap(), msvd.v_t.unwrap());
    let lambda = msvd.singular_values.mean();
    if !(lambda > 0.0) {
        return Err(Error::Camera("degenerate projection matrix".into()));
    }
    let rot = u * vt3;
    let t = p.column(3) / lambda;
    Ok((rot, t.into()))
}

#[allow(clippy::too_many_arguments)]
fn refine_pose(
    obs: &[([f64; 2], Vec3)],
    f: f64,
    cx: f64,
    cy: f64,
    mut rot: Matrix3<f64>,
    mut t: Vector3<f64>,
    search: &CameraSearch,
) -> (Matrix3<f64>, Vector3<f64>) {
    let cost = |rot: &Matrix3<f64>, t: &Vector3<f64>| -> f64 {
        obs.iter()
            .map(|(px, x)| huber_cost(reprojection(f, cx, cy, rot, t, *x, *px), search.huber))
            .sum()
    };
    let mut current = cost(&rot, &t);
    let mut damping = 1e-6;
    for _ in 0..search.irls_iters {
        let mut h = SMatrix::<f64, 6, 6>::zeros();
        let mut g = SVector::<f64, 6>::zeros();
        for (px, x) in obs {
            let y = rot * Vector3::from(*x);
            let c = y + t;
            if !(c.z > 0.0) {
                continue;
            }
            let r = Vector3::new(f * c.x / c.z + cx - px[0], f * c.y / c.z + cy - px[1], 0.0);
            let rn = r.norm();
            let w = if rn <= search.huber { 1.0 } else { search.huber / rn };
            // d(projection)/d(c), then d(c)/d(ω, δt) with c = exp(ω×) y + t + δt.
            let dp = SMatrix::<f64, 2, 3>::new(f / c.z, 0.0, -f * c.x / (c.z * c.z), 0.0, f / c.z, -f * c.y / (c.z * c.z));
            let skew = Matrix3::new(0.0, y.z, -y.y, -y.z, 0.0, y.x, y.y, -y.x, 0.0);
            let mut jc = SMatrix::<f64, 3, 6>::zeros();
            jc.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew);
            jc.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
            let j = dp * jc;
            let r2 = nalgebra::Vector2::new(r.x, r.y);
            h += w * j.transpose() * j;
            g += w * j.transpose() * r2;
        }
        let mut improved = false;
        for _ in 0..8 {
            let mut hd = h;
            for k in 0..6 {
                hd[(k, k)] += damping * (1.0 + h[(k, k)]);
            }
            let Some(step) = hd.cholesky().map(|c| c.solve(&(-g))) else {
                damping *= 10.0;
                continue;
            };
            let omega = Vector3::new(step[0], step[1], step[2]);
            let new_rot = Rotation3::new(omega).into_inner() * rot;
            let new_t = t + Vector3::new(step[3], step[4], step[5]);
            let c_new = cost(&new_rot, &new_t);
            if c_new <= current {
                rot = new_rot;
                t = new_t;
                improved = current - c_new > 1e-15 * current.max(1.0);
                current = c_new;
                damping = (damping * 0.1).max(1e-12);
                break;
            }
            damping *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (rot, t)
}

fn huber_cost(r: f64, k: f64) -> f64 {
    if r <= k {
        0.5 * r * r
    } else {
        k * (r - 0.5 * k)
    }
}
