//! Trajectory-field container: every pixel `(u, v)` of every frame `i`
//! carries `D` control points (world coordinates) and `D` positive
//! confidences, evaluated through a shared [`CurveSpec`].
//!
//! Pixel convention: `u` is the column, `v` the row, origin top-left.
//! Control points are stored frame-major as `N×D×H×W×3`, confidences as
//! `N×D×H×W`.

use rayon::prelude::*;

use crate::curve::{self, CurveSpec};
use crate::error::{Error, Result};
use crate::util::Vec3;

/// `t_i = i / (N - 1)`.
pub fn default_timestamps(n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::Config(format!("need at least 2 frames, got {n}")));
    }
    let last = (n - 1) as f64;
    Ok((0..n).map(|i| i as f64 / last).collect())
}

pub fn validate_timestamps(ts: &[f64]) -> Result<()> {
    if ts.len() < 2 {
        return Err(Error::Config("need at least 2 timestamps".into()));
    }
    if ts[0] != 0.0 || ts[ts.len() - 1] != 1.0 {
        return Err(Error::Config("timestamps must start at 0 and end at 1".into()));
    }
    if ts.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Config("timestamps must be strictly increasing".into()));
    }
    Ok(())
}

/// Per-frame `H×W` grid of world points with validity flags.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMap {
    pub height: usize,
    pub width: usize,
    pub points: Vec<Vec3>,
    pub valid: Vec<bool>,
}

impl PointMap {
    #[inline]
    pub fn get(&self, u: usize, v: usize) -> Option<Vec3> {
        let idx = v * self.width + u;
        self.valid[idx].then(|| self.points[idx])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryField {
    num_frames: usize,
    height: usize,
    width: usize,
    spec: CurveSpec,
    control_points: Vec<f64>,
    confidences: Vec<f64>,
    timestamps: Vec<f64>,
    valid: Vec<bool>,
}

impl TrajectoryField {
    /// Builds a field, checking every container invariant. `valid` defaults
    /// to all-true when `None`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        spec: CurveSpec,
        num_frames: usize,
        height: usize,
        width: usize,
        control_points: Vec<f64>,
        confidences: Vec<f64>,
        timestamps: Vec<f64>,
        valid: Option<Vec<bool>>,
    ) -> Result<Self> {
        spec.validate()?;
        let d = spec.num_control_points;
        let pixels = num_frames * height * width;
        if control_points.len() != pixels * d * 3 {
            return Err(Error::Shape(format!(
                "control points: expected {} values for {num_frames}x{d}x{height}x{width}x3, got {}",
                pixels * d * 3,
                control_points.len()
            )));
        }
        if confidences.len() != pixels * d {
            return Err(Error::Shape(format!(
                "confidences: expected {} values, got {}",
                pixels * d,
                confidences.len()
            )));
        }
        if timestamps.len() != num_frames {
            return Err(Error::Shape(format!(
                "expected {num_frames} timestamps, got {}",
                timestamps.len()
            )));
        }
        validate_timestamps(&timestamps)?;
        if control_points.iter().any(|x| !x.is_finite()) {
            return Err(Error::Input("control points must be finite".into()));
        }
        if confidences.iter().any(|c| !(*c > 0.0) || !c.is_finite()) {
            return Err(Error::Input("confidences must be finite and > 0".into()));
        }
        let valid = valid.unwrap_or_else(|| vec![true; pixels]);
        if valid.len() != pixels {
            return Err(Error::Shape(format!(
                "validity mask: expected {pixels} flags, got {}",
                valid.len()
            )));
        }
        Ok(Self {
            num_frames,
            height,
            width,
            spec,
            control_points,
            confidences,
            timestamps,
            valid,
        })
    }

    /// Every control point of every pixel set to `point`, confidences 1,
    /// uniform timestamps.
    pub fn constant(spec: CurveSpec, num_frames: usize, height: usize, width: usize, point: Vec3) -> Result<Self> {
        let d = spec.num_control_points;
        let pixels = num_frames * height * width;
        let cps = point.iter().copied().cycle().take(pixels * d * 3).collect();
        Self::new(
            spec,
            num_frames,
            height,
            width,
            cps,
            vec![1.0; pixels * d],
            default_timestamps(num_frames)?,
            None,
        )
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn num_control_points(&self) -> usize {
        self.spec.num_control_points
    }
    pub fn spec(&self) -> &CurveSpec {
        &self.spec
    }
    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }
    pub fn control_points(&self) -> &[f64] {
        &self.control_points
    }
    pub fn confidences(&self) -> &[f64] {
        &self.confidences
    }
    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    /// Mutable control points; the caller keeps them finite.
    pub fn control_points_mut(&mut self) -> &mut [f64] {
        &mut self.control_points
    }

    /// Mutable confidences; the caller keeps them strictly positive.
    pub fn confidences_mut(&mut self) -> &mut [f64] {
        &mut self.confidences
    }

    pub fn pixels_per_frame(&self) -> usize {
        self.height * self.width
    }

    pub fn num_pixels(&self) -> usize {
        self.num_frames * self.height * self.width
    }

    /// Flat index of `(i, u, v)` into `N×H×W` arrays.
    #[inline]
    pub fn pixel_index(&self, i: usize, u: usize, v: usize) -> usize {
        (i * self.height + v) * self.width + u
    }

    /// Inverse of [`pixel_index`](Self::pixel_index): `(i, u, v)`.
    #[inline]
    pub fn pixel_coords(&self, pixel: usize) -> (usize, usize, usize) {
        let hw = self.pixels_per_frame();
        let i = pixel / hw;
        let rem = pixel % hw;
        (i, rem % self.width, rem / self.width)
    }

    /// Offset of control point `k` of flat pixel `pixel` in the control-point
    /// array (first of its three coordinates).
    #[inline]
    pub fn cp_offset(&self, pixel: usize, k: usize) -> usize {
        self.conf_offset(pixel, k) * 3
    }

    /// Offset of confidence `k` of flat pixel `pixel`.
    #[inline]
    pub fn conf_offset(&self, pixel: usize, k: usize) -> usize {
        let hw = self.pixels_per_frame();
        let (i, rem) = (pixel / hw, pixel % hw);
        (i * self.spec.num_control_points + k) * hw + rem
    }

    pub fn check_index(&self, i: usize, u: usize, v: usize) -> Result<()> {
        if i >= self.num_frames || u >= self.width || v >= self.height {
            return Err(Error::Index(format!(
                "(i={i}, u={u}, v={v}) outside {}x{}x{} (frames x width x height)",
                self.num_frames, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn check_frame(&self, i: usize) -> Result<()> {
        if i >= self.num_frames {
            return Err(Error::Index(format!("frame {i} >= {}", self.num_frames)));
        }
        Ok(())
    }

    #[inline]
    pub fn control_point(&self, pixel: usize, k: usize) -> Vec3 {
        let o = self.cp_offset(pixel, k);
        [self.control_points[o], self.control_points[o + 1], self.control_points[o + 2]]
    }

    #[inline]
    pub fn set_control_point(&mut self, pixel: usize, k: usize, p: Vec3) {
        let o = self.cp_offset(pixel, k);
        self.control_points[o..o + 3].copy_from_slice(&p);
    }

    /// The `D` control points of flat pixel `pixel`.
    pub fn pixel_points(&self, pixel: usize) -> Vec<Vec3> {
        (0..self.spec.num_control_points).map(|k| self.control_point(pixel, k)).collect()
    }

    pub fn pixel_confidences(&self, pixel: usize) -> Vec<f64> {
        (0..self.spec.num_control_points)
            .map(|k| self.confidences[self.conf_offset(pixel, k)])
            .collect()
    }

    pub fn set_valid(&mut self, pixel: usize, valid: bool) {
        self.valid[pixel] = valid;
    }

    /// `x_{i,u,v}(t)`.
    pub fn query_trajectory(&self, i: usize, u: usize, v: usize, t: f64) -> Result<Vec3> {
        self.check_index(i, u, v)?;
        let pts = self.pixel_points(self.pixel_index(i, u, v));
        curve::eval_curve(&pts, &self.spec, t)
    }

    /// Trajectory of a flat pixel at `t` without bounds checks on `t`.
    pub(crate) fn eval_pixel(&self, pixel: usize, t: f64) -> Vec3 {
        let pts = self.pixel_points(pixel);
        curve::eval_unchecked(&pts, &self.spec, t)
    }

    /// `X_{i→j}(u, v) = x_{i,u,v}(t_j)` for every pixel of frame `i`.
    pub fn query_cross_frame(&self, i: usize, j: usize) -> Result<PointMap> {
        self.check_frame(i)?;
        self.check_frame(j)?;
        let t = self.timestamps[j];
        let hw = self.pixels_per_frame();
        let base = i * hw;
        let points: Vec<Vec3> = (0..hw).into_par_iter().map(|p| self.eval_pixel(base + p, t)).collect();
        Ok(PointMap {
            height: self.height,
            width: self.width,
            points,
            valid: self.valid[base..base + hw].to_vec(),
        })
    }

    /// Point map of frame `i` at its own timestamp.
    pub fn self_point_map(&self, i: usize) -> Result<PointMap> {
        self.query_cross_frame(i, i)
    }

    /// `Σ_k Σ^{(k)}_{i,u,v} φ_k(t)`.
    pub fn aggregate_confidence(&self, i: usize, u: usize, v: usize, t: f64) -> Result<f64> {
        self.check_index(i, u, v)?;
        let w = curve::basis_eval(&self.spec, t)?;
        let conf = self.pixel_confidences(self.pixel_index(i, u, v));
        Ok(conf.iter().zip(&w.values).map(|(c, w)| c * w).sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field_from_fn(d: usize, n: usize, h: usize, w: usize, f: impl Fn(usize, usize, usize, usize) -> Vec3) -> TrajectoryField {
        let spec = CurveSpec::bspline(d).unwrap();
        let mut field = TrajectoryField::constant(spec, n, h, w, [0.0; 3]).unwrap();
        for i in 0..n {
            for v in 0..h {
                for u in 0..w {
                    let px = field.pixel_index(i, u, v);
                    for k in 0..d {
                        field.set_control_point(px, k, f(i, u, v, k));
                    }
                }
            }
        }
        field
    }

    #[test]
    fn default_timestamp_examples() {
        assert_eq!(default_timestamps(2).unwrap(), vec![0.0, 1.0]);
        assert_eq!(default_timestamps(5).unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(default_timestamps(121).unwrap()[60], 0.5);
        assert!(matches!(default_timestamps(1), Err(Error::Config(_))));
    }

    #[test]
    fn constant_field_queries() {
        let spec = CurveSpec::bspline(7).unwrap();
        let f = TrajectoryField::constant(spec, 3, 4, 5, [1.0, 2.0, 3.0]).unwrap();
        for t in [0.0, 0.13, 0.5, 1.0] {
            let x = f.query_trajectory(1, 4, 3, t).unwrap();
            assert!(x.iter().zip([1.0, 2.0, 3.0]).all(|(a, b)| (a - b).abs() < 1e-15));
        }
        let m0 = f.query_cross_frame(0, 2).unwrap();
        assert_eq!(m0, f.self_point_map(1).unwrap());
        assert!(matches!(f.query_trajectory(3, 0, 0, 0.5), Err(Error::Index(_))));
        assert!(matches!(f.query_trajectory(0, 5, 0, 0.5), Err(Error::Index(_))));
        assert!(matches!(f.query_cross_frame(0, 3), Err(Error::Index(_))));
    }

    #[test]
    fn endpoints_are_bitwise_control_points() {
        let f = field_from_fn(10, 3, 2, 3, |i, u, v, k| {
            [0.1 * i as f64 + 1e-3 * k as f64, (u * v) as f64 / 7.0, (k as f64).sin()]
        });
        for i in 0..3 {
            let first = f.query_cross_frame(i, 0).unwrap();
            let last = f.query_cross_frame(i, 2).unwrap();
            for v in 0..2 {
                for u in 0..3 {
                    let px = f.pixel_index(i, u, v);
                    assert_eq!(first.get(u, v).unwrap(), f.control_point(px, 0));
                    assert_eq!(last.get(u, v).unwrap(), f.control_point(px, 9));
                }
            }
        }
    }

    #[test]
    fn confidence_aggregation() {
        let spec = CurveSpec::bspline(4).unwrap();
        let mut f = TrajectoryField::constant(spec, 2, 1, 1, [0.0; 3]).unwrap();
        assert!((f.aggregate_confidence(0, 0, 0, 0.37).unwrap() - 1.0).abs() < 1e-15);
        for (k, c) in [1.0, 2.0, 2.0, 1.0].into_iter().enumerate() {
            let o = f.conf_offset(0, k);
            f.confidences_mut()[o] = c;
        }
        assert!((f.aggregate_confidence(0, 0, 0, 0.5).unwrap() - 1.75).abs() < 1e-15);
        assert_eq!(f.aggregate_confidence(0, 0, 0, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn constructor_rejects_bad_inputs() {
        let spec = CurveSpec::bspline(4).unwrap();
        let ok = || (vec![0.0; 2 * 4 * 3], vec![1.0; 2 * 4]);
        let (cp, conf) = ok();
        assert!(TrajectoryField::new(spec.clone(), 2, 1, 1, cp, conf, vec![0.0, 0.5], None).is_err());
        let (cp, mut conf) = ok();
        conf[3] = 0.0;
        assert!(TrajectoryField::new(spec.clone(), 2, 1, 1, cp, conf, vec![0.0, 1.0], None).is_err());
        let (mut cp, conf) = ok();
        cp[5] = f64::NAN;
        assert!(TrajectoryField::new(spec.clone(), 2, 1, 1, cp, conf, vec![0.0, 1.0], None).is_err());
        let (cp, conf) = ok();
        assert!(TrajectoryField::new(spec, 2, 1, 2, cp, conf, vec![0.0, 1.0], None).is_err());
    }

    #[test]
    fn pixel_index_round_trip() {
        let f = TrajectoryField::constant(CurveSpec::bspline(4).unwrap(), 3, 5, 7, [0.0; 3]).unwrap();
        for px in 0..f.num_pixels() {
            let (i, u, v) = f.pixel_coords(px);
            assert_eq!(f.pixel_index(i, u, v), px);
        }
    }
}
