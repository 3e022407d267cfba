//! Parametric-curve bases on `t ∈ [0, 1]`: clamped B-splines (Cox–de Boor),
//! Bernstein (Bézier) and monomial bases, their derivatives, and curve /
//! velocity evaluation from control points.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::Vec3;

/// Highest degree supported by the stack-allocated basis scratch buffers.
pub const MAX_DEGREE: usize = 15;

/// Control-point counts with a predefined clamped cubic knot vector.
pub const SUPPORTED_CONTROL_POINTS: [usize; 3] = [4, 7, 10];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveFamily {
    Bspline,
    Bezier,
    Polynomial,
}

impl std::str::FromStr for CurveFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bspline" => Ok(Self::Bspline),
            "bezier" => Ok(Self::Bezier),
            "polynomial" => Ok(Self::Polynomial),
            other => Err(Error::Config(format!(
                "unknown curve family `{other}` (expected bspline, bezier or polynomial)"
            ))),
        }
    }
}

impl std::fmt::Display for CurveFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Bspline => "bspline",
            Self::Bezier => "bezier",
            Self::Polynomial => "polynomial",
        })
    }
}

/// Basis family, degree, control-point count and (for B-splines) the knot vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSpec {
    pub family: CurveFamily,
    pub degree: usize,
    pub num_control_points: usize,
    #[serde(default)]
    pub knots: Vec<f64>,
}

/// Basis values `φ_k(t)` for one parameter value.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisWeights {
    pub t: f64,
    pub values: Vec<f64>,
}

/// Clamped cubic knot vector for `d ∈ {4, 7, 10}` control points. Internal
/// knots carry multiplicity 3.
pub fn make_knot_vector(d: usize) -> Result<Vec<f64>> {
    let internal: &[f64] = match d {
        4 => &[],
        7 => &[0.5, 0.5, 0.5],
        10 => &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0],
        _ => {
            return Err(Error::Config(format!(
                "unsupported control-point count {d}; supported: {SUPPORTED_CONTROL_POINTS:?}"
            )))
        }
    };
    let mut knots = vec![0.0; 4];
    knots.extend_from_slice(internal);
    knots.extend_from_slice(&[1.0; 4]);
    Ok(knots)
}

impl CurveSpec {
    /// Default spec for a family and control-point count: cubic clamped
    /// B-spline, or a single Bézier / monomial segment of degree `d - 1`.
    pub fn new(family: CurveFamily, d: usize) -> Result<Self> {
        let spec = match family {
            CurveFamily::Bspline => Self {
                family,
                degree: 3,
                num_control_points: d,
                knots: make_knot_vector(d)?,
            },
            CurveFamily::Bezier | CurveFamily::Polynomial => {
                if d == 0 {
                    return Err(Error::Config("need at least one control point".into()));
                }
                Self {
                    family,
                    degree: d - 1,
                    num_control_points: d,
                    knots: Vec::new(),
                }
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn bspline(d: usize) -> Result<Self> {
        Self::new(CurveFamily::Bspline, d)
    }

    /// B-spline with an explicit clamped knot vector; `D = len - degree - 1`.
    pub fn bspline_with_knots(degree: usize, knots: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 * (degree + 1) {
            return Err(Error::Config(format!(
                "knot vector of length {} too short for degree {degree}",
                knots.len()
            )));
        }
        let spec = Self {
            family: CurveFamily::Bspline,
            degree,
            num_control_points: knots.len() - degree - 1,
            knots,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.num_control_points;
        let p = self.degree;
        if p > MAX_DEGREE {
            return Err(Error::Config(format!("degree {p} exceeds {MAX_DEGREE}")));
        }
        match self.family {
            CurveFamily::Bezier | CurveFamily::Polynomial => {
                if d != p + 1 {
                    return Err(Error::Config(format!(
                        "{} of degree {p} needs {} control points, got {d}",
                        self.family,
                        p + 1
                    )));
                }
                if !self.knots.is_empty() {
                    return Err(Error::Config(format!("{} takes no knots", self.family)));
                }
            }
            CurveFamily::Bspline => {
                let k = &self.knots;
                if d < p + 1 {
                    return Err(Error::Config(format!(
                        "B-spline of degree {p} needs at least {} control points, got {d}",
                        p + 1
                    )));
                }
                if k.len() != d + p + 1 {
                    return Err(Error::Config(format!(
                        "knot vector length {} != D + p + 1 = {}",
                        k.len(),
                        d + p + 1
                    )));
                }
                if k.iter().any(|x| !x.is_finite() || *x < 0.0 || *x > 1.0) {
                    return Err(Error::Config("knots must lie in [0, 1]".into()));
                }
                if k.windows(2).any(|w| w[1] < w[0]) {
                    return Err(Error::Config("knots must be non-decreasing".into()));
                }
                if k[..=p].iter().any(|x| *x != 0.0) || k[k.len() - p - 1..].iter().any(|x| *x != 1.0)
                {
                    return Err(Error::Config(format!(
                        "knot vector must be clamped: multiplicity {} at 0 and 1",
                        p + 1
                    )));
                }
                let internal = &k[p + 1..k.len() - p - 1];
                let mut run = 0;
                for (idx, x) in internal.iter().enumerate() {
                    run = if idx > 0 && internal[idx - 1] == *x { run + 1 } else { 1 };
                    if *x == 0.0 || *x == 1.0 || run > p {
                        return Err(Error::Config(format!(
                            "internal knot {x} exceeds multiplicity {p}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Bases that interpolate the first and last control points.
    pub fn is_clamped(&self) -> bool {
        matches!(self.family, CurveFamily::Bspline | CurveFamily::Bezier)
    }

    /// Writes `φ_k(t)` into `out` (length `D`). `t` must already be in `[0, 1]`.
    pub fn basis_into(&self, t: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.num_control_points);
        let d = self.num_control_points;
        out.fill(0.0);
        match self.family {
            CurveFamily::Polynomial => {
                let mut pow = 1.0;
                for o in out.iter_mut() {
                    *o = pow;
                    pow *= t;
                }
            }
            _ if t == 0.0 => out[0] = 1.0,
            _ if t == 1.0 => out[d - 1] = 1.0,
            CurveFamily::Bezier => bernstein_into(self.degree, t, out),
            CurveFamily::Bspline => {
                let p = self.degree;
                let span = find_span(&self.knots, p, d, t);
                let mut local = [0.0; MAX_DEGREE + 1];
                nonzero_basis(&self.knots, span, t, p, &mut local[..=p]);
                out[span - p..=span].copy_from_slice(&local[..=p]);
            }
        }
    }

    /// Writes `dφ_k/dt` into `out` (length `D`). `t` must already be in `[0, 1]`.
    pub fn basis_derivative_into(&self, t: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.num_control_points);
        let d = self.num_control_points;
        let p = self.degree;
        out.fill(0.0);
        if p == 0 {
            return;
        }
        match self.family {
            CurveFamily::Polynomial => {
                let mut pow = 1.0;
                for (k, o) in out.iter_mut().enumerate().skip(1) {
                    *o = k as f64 * pow;
                    pow *= t;
                }
            }
            CurveFamily::Bezier => {
                let mut lower = [0.0; MAX_DEGREE + 1];
                bernstein_into(p - 1, t, &mut lower[..p]);
                let pf = p as f64;
                for (i, o) in out.iter_mut().enumerate() {
                    let left = if i > 0 { lower[i - 1] } else { 0.0 };
                    let right = if i < p { lower[i] } else { 0.0 };
                    *o = pf * (left - right);
                }
            }
            CurveFamily::Bspline => {
                let knots = &self.knots;
                let span = find_span(knots, p, d, t);
                // Degree p-1 functions N_{span-p+1..=span, p-1}.
                let mut lower = [0.0; MAX_DEGREE + 1];
                nonzero_basis(knots, span, t, p - 1, &mut lower[..p]);
                let lower_at = |k: usize| -> f64 {
                    if k + p < span + 1 || k > span {
                        0.0
                    } else {
                        lower[k + p - 1 - span]
                    }
                };
                let pf = p as f64;
                for k in span - p..=span {
                    let mut v = 0.0;
                    let den_a = knots[k + p] - knots[k];
                    if den_a > 0.0 {
                        v += lower_at(k) / den_a;
                    }
                    let den_b = knots[k + p + 1] - knots[k + 1];
                    if den_b > 0.0 {
                        v -= lower_at(k + 1) / den_b;
                    }
                    out[k] = pf * v;
                }
            }
        }
    }

    fn check_t(t: f64) -> Result<()> {
        if (0.0..=1.0).contains(&t) {
            Ok(())
        } else {
            Err(Error::Domain(t))
        }
    }

    fn check_points(&self, points: &[Vec3]) -> Result<()> {
        if points.len() != self.num_control_points {
            return Err(Error::Shape(format!(
                "expected {} control points, got {}",
                self.num_control_points,
                points.len()
            )));
        }
        Ok(())
    }
}

/// `φ_k(t)` for every control point.
pub fn basis_eval(spec: &CurveSpec, t: f64) -> Result<BasisWeights> {
    CurveSpec::check_t(t)?;
    let mut values = vec![0.0; spec.num_control_points];
    spec.basis_into(t, &mut values);
    Ok(BasisWeights { t, values })
}

/// `dφ_k/dt` for every control point.
pub fn basis_derivative(spec: &CurveSpec, t: f64) -> Result<Vec<f64>> {
    CurveSpec::check_t(t)?;
    let mut values = vec![0.0; spec.num_control_points];
    spec.basis_derivative_into(t, &mut values);
    Ok(values)
}

/// `Σ_k P_k φ_k(t)`. Clamped families return the end control points
/// bitwise at `t = 0` and `t = 1`.
pub fn eval_curve(points: &[Vec3], spec: &CurveSpec, t: f64) -> Result<Vec3> {
    spec.check_points(points)?;
    CurveSpec::check_t(t)?;
    Ok(eval_unchecked(points, spec, t))
}

pub(crate) fn eval_unchecked(points: &[Vec3], spec: &CurveSpec, t: f64) -> Vec3 {
    if spec.is_clamped() {
        if t == 0.0 {
            return points[0];
        }
        if t == 1.0 {
            return points[points.len() - 1];
        }
    }
    let d = spec.num_control_points;
    if d <= 16 {
        let mut w = [0.0; 16];
        spec.basis_into(t, &mut w[..d]);
        combine(points, &w[..d])
    } else {
        let mut w = vec![0.0; d];
        spec.basis_into(t, &mut w);
        combine(points, &w)
    }
}

/// `Σ_k P_k dφ_k/dt`.
pub fn eval_curve_velocity(points: &[Vec3], spec: &CurveSpec, t: f64) -> Result<Vec3> {
    spec.check_points(points)?;
    CurveSpec::check_t(t)?;
    let mut w = vec![0.0; spec.num_control_points];
    spec.basis_derivative_into(t, &mut w);
    Ok(combine(points, &w))
}

/// Weighted sum of control points, skipping exact-zero weights.
pub fn combine(points: &[Vec3], weights: &[f64]) -> Vec3 {
    let mut acc = [0.0; 3];
    for (p, &w) in points.iter().zip(weights) {
        if w != 0.0 {
            acc[0] += p[0] * w;
            acc[1] += p[1] * w;
            acc[2] += p[2] * w;
        }
    }
    acc
}

/// Knot span `s` with `t_s <= t < t_{s+1}`; at the right end the last
/// non-empty span is closed so that `t = 1` evaluates inside it.
fn find_span(knots: &[f64], p: usize, d: usize, t: f64) -> usize {
    if t >= knots[d] {
        let mut s = d - 1;
        while s > p && knots[s] == knots[s + 1] {
            s -= 1;
        }
        return s;
    }
    // Largest s in [p, d-1] with knots[s] <= t.
    let (mut lo, mut hi) = (p, d);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if t < knots[mid] {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

/// The `p + 1` non-vanishing functions `N_{span-p..=span, p}(t)` via the
/// triangular Cox–de Boor scheme. Every denominator is positive inside a
/// non-empty span.
fn nonzero_basis(knots: &[f64], span: usize, t: f64, p: usize, out: &mut [f64]) {
    let mut left = [0.0; MAX_DEGREE + 1];
    let mut right = [0.0; MAX_DEGREE + 1];
    out[0] = 1.0;
    for j in 1..=p {
        left[j] = t - knots[span + 1 - j];
        right[j] = knots[span + j] - t;
        let mut saved = 0.0;
        for r in 0..j {
            let temp = out[r] / (right[r + 1] + left[j - r]);
            out[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        out[j] = saved;
    }
}

fn bernstein_into(degree: usize, t: f64, out: &mut [f64]) {
    let s = 1.0 - t;
    out[0] = 1.0;
    for k in 1..=degree {
        let mut prev = 0.0;
        for i in 0..k {
            let cur = out[i];
            out[i] = s * cur + prev;
            prev = t * cur;
        }
        out[k] = prev;
    }
}
