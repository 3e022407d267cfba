//! Least-squares fitting of control points to sampled trajectories.
//!
//! Per pixel we minimize
//! `Σ_j w_j ‖Σ_k P_k φ_k(t_j) − Y_j‖² + ridge · Σ_k ‖P_k − P̄‖²`
//! with `P̄` the weighted sample centroid, so heavily regularized or static
//! pixels collapse to a degenerate (constant) curve. The `D×D` normal
//! matrix depends only on the sample parameters and weights, so one
//! factorization is shared by every fully observed pixel of a frame.

use nalgebra::{Cholesky, DMatrix, Dyn, SymmetricEigen};
use rayon::prelude::*;

use crate::bundle::GroundTruthBundle;
use crate::curve::CurveSpec;
use crate::error::{Error, Result};
use crate::field::TrajectoryField;
use crate::util::{pairwise_sum, Vec3};

/// Default ridge strength.
pub const DEFAULT_RIDGE: f64 = 1e-8;

/// Eigenvalue ratio below which an unregularized Gram matrix is treated as singular.
const RANK_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub position: Vec3,
    pub weight: f64,
}

impl Sample {
    pub fn new(t: f64, position: Vec3) -> Self {
        Self { t, position, weight: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelFit {
    pub control_points: Vec<Vec3>,
    pub residual_rms: f64,
}

/// Factorized normal equations for one set of `(t, weight)` samples.
#[derive(Debug, Clone)]
pub struct NormalSystem {
    /// Basis rows `φ(t_j)`, one per sample.
    rows: Vec<Vec<f64>>,
    weights: Vec<f64>,
    ridge: f64,
    unity: bool,
    chol: Cholesky<f64, Dyn>,
}

impl NormalSystem {
    pub fn new(spec: &CurveSpec, params: &[(f64, f64)], ridge: f64) -> Result<Self> {
        spec.validate()?;
        if params.is_empty() {
            return Err(Error::Input("need at least one sample".into()));
        }
        if !(ridge >= 0.0) || !ridge.is_finite() {
            return Err(Error::Config(format!("ridge must be finite and >= 0, got {ridge}")));
        }
        let d = spec.num_control_points;
        let mut gram = DMatrix::<f64>::zeros(d, d);
        let mut rows = Vec::with_capacity(params.len());
        let mut weights = Vec::with_capacity(params.len());
        for &(t, w) in params {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Domain(t));
            }
            if !(w > 0.0) || !w.is_finite() {
                return Err(Error::Input(format!("sample weight must be > 0, got {w}")));
            }
            let mut phi = vec![0.0; d];
            spec.basis_into(t, &mut phi);
            for a in 0..d {
                if phi[a] == 0.0 {
                    continue;
                }
                for b in 0..d {
                    gram[(a, b)] += w * phi[a] * phi[b];
                }
            }
            rows.push(phi);
            weights.push(w);
        }
        for k in 0..d {
            gram[(k, k)] += ridge;
        }
        if ridge == 0.0 {
            let eig = SymmetricEigen::new(gram.clone()).eigenvalues;
            let max = eig.iter().cloned().fold(0.0_f64, f64::max);
            let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
            if !(max > 0.0) || min <= RANK_TOL * max {
                return Err(Error::RankDeficient(format!(
                    "{} samples cannot determine {d} control points",
                    params.len()
                )));
            }
        }
        let chol = Cholesky::new(gram).ok_or_else(|| {
            Error::RankDeficient(format!("Gram matrix not positive definite for {d} control points"))
        })?;
        Ok(Self {
            rows,
            weights,
            ridge,
            unity: spec.is_clamped(),
            chol,
        })
    }

    /// Solves for control points given sample positions aligned with the
    /// parameters this system was built from.
    pub fn solve(&self, positions: &[Vec3]) -> PixelFit {
        debug_assert_eq!(positions.len(), self.rows.len());
        let d = self.rows[0].len();
        let wsum: f64 = self.weights.iter().sum();
        let mut centroid = [0.0; 3];
        for (y, w) in positions.iter().zip(&self.weights) {
            for c in 0..3 {
                centroid[c] += w * y[c];
            }
        }
        for c in centroid.iter_mut() {
            *c /= wsum;
        }
        // Partition-of-unity bases are solved in centroid-relative
        // coordinates: identical samples then give exactly zero offsets.
        let offset = if self.unity { centroid } else { [0.0; 3] };
        let mut rhs = DMatrix::<f64>::zeros(d, 3);
        for ((phi, y), w) in self.rows.iter().zip(positions).zip(&self.weights) {
            for k in 0..d {
                if phi[k] != 0.0 {
                    for c in 0..3 {
                        rhs[(k, c)] += w * phi[k] * (y[c] - offset[c]);
                    }
                }
            }
        }
        if self.ridge > 0.0 && !self.unity {
            for k in 0..d {
                for c in 0..3 {
                    rhs[(k, c)] += self.ridge * centroid[c];
                }
            }
        }
        let sol = self.chol.solve(&rhs);
        let control_points: Vec<Vec3> = (0..d)
            .map(|k| [sol[(k, 0)] + offset[0], sol[(k, 1)] + offset[1], sol[(k, 2)] + offset[2]])
            .collect();
        let sq: Vec<f64> = self
            .rows
            .iter()
            .zip(positions)
            .zip(&self.weights)
            .map(|((phi, y), w)| {
                let x = crate::curve::combine(&control_points, phi);
                w * crate::util::norm_sq(crate::util::sub(x, *y))
            })
            .collect();
        PixelFit {
            control_points,
            residual_rms: (pairwise_sum(&sq) / wsum).sqrt(),
        }
    }
}

/// Fits one trajectory. Fails with [`Error::RankDeficient`] when `ridge = 0`
/// and the samples do not pin down every control point.
pub fn fit_pixel(samples: &[Sample], spec: &CurveSpec, ridge: f64) -> Result<PixelFit> {
    let params: Vec<(f64, f64)> = samples.iter().map(|s| (s.t, s.weight)).collect();
    let system = NormalSystem::new(spec, &params, ridge)?;
    let positions: Vec<Vec3> = samples.iter().map(|s| s.position).collect();
    Ok(system.solve(&positions))
}

/// A fitted field with its residual statistics.
#[derive(Debug, Clone)]
pub struct FieldFit {
    pub field: TrajectoryField,
    /// RMS over every valid `(i, j, u, v)` sample.
    pub residual_rms: f64,
    /// Per-pixel RMS (`N×H×W`, 0 for invalid pixels).
    pub pixel_rms: Vec<f64>,
}

/// Fits every pixel of every frame to its cross-frame ground truth
/// `{(t_j, X^gt_{i→j})}_j`. Confidences are set to 1; pixels without any
/// valid target are marked invalid.
pub fn fit_field(gt: &GroundTruthBundle, spec: &CurveSpec, ridge: f64) -> Result<FieldFit> {
    if gt.num_valid() == 0 {
        return Err(Error::Input("ground-truth bundle has no valid samples".into()));
    }
    let n = gt.num_frames;
    let hw = gt.pixels_per_frame();
    let d = spec.num_control_points;
    let all_params: Vec<(f64, f64)> = gt.timestamps.iter().map(|t| (*t, 1.0)).collect();
    let shared = NormalSystem::new(spec, &all_params, ridge)?;

    struct PixelOut {
        points: Vec<Vec3>,
        sq_sum: f64,
        count: usize,
    }

    let fits: Vec<Result<Option<PixelOut>>> = (0..n * hw)
        .into_par_iter()
        .map(|pixel| {
            let (i, p) = (pixel / hw, pixel % hw);
            let valid_j: Vec<usize> = (0..n).filter(|&j| gt.is_valid(i, j, p)).collect();
            if valid_j.is_empty() {
                return Ok(None);
            }
            let positions: Vec<Vec3> = valid_j.iter().map(|&j| gt.position(i, j, p)).collect();
            let fit = if valid_j.len() == n {
                shared.solve(&positions)
            } else {
                let params: Vec<(f64, f64)> = valid_j.iter().map(|&j| (gt.timestamps[j], 1.0)).collect();
                NormalSystem::new(spec, &params, ridge)?.solve(&positions)
            };
            let count = valid_j.len();
            Ok(Some(PixelOut {
                points: fit.control_points,
                sq_sum: fit.residual_rms * fit.residual_rms * count as f64,
                count,
            }))
        })
        .collect();

    let mut cps = vec![0.0; n * d * hw * 3];
    let mut valid = vec![false; n * hw];
    let mut pixel_rms = vec![0.0; n * hw];
    let mut sq = Vec::with_capacity(n * hw);
    let mut count = 0usize;
    for (pixel, fit) in fits.into_iter().enumerate() {
        let Some(out) = fit? else { continue };
        let (i, p) = (pixel / hw, pixel % hw);
        for (k, x) in out.points.iter().enumerate() {
            let o = ((i * d + k) * hw + p) * 3;
            cps[o..o + 3].copy_from_slice(x);
        }
        valid[pixel] = true;
        pixel_rms[pixel] = (out.sq_sum / out.count as f64).sqrt();
        sq.push(out.sq_sum);
        count += out.count;
    }
    let field = TrajectoryField::new(
        spec.clone(),
        n,
        gt.height,
        gt.width,
        cps,
        vec![1.0; n * d * hw],
        gt.timestamps.clone(),
        Some(valid),
    )?;
    Ok(FieldFit {
        field,
        residual_rms: (pairwise_sum(&sq) / count as f64).sqrt(),
        pixel_rms,
    })
}
