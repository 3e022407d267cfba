//! Training objective for trajectory fields with analytic gradients.
//!
//! Components (all means over their own term sets):
//! - confidence-weighted trajectory loss `Σ̂ ℓ − α log Σ̂` over valid
//!   `(i → j, u, v)`, where `ℓ` is the squared end-point error and `Σ̂` the
//!   basis-aggregated confidence;
//! - L1 timestamp regression;
//! - static regularizer: control-point variance on static pixels;
//! - rigidity regularizer: variance over `k` of pairwise control-point
//!   distances within a rigid segment;
//! - correspondence regularizer: mean squared control-point difference of
//!   corresponding pixels.
//!
//! `Var` is always the population variance (`1/D`), and for point sets the
//! trace of the covariance. Reductions use pairwise summation in pixel /
//! term order so results do not depend on thread scheduling.

use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::{Correspondence, GroundTruthBundle, PixelRef, NO_SEGMENT};
use crate::curve::CurveSpec;
use crate::error::{Error, Result};
use crate::field::TrajectoryField;
use crate::util::{norm_sq, pairwise_sum, sub, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub alpha: f64,
    pub lambda_time: f64,
    pub lambda_static: f64,
    pub lambda_rigid: f64,
    pub lambda_corr: f64,
    /// Pairs sampled per rigid segment.
    pub rigid_pair_samples: usize,
    /// Seed of the rigid-pair sampler.
    pub pair_seed: u64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            lambda_time: 0.0,
            lambda_static: 0.1,
            lambda_rigid: 0.1,
            lambda_corr: 0.1,
            rigid_pair_samples: 512,
            pair_seed: 0,
        }
    }
}

impl LossWeights {
    /// Only the confidence-weighted trajectory term.
    pub fn trajectory_only(alpha: f64) -> Self {
        Self {
            alpha,
            lambda_time: 0.0,
            lambda_static: 0.0,
            lambda_rigid: 0.0,
            lambda_corr: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!("alpha must be > 0, got {}", self.alpha)));
        }
        for (name, v) in [
            ("lambda_time", self.lambda_time),
            ("lambda_static", self.lambda_static),
            ("lambda_rigid", self.lambda_rigid),
            ("lambda_corr", self.lambda_corr),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.rigid_pair_samples == 0 {
            return Err(Error::Config("rigid_pair_samples must be >= 1".into()));
        }
        Ok(())
    }
}

/// Gradient with respect to a field's control points and (raw, positive)
/// confidences, laid out like the field's own arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGradient {
    pub control_points: Vec<f64>,
    pub confidences: Vec<f64>,
}

impl FieldGradient {
    pub fn zeros(field: &TrajectoryField) -> Self {
        Self {
            control_points: vec![0.0; field.control_points().len()],
            confidences: vec![0.0; field.confidences().len()],
        }
    }

    /// `self += s · other`.
    pub fn add_scaled(&mut self, other: &FieldGradient, s: f64) {
        if s == 0.0 {
            return;
        }
        for (a, b) in self.control_points.iter_mut().zip(&other.control_points) {
            *a += s * b;
        }
        for (a, b) in self.confidences.iter_mut().zip(&other.confidences) {
            *a += s * b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.control_points
            .iter()
            .chain(&self.confidences)
            .fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// One loss component: its value, number of contributing terms, gradient.
#[derive(Debug, Clone)]
pub struct LossTerm {
    pub value: f64,
    pub terms: usize,
    pub grad: FieldGradient,
}

impl LossTerm {
    fn empty(field: &TrajectoryField) -> Self {
        Self {
            value: 0.0,
            terms: 0,
            grad: FieldGradient::zeros(field),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub traj_conf: f64,
    pub time: f64,
    #[serde(rename = "static")]
    pub static_: f64,
    pub rigid: f64,
    pub corr: f64,
    pub total: f64,
    pub traj_terms: usize,
    pub static_terms: usize,
    pub rigid_terms: usize,
    pub corr_terms: usize,
}

/// Squared Euclidean distance.
pub fn traj_loss(pred: Vec3, gt: Vec3) -> f64 {
    norm_sq(sub(pred, gt))
}

/// Basis values at each of the field's frame timestamps (`N×D`).
fn basis_table(spec: &CurveSpec, ts: &[f64]) -> Vec<Vec<f64>> {
    ts.iter()
        .map(|&t| {
            let mut w = vec![0.0; spec.num_control_points];
            spec.basis_into(t, &mut w);
            w
        })
        .collect()
}

fn check_shapes(field: &TrajectoryField, gt: &GroundTruthBundle) -> Result<()> {
    if field.num_frames() != gt.num_frames || field.height() != gt.height || field.width() != gt.width {
        return Err(Error::Shape(format!(
            "field {}x{}x{} vs ground truth {}x{}x{}",
            field.num_frames(),
            field.height(),
            field.width(),
            gt.num_frames,
            gt.height,
            gt.width
        )));
    }
    Ok(())
}

/// Confidence-weighted trajectory loss over all valid `(i → j, u, v)`,
/// including `i = j`.
pub fn conf_traj_loss(field: &TrajectoryField, gt: &GroundTruthBundle, alpha: f64) -> Result<LossTerm> {
    check_shapes(field, gt)?;
    let n = field.num_frames();
    let hw = field.pixels_per_frame();
    let d = field.num_control_points();
    let phi = basis_table(field.spec(), field.timestamps());

    struct PixelPart {
        sum: f64,
        terms: usize,
        gp: Vec<Vec3>,
        gc: Vec<f64>,
    }

    let parts: Vec<Result<Option<PixelPart>>> = (0..n * hw)
        .into_par_iter()
        .map(|pixel| {
            let (i, p) = (pixel / hw, pixel % hw);
            if !field.valid()[pixel] {
                return Ok(None);
            }
            let pts = field.pixel_points(pixel);
            let conf = field.pixel_confidences(pixel);
            let mut gp = vec![[0.0; 3]; d];
            let mut gc = vec![0.0; d];
            let mut vals = Vec::with_capacity(n);
            for j in 0..n {
                if !gt.is_valid(i, j, p) {
                    continue;
                }
                let w = &phi[j];
                let x = crate::curve::combine(&pts, w);
                let s: f64 = conf.iter().zip(w).map(|(c, w)| c * w).sum();
                if !(s > 0.0) {
                    return Err(Error::Numeric(format!(
                        "aggregated confidence {s} <= 0 at pixel {pixel}, frame {j}"
                    )));
                }
                let r = sub(x, gt.position(i, j, p));
                let l = norm_sq(r);
                vals.push(s * l - alpha * s.ln());
                let dl_ds = l - alpha / s;
                for k in 0..d {
                    if w[k] == 0.0 {
                        continue;
                    }
                    let f = 2.0 * s * w[k];
                    gp[k][0] += f * r[0];
                    gp[k][1] += f * r[1];
                    gp[k][2] += f * r[2];
                    gc[k] += dl_ds * w[k];
                }
            }
            if vals.is_empty() {
                return Ok(None);
            }
            Ok(Some(PixelPart {
                sum: pairwise_sum(&vals),
                terms: vals.len(),
                gp,
                gc,
            }))
        })
        .collect();

    let mut out = LossTerm::empty(field);
    let mut sums = Vec::with_capacity(parts.len());
    let mut scattered = Vec::with_capacity(parts.len());
    for (pixel, part) in parts.into_iter().enumerate() {
        if let Some(part) = part? {
            sums.push(part.sum);
            out.terms += part.terms;
            scattered.push((pixel, part.gp, part.gc));
        }
    }
    if out.terms == 0 {
        return Err(Error::Input("no valid ground-truth terms".into()));
    }
    let inv = 1.0 / out.terms as f64;
    out.value = pairwise_sum(&sums) * inv;
    for (pixel, gp, gc) in scattered {
        for k in 0..d {
            let o = field.cp_offset(pixel, k);
            for c in 0..3 {
                out.grad.control_points[o + c] = gp[k][c] * inv;
            }
            out.grad.confidences[field.conf_offset(pixel, k)] = gc[k] * inv;
        }
    }
    Ok(out)
}

/// Mean absolute timestamp error.
pub fn time_loss(pred: &[f64], gt: &[f64]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!("{} predicted vs {} ground-truth timestamps", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let diffs: Vec<f64> = pred.iter().zip(gt).map(|(a, b)| (a - b).abs()).collect();
    Ok(pairwise_sum(&diffs) / pred.len() as f64)
}

/// Mean control-point variance over masked (and field-valid) pixels.
pub fn static_reg(field: &TrajectoryField, static_mask: &[bool]) -> Result<LossTerm> {
    if static_mask.len() != field.num_pixels() {
        return Err(Error::Shape(format!(
            "static mask has {} entries, field has {} pixels",
            static_mask.len(),
            field.num_pixels()
        )));
    }
    let d = field.num_control_points();
    let pixels: Vec<usize> = (0..field.num_pixels())
        .filter(|&p| static_mask[p] && field.valid()[p])
        .collect();
    let mut out = LossTerm::empty(field);
    if pixels.is_empty() {
        log::debug!("static regularizer: empty mask");
        return Ok(out);
    }
    let parts: Vec<(f64, Vec<Vec3>)> = pixels
        .par_iter()
        .map(|&pixel| {
            let pts = field.pixel_points(pixel);
            let c = crate::util::centroid(&pts);
            let dev: Vec<Vec3> = pts.iter().map(|p| sub(*p, c)).collect();
            let var = dev.iter().map(|x| norm_sq(*x)).sum::<f64>() / d as f64;
            (var, dev)
        })
        .collect();
    out.terms = pixels.len();
    let inv = 1.0 / out.terms as f64;
    let vals: Vec<f64> = parts.iter().map(|(v, _)| *v).collect();
    out.value = pairwise_sum(&vals) * inv;
    let g = 2.0 / d as f64 * inv;
    for (&pixel, (_, dev)) in pixels.iter().zip(&parts) {
        for (k, x) in dev.iter().enumerate() {
            let o = field.cp_offset(pixel, k);
            for c in 0..3 {
                out.grad.control_points[o + c] = g * x[c];
            }
        }
    }
    Ok(out)
}

/// Samples up to `per_segment` distinct unordered pixel pairs from every
/// rigid segment (pixels with the same non-negative label, across all
/// frames). Segments are visited in label order; all pairs are taken when a
/// segment has no more than `per_segment` of them.
pub fn sample_rigid_pairs(labels: &[i32], valid: &[bool], per_segment: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut segments: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
    for (p, &l) in labels.iter().enumerate() {
        if l != NO_SEGMENT && l >= 0 && valid[p] {
            segments.entry(l).or_default().push(p);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    for members in segments.values() {
        let m = members.len();
        if m < 2 {
            continue;
        }
        let total = m as u128 * (m as u128 - 1) / 2;
        if total <= per_segment as u128 {
            for a in 0..m {
                for b in a + 1..m {
                    pairs.push((members[a], members[b]));
                }
            }
            continue;
        }
        let mut seen = HashSet::with_capacity(per_segment * 2);
        while seen.len() < per_segment {
            let a = rng.random_range(0..m);
            let b = rng.random_range(0..m);
            if a == b {
                continue;
            }
            let key = (a.min(b), a.max(b));
            if seen.insert(key) {
                pairs.push((members[key.0], members[key.1]));
            }
        }
    }
    pairs
}

/// Rigidity regularizer over explicit pixel pairs (flat `N×H×W` indices).
pub fn rigid_reg_pairs(field: &TrajectoryField, pairs: &[(usize, usize)]) -> LossTerm {
    let d = field.num_control_points();
    let mut out = LossTerm::empty(field);
    if pairs.is_empty() {
        return out;
    }
    let parts: Vec<(f64, Vec<Vec3>)> = pairs
        .par_iter()
        .map(|&(p, q)| {
            let pp = field.pixel_points(p);
            let pq = field.pixel_points(q);
            let diffs: Vec<Vec3> = pp.iter().zip(&pq).map(|(a, b)| sub(*a, *b)).collect();
            let dists: Vec<f64> = diffs.iter().map(|x| norm_sq(*x).sqrt()).collect();
            let mean = dists.iter().sum::<f64>() / d as f64;
            let var = dists.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / d as f64;
            // d Var / d P_p^k = 2 (d_k - mean) / D · (P_p^k - P_q^k) / d_k
            let g: Vec<Vec3> = diffs
                .iter()
                .zip(&dists)
                .map(|(x, &dk)| {
                    if dk > 0.0 {
                        let s = 2.0 * (dk - mean) / (d as f64 * dk);
                        [s * x[0], s * x[1], s * x[2]]
                    } else {
                        [0.0; 3]
                    }
                })
                .collect();
            (var, g)
        })
        .collect();
    out.terms = pairs.len();
    let inv = 1.0 / out.terms as f64;
    let vals: Vec<f64> = parts.iter().map(|(v, _)| *v).collect();
    out.value = pairwise_sum(&vals) * inv;
    for (&(p, q), (_, g)) in pairs.iter().zip(&parts) {
        for (k, gk) in g.iter().enumerate() {
            let op = field.cp_offset(p, k);
            let oq = field.cp_offset(q, k);
            for c in 0..3 {
                out.grad.control_points[op + c] += gk[c] * inv;
                out.grad.control_points[oq + c] -= gk[c] * inv;
            }
        }
    }
    out
}

/// Rigidity regularizer with seeded pair sampling from `rigid_labels`
/// (`N×H×W`, [`NO_SEGMENT`] for unlabeled pixels).
pub fn rigid_reg(field: &TrajectoryField, rigid_labels: &[i32], pair_samples: usize, seed: u64) -> Result<LossTerm> {
    if rigid_labels.len() != field.num_pixels() {
        return Err(Error::Shape(format!(
            "rigid labels have {} entries, field has {} pixels",
            rigid_labels.len(),
            field.num_pixels()
        )));
    }
    let pairs = sample_rigid_pairs(rigid_labels, field.valid(), pair_samples, seed);
    Ok(rigid_reg_pairs(field, &pairs))
}

fn flat(field: &TrajectoryField, p: PixelRef) -> Result<usize> {
    field.check_index(p.frame, p.u, p.v)?;
    Ok(field.pixel_index(p.frame, p.u, p.v))
}

/// Mean over correspondences of `(1/D) Σ_k ‖P_a^k − P_b^k‖²`.
pub fn corr_reg(field: &TrajectoryField, correspondences: &[Correspondence]) -> Result<LossTerm> {
    let d = field.num_control_points();
    let mut out = LossTerm::empty(field);
    if correspondences.is_empty() {
        return Ok(out);
    }
    let idx: Vec<(usize, usize)> = correspondences
        .iter()
        .map(|c| Ok((flat(field, c.a)?, flat(field, c.b)?)))
        .collect::<Result<_>>()?;
    let parts: Vec<(f64, Vec<Vec3>)> = idx
        .par_iter()
        .map(|&(a, b)| {
            let diffs: Vec<Vec3> = (0..d)
                .map(|k| sub(field.control_point(a, k), field.control_point(b, k)))
                .collect();
            let v = diffs.iter().map(|x| norm_sq(*x)).sum::<f64>() / d as f64;
            (v, diffs)
        })
        .collect();
    out.terms = idx.len();
    let inv = 1.0 / out.terms as f64;
    let vals: Vec<f64> = parts.iter().map(|(v, _)| *v).collect();
    out.value = pairwise_sum(&vals) * inv;
    let g = 2.0 / d as f64 * inv;
    for (&(a, b), (_, diffs)) in idx.iter().zip(&parts) {
        for (k, x) in diffs.iter().enumerate() {
            let oa = field.cp_offset(a, k);
            let ob = field.cp_offset(b, k);
            for c in 0..3 {
                out.grad.control_points[oa + c] += g * x[c];
                out.grad.control_points[ob + c] -= g * x[c];
            }
        }
    }
    Ok(out)
}

/// Weighted sum of every component; the gradient is the matching weighted
/// sum of component gradients. Missing annotations contribute nothing.
pub fn total_loss(
    field: &TrajectoryField,
    gt: &GroundTruthBundle,
    weights: &LossWeights,
) -> Result<(LossBreakdown, FieldGradient)> {
    let pairs = match &gt.rigid_labels {
        Some(labels) if weights.lambda_rigid > 0.0 => {
            sample_rigid_pairs(labels, field.valid(), weights.rigid_pair_samples, weights.pair_seed)
        }
        _ => Vec::new(),
    };
    total_loss_with_pairs(field, gt, weights, &pairs)
}

/// [`total_loss`] with pre-sampled rigid pairs.
pub fn total_loss_with_pairs(
    field: &TrajectoryField,
    gt: &GroundTruthBundle,
    weights: &LossWeights,
    rigid_pairs: &[(usize, usize)],
) -> Result<(LossBreakdown, FieldGradient)> {
    weights.validate()?;
    let traj = conf_traj_loss(field, gt, weights.alpha)?;
    let time = time_loss(field.timestamps(), &gt.timestamps)?;
    let stat = match &gt.static_mask {
        Some(mask) if weights.lambda_static > 0.0 => static_reg(field, mask)?,
        _ => LossTerm::empty(field),
    };
    let rigid = if weights.lambda_rigid > 0.0 {
        rigid_reg_pairs(field, rigid_pairs)
    } else {
        LossTerm::empty(field)
    };
    let corr = if weights.lambda_corr > 0.0 {
        corr_reg(field, &gt.correspondences)?
    } else {
        LossTerm::empty(field)
    };
    let total = traj.value
        + weights.lambda_time * time
        + weights.lambda_static * stat.value
        + weights.lambda_rigid * rigid.value
        + weights.lambda_corr * corr.value;
    if !total.is_finite() {
        return Err(Error::Numeric(format!("non-finite total loss {total}")));
    }
    let mut grad = traj.grad;
    grad.add_scaled(&stat.grad, weights.lambda_static);
    grad.add_scaled(&rigid.grad, weights.lambda_rigid);
    grad.add_scaled(&corr.grad, weights.lambda_corr);
    Ok((
        LossBreakdown {
            traj_conf: traj.value,
            time,
            static_: stat.value,
            rigid: rigid.value,
            corr: corr.value,
            total,
            traj_terms: traj.terms,
            static_terms: stat.terms,
            rigid_terms: rigid.terms,
            corr_terms: corr.terms,
        },
        grad,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub trials: usize,
    pub eps: f64,
    pub max_rel_error: f64,
    pub max_abs_analytic: f64,
    pub max_abs_numeric: f64,
    /// Worst coordinate: `"cp"` or `"conf"` with its flat index.
    pub worst: Option<(String, usize)>,
}

/// Compares analytic gradients of [`total_loss`] against central finite
/// differences on `trials` randomly chosen coordinates (control points and
/// raw confidences). The error measure is
/// `|g_a − g_fd| / max(1, |g_a|, |g_fd|)`.
pub fn grad_check(
    field: &TrajectoryField,
    gt: &GroundTruthBundle,
    weights: &LossWeights,
    eps: f64,
    trials: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if !(eps > 0.0) {
        return Err(Error::Config(format!("eps must be > 0, got {eps}")));
    }
    let pairs = match &gt.rigid_labels {
        Some(labels) if weights.lambda_rigid > 0.0 => {
            sample_rigid_pairs(labels, field.valid(), weights.rigid_pair_samples, weights.pair_seed)
        }
        _ => Vec::new(),
    };
    let (_, grad) = total_loss_with_pairs(field, gt, weights, &pairs)?;
    let n_cp = field.control_points().len();
    let n_conf = field.confidences().len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        trials,
        eps,
        max_rel_error: 0.0,
        max_abs_analytic: 0.0,
        max_abs_numeric: 0.0,
        worst: None,
    };
    let mut probe = field.clone();
    for _ in 0..trials {
        let idx = rng.random_range(0..n_cp + n_conf);
        let (is_cp, k) = if idx < n_cp { (true, idx) } else { (false, idx - n_cp) };
        let eval = |f: &TrajectoryField| -> Result<f64> { Ok(total_loss_with_pairs(f, gt, weights, &pairs)?.0.total) };
        let orig = if is_cp { probe.control_points()[k] } else { probe.confidences()[k] };
        let set = |f: &mut TrajectoryField, x: f64| {
            if is_cp {
                f.control_points_mut()[k] = x;
            } else {
                f.confidences_mut()[k] = x;
            }
        };
        set(&mut probe, orig + eps);
        let plus = eval(&probe)?;
        set(&mut probe, orig - eps);
        let minus = eval(&probe)?;
        set(&mut probe, orig);
        let numeric = (plus - minus) / (2.0 * eps);
        let analytic = if is_cp { grad.control_points[k] } else { grad.confidences[k] };
        let rel = (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs());
        report.max_abs_analytic = report.max_abs_analytic.max(analytic.abs());
        report.max_abs_numeric = report.max_abs_numeric.max(numeric.abs());
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            report.worst = Some((if is_cp { "cp" } else { "conf" }.to_string(), k));
        }
    }
    Ok(report)
}

/// Random field and ground truth with every annotation populated, for
/// gradient checks: positions and control points in `[-1, 1]`, confidences
/// in `[0.5, 2]`, three rigid segments, a random static mask and
/// `4·N·H·W / 3` random correspondences.
pub fn random_problem(
    spec: &CurveSpec,
    n: usize,
    h: usize,
    w: usize,
    seed: u64,
) -> Result<(TrajectoryField, GroundTruthBundle)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = spec.num_control_points;
    let pixels = n * h * w;
    let cps: Vec<f64> = (0..pixels * d * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let conf: Vec<f64> = (0..pixels * d).map(|_| rng.random_range(0.5..2.0)).collect();
    let ts = crate::field::default_timestamps(n)?;
    let field = TrajectoryField::new(spec.clone(), n, h, w, cps, conf, ts.clone(), None)?;
    let positions: Vec<f64> = (0..n * pixels * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let valid: Vec<bool> = (0..n * pixels).map(|_| rng.random_bool(0.9)).collect();
    let mut gt = GroundTruthBundle::new(n, h, w, ts, positions, valid)?;
    gt.static_mask = Some((0..pixels).map(|_| rng.random_bool(0.5)).collect());
    gt.rigid_labels = Some(
        (0..pixels)
            .map(|_| match rng.random_range(0..4) {
                3 => NO_SEGMENT,
                s => s,
            })
            .collect(),
    );
    let corr = (0..(4 * pixels / 3).max(1))
        .map(|_| {
            let mut pick = || PixelRef::new(rng.random_range(0..n), rng.random_range(0..w), rng.random_range(0..h));
            Correspondence { a: pick(), b: pick() }
        })
        .collect();
    gt.correspondences = corr;
    Ok((field, gt))
}

/// Control-point initialization for [`optimize_field`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Every control point at the pixel's mean ground-truth position.
    Centroid,
    /// Every control point at the pixel's ground-truth position in frame 0.
    GtFirstFrame,
    /// Centroid plus uniform noise of `±0.05·scene_scale`.
    Random(u64),
}

impl std::str::FromStr for Init {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "centroid" => Ok(Self::Centroid),
            "gt_first_frame" => Ok(Self::GtFirstFrame),
            other => match other.strip_prefix("random") {
                Some(rest) => {
                    let seed = rest.trim_start_matches([':', '(']).trim_end_matches(')');
                    let seed = if seed.is_empty() { 0 } else {
                        seed.parse().map_err(|_| Error::Config(format!("bad random init seed `{seed}`")))?
                    };
                    Ok(Self::Random(seed))
                }
                None => Err(Error::Config(format!(
                    "unknown init `{other}` (centroid, gt_first_frame, random:SEED)"
                ))),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizeConfig {
    pub iters: usize,
    /// Initial step, in units of the per-pixel normalized gradient.
    pub step: f64,
    pub init: Init,
    pub optimize_confidences: bool,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            iters: 500,
            step: 0.5,
            init: Init::Centroid,
            optimize_confidences: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub field: TrajectoryField,
    /// Accepted total loss: the initial value, then one entry per iteration.
    pub history: Vec<f64>,
    pub breakdown: LossBreakdown,
    /// Iterations in which a step was accepted.
    pub accepted: usize,
}

const MAX_HALVINGS: usize = 40;
const STEP_GROWTH: f64 = 1.25;

/// Fits a field to `gt` by gradient descent on [`total_loss`].
///
/// Every iteration tries `x − step·g̃`, where `g̃` is the gradient scaled by
/// the number of valid pixels; the step is halved until the loss strictly
/// decreases and grown after each success. Confidences are updated through
/// `log Σ`. Iteration stops early when no decrease is found.
pub fn optimize_field(
    gt: &GroundTruthBundle,
    spec: &CurveSpec,
    weights: &LossWeights,
    config: &OptimizeConfig,
) -> Result<OptimizeResult> {
    if config.iters == 0 {
        return Err(Error::Config("iters must be >= 1".into()));
    }
    if !(config.step > 0.0) {
        return Err(Error::Config(format!("step must be > 0, got {}", config.step)));
    }
    weights.validate()?;
    let mut field = initial_field(gt, spec, config.init)?;
    let pairs = match &gt.rigid_labels {
        Some(labels) if weights.lambda_rigid > 0.0 => {
            sample_rigid_pairs(labels, field.valid(), weights.rigid_pair_samples, weights.pair_seed)
        }
        _ => Vec::new(),
    };
    let precond = field.valid().iter().filter(|v| **v).count().max(1) as f64;
    let (mut breakdown, mut grad) = total_loss_with_pairs(&field, gt, weights, &pairs)?;
    let mut history = vec![breakdown.total];
    let mut step = config.step;
    let mut accepted = 0;
    let mut log_conf: Vec<f64> = field.confidences().iter().map(|c| c.ln()).collect();

    'outer: for iter in 0..config.iters {
        let mut halvings = 0;
        loop {
            let mut cand = field.clone();
            let s = step * precond;
            for (x, g) in cand.control_points_mut().iter_mut().zip(&grad.control_points) {
                *x -= s * g;
            }
            let mut cand_log = log_conf.clone();
            if config.optimize_confidences {
                for ((lc, c), g) in cand_log.iter_mut().zip(field.confidences()).zip(&grad.confidences) {
                    *lc -= s * c * g;
                }
                for (c, lc) in cand.confidences_mut().iter_mut().zip(&cand_log) {
                    *c = lc.exp();
                }
            }
            let finite = cand.control_points().iter().all(|x| x.is_finite())
                && cand.confidences().iter().all(|c| c.is_finite() && *c > 0.0);
            let result = if finite {
                Some(total_loss_with_pairs(&cand, gt, weights, &pairs))
            } else {
                None
            };
            match result {
                Some(Ok((b, g))) if b.total < breakdown.total => {
                    field = cand;
                    log_conf = cand_log;
                    breakdown = b;
                    grad = g;
                    history.push(breakdown.total);
                    accepted += 1;
                    step *= STEP_GROWTH;
                    break;
                }
                Some(Ok((b, _))) if b.total.is_nan() => {
                    return Err(Error::Optimization {
                        iteration: iter,
                        reason: "loss is NaN".into(),
                    })
                }
                _ => {
                    step *= 0.5;
                    halvings += 1;
                    if halvings > MAX_HALVINGS {
                        log::debug!("optimizer: no decrease found at iteration {iter}; stopping");
                        break 'outer;
                    }
                }
            }
        }
    }
    if breakdown.total.is_nan() {
        return Err(Error::Optimization {
            iteration: history.len(),
            reason: "loss is NaN".into(),
        });
    }
    Ok(OptimizeResult {
        field,
        history,
        breakdown,
        accepted,
    })
}

/// Builds the starting field for [`optimize_field`].
pub fn initial_field(gt: &GroundTruthBundle, spec: &CurveSpec, init: Init) -> Result<TrajectoryField> {
    spec.validate()?;
    let n = gt.num_frames;
    let hw = gt.pixels_per_frame();
    let d = spec.num_control_points;
    let mut rng = match init {
        Init::Random(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        _ => None,
    };
    let noise = 0.05 * gt.scene_scale.max(f64::MIN_POSITIVE);
    let mut cps = vec![0.0; n * d * hw * 3];
    let mut valid = vec![false; n * hw];
    for i in 0..n {
        for p in 0..hw {
            let targets: Vec<Vec3> = (0..n).filter(|&j| gt.is_valid(i, j, p)).map(|j| gt.position(i, j, p)).collect();
            if targets.is_empty() {
                continue;
            }
            valid[i * hw + p] = true;
            let base = match init {
                Init::GtFirstFrame if gt.is_valid(i, 0, p) => gt.position(i, 0, p),
                _ => crate::util::centroid(&targets),
            };
            for k in 0..d {
                let o = ((i * d + k) * hw + p) * 3;
                for c in 0..3 {
                    let jitter = rng.as_mut().map_or(0.0, |r| r.random_range(-noise..=noise));
                    cps[o + c] = base[c] + jitter;
                }
            }
        }
    }
    TrajectoryField::new(spec.clone(), n, gt.height, gt.width, cps, vec![1.0; n * d * hw], gt.timestamps.clone(), Some(valid))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_field(points: &[Vec3]) -> TrajectoryField {
        let spec = CurveSpec::bspline(points.len()).unwrap();
        let mut f = TrajectoryField::constant(spec, 2, 1, 2, [0.0; 3]).unwrap();
        for (k, p) in points.iter().enumerate() {
            f.set_control_point(0, k, *p);
        }
        f
    }

    #[test]
    fn traj_loss_examples() {
        assert_eq!(traj_loss([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]), 0.0);
        assert_eq!(traj_loss([0.0; 3], [1.0, 2.0, 2.0]), 9.0);
        let (a, b) = ([0.3, -1.0, 2.0], [1.5, 0.25, -0.5]);
        assert_eq!(traj_loss(a, b), traj_loss(b, a));
    }

    #[test]
    fn time_loss_examples() {
        assert_eq!(time_loss(&[0.0, 0.5, 1.0], &[0.0, 0.5, 1.0]).unwrap(), 0.0);
        assert!((time_loss(&[0.0, 1.0], &[0.1, 0.9]).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(time_loss(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert!(matches!(time_loss(&[0.0], &[0.0, 1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn static_reg_examples() {
        let f = tiny_field(&[[0.0; 3], [0.0; 3], [0.0; 3], [1.0, 0.0, 0.0]]);
        let mut mask = vec![false; f.num_pixels()];
        mask[0] = true;
        let t = static_reg(&f, &mask).unwrap();
        assert!((t.value - 0.1875).abs() < 1e-15);
        assert_eq!(t.terms, 1);
        mask[0] = false;
        mask[1] = true;
        assert_eq!(static_reg(&f, &mask).unwrap().value, 0.0);
        let empty = static_reg(&f, &vec![false; f.num_pixels()]).unwrap();
        assert_eq!((empty.value, empty.grad.max_abs()), (0.0, 0.0));
    }

    #[test]
    fn rigid_reg_example_distances() {
        // Pixel 0 at the origin throughout; pixel 1 at distances 1, 1, 1, 3.
        let spec = CurveSpec::bspline(4).unwrap();
        let mut f = TrajectoryField::constant(spec, 2, 1, 2, [0.0; 3]).unwrap();
        for (k, x) in [1.0, 1.0, 1.0, 3.0].into_iter().enumerate() {
            f.set_control_point(1, k, [0.0, x, 0.0]);
        }
        let t = rigid_reg_pairs(&f, &[(0, 1)]);
        assert!((t.value - 0.75).abs() < 1e-15);
        // Identically translating pair.
        let mut g = TrajectoryField::constant(CurveSpec::bspline(4).unwrap(), 2, 1, 2, [0.0; 3]).unwrap();
        for k in 0..4 {
            let shift = [k as f64 * 0.7, -0.2 * k as f64, 1.0];
            g.set_control_point(0, k, shift);
            g.set_control_point(1, k, [shift[0] + 1.0, shift[1], shift[2] - 2.0]);
        }
        assert!(rigid_reg_pairs(&g, &[(0, 1)]).value < 1e-30);
    }

    #[test]
    fn corr_reg_examples() {
        let spec = CurveSpec::bspline(4).unwrap();
        let mut f = TrajectoryField::constant(spec, 2, 1, 2, [0.0; 3]).unwrap();
        let off = [0.3, -0.4, 1.2];
        for k in 0..4 {
            let p = [k as f64, (k * k) as f64, -1.0];
            f.set_control_point(0, k, p);
            f.set_control_point(3, k, [p[0] + off[0], p[1] + off[1], p[2] + off[2]]);
            f.set_control_point(2, k, p);
        }
        let pair = |a: usize, b: usize| Correspondence {
            a: PixelRef::new(a / 2, a % 2, 0),
            b: PixelRef::new(b / 2, b % 2, 0),
        };
        assert_eq!(corr_reg(&f, &[pair(0, 2)]).unwrap().value, 0.0);
        let v = corr_reg(&f, &[pair(0, 3)]).unwrap().value;
        assert!((v - norm_sq(off)).abs() < 1e-14, "{v}");
        assert_eq!(corr_reg(&f, &[]).unwrap().value, 0.0);
        let bad = Correspondence { a: PixelRef::new(5, 0, 0), b: PixelRef::new(0, 0, 0) };
        assert!(matches!(corr_reg(&f, &[bad]), Err(Error::Index(_))));
    }

    #[test]
    fn confidence_loss_reduces_to_mean_traj_loss() {
        let spec = CurveSpec::bspline(4).unwrap();
        let (mut field, gt) = random_problem(&spec, 3, 4, 4, 9).unwrap();
        field.confidences_mut().fill(1.0);
        let t = conf_traj_loss(&field, &gt, 0.7).unwrap();
        let mut plain = Vec::new();
        for i in 0..3 {
            for j in 0..3 {
                for p in 0..16 {
                    if gt.is_valid(i, j, p) {
                        let (u, v) = (p % 4, p / 4);
                        let x = field.query_trajectory(i, u, v, field.timestamps()[j]).unwrap();
                        plain.push(traj_loss(x, gt.position(i, j, p)));
                    }
                }
            }
        }
        assert_eq!(t.terms, plain.len());
        assert!((t.value - plain.iter().sum::<f64>() / plain.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn grad_check_small_problem() {
        for d in [4, 7, 10] {
            let spec = CurveSpec::bspline(d).unwrap();
            let (field, gt) = random_problem(&spec, 3, 8, 8, d as u64).unwrap();
            let w = LossWeights { lambda_time: 0.3, lambda_static: 0.5, lambda_rigid: 0.7, lambda_corr: 0.9, ..Default::default() };
            let r = grad_check(&field, &gt, &w, 1e-4, 60, 1).unwrap();
            assert!(r.max_rel_error <= 1e-5, "D={d}: {r:?}");
            let again = grad_check(&field, &gt, &w, 1e-4, 60, 1).unwrap();
            assert_eq!(r, again);
        }
    }

    #[test]
    fn init_parsing() {
        assert_eq!("centroid".parse::<Init>().unwrap(), Init::Centroid);
        assert_eq!("random:7".parse::<Init>().unwrap(), Init::Random(7));
        assert_eq!("random".parse::<Init>().unwrap(), Init::Random(0));
        assert!("zeros".parse::<Init>().is_err());
    }
}
