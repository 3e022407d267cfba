//! Benchmark metrics for trajectory fields against dense ground truth:
//! end-point errors (all / static / dynamic pixels), static degeneracy
//! deviation, correspondence agreement, APD / average Jaccard, optional
//! similarity alignment, and a report aggregator.
//!
//! Every reduction goes through pairwise summation in a fixed order, so
//! results do not depend on thread count.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::{Correspondence, GroundTruthBundle};
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::field::{PointMap, TrajectoryField};
use crate::util::{add, dist, pairwise_sum, scale, sub, Vec3};

/// Default APD / AJ thresholds as multiples of the scene scale.
pub const DEFAULT_THRESHOLDS: [f64; 5] = [0.05, 0.1, 0.2, 0.4, 0.8];
/// Depth tolerance for predicted visibility, relative to scene scale.
pub const VISIBILITY_TAU: f64 = 0.05;
pub const DEFAULT_PAIR_GAP: usize = 5;
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// `x ↦ s·R·x + T`, mapping predictions onto ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sim3 {
    pub scale: f64,
    /// Row-major rotation matrix.
    pub rotation: [[f64; 3]; 3],
    pub translation: Vec3,
}

impl Sim3 {
    pub const IDENTITY: Sim3 = Sim3 {
        scale: 1.0,
        rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        translation: [0.0; 3],
    };

    pub fn matrix(&self) -> Matrix3<f64> {
        let r = &self.rotation;
        Matrix3::new(r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2])
    }

    pub fn from_parts(scale: f64, rotation: &Matrix3<f64>, translation: Vec3) -> Self {
        let mut rows = [[0.0; 3]; 3];
        for (r, row) in rows.iter_mut().enumerate() {
            for (c, x) in row.iter_mut().enumerate() {
                *x = rotation[(r, c)];
            }
        }
        Self { scale, rotation: rows, translation }
    }

    #[inline]
    pub fn apply(&self, x: Vec3) -> Vec3 {
        let r = &self.rotation;
        let rx = [
            r[0][0] * x[0] + r[0][1] * x[1] + r[0][2] * x[2],
            r[1][0] * x[0] + r[1][1] * x[1] + r[1][2] * x[2],
            r[2][0] * x[0] + r[2][1] * x[1] + r[2][2] * x[2],
        ];
        add(scale(rx, self.scale), self.translation)
    }
}

/// Closed-form similarity minimizing `Σ ‖s·R·p + T − g‖²` over pairs with
/// `valid` set (Umeyama). Fails on fewer than three pairs or collinear
/// points.
pub fn sim3_align(pred: &[Vec3], gt: &[Vec3], valid: &[bool]) -> Result<Sim3> {
    if pred.len() != gt.len() || pred.len() != valid.len() {
        return Err(Error::Shape("sim3_align inputs differ in length".into()));
    }
    let (p, g): (Vec<Vec3>, Vec<Vec3>) = pred
        .iter()
        .zip(gt)
        .zip(valid)
        .filter(|(_, v)| **v)
        .map(|((p, g), _)| (*p, *g))
        .unzip();
    if p.len() < 3 {
        return Err(Error::Alignment(format!("need at least 3 point pairs, got {}", p.len())));
    }
    let mean = |pts: &[Vec3]| -> Vec3 {
        let n = pts.len() as f64;
        std::array::from_fn(|c| pairwise_sum(&pts.iter().map(|x| x[c]).collect::<Vec<_>>()) / n)
    };
    let mp = mean(&p);
    let mg = mean(&g);
    let n = p.len() as f64;
    // Covariance entries and pred variance, each summed pairwise.
    let mut cov = Matrix3::zeros();
    let mut terms = vec![0.0; p.len()];
    for r in 0..3 {
        for c in 0..3 {
            for (k, (pk, gk)) in p.iter().zip(&g).enumerate() {
                terms[k] = (gk[r] - mg[r]) * (pk[c] - mp[c]);
            }
            cov[(r, c)] = pairwise_sum(&terms) / n;
        }
    }
    for (k, pk) in p.iter().enumerate() {
        let d = sub(*pk, mp);
        terms[k] = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
    }
    let var_p = pairwise_sum(&terms) / n;

    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut sv: Vec<(f64, usize)> = svd.singular_values.iter().copied().zip(0..3).collect();
    sv.sort_by(|a, b| b.0.total_cmp(&a.0));
    if !(var_p > 0.0) || !(sv[1].0 > 1e-12 * sv[0].0) {
        return Err(Error::Alignment("degenerate (collinear or coincident) points".into()));
    }
    let mut s_diag = Matrix3::identity();
    if (u.determinant() * vt.determinant()) < 0.0 {
        // Flip the axis of the smallest singular value.
        s_diag[(sv[2].1, sv[2].1)] = -1.0;
    }
    let rot = u * s_diag * vt;
    let trace_ds: f64 = (0..3).map(|k| svd.singular_values[k] * s_diag[(k, k)]).sum();
    let s = trace_ds / var_p;
    let t = Vector3::from(mg) - s * (rot * Vector3::from(mp));
    Ok(Sim3::from_parts(s, &rot, t.into()))
}

/// Fits the alignment on static self-point-map pixels (all valid pixels
/// when the bundle has no static mask).
pub fn fit_alignment(field: &TrajectoryField, gt: &GroundTruthBundle) -> Result<Sim3> {
    check_shapes(field, gt)?;
    let hw = gt.pixels_per_frame();
    let mut pred = Vec::new();
    let mut target = Vec::new();
    let mut mask = Vec::new();
    for i in 0..gt.num_frames {
        let map = field.self_point_map(i)?;
        for p in 0..hw {
            let ok = gt.is_valid(i, i, p) && map.valid[p] && gt.is_static(i, p).unwrap_or(true);
            pred.push(map.points[p]);
            target.push(gt.position(i, i, p));
            mask.push(ok);
        }
    }
    sim3_align(&pred, &target, &mask)
}

fn check_shapes(field: &TrajectoryField, gt: &GroundTruthBundle) -> Result<()> {
    if field.num_frames() != gt.num_frames || field.height() != gt.height || field.width() != gt.width {
        return Err(Error::Shape(format!(
            "field is {}×{}×{}, ground truth is {}×{}×{}",
            field.num_frames(),
            field.height(),
            field.width(),
            gt.num_frames,
            gt.height,
            gt.width
        )));
    }
    if field.timestamps() != gt.timestamps.as_slice() {
        return Err(Error::Shape("field and ground-truth timestamps differ".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// Every ordered frame pair `(i, j)`.
    Video,
    /// `(i, i + gap)` and `(i + gap, i)` only.
    Pair,
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "video" => Ok(Self::Video),
            "pair" => Ok(Self::Pair),
            _ => Err(Error::Config(format!("unknown protocol `{s}`; expected video or pair"))),
        }
    }
}

/// Ordered `(source, target)` frame pairs evaluated under a protocol.
pub fn frame_pairs(n: usize, protocol: Protocol, gap: usize) -> Result<Vec<(usize, usize)>> {
    match protocol {
        Protocol::Video => Ok((0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect()),
        Protocol::Pair => {
            if gap == 0 || gap >= n {
                return Err(Error::Config(format!("pair gap {gap} needs 0 < gap < {n}")));
            }
            Ok((0..n - gap).flat_map(|i| [(i, i + gap), (i + gap, i)]).collect())
        }
    }
}

/// Mean end-point errors; `sta` / `dyn_` are `None` without a static mask
/// or when the subset is empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Epe {
    pub mix: f64,
    pub sta: Option<f64>,
    #[serde(rename = "dyn")]
    pub dyn_: Option<f64>,
}

fn cross_map(field: &TrajectoryField, i: usize, j: usize, align: Option<&Sim3>) -> Result<PointMap> {
    let mut map = field.query_cross_frame(i, j)?;
    if let Some(a) = align {
        map.points.iter_mut().for_each(|x| *x = a.apply(*x));
    }
    Ok(map)
}

/// Mean `‖X_{i→j} − X^gt_{i→j}‖` over valid entries of the given frame pairs.
pub fn epe_pairs(
    field: &TrajectoryField,
    gt: &GroundTruthBundle,
    pairs: &[(usize, usize)],
    align: Option<&Sim3>,
) -> Result<Epe> {
    check_shapes(field, gt)?;
    let hw = gt.pixels_per_frame();
    // Per pair: (sum, count) for all / static / dynamic.
    let partial: Vec<[(f64, usize); 3]> = pairs
        .par_iter()
        .map(|&(i, j)| -> Result<[(f64, usize); 3]> {
            let map = cross_map(field, i, j, align)?;
            let mut errs: [Vec<f64>; 3] = Default::default();
            for p in 0..hw {
                if !gt.is_valid(i, j, p) || !map.valid[p] {
                    continue;
                }
                let e = dist(map.points[p], gt.position(i, j, p));
                errs[0].push(e);
                match gt.is_static(i, p) {
                    Some(true) => errs[1].push(e),
                    Some(false) => errs[2].push(e),
                    None => {}
                }
            }
            Ok(errs.map(|v| (pairwise_sum(&v), v.len())))
        })
        .collect::<Result<_>>()?;
    let reduce = |k: usize| -> Option<f64> {
        let count: usize = partial.iter().map(|p| p[k].1).sum();
        (count > 0).then(|| pairwise_sum(&partial.iter().map(|p| p[k].0).collect::<Vec<_>>()) / count as f64)
    };
    let mix = reduce(0).ok_or_else(|| Error::Metric("no valid end-point terms".into()))?;
    Ok(Epe { mix, sta: reduce(1), dyn_: reduce(2) })
}

/// All-to-all end-point errors.
pub fn epe(field: &TrajectoryField, gt: &GroundTruthBundle, align: Option<&Sim3>) -> Result<Epe> {
    epe_pairs(field, gt, &frame_pairs(gt.num_frames, Protocol::Video, 0)?, align)
}

/// Mean over masked (and valid) pixels of the RMS deviation of
/// `x(t_k)` about its mean over the times `times` (the frame timestamps
/// when empty).
pub fn sdd(field: &TrajectoryField, static_mask: &[bool], times: &[f64]) -> Result<f64> {
    if static_mask.len() != field.num_pixels() {
        return Err(Error::Shape(format!(
            "static mask has {} entries, field has {} pixels",
            static_mask.len(),
            field.num_pixels()
        )));
    }
    let times = if times.is_empty() { field.timestamps() } else { times };
    let devs: Vec<Option<f64>> = (0..field.num_pixels())
        .into_par_iter()
        .map(|pix| {
            if !static_mask[pix] || !field.valid()[pix] {
                return None;
            }
            let xs: Vec<Vec3> = times.iter().map(|&t| field.eval_pixel(pix, t)).collect();
            let n = xs.len() as f64;
            let m: Vec3 = std::array::from_fn(|c| pairwise_sum(&xs.iter().map(|x| x[c]).collect::<Vec<_>>()) / n);
            let sq: Vec<f64> = xs.iter().map(|x| dist(*x, m).powi(2)).collect();
            Some((pairwise_sum(&sq) / n).sqrt())
        })
        .collect();
    let devs: Vec<f64> = devs.into_iter().flatten().collect();
    if devs.is_empty() {
        return Err(Error::Metric("static mask selects no valid pixels".into()));
    }
    Ok(pairwise_sum(&devs) / devs.len() as f64)
}

/// Mean over correspondence pairs and frame timestamps of the distance
/// between the two trajectories. With `static_mask`, pairs whose first
/// pixel is static are skipped.
pub fn ca(field: &TrajectoryField, correspondences: &[Correspondence], static_mask: Option<&[bool]>) -> Result<f64> {
    for c in correspondences {
        for p in [c.a, c.b] {
            field.check_index(p.frame, p.u, p.v)?;
        }
    }
    let kept: Vec<&Correspondence> = correspondences
        .iter()
        .filter(|c| static_mask.is_none_or(|m| !m[field.pixel_index(c.a.frame, c.a.u, c.a.v)]))
        .collect();
    if kept.is_empty() {
        return Err(Error::Metric("no correspondences after filtering".into()));
    }
    let ts = field.timestamps();
    let per_pair: Vec<f64> = kept
        .par_iter()
        .map(|c| {
            let a = field.pixel_index(c.a.frame, c.a.u, c.a.v);
            let b = field.pixel_index(c.b.frame, c.b.u, c.b.v);
            let d: Vec<f64> = ts.iter().map(|&t| dist(field.eval_pixel(a, t), field.eval_pixel(b, t))).collect();
            pairwise_sum(&d) / ts.len() as f64
        })
        .collect();
    Ok(pairwise_sum(&per_pair) / per_pair.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdFraction {
    /// Absolute threshold in scene units.
    pub threshold: f64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApdAj {
    pub apd3d: Vec<ThresholdFraction>,
    pub apd3d_mean: f64,
    /// `None` when the bundle has no cameras to derive predicted visibility.
    pub aj: Option<f64>,
    pub jaccard: Option<Vec<ThresholdFraction>>,
}

/// APD over GT-visible entries, and average Jaccard with predicted
/// visibility from depth-testing the prediction against frame `j`'s
/// predicted self point map (`τ = VISIBILITY_TAU · scene_scale`).
///
/// `thresholds` are absolute and must be positive and ascending.
pub fn apd_aj(
    field: &TrajectoryField,
    gt: &GroundTruthBundle,
    thresholds: &[f64],
    pairs: &[(usize, usize)],
    align: Option<&Sim3>,
) -> Result<ApdAj> {
    check_shapes(field, gt)?;
    if thresholds.is_empty() || thresholds.iter().any(|d| !(*d > 0.0)) || thresholds.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Config("thresholds must be positive and strictly ascending".into()));
    }
    let visible = gt
        .visible
        .as_ref()
        .ok_or_else(|| Error::Metric("ground truth has no visibility flags".into()))?;
    let cameras: Option<&[Camera]> = gt.cameras.as_deref();
    let tau = VISIBILITY_TAU * gt.scene_scale;
    let hw = gt.pixels_per_frame();
    let nd = thresholds.len();
    let self_maps: Option<Vec<PointMap>> = cameras
        .map(|_| (0..gt.num_frames).map(|j| cross_map(field, j, j, align)).collect::<Result<_>>())
        .transpose()?;

    // Per pair: visible count, within-δ counts, and TP / FP / FN per δ.
    struct Counts {
        vis: u64,
        within: Vec<u64>,
        tp: Vec<u64>,
        fp: Vec<u64>,
        fn_: Vec<u64>,
    }
    let partial: Vec<Counts> = pairs
        .par_iter()
        .map(|&(i, j)| -> Result<Counts> {
            let map = cross_map(field, i, j, align)?;
            let mut c = Counts { vis: 0, within: vec![0; nd], tp: vec![0; nd], fp: vec![0; nd], fn_: vec![0; nd] };
            for p in 0..hw {
                if !gt.is_valid(i, j, p) || !map.valid[p] {
                    continue;
                }
                let gt_vis = visible[gt.gt_index(i, j, p)];
                let x = map.points[p];
                let err = dist(x, gt.position(i, j, p));
                if gt_vis {
                    c.vis += 1;
                    for (k, d) in thresholds.iter().enumerate() {
                        c.within[k] += (err < *d) as u64;
                    }
                }
                if let (Some(cams), Some(maps)) = (cameras, &self_maps) {
                    let pred_vis = predicted_visible(&cams[j], &maps[j], x, tau);
                    for (k, d) in thresholds.iter().enumerate() {
                        let close = err < *d;
                        match (gt_vis, pred_vis) {
                            (true, true) if close => c.tp[k] += 1,
                            (true, true) => {
                                c.fp[k] += 1;
                                c.fn_[k] += 1;
                            }
                            (true, false) => c.fn_[k] += 1,
                            (false, true) => c.fp[k] += 1,
                            (false, false) => {}
                        }
                    }
                }
            }
            Ok(c)
        })
        .collect::<Result<_>>()?;

    let vis: u64 = partial.iter().map(|c| c.vis).sum();
    if vis == 0 {
        return Err(Error::Metric("no valid, visible evaluations".into()));
    }
    let sum_k = |f: &dyn Fn(&Counts) -> &Vec<u64>, k: usize| -> u64 { partial.iter().map(|c| f(c)[k]).sum() };
    let apd3d: Vec<ThresholdFraction> = thresholds
        .iter()
        .enumerate()
        .map(|(k, d)| ThresholdFraction { threshold: *d, fraction: sum_k(&|c| &c.within, k) as f64 / vis as f64 })
        .collect();
    let apd3d_mean = pairwise_sum(&apd3d.iter().map(|a| a.fraction).collect::<Vec<_>>()) / nd as f64;
    let jaccard: Option<Vec<ThresholdFraction>> = cameras.map(|_| {
        thresholds
            .iter()
            .enumerate()
            .map(|(k, d)| {
                let tp = sum_k(&|c| &c.tp, k);
                let denom = tp + sum_k(&|c| &c.fp, k) + sum_k(&|c| &c.fn_, k);
                ThresholdFraction { threshold: *d, fraction: if denom == 0 { 0.0 } else { tp as f64 / denom as f64 } }
            })
            .collect()
    });
    let aj = jaccard
        .as_ref()
        .map(|j| pairwise_sum(&j.iter().map(|a| a.fraction).collect::<Vec<_>>()) / nd as f64);
    Ok(ApdAj { apd3d, apd3d_mean, aj, jaccard })
}

/// A point is predicted visible in a frame if it projects inside the image
/// and is not more than `tau` behind that frame's own surface.
fn predicted_visible(camera: &Camera, self_map: &PointMap, x: Vec3, tau: f64) -> bool {
    let Some((px, depth)) = camera.project(x) else { return false };
    let Some((u, v)) = Camera::pixel_of(px, self_map.width, self_map.height) else { return false };
    match self_map.get(u, v) {
        Some(surface) => camera.world_to_camera(surface)[2] >= depth - tau,
        None => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignMode {
    None,
    Sim3,
}

impl std::str::FromStr for AlignMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "sim3" => Ok(Self::Sim3),
            _ => Err(Error::Config(format!("unknown alignment `{s}`; expected none or sim3"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub protocol: Protocol,
    pub pair_gap: usize,
    pub align: AlignMode,
    /// Multiples of each sequence's scene scale.
    pub thresholds: Vec<f64>,
    /// Record per-stage wall-clock seconds (makes reports non-reproducible).
    pub record_timings: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            protocol: Protocol::Video,
            pair_gap: DEFAULT_PAIR_GAP,
            align: AlignMode::None,
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            record_timings: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Alignment {
    None,
    Sim3(Sim3),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMetrics {
    pub name: String,
    pub scene_scale: f64,
    pub epe_mix: Option<f64>,
    pub epe_sta: Option<f64>,
    pub epe_dyn: Option<f64>,
    pub sdd: Option<f64>,
    pub ca: Option<f64>,
    pub apd3d: Option<Vec<ThresholdFraction>>,
    pub apd3d_mean: Option<f64>,
    pub aj: Option<f64>,
    pub alignment: Alignment,
    /// Metrics that could not be computed, with the reason.
    pub absent: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_times: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub protocol: Protocol,
    pub pair_gap: Option<usize>,
    pub align: AlignMode,
    pub relative_thresholds: Vec<f64>,
    pub num_sequences: usize,
    pub epe_mix: Option<f64>,
    pub epe_sta: Option<f64>,
    pub epe_dyn: Option<f64>,
    pub sdd: Option<f64>,
    pub ca: Option<f64>,
    pub apd3d_mean: Option<f64>,
    pub aj: Option<f64>,
    /// Alignment of the single sequence; per-sequence otherwise.
    pub alignment: Alignment,
    pub sequences: Vec<SequenceMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_times: Option<BTreeMap<String, f64>>,
}

/// One named prediction / ground-truth pair.
pub struct Sequence<'a> {
    pub name: String,
    pub field: &'a TrajectoryField,
    pub gt: &'a GroundTruthBundle,
}

/// Evaluates one sequence. Shape mismatches are errors; metrics whose
/// inputs are missing are recorded in `absent`.
pub fn evaluate_sequence(seq: &Sequence<'_>, config: &BenchConfig) -> Result<SequenceMetrics> {
    let (field, gt) = (seq.field, seq.gt);
    check_shapes(field, gt)?;
    let mut times = BTreeMap::new();
    let mut absent = BTreeMap::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, times: &mut BTreeMap<String, f64>| {
        times.insert(name.to_string(), clock.elapsed().as_secs_f64());
        clock = Instant::now();
    };
    let pairs = frame_pairs(gt.num_frames, config.protocol, config.pair_gap)?;

    let sim = match config.align {
        AlignMode::None => None,
        AlignMode::Sim3 => match fit_alignment(field, gt) {
            Ok(s) => Some(s),
            Err(e) => {
                absent.insert("alignment".into(), e.to_string());
                None
            }
        },
    };
    lap("align", &mut times);

    let mut note = |name: &str, e: &Error| {
        absent.insert(name.to_string(), e.to_string());
    };
    let epe_r = epe_pairs(field, gt, &pairs, sim.as_ref());
    lap("epe", &mut times);
    let e = match epe_r {
        Ok(e) => Some(e),
        Err(Error::Metric(m)) => {
            note("epe", &Error::Metric(m));
            None
        }
        Err(err) => return Err(err),
    };

    // SDD is a temporal property of the prediction; alignment scale applies.
    let sdd_v = match &gt.static_mask {
        Some(mask) => sdd(field, mask, &[]).map(|v| v * sim.map_or(1.0, |s| s.scale)),
        None => Err(Error::Metric("ground truth has no static mask".into())),
    };
    let sdd_v = sdd_v.map_err(|e| note("sdd", &e)).ok();
    lap("sdd", &mut times);

    let ca_v = if gt.correspondences.is_empty() {
        Err(Error::Metric("ground truth has no correspondences".into()))
    } else {
        ca(field, &gt.correspondences, gt.static_mask.as_deref()).map(|v| v * sim.map_or(1.0, |s| s.scale))
    };
    let ca_v = ca_v.map_err(|e| note("ca", &e)).ok();
    lap("ca", &mut times);

    let abs: Vec<f64> = config.thresholds.iter().map(|d| d * gt.scene_scale).collect();
    let apd = apd_aj(field, gt, &abs, &pairs, sim.as_ref()).map_err(|e| note("apd3d", &e)).ok();
    if apd.as_ref().is_some_and(|a| a.aj.is_none()) {
        note("aj", &Error::Metric("ground truth has no cameras".into()));
    }
    lap("apd_aj", &mut times);

    Ok(SequenceMetrics {
        name: seq.name.clone(),
        scene_scale: gt.scene_scale,
        epe_mix: e.map(|e| e.mix),
        epe_sta: e.and_then(|e| e.sta),
        epe_dyn: e.and_then(|e| e.dyn_),
        sdd: sdd_v,
        ca: ca_v,
        apd3d_mean: apd.as_ref().map(|a| a.apd3d_mean),
        aj: apd.as_ref().and_then(|a| a.aj),
        apd3d: apd.map(|a| a.apd3d),
        alignment: sim.map_or(Alignment::None, Alignment::Sim3),
        absent,
        wall_times: config.record_timings.then_some(times),
    })
}

/// Evaluates every sequence (in parallel) and aggregates each metric by
/// unweighted mean over the sequences where it is present.
pub fn benchmark_run(sequences: &[Sequence<'_>], config: &BenchConfig) -> Result<MetricsReport> {
    if sequences.is_empty() {
        return Err(Error::Input("no sequences to evaluate".into()));
    }
    if config.thresholds.is_empty() || config.thresholds.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::Config("thresholds must be positive".into()));
    }
    let start = Instant::now();
    let per: Vec<SequenceMetrics> = sequences
        .par_iter()
        .map(|s| evaluate_sequence(s, config))
        .collect::<Result<_>>()?;
    let mean_of = |f: &dyn Fn(&SequenceMetrics) -> Option<f64>| -> Option<f64> {
        let v: Vec<f64> = per.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| pairwise_sum(&v) / v.len() as f64)
    };
    let wall_times = config.record_timings.then(|| {
        let mut t = BTreeMap::new();
        for s in &per {
            for (k, v) in s.wall_times.iter().flatten() {
                *t.entry(k.clone()).or_insert(0.0) += v;
            }
        }
        t.insert("total".into(), start.elapsed().as_secs_f64());
        t
    });
    Ok(MetricsReport {
        schema_version: REPORT_SCHEMA_VERSION,
        protocol: config.protocol,
        pair_gap: (config.protocol == Protocol::Pair).then_some(config.pair_gap),
        align: config.align,
        relative_thresholds: config.thresholds.clone(),
        num_sequences: per.len(),
        epe_mix: mean_of(&|s| s.epe_mix),
        epe_sta: mean_of(&|s| s.epe_sta),
        epe_dyn: mean_of(&|s| s.epe_dyn),
        sdd: mean_of(&|s| s.sdd),
        ca: mean_of(&|s| s.ca),
        apd3d_mean: mean_of(&|s| s.apd3d_mean),
        aj: mean_of(&|s| s.aj),
        alignment: if per.len() == 1 { per[0].alignment.clone() } else { Alignment::None },
        sequences: per,
        wall_times,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::CurveSpec;

    fn cloud() -> Vec<Vec3> {
        vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 3.0], [1.0, 1.0, 1.0]]
    }

    #[test]
    fn sim3_identity_and_known_similarity() {
        let g = cloud();
        let ok = vec![true; g.len()];
        let s = sim3_align(&g, &g, &ok).unwrap();
        assert!((s.scale - 1.0).abs() < 1e-12);
        assert!((s.matrix() - Matrix3::identity()).norm() < 1e-12);
        assert!(s.translation.iter().all(|t| t.abs() < 1e-12));

        let p: Vec<Vec3> = g.iter().map(|x| [2.0 * x[0] + 1.0, 2.0 * x[1], 2.0 * x[2]]).collect();
        let s = sim3_align(&p, &g, &ok).unwrap();
        assert!((s.scale - 0.5).abs() < 1e-12);
        assert!((s.matrix() - Matrix3::identity()).norm() < 1e-12);
        assert!((s.translation[0] + 0.5).abs() < 1e-12 && s.translation[1].abs() < 1e-12);
    }

    #[test]
    fn sim3_rejects_degenerate_input() {
        let line: Vec<Vec3> = (0..5).map(|k| [k as f64, 2.0 * k as f64, 0.0]).collect();
        let ok = vec![true; 5];
        assert!(matches!(sim3_align(&line, &line, &ok), Err(Error::Alignment(_))));
        let g = cloud();
        assert!(matches!(sim3_align(&g, &g, &[true, true, false, false, false]), Err(Error::Alignment(_))));
    }

    #[test]
    fn frame_pair_protocols() {
        assert_eq!(frame_pairs(3, Protocol::Video, 0).unwrap().len(), 9);
        assert_eq!(frame_pairs(8, Protocol::Pair, 5).unwrap(), vec![(0, 5), (5, 0), (1, 6), (6, 1), (2, 7), (7, 2)]);
        assert!(frame_pairs(5, Protocol::Pair, 5).is_err());
    }

    fn oscillating(n: usize) -> TrajectoryField {
        let spec = CurveSpec::bspline(4).unwrap();
        let mut f = TrajectoryField::constant(spec, n, 1, 1, [0.0; 3]).unwrap();
        f.set_control_point(0, 0, [-0.001, 0.0, 0.0]);
        f.set_control_point(0, 1, [-0.001, 0.0, 0.0]);
        f.set_control_point(0, 2, [0.001, 0.0, 0.0]);
        f.set_control_point(0, 3, [0.001, 0.0, 0.0]);
        f
    }

    #[test]
    fn sdd_two_point_rms() {
        let f = oscillating(2);
        let mut mask = vec![true; 2];
        mask[1] = false;
        assert!((sdd(&f, &mask, &[]).unwrap() - 0.001).abs() < 1e-15);
        assert!(matches!(sdd(&f, &[false, false], &[]), Err(Error::Metric(_))));
    }

    #[test]
    fn ca_constant_offset() {
        let spec = CurveSpec::bspline(4).unwrap();
        let mut f = TrajectoryField::constant(spec, 2, 1, 2, [1.0, 1.0, 1.0]).unwrap();
        let px = f.pixel_index(1, 1, 0);
        for k in 0..4 {
            f.set_control_point(px, k, [1.0, 1.0 + 0.3, 1.0 + 0.4]);
        }
        let c = Correspondence { a: crate::PixelRef::new(0, 0, 0), b: crate::PixelRef::new(1, 1, 0) };
        assert!((ca(&f, &[c], None).unwrap() - 0.5).abs() < 1e-15);
        let mut same = c;
        same.b = crate::PixelRef::new(1, 0, 0);
        assert_eq!(ca(&f, &[same], None).unwrap(), 0.0);
        assert!(matches!(ca(&f, &[c], Some(&[true; 4])), Err(Error::Metric(_))));
    }
}
