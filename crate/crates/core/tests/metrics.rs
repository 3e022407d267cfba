use nalgebra::{Rotation3, Vector3};
use proptest::prelude::*;
use trajfield::fit;
use trajfield::metrics::{self, AlignMode, BenchConfig, Protocol, Sequence};
use trajfield::util::{dist, Vec3};
use trajfield::{synth, CurveSpec, GroundTruthBundle, TrajectoryField};

fn sample(preset: &str, seed: u64, n: usize, size: usize, d: usize) -> (TrajectoryField, GroundTruthBundle) {
    let gt = synth::generate_bundle(&synth::build_scene(preset, seed).unwrap(), n, size, size).unwrap();
    let field = fit::fit_field(&gt, &CurveSpec::bspline(d).unwrap(), fit::DEFAULT_RIDGE).unwrap().field;
    (field, gt)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn umeyama_recovers_a_similarity(
        pts in prop::collection::vec(prop::array::uniform3(-10.0f64..10.0), 6..40),
        angles in prop::array::uniform3(-3.0f64..3.0),
        shift in prop::array::uniform3(-20.0f64..20.0),
        s in 0.05f64..20.0,
    ) {
        let rot = Rotation3::from_euler_angles(angles[0], angles[1], angles[2]);
        let moved: Vec<Vec3> = pts.iter().map(|p| (s * (rot * Vector3::from(*p)) + Vector3::from(shift)).into()).collect();
        let sim = metrics::sim3_align(&pts, &moved, &vec![true; pts.len()]);
        // Degenerate draws (near-collinear) may legitimately be refused.
        if let Ok(sim) = sim {
            for (p, q) in pts.iter().zip(&moved) {
                prop_assert!(dist(sim.apply(*p), *q) < 1e-7 * (1.0 + s * 20.0));
            }
            prop_assert!((sim.scale - s).abs() < 1e-8 * s);
        }
    }
}

#[test]
fn collinear_points_cannot_be_aligned() {
    let pts: Vec<Vec3> = (0..5).map(|k| [k as f64, 2.0 * k as f64, 0.0]).collect();
    assert!(metrics::sim3_align(&pts, &pts, &[true; 5]).is_err());
    assert!(metrics::sim3_align(&pts[..2], &pts[..2], &[true; 2]).is_err());
}

#[test]
fn oracle_fit_scores_near_perfectly() {
    let (field, gt) = sample("mixed", 0, 5, 20, 10);
    let e = metrics::epe(&field, &gt, None).unwrap();
    assert!(e.mix < 1e-6 * gt.scene_scale);
    assert!(e.sta.unwrap() < 1e-12 * gt.scene_scale);
    let stat = gt.static_mask.as_ref().unwrap();
    assert!(metrics::sdd(&field, stat, &[]).unwrap() < 1e-12);
    assert!(metrics::ca(&field, &gt.correspondences, Some(stat)).unwrap() < 1e-6);
}

#[test]
fn apd_is_monotone_and_bounds_jaccard() {
    let (field, gt) = sample("two_body_occlusion", 1, 5, 20, 10);
    // Push each pixel off by a different amount so the thresholds bite.
    let mut pred = field.clone();
    for pix in 0..pred.num_pixels() {
        let off = 0.02 * gt.scene_scale * (pix % 11) as f64;
        for k in 0..pred.num_control_points() {
            let mut cp = pred.control_point(pix, k);
            cp[2] += off;
            pred.set_control_point(pix, k, cp);
        }
    }
    let thresholds: Vec<f64> = [0.01, 0.03, 0.1, 0.3, 1.0].iter().map(|t| t * gt.scene_scale).collect();
    let pairs = metrics::frame_pairs(5, Protocol::Video, 0).unwrap();
    let r = metrics::apd_aj(&pred, &gt, &thresholds, &pairs, None).unwrap();
    assert!(r.apd3d.windows(2).all(|w| w[0].fraction <= w[1].fraction));
    assert!(r.apd3d[0].fraction < r.apd3d[4].fraction);
    let jac = r.jaccard.unwrap();
    for (a, j) in r.apd3d.iter().zip(&jac) {
        assert!(j.fraction <= a.fraction + 1e-15, "{j:?} vs {a:?}");
    }
    assert!((0.0..=1.0).contains(&r.aj.unwrap()));
    // The unperturbed oracle fit saturates every threshold.
    let exact = metrics::apd_aj(&field, &gt, &thresholds, &pairs, None).unwrap();
    assert!(exact.apd3d.iter().all(|t| t.fraction == 1.0));
}

#[test]
fn a_uniform_offset_reads_off_exactly() {
    let (field, gt) = sample("static_room", 0, 3, 10, 4);
    let mut shifted = gt.clone();
    for x in shifted.positions.chunks_exact_mut(3) {
        x[1] += 0.5;
    }
    let e = metrics::epe(&field, &shifted, None).unwrap();
    assert!((e.mix - 0.5).abs() < 1e-12, "{}", e.mix);
    // Alignment removes it entirely.
    let sim = metrics::fit_alignment(&field, &shifted).unwrap();
    assert!(metrics::epe(&field, &shifted, Some(&sim)).unwrap().mix < 1e-9);
}

#[test]
fn benchmark_mean_ignores_sequence_order_and_is_reproducible() {
    let a = sample("mixed", 3, 4, 16, 7);
    let b = sample("pulsing_sphere", 4, 4, 16, 4);
    let c = sample("rigid_orbit", 5, 4, 16, 4);
    let seqs = |order: [usize; 3]| -> Vec<Sequence<'_>> {
        let all = [("a", &a), ("b", &b), ("c", &c)];
        order.iter().map(|&k| Sequence { name: all[k].0.into(), field: &all[k].1 .0, gt: &all[k].1 .1 }).collect()
    };
    let config = BenchConfig { align: AlignMode::Sim3, ..BenchConfig::default() };
    let r1 = metrics::benchmark_run(&seqs([0, 1, 2]), &config).unwrap();
    let r2 = metrics::benchmark_run(&seqs([2, 0, 1]), &config).unwrap();
    let r3 = metrics::benchmark_run(&seqs([0, 1, 2]), &config).unwrap();
    assert_eq!(r1, r3);
    for (x, y) in [(r1.epe_mix, r2.epe_mix), (r1.apd3d_mean, r2.apd3d_mean), (r1.aj, r2.aj), (r1.sdd, r2.sdd)] {
        let (x, y) = (x.unwrap(), y.unwrap());
        assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "{x} vs {y}");
    }
    assert_eq!(r1.num_sequences, 3);
    assert!(r1.wall_times.is_none());
}

#[test]
fn pair_protocol_on_a_long_sequence() {
    let (field, gt) = sample("pulsing_sphere", 0, 120, 4, 10);
    let pairs = metrics::frame_pairs(120, Protocol::Pair, 5).unwrap();
    assert_eq!(pairs.len(), 2 * 115);
    assert!(pairs.contains(&(0, 5)) && pairs.contains(&(5, 0)) && !pairs.contains(&(0, 6)));
    let config = BenchConfig { protocol: Protocol::Pair, ..BenchConfig::default() };
    let r = metrics::benchmark_run(&[Sequence { name: "long".into(), field: &field, gt: &gt }], &config).unwrap();
    assert_eq!(r.pair_gap, Some(5));
    assert!(r.epe_mix.unwrap() < 1e-2 * gt.scene_scale);
    assert!(metrics::frame_pairs(5, Protocol::Pair, 5).is_err());
    assert!(metrics::frame_pairs(5, Protocol::Pair, 0).is_err());
}

#[test]
fn sdd_sees_static_drift() {
    let (mut field, gt) = sample("static_room", 0, 3, 8, 4);
    let stat = gt.static_mask.clone().unwrap();
    let before = metrics::sdd(&field, &stat, &[]).unwrap();
    // Move the last control point of one pixel by 1: its trajectory now drifts.
    let mut cp = field.control_point(0, 3);
    cp[0] += 1.0;
    field.set_control_point(0, 3, cp);
    let after = metrics::sdd(&field, &stat, &[]).unwrap();
    assert!(before < 1e-12 && after > 1e-4, "{before} {after}");
}
