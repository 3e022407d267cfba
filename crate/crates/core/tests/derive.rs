use nalgebra::{Rotation3, UnitQuaternion, Vector3};
use trajfield::derive::{self, CameraSearch};
use trajfield::util::{dist, Vec3};
use trajfield::{fit, metrics, synth, CurveSpec, GroundTruthBundle, TrajectoryField};

fn oracle(preset: &str, n: usize, size: usize, d: usize) -> (TrajectoryField, GroundTruthBundle) {
    let gt = synth::generate_bundle(&synth::build_scene(preset, 0).unwrap(), n, size, size).unwrap();
    let field = fit::fit_field(&gt, &CurveSpec::bspline(d).unwrap(), fit::DEFAULT_RIDGE).unwrap().field;
    (field, gt)
}

fn map_field(field: &TrajectoryField, f: impl Fn(Vec3) -> Vec3) -> TrajectoryField {
    let cps: Vec<f64> = field.control_points().chunks_exact(3).flat_map(|c| f([c[0], c[1], c[2]])).collect();
    TrajectoryField::new(
        field.spec().clone(),
        field.num_frames(),
        field.height(),
        field.width(),
        cps,
        field.confidences().to_vec(),
        field.timestamps().to_vec(),
        Some(field.valid().to_vec()),
    )
    .unwrap()
}

#[test]
fn flow_is_the_endpoint_difference() {
    let (field, _) = oracle("mixed", 4, 12, 7);
    let flow = derive::scene_flow(&field, 2).unwrap();
    for (p, f) in flow.iter().enumerate() {
        let (u, v) = (p % 12, p / 12);
        let a = field.query_trajectory(2, u, v, 0.0).unwrap();
        let b = field.query_trajectory(2, u, v, 1.0).unwrap();
        assert!(dist(*f, [b[0] - a[0], b[1] - a[1], b[2] - a[2]]) < 1e-12);
        let pts = field.pixel_points(field.pixel_index(2, u, v));
        assert!(dist(*f, [pts[6][0] - pts[0][0], pts[6][1] - pts[0][1], pts[6][2] - pts[0][2]]) < 1e-12);
    }
}

#[test]
fn linear_motion_flow_matches_velocity() {
    // The panel in `mixed` slides at constant velocity; its flow over the
    // unit interval equals that velocity.
    let scene = synth::build_scene("mixed", 0).unwrap();
    let gt = synth::generate_bundle(&scene, 4, 32, 32).unwrap();
    let field = fit::fit_field(&gt, &CurveSpec::bspline(4).unwrap(), fit::DEFAULT_RIDGE).unwrap().field;
    let labels = gt.rigid_labels.as_ref().unwrap();
    let flow = derive::scene_flow(&field, 0).unwrap();
    let panel: Vec<&Vec3> = flow.iter().zip(&labels[..32 * 32]).filter(|(_, l)| **l == 1).map(|(f, _)| f).collect();
    assert!(!panel.is_empty());
    for f in &panel {
        assert!(dist(**f, *panel[0]) < 1e-9, "{f:?} vs {:?}", panel[0]);
        assert!(f[1].abs() < 1e-9 && f[2].abs() < 1e-9 && f[0] < 0.0);
    }
}

#[test]
fn forecast_is_affine_in_the_horizon() {
    let (field, _) = oracle("rigid_orbit", 4, 10, 10);
    for (u, v) in [(0, 0), (4, 7), (9, 9)] {
        let f0 = derive::forecast(&field, 1, u, v, 0.0).unwrap();
        let f1 = derive::forecast(&field, 1, u, v, 0.3).unwrap();
        let f2 = derive::forecast(&field, 1, u, v, 0.6).unwrap();
        assert_eq!(f0, field.query_trajectory(1, u, v, 1.0).unwrap());
        for c in 0..3 {
            assert!(((f2[c] - f0[c]) - 2.0 * (f1[c] - f0[c])).abs() < 1e-12);
        }
    }
    assert!(derive::forecast(&field, 1, 0, 0, -0.1).is_err());
}

#[test]
fn static_scene_has_no_dynamic_pixels_and_fuses_tightly() {
    let (field, gt) = oracle("static_room", 4, 16, 4);
    let thr = derive::DEFAULT_MASK_THRESHOLD * gt.scene_scale * gt.scene_scale;
    assert!(derive::dynamic_mask(&field, thr).unwrap().iter().all(|m| !m));
    let cloud = derive::fuse_canonical(&field, 2, &[0, 1, 3]).unwrap();
    assert_eq!(cloud.points.len(), 3 * 16 * 16);
    // Static trajectories do not drift, so each fused point stays where
    // its source pixel saw it.
    let sdd = metrics::sdd(&field, gt.static_mask.as_ref().unwrap(), &[]).unwrap();
    assert!(sdd < 1e-12 * gt.scene_scale);
    for (x, l) in cloud.points.iter().zip(&cloud.labels) {
        let src = gt.position(l.frame, l.frame, l.v * 16 + l.u);
        assert!(dist(*x, src) <= 1e-9 * gt.scene_scale);
    }
}

#[test]
fn dynamic_mask_matches_ground_truth_motion() {
    let (field, gt) = oracle("two_body_occlusion", 4, 24, 10);
    let thr = derive::DEFAULT_MASK_THRESHOLD * gt.scene_scale * gt.scene_scale;
    let mask = derive::dynamic_mask(&field, thr).unwrap();
    let stat = gt.static_mask.as_ref().unwrap();
    let hw = 24 * 24;
    for (k, m) in mask.iter().enumerate() {
        if gt.pixel_valid(k / hw, k % hw) {
            assert_eq!(*m, !stat[k], "pixel {k}");
        }
    }
}

#[test]
fn tracks_through_gt_cameras_stay_on_static_pixels() {
    let (field, gt) = oracle("static_room", 5, 16, 4);
    let cams = gt.cameras.as_ref().unwrap();
    let track = derive::project_2d(&field, cams, 2, 5, 11, 5).unwrap();
    // Samples at t = 0, .25, .5, .75, 1 coincide with the frame timestamps.
    for (k, tp) in track.iter().enumerate() {
        assert_eq!(tp.frame, k);
        assert!(tp.in_front);
        let x = gt.position(2, 2, 11 * 16 + 5);
        let (px, _) = cams[k].project(x).unwrap();
        assert!((tp.pixel[0] - px[0]).abs() < 1e-6 && (tp.pixel[1] - px[1]).abs() < 1e-6);
    }
    assert!((track[2].pixel[0] - 5.0).abs() < 1e-6 && (track[2].pixel[1] - 11.0).abs() < 1e-6);
}

#[test]
fn camera_estimates_follow_a_rigid_change_of_world_frame() {
    let (field, gt) = oracle("static_room", 3, 48, 4);
    let rot = Rotation3::from_euler_angles(0.2, -0.4, 0.7);
    let shift = Vector3::new(3.0, -1.0, 2.0);
    let moved = map_field(&field, |x| (rot * Vector3::from(x) + shift).into());
    let search = CameraSearch::default();
    let a = derive::estimate_cameras(&field, &search);
    let b = derive::estimate_cameras(&moved, &search);
    let cams = gt.cameras.as_ref().unwrap();
    let q = UnitQuaternion::from_rotation_matrix(&rot);
    for ((a, b), truth) in a.iter().zip(&b).zip(cams) {
        let (a, b) = (a.as_ref().unwrap(), b.as_ref().unwrap());
        assert!((a.camera.focal / truth.focal - 1.0).abs() < 1e-6);
        assert!((b.camera.focal / a.camera.focal - 1.0).abs() < 1e-6);
        let expect: Vec3 = (rot * Vector3::from(a.camera.translation) + shift).into();
        assert!(dist(b.camera.translation, expect) < 1e-6 * gt.scene_scale);
        assert!((q * a.camera.quaternion()).angle_to(&b.camera.quaternion()) < 1e-6);
        assert!(a.median_reprojection < 1e-6);
    }
    // The camera moves along a known line: recovered centers follow it.
    let c0 = a[0].as_ref().unwrap().camera.translation;
    let c2 = a[2].as_ref().unwrap().camera.translation;
    assert!(dist(c0, cams[0].translation) < 1e-6 * gt.scene_scale);
    assert!(dist(c2, cams[2].translation) < 1e-6 * gt.scene_scale);
}

#[test]
fn degenerate_frames_yield_errors() {
    // Every pixel at the same point: no pose can be recovered.
    let field = TrajectoryField::constant(CurveSpec::bspline(4).unwrap(), 2, 8, 8, [0.0, 0.0, 5.0]).unwrap();
    assert!(derive::estimate_cameras(&field, &CameraSearch::default()).iter().all(|r| r.is_err()));
}
