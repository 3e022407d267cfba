use trajfield::bundle::NO_SEGMENT;
use trajfield::synth::{self, PRESETS};
use trajfield::util::dist;
use trajfield::{Camera, GroundTruthBundle};

const N: usize = 5;
const SIZE: usize = 24;

fn bundle(preset: &str, seed: u64) -> GroundTruthBundle {
    synth::generate_bundle(&synth::build_scene(preset, seed).unwrap(), N, SIZE, SIZE).unwrap()
}

fn pixels(gt: &GroundTruthBundle) -> impl Iterator<Item = (usize, usize, usize, usize)> + '_ {
    let (h, w) = (gt.height, gt.width);
    (0..gt.num_frames).flat_map(move |i| (0..h * w).map(move |p| (i, p, p % w, p / w)))
}

#[test]
fn self_positions_project_back_to_their_pixel() {
    for preset in PRESETS {
        let gt = bundle(preset, 1);
        let cams = gt.cameras.as_ref().unwrap();
        let depth = gt.depth.as_ref().unwrap();
        let mut checked = 0;
        for (i, p, u, v) in pixels(&gt) {
            if !gt.pixel_valid(i, p) {
                assert_eq!(depth[i * SIZE * SIZE + p], 0.0);
                continue;
            }
            let x = gt.position(i, i, p);
            let (px, z) = cams[i].project(x).unwrap();
            assert!((px[0] - u as f64).abs() < 1e-7 && (px[1] - v as f64).abs() < 1e-7, "{preset} {px:?} vs ({u},{v})");
            assert!((z - depth[i * SIZE * SIZE + p]).abs() < 1e-9 * gt.scene_scale);
            // Back-projection along the pixel ray lands on the same point.
            let (o, d) = cams[i].pixel_ray([u as f64, v as f64]);
            let z = depth[i * SIZE * SIZE + p];
            let back = [o[0] + z * d[0], o[1] + z * d[1], o[2] + z * d[2]];
            assert!(dist(back, x) < 1e-9 * gt.scene_scale);
            checked += 1;
        }
        assert!(checked > N * SIZE * SIZE / 2, "{preset}: only {checked} valid pixels");
    }
}

#[test]
fn static_pixels_do_not_move() {
    for preset in PRESETS {
        let gt = bundle(preset, 2);
        let stat = gt.static_mask.as_ref().unwrap();
        for (i, p, _, _) in pixels(&gt) {
            if stat[i * SIZE * SIZE + p] {
                let x = gt.position(i, i, p);
                for j in 0..N {
                    assert_eq!(gt.position(i, j, p), x, "{preset}");
                }
            }
        }
    }
    let room = bundle("static_room", 0);
    assert!(room.static_mask.as_ref().unwrap().iter().zip(&room.valid).all(|(s, _)| *s));
}

#[test]
fn labels_agree_with_masks() {
    for preset in PRESETS {
        let gt = bundle(preset, 3);
        let stat = gt.static_mask.as_ref().unwrap();
        let labels = gt.rigid_labels.as_ref().unwrap();
        for (k, (s, l)) in stat.iter().zip(labels).enumerate() {
            if *s {
                assert_eq!(*l, 0, "{preset}: static pixel {k} has segment {l}");
            } else if gt.pixel_valid(k / (SIZE * SIZE), k % (SIZE * SIZE)) {
                assert_ne!(*l, 0, "{preset}: dynamic pixel {k} labeled static");
            }
        }
    }
    let pulsing = bundle("pulsing_sphere", 0);
    assert!(pulsing.rigid_labels.as_ref().unwrap().contains(&NO_SEGMENT));
}

#[test]
fn correspondences_observe_the_same_material_point() {
    let mut total = 0;
    for preset in PRESETS {
        let gt = bundle(preset, 4);
        for c in &gt.correspondences {
            assert!(c.a.frame < c.b.frame);
            let pa = c.a.v * SIZE + c.a.u;
            let pb = c.b.v * SIZE + c.b.u;
            let j = c.b.frame;
            // Carried to frame j, pixel a lands where pixel b sees itself.
            let xa = gt.position(c.a.frame, j, pa);
            let xb = gt.position(j, j, pb);
            assert!(dist(xa, xb) < 1e-6 * gt.scene_scale, "{preset}: {c:?}");
            assert!(gt.pixel_valid(c.a.frame, pa) && gt.pixel_valid(j, pb));
        }
        total += gt.correspondences.len();
    }
    assert!(total > 0);
}

#[test]
fn correspondence_projection_closure() {
    // Each correspondence target is the pixel containing the projection.
    let gt = bundle("mixed", 5);
    let cams = gt.cameras.as_ref().unwrap();
    assert!(!gt.correspondences.is_empty());
    for c in &gt.correspondences {
        let x = gt.position(c.a.frame, c.b.frame, c.a.v * SIZE + c.a.u);
        let (px, _) = cams[c.b.frame].project(x).unwrap();
        assert_eq!(Camera::pixel_of(px, SIZE, SIZE), Some((c.b.u, c.b.v)));
    }
}

#[test]
fn generation_is_deterministic_per_seed() {
    for preset in PRESETS {
        assert_eq!(bundle(preset, 9), bundle(preset, 9));
    }
    assert_ne!(bundle("mixed", 9).positions, bundle("mixed", 10).positions);
}

#[test]
fn occlusion_hides_some_cross_frame_entries() {
    let gt = bundle("two_body_occlusion", 0);
    let vis = gt.visible.as_ref().unwrap();
    let hidden = vis.iter().zip(&gt.valid).filter(|(v, ok)| **ok && !**v).count();
    assert!(hidden > 0);
    // Self entries are always visible.
    for (i, p, _, _) in pixels(&gt) {
        if gt.pixel_valid(i, p) {
            assert_eq!(gt.is_visible(i, i, p), Some(true));
        }
    }
}

#[test]
fn unknown_presets_and_tiny_sequences_are_rejected() {
    assert!(synth::build_scene("nope", 0).is_err());
    let scene = synth::build_scene("mixed", 0).unwrap();
    assert!(synth::generate_bundle(&scene, 1, 8, 8).is_err());
    assert!(synth::generate_bundle(&scene, 3, 0, 8).is_err());
}
