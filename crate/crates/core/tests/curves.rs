use proptest::prelude::*;
use trajfield::curve::{self, CurveFamily};
use trajfield::util::Vec3;
use trajfield::CurveSpec;

fn family() -> impl Strategy<Value = CurveFamily> {
    prop_oneof![Just(CurveFamily::Bspline), Just(CurveFamily::Bezier)]
}

fn count() -> impl Strategy<Value = usize> {
    prop_oneof![Just(4usize), Just(7), Just(10)]
}

fn points(d: usize) -> impl Strategy<Value = Vec<Vec3>> {
    prop::collection::vec(prop::array::uniform3(-10.0f64..10.0), d)
}

fn close(a: Vec3, b: Vec3, tol: f64) -> bool {
    (0..3).all(|c| (a[c] - b[c]).abs() <= tol)
}

proptest! {
    #[test]
    fn basis_is_a_nonnegative_partition_of_unity(f in family(), d in count(), t in 0.0f64..=1.0) {
        let spec = CurveSpec::new(f, d).unwrap();
        let w = curve::basis_eval(&spec, t).unwrap().values;
        prop_assert_eq!(w.len(), d);
        prop_assert!(w.iter().all(|x| *x >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn curves_commute_with_affine_maps(
        (d, pts) in count().prop_flat_map(|d| (Just(d), points(d))),
        f in family(),
        t in 0.0f64..=1.0,
        shift in prop::array::uniform3(-5.0f64..5.0),
        s in 0.1f64..3.0,
    ) {
        let spec = CurveSpec::new(f, d).unwrap();
        let moved: Vec<Vec3> = pts.iter().map(|p| [s * p[0] + shift[0], s * p[2] + shift[1], -s * p[1] + shift[2]]).collect();
        let x = curve::eval_curve(&pts, &spec, t).unwrap();
        let y = curve::eval_curve(&moved, &spec, t).unwrap();
        prop_assert!(close(y, [s * x[0] + shift[0], s * x[2] + shift[1], -s * x[1] + shift[2]], 1e-10));
    }

    #[test]
    fn velocity_matches_central_differences(
        (d, pts) in count().prop_flat_map(|d| (Just(d), points(d))),
        f in prop_oneof![Just(CurveFamily::Bspline), Just(CurveFamily::Bezier), Just(CurveFamily::Polynomial)],
        t in 0.01f64..0.99,
    ) {
        let spec = CurveSpec::new(f, d).unwrap();
        let h = 1e-6;
        let a = curve::eval_curve(&pts, &spec, t - h).unwrap();
        let b = curve::eval_curve(&pts, &spec, t + h).unwrap();
        let fd = [(b[0] - a[0]) / (2.0 * h), (b[1] - a[1]) / (2.0 * h), (b[2] - a[2]) / (2.0 * h)];
        let v = curve::eval_curve_velocity(&pts, &spec, t).unwrap();
        let scale = 1.0 + v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        prop_assert!(close(v, fd, 1e-5 * scale), "{v:?} vs {fd:?}");
    }

    #[test]
    fn clamped_curves_interpolate_endpoints(
        (d, pts) in count().prop_flat_map(|d| (Just(d), points(d))),
        f in family(),
    ) {
        let spec = CurveSpec::new(f, d).unwrap();
        prop_assert_eq!(curve::eval_curve(&pts, &spec, 0.0).unwrap(), pts[0]);
        prop_assert_eq!(curve::eval_curve(&pts, &spec, 1.0).unwrap(), pts[d - 1]);
    }
}

#[test]
fn monomial_family_is_a_power_series() {
    let spec = CurveSpec::new(CurveFamily::Polynomial, 4).unwrap();
    let pts: Vec<Vec3> = vec![[1.0, 0.0, 2.0], [0.5, -1.0, 0.0], [0.0, 2.0, 0.0], [-3.0, 0.0, 1.0]];
    for t in [0.0, 0.25, 0.6, 1.0] {
        let x = curve::eval_curve(&pts, &spec, t).unwrap();
        let expect = [
            1.0 + 0.5 * t - 3.0 * t * t * t,
            -t + 2.0 * t * t,
            2.0 + t * t * t,
        ];
        assert!(close(x, expect, 1e-14), "{x:?} vs {expect:?}");
    }
}

#[test]
fn cubic_bspline_with_four_points_is_bezier() {
    let pts: Vec<Vec3> = vec![[0.0, 0.0, 0.0], [1.0, 3.0, -1.0], [2.0, -2.0, 4.0], [5.0, 1.0, 0.5]];
    let bs = CurveSpec::bspline(4).unwrap();
    let bz = CurveSpec::new(CurveFamily::Bezier, 4).unwrap();
    for k in 0..=64 {
        let t = k as f64 / 64.0;
        // Bernstein form evaluated by hand.
        let m = 1.0 - t;
        let w = [m * m * m, 3.0 * t * m * m, 3.0 * t * t * m, t * t * t];
        let expect = curve::combine(&pts, &w);
        assert!(close(curve::eval_curve(&pts, &bs, t).unwrap(), expect, 1e-12));
        assert!(close(curve::eval_curve(&pts, &bz, t).unwrap(), expect, 1e-12));
    }
}

#[test]
fn unsupported_counts_and_parameters_are_rejected() {
    assert!(CurveSpec::bspline(5).is_err());
    assert!(CurveSpec::bspline(3).is_err());
    let spec = CurveSpec::bspline(4).unwrap();
    assert!(curve::basis_eval(&spec, 1.5).is_err());
    assert!(curve::basis_eval(&spec, f64::NAN).is_err());
    assert!(curve::eval_curve(&[[0.0; 3]; 3], &spec, 0.5).is_err());
}
