use trajfield::fit;
use trajfield::loss::{self, Init, LossWeights, OptimizeConfig};
use trajfield::{synth, CurveSpec};

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

#[test]
fn loss_and_gradient_do_not_depend_on_thread_count() {
    let spec = CurveSpec::bspline(7).unwrap();
    let (field, gt) = loss::random_problem(&spec, 3, 9, 7, 4).unwrap();
    let weights = LossWeights { lambda_time: 0.1, ..LossWeights::default() };
    let run = || loss::total_loss(&field, &gt, &weights).unwrap();
    let (b1, g1) = in_pool(1, run);
    let (b3, g3) = in_pool(3, run);
    assert_eq!(b1, b3);
    assert_eq!(g1.control_points, g3.control_points);
    assert_eq!(g1.confidences, g3.confidences);
}

#[test]
fn exact_fit_is_stationary_in_the_control_points() {
    let scene = synth::build_scene("rigid_orbit", 1).unwrap();
    let gt = synth::generate_bundle(&scene, 4, 12, 12).unwrap();
    let field = fit::fit_field(&gt, &CurveSpec::bspline(10).unwrap(), fit::DEFAULT_RIDGE).unwrap().field;
    let term = loss::conf_traj_loss(&field, &gt, 0.2).unwrap();
    let g = term.grad.control_points.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    assert!(g < 1e-8 * gt.scene_scale, "{g}");
}

#[test]
fn confidence_term_is_minimized_at_alpha_over_error() {
    // With every trajectory error fixed, d/dΣ (Σℓ − α log Σ) = 0 at Σ = α/ℓ.
    for (ell, alpha) in [(2.0f64, 0.2), (0.5, 0.2), (4.0, 1.0)] {
        let f = |c: f64| c * ell - alpha * c.ln();
        let c = alpha / ell;
        let h = 1e-6 * c;
        assert!(f(c) < f(c + h) && f(c) < f(c - h));
        assert!(((f(c + h) - f(c - h)) / (2.0 * h)).abs() < 1e-6);
    }
}

#[test]
fn gradients_match_finite_differences_on_every_family() {
    let weights = LossWeights { lambda_time: 0.1, rigid_pair_samples: 32, ..LossWeights::default() };
    for spec in [
        CurveSpec::bspline(4).unwrap(),
        CurveSpec::bspline(10).unwrap(),
        CurveSpec::new("bezier".parse().unwrap(), 7).unwrap(),
        CurveSpec::new("polynomial".parse().unwrap(), 4).unwrap(),
    ] {
        let (field, gt) = loss::random_problem(&spec, 3, 6, 6, 9).unwrap();
        let r = loss::grad_check(&field, &gt, &weights, 1e-4, 30, 2).unwrap();
        assert!(r.max_rel_error < 1e-5, "{spec:?}: {r:?}");
    }
}

#[test]
fn short_optimization_descends_monotonically() {
    let scene = synth::build_scene("mixed", 0).unwrap();
    let gt = synth::generate_bundle(&scene, 4, 10, 10).unwrap();
    let spec = CurveSpec::bspline(4).unwrap();
    let config = OptimizeConfig { iters: 25, init: Init::Random(3), ..OptimizeConfig::default() };
    let a = loss::optimize_field(&gt, &spec, &LossWeights::default(), &config).unwrap();
    assert_eq!(a.history.len(), 26);
    assert!(a.history.windows(2).all(|w| w[1] <= w[0]));
    assert!(a.history[25] < a.history[0]);
    let b = in_pool(2, || loss::optimize_field(&gt, &spec, &LossWeights::default(), &config).unwrap());
    assert_eq!(a.history, b.history);
    assert_eq!(a.field.control_points(), b.field.control_points());
}
