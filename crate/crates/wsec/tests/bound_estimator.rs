use std::sync::Arc;

use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wsec::bounds::*;
use wsec::catalog;
use wsec::jet::Jet;
use wsec::manifold::{local_geometry, MetricDensitySpec};
use wsec::WsecError;

fn budget() -> SampleBudget {
    SampleBudget { points: 48, planes: 4, seed: 7 }
}

fn quick() -> OptimizerOptions {
    OptimizerOptions { restarts: 3, max_evals: 1500, ..Default::default() }
}

fn space(name: &str) -> MetricDensitySpec {
    catalog::by_name(name).unwrap().spec
}

#[test]
fn objective_on_constant_curvature() {
    let o = sample_objective(&space("sphere"), &DensityFamily::zero(), &[], &budget()).unwrap();
    assert!((o.min_e4sec - 1.0).abs() < 1e-6 && (o.max_e4sec - 1.0).abs() < 1e-6);
    let o = sample_objective(&space("euclidean"), &DensityFamily::zero(), &[], &budget()).unwrap();
    assert!(o.min_e4sec.abs() < 1e-12 && o.max_e4sec.abs() < 1e-12);
}

#[test]
fn objective_on_quadratic_density() {
    let spec = space("euclidean");
    let half_r2: wsec::manifold::ScalarField = Arc::new(|x: &[Jet]| (x[0] * x[0] + x[1] * x[1]) * 0.5);
    let f = DensityFamily { id: "half-r2".into(), basis: vec![half_r2], shift: 0.0 };
    let o = sample_objective(&spec, &f, &[1.0], &budget()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(budget().seed);
    let r2 = (0..budget().points).map(|_| spec.sample_point(&mut rng)).map(|x| x.iter().map(|c| c * c).sum::<f64>()).fold(0.0, f64::max);
    // sec̄_φ(U, V) = 1 + ⟨x, U⟩² for this density
    assert!(o.min_e4sec >= 1.0 - 1e-9 && o.min_e4sec <= (1.0 + r2) * (2.0 * r2).exp(), "{o:?}");
    assert!(o.min_sec >= 1.0 - 1e-9 && o.max_sec <= 1.0 + r2 + 1e-9, "{o:?}");
}

#[test]
fn objective_is_deterministic_and_checks_arity() {
    let f = DensityFamily::default_for(&space("sphere"), &budget());
    let p: Vec<f64> = (0..f.parameter_dim()).map(|i| 0.01 * (i as f64).cos()).collect();
    let a = sample_objective(&space("sphere"), &f, &p, &budget()).unwrap();
    let b = sample_objective(&space("sphere"), &f, &p, &budget()).unwrap();
    assert_eq!(a, b);
    assert!(sample_objective(&space("sphere"), &f, &[0.0], &budget()).is_err());
}

#[test]
fn density_shift_scales_by_e4c() {
    let spec = space("sphere");
    let f = DensityFamily::default_for(&spec, &budget());
    let p: Vec<f64> = (0..f.parameter_dim()).map(|i| 0.01 * (i as f64).sin()).collect();
    let a = sample_objective(&spec, &f, &p, &budget()).unwrap();
    for c in [0.7, -1.3] {
        let b = sample_objective(&spec, &f.shifted(c), &p, &budget()).unwrap();
        let s = (4.0 * c).exp();
        assert!((b.min_e4sec / (a.min_e4sec * s) - 1.0).abs() < 1e-10);
        assert!((b.max_e4sec / (a.max_e4sec * s) - 1.0).abs() < 1e-10);
        assert!((b.min_sec - a.min_sec).abs() < 1e-12 && (b.max_sec - a.max_sec).abs() < 1e-12);
    }
}

#[test]
fn zero_family_reproduces_sampled_extremes() {
    for name in ["sphere-r2", "hyperbolic", "rotational-k1"] {
        let spec = space(name);
        let f = DensityFamily::zero();
        let o = sample_objective(&spec, &f, &[], &budget()).unwrap();
        let lo = estimate_kappa_lower(&spec, &f, 1.0, &budget(), &quick()).unwrap();
        let hi = estimate_k_upper(&spec, &f, 1.0, &budget(), &quick()).unwrap();
        assert_relative_eq!(lo.value, o.min_sec, epsilon = 1e-12);
        assert_relative_eq!(hi.value, o.max_sec, epsilon = 1e-12);
        assert_eq!(lo.caveat, CAVEAT);
    }
}

#[test]
fn sphere_bounds_and_pinching() {
    let spec = space("sphere");
    let f = DensityFamily::default_for(&spec, &budget());
    let (lo, hi, delta) = pinching(&spec, &f, 1.0, &budget(), &quick()).unwrap();
    assert!(lo.value >= 0.95 && lo.value <= 1.0 + 1e-9, "{}", lo.value);
    assert!(hi.value >= 1.0 - 1e-9 && hi.value <= 1.05, "{}", hi.value);
    assert!(lo.sign_phase_succeeded);
    assert!(delta.value <= 1.0 + 1e-9 && delta.value > 0.9);
    assert_eq!(delta.kind, BoundKind::Delta);
}

#[test]
fn torus_has_no_strict_sign() {
    let spec = space("flat-torus");
    let f = DensityFamily::default_for(&spec, &budget());
    let lo = estimate_kappa_lower(&spec, &f, 1.0, &budget(), &quick()).unwrap();
    let hi = estimate_k_upper(&spec, &f, 1.0, &budget(), &quick()).unwrap();
    assert!(lo.value <= 1e-6 && !lo.sign_phase_succeeded);
    assert!(hi.value >= -1e-6 && !hi.sign_phase_succeeded);
    assert!(matches!(pinching(&spec, &f, 1.0, &budget(), &quick()), Err(WsecError::NotPositivelyCurved(_))));
}

#[test]
fn euclidean_ball_admits_positive_weighted_curvature() {
    let spec = space("euclidean");
    let f = DensityFamily::polynomial(2, 2, 1.0);
    let lo = estimate_kappa_lower(&spec, &f, 10.0, &budget(), &quick()).unwrap();
    assert!(lo.sign_phase_succeeded && lo.value > 0.0, "{}", lo.value);
}

#[test]
fn hyperbolic_has_negative_weighted_curvature() {
    let spec = space("hyperbolic");
    let hi = estimate_k_upper(&spec, &DensityFamily::default_for(&spec, &budget()), 1.0, &budget(), &quick()).unwrap();
    assert!(hi.sign_phase_succeeded && hi.value < 0.0);
}

#[test]
fn perturbed_sphere_pinching_with_zero_family() {
    let base = catalog::round_sphere(2, 1.0).spec;
    let m = base.metric.clone();
    let metric: wsec::manifold::MetricField = Arc::new(move |x: &[Jet]| {
        let bump = (-(x[0] * x[0] + x[1] * x[1]) * 2.0).exp() * 0.1;
        let f = bump.exp();
        m(x).into_iter().map(|c| c * f).collect()
    });
    let spec = MetricDensitySpec { metric, ..base.clone() };
    let (lo, hi, delta) = pinching(&spec, &DensityFamily::zero(), 1.0, &budget(), &quick()).unwrap();
    // in dimension two the sectional curvature does not depend on the plane
    let mut rng = ChaCha8Rng::seed_from_u64(budget().seed);
    let secs: Vec<f64> = (0..budget().points)
        .map(|_| spec.sample_point(&mut rng))
        .map(|x| local_geometry(&spec, &x).unwrap().sectional(&[1.0, 0.0], &[0.0, 1.0]).unwrap())
        .collect();
    let smin = secs.iter().cloned().fold(f64::INFINITY, f64::min);
    let smax = secs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert_relative_eq!(lo.value, smin, max_relative = 1e-10);
    assert_relative_eq!(hi.value, smax, max_relative = 1e-10);
    assert_relative_eq!(delta.value, smin / smax, max_relative = 1e-10);
    assert!(delta.value < 1.0);
}

#[test]
fn estimates_monotone_in_a() {
    let spec = space("sphere-r2");
    let f = DensityFamily::default_for(&spec, &budget());
    let mut prev_lo = f64::NEG_INFINITY;
    let mut prev_hi = f64::INFINITY;
    for a in [0.0, 0.5, 1.0, 2.0] {
        let lo = estimate_kappa_lower(&spec, &f, a, &budget(), &quick()).unwrap().value;
        let hi = estimate_k_upper(&spec, &f, a, &budget(), &quick()).unwrap().value;
        assert!(lo >= prev_lo - 1e-6 && hi <= prev_hi + 1e-6, "a = {a}: {lo} {hi}");
        prev_lo = lo;
        prev_hi = hi;
    }
}

#[test]
fn ordering_on_compact_spaces() {
    for name in ["sphere", "sphere-r2", "flat-torus"] {
        let spec = space(name);
        let f = DensityFamily::default_for(&spec, &budget());
        let lo = estimate_kappa_lower(&spec, &f, 1.0, &budget(), &quick()).unwrap();
        let hi = estimate_k_upper(&spec, &f, 1.0, &budget(), &quick()).unwrap();
        assert!(lo.value <= hi.value + 1e-9, "{name}: {} > {}", lo.value, hi.value);
    }
}

#[test]
fn estimate_serializes_with_caveat() {
    let spec = space("sphere");
    let lo = estimate_kappa_lower(&spec, &DensityFamily::zero(), 1.0, &budget(), &quick()).unwrap();
    let v = serde_json::to_value(&lo).unwrap();
    assert_eq!(v["caveat"], CAVEAT);
    assert_eq!(v["kind"], "kappa_lower");
    assert_eq!(v["sample_budget"]["points"], 48);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn shift_identity_for_random_params(seed in 0u64..1000, c in -1.0f64..1.0) {
        let spec = space("rotational-k1");
        let b = SampleBudget { points: 12, planes: 2, seed };
        let f = DensityFamily::default_for(&spec, &b);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p: Vec<f64> = (0..f.parameter_dim()).map(|_| rand::Rng::gen_range(&mut rng, -0.05..0.05)).collect();
        let a = sample_objective(&spec, &f, &p, &b).unwrap();
        let s = sample_objective(&spec, &f.shifted(c), &p, &b).unwrap();
        prop_assert!((s.min_e4sec - (4.0 * c).exp() * a.min_e4sec).abs() <= 1e-10 * (1.0 + s.min_e4sec.abs()));
        prop_assert!((s.max_sec - a.max_sec).abs() <= 1e-12 * (1.0 + a.max_sec.abs()));
    }
}
