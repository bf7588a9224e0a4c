use std::sync::Arc;

use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wsec::catalog;
use wsec::jet::Jet;
use wsec::manifold::*;
use wsec::WsecError;

fn euclid(n: usize) -> MetricDensitySpec {
    catalog::euclidean_quadratic(n, 0.0).spec
}

fn with_phi(spec: MetricDensitySpec, f: impl Fn(&[Jet]) -> Jet + Send + Sync + 'static) -> MetricDensitySpec {
    spec.with_density(Arc::new(f))
}

#[test]
fn flat_plane_has_no_christoffels_or_curvature() {
    let lg = local_geometry(&euclid(2), &[0.3, -1.2]).unwrap();
    assert!(lg.gamma.data.iter().all(|v| *v == 0.0));
    assert!(lg.riem.data.iter().all(|v| *v == 0.0));
}

#[test]
fn quadratic_density_weighted_christoffels() {
    let spec = with_phi(euclid(2), |x| (x[0] * x[0] + x[1] * x[1]) * 0.5);
    let lg = local_geometry(&spec, &[1.0, 0.0]).unwrap();
    assert_relative_eq!(lg.dphi[0], 1.0, epsilon = 1e-14);
    assert_relative_eq!(lg.dphi[1], 0.0, epsilon = 1e-14);
    assert_relative_eq!(lg.hess_phi[(0, 0)], 1.0, epsilon = 1e-14);
    assert_relative_eq!(lg.hess_phi[(1, 1)], 1.0, epsilon = 1e-14);
    assert_relative_eq!(lg.hess_phi[(0, 1)], 0.0, epsilon = 1e-14);
    // get(k, i, j) = Γ^k_ij, zero-based
    assert_relative_eq!(lg.gamma_phi.get(0, 0, 0), -2.0, epsilon = 1e-14);
    assert_relative_eq!(lg.gamma_phi.get(1, 0, 1), -1.0, epsilon = 1e-14);
}

#[test]
fn sphere_sectional_is_one() {
    let spec = catalog::round_sphere(2, 1.0).spec;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let x = spec.sample_point(&mut rng);
        let lg = local_geometry(&spec, &x).unwrap();
        assert_relative_eq!(lg.sectional(&[1.0, 0.0], &[0.3, 1.0]).unwrap(), 1.0, epsilon = 1e-9);
    }
}

#[test]
fn constant_curvature_sectionals() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (name, k) in [("hyperbolic", -1.0), ("flat-torus", 0.0), ("hyperbolic-3", -1.0), ("sphere-r2", 0.25)] {
        let spec = catalog::by_name(name).unwrap().spec;
        for _ in 0..10 {
            let x = spec.sample_point(&mut rng);
            let lg = local_geometry(&spec, &x).unwrap();
            let (u, v) = random_orthonormal_pair(&lg, &mut rng);
            assert_relative_eq!(lg.sectional(&u, &v).unwrap(), k, epsilon = 1e-9);
        }
    }
}

#[test]
fn sectional_is_invariant_under_basis_change() {
    let spec = catalog::by_name("rotational-k1").unwrap().spec;
    let x = [0.9, 0.4];
    let lg = local_geometry(&spec, &x).unwrap();
    let a = lg.sectional(&[1.0, 0.2], &[0.1, 1.0]).unwrap();
    let b = lg.sectional(&[1.1, 1.2], &[2.0, 0.4]).unwrap();
    assert_relative_eq!(a, b, epsilon = 1e-10);
}

#[test]
fn degenerate_plane_is_rejected() {
    let lg = local_geometry(&euclid(2), &[0.0, 0.0]).unwrap();
    assert!(matches!(lg.sectional(&[1.0, 1.0], &[2.0, 2.0]), Err(WsecError::DegeneratePlane(_))));
}

#[test]
fn domain_and_singular_metric_errors() {
    let sph = catalog::by_name("hyperbolic").unwrap().spec;
    assert!(matches!(local_geometry(&sph, &[2.0, 0.0]), Err(WsecError::Domain(_))));
    let bad = MetricDensitySpec::new(
        "bad",
        2,
        Arc::new(|x: &[Jet]| vec![x[0], Jet::constant(0.0), Jet::constant(0.0), Jet::constant(1.0)]),
        Arc::new(|_x: &[Jet]| Jet::constant(0.0)),
    );
    assert!(matches!(local_geometry(&bad, &[-1.0, 0.0]), Err(WsecError::SingularMetric(_))));
}

#[test]
fn weighted_sectional_examples() {
    let eq = catalog::euclidean_quadratic(2, 1.0).spec;
    let at0 = weighted_sectional(&eq, &[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], CurvatureRoute::HessianFormula).unwrap();
    assert_relative_eq!(at0.value, 1.0, epsilon = 1e-12);
    for route in [CurvatureRoute::HessianFormula, CurvatureRoute::TensorFormula] {
        let w = weighted_sectional(&eq, &[2.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], route).unwrap();
        assert_relative_eq!(w.value, 5.0, epsilon = 1e-10);
    }
    // argument order matters
    let swapped = weighted_sectional(&eq, &[2.0, 0.0], &[0.0, 1.0], &[1.0, 0.0], CurvatureRoute::HessianFormula).unwrap();
    assert_relative_eq!(swapped.value, 1.0, epsilon = 1e-10);
}

#[test]
fn rotational_linear_profile_radial_curvature() {
    let phi: catalog::RadialProfileFn = Arc::new(|r: Jet| r * 0.1);
    let d = catalog::rotationally_symmetric(2, 1.0, phi, "0.1*r").unwrap();
    let lg = local_geometry(&d.spec, &[2.0, 0.3]).unwrap();
    let w = lg.weighted_sectional(&[1.0, 0.0], &[0.0, 1.0], CurvatureRoute::TensorFormula).unwrap();
    assert_relative_eq!(w.value, (-0.8f64).exp(), epsilon = 1e-9);
}

#[test]
fn conformal_involution_properties() {
    let flat = euclid(2);
    let same = conformal_involution(&flat);
    let a = local_geometry(&flat, &[0.2, 0.1]).unwrap();
    let b = local_geometry(&same, &[0.2, 0.1]).unwrap();
    assert_relative_eq!((a.g - b.g).amax(), 0.0, epsilon = 1e-15);

    let eq = catalog::euclidean_quadratic(2, 1.0).spec;
    let twice = conformal_involution(&conformal_involution(&eq));
    let p = [0.4, -0.7];
    let a = local_geometry(&eq, &p).unwrap();
    let b = local_geometry(&twice, &p).unwrap();
    assert!((a.g - b.g).amax() < 1e-10);
    assert!(a.gamma_phi.data.iter().zip(&b.gamma_phi.data).all(|(x, y)| (x - y).abs() < 1e-10));
    assert!(a.riem_phi.data.iter().zip(&b.riem_phi.data).all(|(x, y)| (x - y).abs() < 1e-10));

    let tilde = conformal_involution(&eq);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let p = eq.sample_point(&mut rng);
        let lg = local_geometry(&eq, &p).unwrap();
        let (x, y) = random_orthonormal_pair(&lg, &mut rng);
        let lhs = weighted_sectional(&tilde, &p, &x, &y, CurvatureRoute::HessianFormula).unwrap().value;
        let rhs = (2.0 * lg.phi).exp() * lg.weighted_sectional(&y, &x, CurvatureRoute::HessianFormula).unwrap().value;
        assert!((lhs - rhs).abs() <= 1e-6 * (1.0 + rhs.abs()), "{lhs} vs {rhs}");
    }
}

#[test]
fn weighted_hessian_examples() {
    let flat = euclid(2);
    let u: ScalarField = Arc::new(|x: &[Jet]| x[0] * x[1] + x[0] * x[0]);
    let h = weighted_hessians(&flat, &u, &[0.5, 0.2], &[1.0, 0.0], &[0.3, 1.0]).unwrap();
    // Hess u = [[2, 1], [1, 0]], so Hess(U, V) = 2·0.3 + 1
    assert_relative_eq!(h.whess2, 1.6, epsilon = 1e-12);
    assert_relative_eq!(h.whess3, 1.6, epsilon = 1e-12);
    assert_relative_eq!(h.conf_hess, 1.6, epsilon = 1e-12);

    let lin = with_phi(euclid(2), |x| x[1]);
    let u: ScalarField = Arc::new(|x: &[Jet]| x[0]);
    let h = weighted_hessians(&lin, &u, &[0.1, 0.2], &[1.0, 0.0], &[1.0, 0.0]).unwrap();
    assert_relative_eq!(h.whess2, 0.0, epsilon = 1e-14);
    assert_relative_eq!(h.whess3, 0.0, epsilon = 1e-14);
    assert_relative_eq!(h.conf_hess, 0.0, epsilon = 1e-14);

    let lin = with_phi(euclid(2), |x| x[0]);
    let u: ScalarField = Arc::new(|x: &[Jet]| (x[0] * x[0] + x[1] * x[1]) * 0.5);
    let h = weighted_hessians(&lin, &u, &[1.0, 1.0], &[0.0, 1.0], &[0.0, 1.0]).unwrap();
    assert_relative_eq!(h.conf_hess, 0.0, epsilon = 1e-14);
}

#[test]
fn conformal_hessian_matches_g_tilde_hessian() {
    let spec = with_phi(catalog::round_sphere(2, 1.0).spec, |x| x[0] * 0.3 - x[1] * x[1] * 0.2);
    let tilde = conformal_involution(&spec);
    let u: ScalarField = Arc::new(|x: &[Jet]| (x[0] * 2.0).sin() + x[1] * x[0]);
    let p = [0.3, -0.4];
    let (a, b) = ([1.0, 0.4], [-0.2, 0.7]);
    let h = weighted_hessians(&spec, &u, &p, &a, &b).unwrap();
    let lg = local_geometry(&tilde, &p).unwrap();
    let (_, hess) = scalar_hessian(&tilde, &lg, &u);
    let direct: f64 = (0..2).map(|i| (0..2).map(|j| a[i] * hess[(i, j)] * b[j]).sum::<f64>()).sum();
    assert_relative_eq!(h.conf_hess, direct, epsilon = 1e-10);
}

#[test]
fn conformal_hessian_equals_whess2_orthogonal_to_gradient() {
    let spec = with_phi(euclid(2), |x| x[0] * 0.4 + x[1] * x[1]);
    let u: ScalarField = Arc::new(|x: &[Jet]| x[0] * 1.5 + x[1] * 0.5);
    // U, V ⊥ ∇u = (1.5, 0.5)
    let w = [-0.5, 1.5];
    let h = weighted_hessians(&spec, &u, &[0.2, 0.3], &w, &w).unwrap();
    assert_relative_eq!(h.conf_hess, h.whess2, epsilon = 1e-12);
}

#[test]
fn spec_check_backends_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for d in catalog::all() {
        let c = check_spec(&d.spec, 10, &mut rng).unwrap();
        assert!(c.min_metric_eigenvalue > 0.0, "{}", d.name);
        assert!(c.max_backend_rel_error < 1e-4, "{}: {}", d.name, c.max_backend_rel_error);
    }
}

#[test]
fn finite_difference_backend_curvature_close_to_dual() {
    let spec = catalog::by_name("rotational-k1").unwrap().spec;
    let fd = spec.clone().with_backend(DiffBackend::CentralDifference(None));
    let p = [1.1, 0.5];
    let a = weighted_sectional(&spec, &p, &[1.0, 0.0], &[0.0, 1.0], CurvatureRoute::HessianFormula).unwrap().value;
    let b = weighted_sectional(&fd, &p, &[1.0, 0.0], &[0.0, 1.0], CurvatureRoute::HessianFormula).unwrap().value;
    assert!((a - b).abs() < 1e-4 * (1.0 + a.abs()), "{a} vs {b}");
}

#[test]
fn connection_defects_vanish_on_inline_metric() {
    // non-conformal metric with off-diagonal terms
    let spec = MetricDensitySpec::new(
        "skew",
        2,
        Arc::new(|x: &[Jet]| {
            let a = x[0] * x[0] * 0.2 + 1.0;
            let b = (x[1] * 0.5).sin() * 0.3;
            let c = x[1].exp();
            vec![a, b, b, c]
        }),
        Arc::new(|x: &[Jet]| x[0] * x[1] * 0.4),
    );
    let d = connection_defects(&spec, &[0.3, -0.2]).unwrap();
    assert!(d.trace < 1e-12 && d.torsion < 1e-14, "{d:?}");
}

#[test]
fn jet_log_det_matches_nalgebra() {
    let m = [2.0, 0.3, -0.1, 0.3, 1.5, 0.2, -0.1, 0.2, 0.9];
    let j = jet_log_det(&Jet::consts(&m), 3).unwrap();
    let det = nalgebra::DMatrix::from_row_slice(3, 3, &m).determinant();
    assert_relative_eq!(j.value(), det.ln(), epsilon = 1e-13);
}

#[test]
fn density_shift_leaves_weighted_sectional_unchanged() {
    let spec = catalog::by_name("euclidean-quadratic").unwrap().spec;
    let phi = spec.density.clone();
    let shifted = spec.clone().with_density(Arc::new(move |x: &[Jet]| phi(x) + 0.7));
    let p = [0.3, 0.5];
    let a = local_geometry(&spec, &p).unwrap();
    let b = local_geometry(&shifted, &p).unwrap();
    let u = [0.6, 0.8];
    let v = [-0.8, 0.6];
    let wa = a.weighted_sectional(&u, &v, CurvatureRoute::HessianFormula).unwrap().value;
    let wb = b.weighted_sectional(&u, &v, CurvatureRoute::HessianFormula).unwrap().value;
    assert_relative_eq!(wa, wb, epsilon = 1e-13);
    let ratio = (4.0 * b.phi).exp() * wb / ((4.0 * a.phi).exp() * wa);
    assert_relative_eq!(ratio, (2.8f64).exp(), max_relative = 1e-12);
}

fn sample_space() -> impl Strategy<Value = &'static str> {
    prop::sample::select(catalog::names())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn two_routes_agree(name in sample_space(), seed in 0u64..1_000_000) {
        let spec = catalog::by_name(name).unwrap().spec;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = spec.sample_point(&mut rng);
        let lg = local_geometry(&spec, &x).unwrap();
        let (u, v) = random_orthonormal_pair(&lg, &mut rng);
        let h = lg.weighted_sectional(&u, &v, CurvatureRoute::HessianFormula).unwrap().value;
        let t = lg.weighted_sectional(&u, &v, CurvatureRoute::TensorFormula).unwrap().value;
        prop_assert!((h - t).abs() <= 1e-6 * (1.0 + h.abs()));
    }

    #[test]
    fn torsion_free_and_measure_parallel(name in sample_space(), seed in 0u64..1_000_000) {
        let spec = catalog::by_name(name).unwrap().spec;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = spec.sample_point(&mut rng);
        let d = connection_defects(&spec, &x).unwrap();
        prop_assert!(d.trace <= 1e-6 && d.torsion <= 1e-10);
        let lg = local_geometry(&spec, &x).unwrap();
        let n = spec.dim;
        for k in 0..n { for i in 0..n { for j in 0..n {
            prop_assert!((lg.gamma.get(k, i, j) - lg.gamma.get(k, j, i)).abs() <= 1e-10);
        }}}
    }

    #[test]
    fn riemann_antisymmetric(name in sample_space(), seed in 0u64..1_000_000) {
        let spec = catalog::by_name(name).unwrap().spec;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = spec.sample_point(&mut rng);
        let lg = local_geometry(&spec, &x).unwrap();
        let n = spec.dim;
        let scale = lg.riem.data.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for i in 0..n { for j in 0..n { for k in 0..n { for l in 0..n {
            prop_assert!((lg.riem.get(i, j, k, l) + lg.riem.get(j, i, k, l)).abs() <= 1e-10 * scale);
        }}}}
    }

    #[test]
    fn quadratic_density_closed_form(x0 in -1.0f64..1.0, x1 in -1.0f64..1.0, ang in 0.0f64..6.283, kappa in -2.0f64..2.0) {
        let spec = catalog::euclidean_quadratic(2, kappa).spec;
        let u = [ang.cos(), ang.sin()];
        let v = [-ang.sin(), ang.cos()];
        let w = weighted_sectional(&spec, &[x0, x1], &u, &v, CurvatureRoute::TensorFormula).unwrap().value;
        let xu = x0 * u[0] + x1 * u[1];
        prop_assert!((w - (kappa + kappa * kappa * xu * xu)).abs() <= 1e-10 * (1.0 + w.abs()));
    }
}
