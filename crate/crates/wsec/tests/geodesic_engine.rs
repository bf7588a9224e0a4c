use std::f64::consts::PI;
use std::sync::Arc;

use approx::assert_relative_eq;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wsec::catalog;
use wsec::geodesic::*;
use wsec::jet::Jet;
use wsec::manifold::{g_inner, MetricDensitySpec};
use wsec::ode::OdeOptions;
use wsec::WsecError;

fn flat(n: usize) -> MetricDensitySpec {
    catalog::euclidean_quadratic(n, 0.0).spec
}

fn linear_density(alpha: f64) -> MetricDensitySpec {
    flat(2).with_density(Arc::new(move |x: &[Jet]| x[0] * alpha))
}

fn sphere() -> MetricDensitySpec {
    catalog::round_sphere(2, 1.0).spec
}

fn opts() -> GeodesicOptions {
    GeodesicOptions::default()
}

fn jacobi(spec: &MetricDensitySpec, tr: &GeodesicTrajectory, a: f64, b: f64) -> JacobiTrajectory {
    let n = spec.dim;
    let a0 = DMatrix::from_fn(n, 1, |i, _| if i == 1 { a } else { 0.0 });
    let b0 = DMatrix::from_fn(n, 1, |i, _| if i == 1 { b } else { 0.0 });
    integrate_jacobi_family(spec, tr, &a0, &b0, &OdeOptions::default()).unwrap().field(0)
}

#[test]
fn straight_line_has_unit_s() {
    let tr = integrate_geodesic(&flat(2), &[0.0, 0.0], &[1.0, 0.0], 1.0, &opts()).unwrap();
    assert!(tr.complete);
    assert_relative_eq!(tr.s_end(), 1.0, epsilon = 1e-12);
    assert_relative_eq!(tr.positions.last().unwrap()[0], 1.0, epsilon = 1e-12);
}

#[test]
fn linear_density_s_parameter() {
    // s(L) = (1 − e^{−2αL}) / (2α)
    for (alpha, l) in [(1.0, 1.0), (0.3, 2.0), (-0.5, 1.5)] {
        let tr = integrate_geodesic(&linear_density(alpha), &[0.0, 0.0], &[1.0, 0.0], l, &opts()).unwrap();
        let exact = (1.0 - (-2.0 * alpha * l).exp()) / (2.0 * alpha);
        assert_relative_eq!(tr.s_end(), exact, epsilon = 1e-9);
    }
    let tr = integrate_geodesic(&linear_density(1.0), &[0.0, 0.0], &[1.0, 0.0], 1.0, &opts()).unwrap();
    assert!((tr.s_end() - 0.43233).abs() < 1e-5);
}

#[test]
fn sphere_half_great_circle_reaches_antipode() {
    let tr = integrate_geodesic(&sphere(), &[1.0, 0.0], &[0.0, 1.0], PI, &opts()).unwrap();
    let end = tr.positions.last().unwrap();
    assert!((end[0] + 1.0).abs() < 1e-6 && end[1].abs() < 1e-6, "{end:?}");
}

#[test]
fn geodesic_leaving_the_chart_is_partial() {
    let hyp = catalog::by_name("hyperbolic").unwrap().spec;
    match integrate_geodesic(&hyp, &[0.0, 0.0], &[2.0, 0.0], 100.0, &opts()) {
        Err(WsecError::DomainExit { .. }) => {}
        Ok(tr) => assert!(!tr.complete),
        Err(e) => panic!("unexpected {e}"),
    }
}

#[test]
fn phi_geodesic_residuals() {
    let tr = integrate_geodesic(&flat(2), &[0.0, 0.0], &[0.6, 0.8], 2.0, &opts()).unwrap();
    assert!(phi_geodesic_residual(&flat(2), &tr).unwrap() < 1e-12);
    let lin = linear_density(1.0);
    let tr = integrate_geodesic(&lin, &[0.0, 0.0], &[0.6, 0.8], 1.0, &opts()).unwrap();
    assert!(phi_geodesic_residual(&lin, &tr).unwrap() < 1e-7);
    let rot = catalog::by_name("rotational-k1").unwrap().spec;
    let tr = integrate_geodesic(&rot, &[0.01, 1.0], &[1.0, 0.0], 1.5, &opts()).unwrap();
    assert!(phi_geodesic_residual(&rot, &tr).unwrap() < 1e-7);
}

#[test]
fn energy_is_conserved() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for name in ["sphere", "hyperbolic", "euclidean-quadratic", "rotational-k1", "warped-sphere"] {
        let spec = catalog::by_name(name).unwrap().spec;
        let x = spec.sample_point(&mut rng);
        let v = random_unit(&spec, &x, &mut rng);
        let tr = integrate_geodesic(&spec, &x, &v, 0.3, &opts()).unwrap_or_else(|e| panic!("{name}: {e}"));
        for (p, w) in tr.positions.iter().zip(&tr.velocities) {
            let e = g_inner(&spec.metric_at(p), w, w);
            assert!((e - 1.0).abs() < 1e-7, "{name}: {e}");
        }
    }
}

#[test]
fn minimizing_geodesics() {
    let c = minimizing_geodesic(&flat(2), &[0.0, 0.0], &[3.0, 4.0], &ShootingOptions::default()).unwrap();
    assert_relative_eq!(c.length, 5.0, epsilon = 1e-8);

    let p = catalog::sphere_to_chart(1.0, &[1.0, 0.0, 0.0]);
    let q = catalog::sphere_to_chart(1.0, &[1f64.cos(), 1f64.sin(), 0.0]);
    let c = minimizing_geodesic(&sphere(), &p, &q, &ShootingOptions::default()).unwrap();
    assert!((c.length - 1.0).abs() < 1e-6);

    let hyp = catalog::by_name("hyperbolic").unwrap().spec;
    let c = minimizing_geodesic(&hyp, &[0.0, 0.0], &[0.5, 0.0], &ShootingOptions::default()).unwrap();
    assert_relative_eq!(c.length, 2.0 * 0.5f64.atanh(), epsilon = 1e-7);
    assert!(c.min_index_eigenvalue.unwrap() >= -1e-6);
}

#[test]
fn reparametrized_distances() {
    let so = ShootingOptions::default();
    let d = reparametrized_distance(&linear_density(1.0), &[0.0, 0.0], &[1.0, 0.0], &so).unwrap();
    assert_relative_eq!(d, (1.0 - (-2.0f64).exp()) / 2.0, epsilon = 1e-8);

    let c = 0.35;
    let hyp = catalog::by_name("hyperbolic").unwrap().spec;
    let shifted = hyp.clone().with_density(Arc::new(move |_x: &[Jet]| Jet::constant(c)));
    let (p, q) = ([0.1, -0.2], [-0.3, 0.4]);
    let d0 = reparametrized_distance(&hyp, &p, &q, &so).unwrap();
    let truth = catalog::by_name("hyperbolic").unwrap().truths.distance.unwrap()(&p, &q);
    assert_relative_eq!(d0, truth, epsilon = 1e-7);
    let dc = reparametrized_distance(&shifted, &p, &q, &so).unwrap();
    assert_relative_eq!(dc, (-2.0 * c).exp() * d0, epsilon = 1e-8);
}

#[test]
fn parallel_transport_examples() {
    let tr = integrate_geodesic(&flat(2), &[0.0, 0.0], &[0.6, 0.8], 2.0, &opts()).unwrap();
    let pt = parallel_transport(&flat(2), &tr, &[0.3, -1.0]);
    for v in &pt.vectors {
        assert!((v[0] - 0.3).abs() < 1e-12 && (v[1] + 1.0).abs() < 1e-12);
    }

    // along the equator of S², stereographic chart: the unit normal is radial in the chart
    let tr = integrate_geodesic(&sphere(), &[1.0, 0.0], &[0.0, 1.0], 2.0, &opts()).unwrap();
    let pt = parallel_transport(&sphere(), &tr, &[1.0, 0.0]);
    for (x, v) in tr.positions.iter().zip(&pt.vectors) {
        let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
        assert!((v[0] - x[0] / r).abs() < 1e-7 && (v[1] - x[1] / r).abs() < 1e-7);
    }

    let hyp = catalog::by_name("hyperbolic").unwrap().spec;
    let tr = integrate_geodesic(&hyp, &[0.0, 0.0], &[2.0, 0.0], 1.5, &opts()).unwrap();
    let pt = parallel_transport(&hyp, &tr, &[0.5, 1.0]);
    let n0 = g_inner(&hyp.metric_at(&tr.positions[0]), &pt.vectors[0], &pt.vectors[0]);
    for ((x, v), w) in tr.positions.iter().zip(&pt.vectors).zip(&tr.velocities) {
        let g = hyp.metric_at(x);
        assert!((g_inner(&g, v, v) - n0).abs() < 1e-8);
        assert!((g_inner(&g, v, w) - g_inner(&hyp.metric_at(&tr.positions[0]), &pt.vectors[0], &tr.velocities[0])).abs() < 1e-8);
    }
}

#[test]
fn jacobi_closed_forms() {
    let tr = integrate_geodesic(&sphere(), &[1.0, 0.0], &[0.0, 1.0], 3.0, &opts()).unwrap();
    let j = jacobi(&sphere(), &tr, 0.0, 1.0);
    for t in [0.3, 1.0, 2.0, 2.9] {
        assert!((j.norm_at(t) - t.sin()).abs() < 1e-7);
    }
    let tr = integrate_geodesic(&flat(3), &[0.0; 3], &[1.0, 0.0, 0.0], 3.0, &opts()).unwrap();
    let j = integrate_jacobi(&flat(3), &tr, &[0.0; 3], &[0.0, 0.0, 1.0]).unwrap();
    for t in [0.5, 2.5] {
        assert!((j.norm_at(t) - t).abs() < 1e-9);
    }
}

#[test]
fn rotational_jacobi_field_follows_warp() {
    // the chart excludes the pole, so start at r0 with the exact data
    let d = catalog::by_name("rotational-k1").unwrap();
    let prof = d.radial.clone().unwrap();
    let truth = d.truths.jacobi_norm.clone().unwrap();
    let r0 = 2e-3;
    let h = 1e-6;
    let a = truth(r0);
    let b = (truth(r0 + h) - truth(r0 - h)) / (2.0 * h);
    let len = prof.r_max - 1e-3 - r0 - 1e-3;
    let tr = integrate_geodesic(&d.spec, &[r0, 1.0], &[1.0, 0.0], len, &opts()).unwrap();
    let j = jacobi(&d.spec, &tr, a, b);
    for i in 1..=20 {
        let t = len * i as f64 / 20.0;
        assert!((j.norm_at(t) - truth(r0 + t)).abs() < 1e-5, "r = {}", r0 + t);
    }
    // the field nearly closes up where s(r) reaches π
    assert!(j.norm_at(len) < 1e-2);
}

#[test]
fn jacobi_linearizes_geodesic_variation() {
    let spec = catalog::by_name("hyperbolic").unwrap().spec;
    let (p, v) = ([0.2, 0.1], [0.6, 0.8]);
    let dv = [0.8, -0.6];
    let t_end = 1.0;
    let tr = integrate_geodesic(&spec, &p, &v, t_end, &opts()).unwrap();
    let j = integrate_jacobi(&spec, &tr, &[0.0, 0.0], &dv).unwrap();
    let jend = j.j.last().unwrap();
    let mut errs = Vec::new();
    for eps in [1e-3, 1e-4] {
        let ve = [v[0] + eps * dv[0], v[1] + eps * dv[1]];
        let te = integrate_geodesic(&spec, &p, &ve, t_end, &opts()).unwrap();
        let (a, b) = (te.positions.last().unwrap(), tr.positions.last().unwrap());
        errs.push(((a[0] - b[0] - eps * jend[0]).powi(2) + (a[1] - b[1] - eps * jend[1]).powi(2)).sqrt());
    }
    let order = (errs[0] / errs[1]).log10();
    assert!(errs[0] > 1e-9 && order >= 1.9, "{errs:?}");
}

#[test]
fn conjugate_points_examples() {
    let tr = integrate_geodesic(&sphere(), &[1.0, 0.0], &[0.0, 1.0], 4.0, &opts()).unwrap();
    let c = conjugate_points(&sphere(), &tr).unwrap();
    assert!((c[0] - PI).abs() < 1e-6, "{c:?}");
    let tr = integrate_geodesic(&flat(3), &[0.0; 3], &[1.0, 0.0, 0.0], 10.0, &opts()).unwrap();
    assert!(conjugate_points(&flat(3), &tr).unwrap().is_empty());
}

#[test]
fn nonpositive_curvature_monotone_jacobi_energy() {
    let hyp = catalog::by_name("hyperbolic").unwrap().spec;
    let tr = integrate_geodesic(&hyp, &[-0.3, 0.1], &[1.5, 0.4], 1.0, &opts()).unwrap();
    let j = jacobi(&hyp, &tr, 0.0, 1.0);
    for i in 1..j.t.len() {
        let e = |k: usize| 0.5 * (-2.0 * tr.phi_dphi_at(&hyp, j.t[k]).0).exp() * j.a[k].iter().map(|c| c * c).sum::<f64>();
        assert!(e(i) - e(i - 1) >= -1e-8);
    }
}

#[test]
fn index_form_examples() {
    let tr = integrate_geodesic(&sphere(), &[1.0, 0.0], &[0.0, 1.0], PI, &opts()).unwrap();
    let v = VectorFieldAlong::from_fn(&tr, |t| (vec![t.sin()], vec![t.cos()]));
    for kind in [IndexFormKind::Classical, IndexFormKind::WeightedRewrite] {
        assert!(index_form(&sphere(), &tr, &v, kind).unwrap().abs() < 1e-6);
    }

    let l = 1.5 * PI;
    let tr = integrate_geodesic(&sphere(), &[1.0, 0.0], &[0.0, 1.0], l, &opts()).unwrap();
    let v = VectorFieldAlong::from_fn(&tr, |t| (vec![(2.0 * t / 3.0).sin()], vec![2.0 / 3.0 * (2.0 * t / 3.0).cos()]));
    let i = index_form(&sphere(), &tr, &v, IndexFormKind::Classical).unwrap();
    assert!((i + 5.0 * PI / 12.0).abs() < 1e-6, "{i}");

    let l = 2.0;
    let tr = integrate_geodesic(&flat(2), &[0.0, 0.0], &[1.0, 0.0], l, &opts()).unwrap();
    let v = VectorFieldAlong::from_fn(&tr, move |t| (vec![t * (l - t)], vec![l - 2.0 * t]));
    assert_relative_eq!(index_form(&flat(2), &tr, &v, IndexFormKind::Classical).unwrap(), l.powi(3) / 3.0, epsilon = 1e-10);
}

#[test]
fn non_orthogonal_field_rejected_by_weighted_forms() {
    let tr = integrate_geodesic(&flat(2), &[0.0, 0.0], &[1.0, 0.0], 1.0, &opts()).unwrap();
    let v = VectorFieldAlong::from_fn(&tr, |t| (vec![t], vec![1.0])).with_tangential(|t| (0.5 * t, 0.5));
    assert!(matches!(index_form(&flat(2), &tr, &v, IndexFormKind::WeightedRewrite), Err(WsecError::NonOrthogonalField(_))));
    assert!(matches!(weighted_index_form(&flat(2), &tr, &v), Err(WsecError::NonOrthogonalField(_))));
}

#[test]
fn weighted_index_form_two_routes() {
    let lin = linear_density(1.0);
    let tr = integrate_geodesic(&lin, &[0.0, 0.0], &[1.0, 0.0], 1.0, &opts()).unwrap();
    let v = VectorFieldAlong::from_fn(&tr, |_t| (vec![1.0], vec![0.0]));
    let w = weighted_index_form(&lin, &tr, &v).unwrap();
    let c = index_form(&lin, &tr, &scale_by_density(&lin, &tr, &v), IndexFormKind::Classical).unwrap();
    assert!((w - c).abs() <= 1e-6 * (1.0 + c.abs()), "{w} vs {c}");

    let flat2 = flat(2);
    let tr = integrate_geodesic(&flat2, &[0.0, 0.0], &[1.0, 0.0], 1.0, &opts()).unwrap();
    let v = VectorFieldAlong::from_fn(&tr, |t| (vec![t * t], vec![2.0 * t]));
    let w = weighted_index_form(&flat2, &tr, &v).unwrap();
    let c = index_form(&flat2, &tr, &v, IndexFormKind::Classical).unwrap();
    assert_relative_eq!(w, c, epsilon = 1e-12);

    let rot = catalog::by_name("rotational-k1").unwrap();
    let prof = rot.radial.clone().unwrap();
    let tr = integrate_geodesic(&rot.spec, &[0.01, 1.0], &[1.0, 0.0], 1.5, &opts()).unwrap();
    let p2 = prof.clone();
    let v = VectorFieldAlong::from_fn(&tr, move |t| {
        let r = 0.01 + t;
        let s = p2.s_of(r);
        let ds = (-2.0 * p2.phi_of(r)).exp();
        (vec![s.sin()], vec![s.cos() * ds])
    });
    let w = weighted_index_form(&rot.spec, &tr, &v).unwrap();
    let c = index_form(&rot.spec, &tr, &scale_by_density(&rot.spec, &tr, &v), IndexFormKind::Classical).unwrap();
    assert!((w - c).abs() <= 1e-6 * (1.0 + c.abs()), "{w} vs {c}");
}

#[test]
fn sphere_index_negative_past_pi() {
    let tr = integrate_geodesic(&sphere(), &[1.0, 0.0], &[0.0, 1.0], PI + 0.02, &opts()).unwrap();
    let v = VectorFieldAlong::sine_mode(&tr, 1, 0);
    assert!(index_form(&sphere(), &tr, &v, IndexFormKind::Classical).unwrap() < 0.0);
}

#[test]
fn transplant_examples() {
    let tr = integrate_geodesic(&sphere(), &[1.0, 0.0], &[0.0, 1.0], 2.0, &opts()).unwrap();
    let v = VectorFieldAlong::from_fn(&tr, |t| (vec![t.sin()], vec![t.cos()]));
    let same = transplant_field((&sphere(), &tr), (&sphere(), &tr), &v).unwrap();
    for &t in &tr.t {
        let (a, da) = v.eval(t);
        let (b, db) = same.eval(t);
        assert!((a[0] - b[0]).abs() < 1e-12 && (da[0] - db[0]).abs() < 1e-12);
    }

    let te = integrate_geodesic(&flat(2), &[0.0, 0.0], &[1.0, 0.0], 2.0, &opts()).unwrap();
    let moved = transplant_field((&sphere(), &tr), (&flat(2), &te), &v).unwrap();
    for &t in &te.t {
        let (a, _) = v.eval(t);
        let (b, _) = moved.eval(t);
        assert!((a[0].abs() - b[0].abs()).abs() < 1e-9);
    }
}

#[test]
fn trajectory_csv_columns() {
    let tr = integrate_geodesic(&flat(2), &[0.0, 0.0], &[1.0, 0.0], 1.0, &opts()).unwrap();
    let csv = tr.to_csv();
    let header = csv.lines().next().unwrap();
    assert_eq!(header, "t,s,phi,x_1,x_2,v_1,v_2");
    assert_eq!(csv.lines().count(), tr.len() + 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn unit_sphere_geodesics_close_at_two_pi(ang in 0.0f64..6.283) {
        let v = [-ang.sin(), ang.cos()];
        let p = [ang.cos(), ang.sin()];
        let tr = integrate_geodesic(&sphere(), &p, &v, PI, &opts()).unwrap();
        let e = tr.positions.last().unwrap();
        prop_assert!((e[0] + p[0]).abs() < 1e-6 && (e[1] + p[1]).abs() < 1e-6);
    }

    #[test]
    fn flat_index_form_matches_closed_form(l in 0.5f64..3.0, k in 1usize..4) {
        let tr = integrate_geodesic(&flat(2), &[0.0, 0.0], &[1.0, 0.0], l, &opts()).unwrap();
        let v = VectorFieldAlong::sine_mode(&tr, k, 0);
        let w = k as f64 * PI / l;
        let exact = w * w * l / 2.0;
        let got = index_form(&flat(2), &tr, &v, IndexFormKind::Classical).unwrap();
        prop_assert!((got - exact).abs() <= 1e-8 * exact);
    }
}
