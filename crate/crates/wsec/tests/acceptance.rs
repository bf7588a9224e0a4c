//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on failure.

use std::f64::consts::PI;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use wsec::bounds::{estimate_k_upper, estimate_kappa_lower, sample_objective, DensityFamily, OptimizerOptions, SampleBudget};
use wsec::catalog;
use wsec::comparison::*;
use wsec::geodesic::*;
use wsec::jet::Jet;
use wsec::manifold::{connection_defects, local_geometry, random_orthonormal_pair, CurvatureRoute, MetricDensitySpec};
use wsec::ode::OdeOptions;
use wsec::tube::*;
use wsec::WsecError;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err(format!($($arg)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>, what: &str) -> Result<T, String> {
    r.map_err(|e| format!("{what}: {e}"))
}

fn sphere() -> MetricDensitySpec {
    catalog::round_sphere(2, 1.0).spec
}

fn flat(n: usize) -> MetricDensitySpec {
    catalog::euclidean_quadratic(n, 0.0).spec
}

fn jacobi(spec: &MetricDensitySpec, tr: &GeodesicTrajectory, a: f64, b: f64) -> Result<JacobiTrajectory, String> {
    let n = spec.dim;
    let a0 = DMatrix::from_fn(n, 1, |i, _| if i == 1 { a } else { 0.0 });
    let b0 = DMatrix::from_fn(n, 1, |i, _| if i == 1 { b } else { 0.0 });
    Ok(ok(integrate_jacobi_family(spec, tr, &a0, &b0, &OdeOptions::default()), "jacobi")?.field(0))
}

fn to_s(spec: &MetricDensitySpec, p: &[f64], v: &[f64], s: f64) -> Result<GeodesicTrajectory, String> {
    ok(integrate_to_s(spec, p, v, s, 50.0, &GeodesicOptions::default()), "geodesic")
}

const PHI_AMPLITUDE: f64 = 0.1;

fn radial_phi(r: f64) -> f64 {
    PHI_AMPLITUDE * r.sin()
}

/// s(r) = ∫₀ʳ e^{−2φ} by composite Simpson.
fn radial_s(r: f64) -> f64 {
    let n = 2 * (((r / 1e-3).ceil() as usize).max(1));
    let h = r / n as f64;
    let w = |t: f64| (-2.0 * radial_phi(t)).exp();
    let mut acc = w(0.0) + w(r);
    for i in 1..n {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * w(i as f64 * h);
    }
    acc * h / 3.0
}

fn radial_r_of_s(s: f64) -> f64 {
    let (mut a, mut b) = (0.0, 10.0);
    for _ in 0..80 {
        let m = 0.5 * (a + b);
        if radial_s(m) < s {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

fn model_sn_k(k: f64, s: f64) -> f64 {
    if k > 0.0 {
        (k.sqrt() * s).sin() / k.sqrt()
    } else if k < 0.0 {
        ((-k).sqrt() * s).sinh() / (-k).sqrt()
    } else {
        s
    }
}

/// Jacobi field of the rotational space started at r0 with the data of the
/// field emanating from the pole: J = e^{φ}sn_k(s(r)).
fn rotational_pole_field(name: &str, r0: f64, len: f64) -> Result<(MetricDensitySpec, GeodesicTrajectory, JacobiFamily), String> {
    let d = catalog::by_name(name).ok_or("missing space")?;
    let prof = d.radial.clone().ok_or("missing profile")?;
    let s0 = prof.s_of(r0);
    let (p, dp) = (radial_phi(r0), PHI_AMPLITUDE * r0.cos());
    let a = p.exp() * model_sn_k(prof.k, s0);
    let cs = if prof.k > 0.0 { (prof.k.sqrt() * s0).cos() } else if prof.k < 0.0 { ((-prof.k).sqrt() * s0).cosh() } else { 1.0 };
    let b = p.exp() * (dp * model_sn_k(prof.k, s0) + cs * (-2.0 * p).exp());
    let tr = ok(integrate_geodesic(&d.spec, &[r0, 1.0], &[1.0, 0.0], len, &GeodesicOptions::default()), "geodesic")?;
    let fam = ok(
        integrate_jacobi_family(
            &d.spec,
            &tr,
            &DMatrix::from_column_slice(2, 1, &[0.0, a]),
            &DMatrix::from_column_slice(2, 1, &[0.0, b]),
            &OdeOptions::default(),
        ),
        "jacobi",
    )?;
    Ok((d.spec, tr, fam))
}

fn c1_two_route_curvature() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for d in catalog::all() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for _ in 0..1000 {
            let x = d.spec.sample_point(&mut rng);
            let lg = ok(local_geometry(&d.spec, &x), &d.name)?;
            let (u, v) = random_orthonormal_pair(&lg, &mut rng);
            let a = ok(lg.weighted_sectional(&u, &v, CurvatureRoute::HessianFormula), &d.name)?.value;
            let b = ok(lg.weighted_sectional(&u, &v, CurvatureRoute::TensorFormula), &d.name)?.value;
            let rel = (a - b).abs() / a.abs().max(b.abs()).max(1.0);
            worst = worst.max(rel);
            ensure!(rel <= 1e-6, "{} at {x:?}: {a} vs {b}", d.name);
            count += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 30.0, "took {secs:.1} s");
    Ok(format!("{count} samples, worst relative gap {worst:.2e}, {secs:.1} s"))
}

fn c2_radial_curvature() -> Outcome {
    let mut worst: f64 = 0.0;
    for (name, k) in [("rotational-km1", -1.0), ("rotational-k0", 0.0), ("rotational-k1", 1.0)] {
        let d = catalog::by_name(name).ok_or("missing space")?;
        let r_hi = d.radial.as_ref().unwrap().r_max - 2e-3;
        for i in 0..100 {
            let r = 2e-3 + (r_hi - 2e-3) * (i as f64 + 0.5) / 100.0;
            let x = [r, 1.0 + 0.05 * i as f64];
            let lg = ok(local_geometry(&d.spec, &x), name)?;
            let u = [1.0 / lg.norm(&[1.0, 0.0]), 0.0];
            let v = [0.0, 1.0 / lg.norm(&[0.0, 1.0])];
            let got = ok(lg.weighted_sectional(&u, &v, CurvatureRoute::TensorFormula), name)?.value;
            let want = k * (-4.0 * radial_phi(r)).exp();
            worst = worst.max((got - want).abs());
            ensure!((got - want).abs() <= 1e-6 * want.abs().max(1.0), "{name} r = {r}: {got} vs {want}");
        }
    }
    Ok(format!("300 radii, worst gap {worst:.2e}"))
}

fn c3_jacobi_closed_form() -> Outcome {
    let r0 = 2e-3;
    let r_end = radial_r_of_s(radial_s(r0) + 0.9 * PI);
    let (_, _, fam) = rotational_pole_field("rotational-k1", r0, r_end - r0)?;
    let j = fam.field(0);
    let mut worst: f64 = 0.0;
    for i in 0..=200 {
        let r = r0 + (r_end - r0) * i as f64 / 200.0;
        let want = radial_phi(r).exp() * radial_s(r).sin();
        worst = worst.max((j.norm_at(r - r0) - want).abs());
    }
    ensure!(worst <= 1e-5, "worst gap {worst:.2e}");
    Ok(format!("s-length 0.9π, worst gap {worst:.2e}"))
}

fn c4_rauch() -> Outcome {
    let o = CheckOptions::default();
    let gs = to_s(&sphere(), &[1.0, 0.0], &[0.0, 1.0], 3.0)?;
    let ge = to_s(&flat(2), &[0.0, 0.0], &[1.0, 0.0], 3.0)?;
    let js = jacobi(&sphere(), &gs, 0.0, 1.0)?;
    let je = jacobi(&flat(2), &ge, 0.0, 1.0)?;
    let same = ok(rauch1_check(&sphere(), &sphere(), &gs, &gs, &js, &js, &o), "rauch1 identical")?;
    ensure!(same.pass && same.worst_margin.abs() <= 1e-6, "identical margin {}", same.worst_margin);
    let v = ok(rauch1_check(&sphere(), &flat(2), &gs, &ge, &js, &je, &o), "rauch1 sphere/flat")?;
    ensure!(v.pass, "sphere vs flat margin {}", v.worst_margin);

    // equality: e^{φ(pole)−φ}|J| on the rotational space against the model field
    let r0 = 2e-3;
    let r_end = radial_r_of_s(radial_s(r0) + 0.9 * PI);
    let (_, _, fam) = rotational_pole_field("rotational-k1", r0, r_end - r0)?;
    let jr = fam.field(0);
    let s_hi = radial_s(r_end);
    let gm = to_s(&sphere(), &[0.0, 0.0], &[0.5, 0.0], s_hi + 0.01)?;
    let jm = jacobi(&sphere(), &gm, 0.0, 1.0)?;
    let mut eq_margin: f64 = 0.0;
    for i in 0..=256 {
        let r = r0 + (r_end - r0) * i as f64 / 256.0;
        let lhs = (-radial_phi(r)).exp() * jr.norm_at(r - r0);
        let rhs = jm.norm_at(gm.t_at_s(radial_s(r)));
        eq_margin = eq_margin.max((lhs - rhs).abs());
    }
    ensure!(eq_margin <= 1e-5, "rotational equality margin {eq_margin:.2e}");

    let mut rauch2_worst = f64::INFINITY;
    for alpha in [0.3, -0.3] {
        let lin = flat(2).with_density(Arc::new(move |x: &[Jet]| x[0] * alpha));
        let gl = to_s(&lin, &[0.0, 0.0], &[1.0, 0.0], 1.0)?;
        let ge = to_s(&flat(2), &[0.0, 0.0], &[1.0, 0.0], 1.0)?;
        let v = ok(
            rauch2_check(&lin, &flat(2), &gl, &ge, &jacobi(&lin, &gl, 1.0, 0.0)?, &jacobi(&flat(2), &ge, 1.0, 0.0)?, &o),
            "rauch2",
        )?;
        ensure!(v.pass, "rauch2 alpha {alpha}: margin {}", v.worst_margin);
        rauch2_worst = rauch2_worst.min(v.worst_margin);
    }
    let grid: Vec<f64> = (0..=20).map(|i| 0.05 * i as f64).collect();
    let ge = to_s(&flat(2), &[0.0, 0.0], &[1.0, 0.0], 1.0)?;
    let tau = rauch2_tau(&flat(2), &ge, &jacobi(&flat(2), &ge, 1.0, 0.0)?, &grid);
    let tau_gap = tau.iter().zip(&grid).map(|(t, s)| (t - s).abs()).fold(0.0, f64::max);
    ensure!(tau_gap <= 1e-8, "τ(s) − s = {tau_gap:.2e}");
    Ok(format!(
        "identical {:.1e}, sphere/flat {:.3}, rotational equality {eq_margin:.1e}, rauch2 {:.3}, τ gap {tau_gap:.1e}",
        same.worst_margin, v.worst_margin, rauch2_worst
    ))
}

fn c5_hessian() -> Outcome {
    let o = HessianOptions::default();
    let mut eq_gap: f64 = 0.0;
    let mut route_gap: f64 = 0.0;
    let p = catalog::sphere_to_chart(1.0, &[1.0, 0.0, 0.0]);
    for s in [0.5f64, 1.0, 2.0] {
        let q = catalog::sphere_to_chart(1.0, &[s.cos(), s.sin(), 0.0]);
        let c = ok(minimizing_geodesic(&sphere(), &p, &q, &ShootingOptions::default()), "shooting")?;
        let y = c.trajectory.state_at(c.trajectory.t_end()).frame[1].clone();
        let v = ok(hessian_comparison_check(&sphere(), &p, &q, &y, CurvatureBound { side: BoundSide::Lower, value: 1.0 }, &o), "hessian")?;
        let cot = s.cos() / s.sin();
        eq_gap = eq_gap.max((v.lhs[0] - cot).abs()).max((v.rhs[0] - cot).abs());
        route_gap = route_gap.max(v.metadata["two_route_difference"].as_f64().ok_or("no Riccati route")?);
        ensure!(v.metadata["two_route_agree"] == true, "routes disagree at s = {s}");
    }
    ensure!(eq_gap <= 1e-5, "sphere equality gap {eq_gap:.2e}");

    let eq = catalog::by_name("euclidean-quadratic").unwrap().spec;
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut worst = f64::INFINITY;
    let origin = [0.0, 0.0];
    for _ in 0..50 {
        let q = eq.sample_point(&mut rng);
        let c = ok(minimizing_geodesic(&eq, &origin, &q, &ShootingOptions::default()), "shooting")?;
        let frame = c.trajectory.state_at(c.trajectory.t_end()).frame;
        let sign = if rand::Rng::gen_bool(&mut rng, 0.5) { 1.0 } else { -1.0 };
        let y: Vec<f64> = frame[1].iter().map(|c| sign * c).collect();
        let v = ok(hessian_comparison_check(&eq, &origin, &q, &y, CurvatureBound { side: BoundSide::Lower, value: 1.0 }, &o), "hessian")?;
        ensure!(v.pass, "q = {q:?}: margin {}", v.worst_margin);
        ensure!(v.metadata["two_route_agree"] == true, "routes disagree at q = {q:?}: {}", v.metadata["two_route_difference"]);
        worst = worst.min(v.worst_margin);
        route_gap = route_gap.max(v.metadata["two_route_difference"].as_f64().unwrap_or(0.0));
    }
    Ok(format!("cot gap {eq_gap:.1e}, quadratic worst margin {worst:.3}, route gap {route_gap:.1e}"))
}

fn c6_myers() -> Outcome {
    let antipodes = (catalog::sphere_to_chart(1.0, &[0.6, 0.8, 0.0]), catalog::sphere_to_chart(1.0, &[-0.6, -0.8, 0.0]));
    let o = MyersOptions { extra_pairs: vec![antipodes], seed: 6, ..Default::default() };
    let v = ok(myers_check(&sphere(), 1.0, 200, &o), "myers")?;
    let max = v.lhs.iter().cloned().fold(0.0, f64::max);
    ensure!(v.lhs.len() >= 201, "only {} pairs", v.lhs.len());
    ensure!(max <= PI + 1e-3, "max s = {max}");
    ensure!(*v.lhs.last().unwrap() >= PI - 1e-3, "antipodal pair reached {}", v.lhs.last().unwrap());
    ensure!(v.pass, "verdict failed");
    Ok(format!("{} pairs, max s(p,q) = {max:.6}", v.lhs.len()))
}

/// sup over the trajectory of e^{4φ}sec̄_φ on planes containing the tangent.
fn certified_upper(spec: &MetricDensitySpec, tr: &GeodesicTrajectory) -> Result<f64, String> {
    let n = spec.dim;
    let mut k_max = f64::NEG_INFINITY;
    for i in 0..=400 {
        let t = tr.t_end() * i as f64 / 400.0;
        let st = tr.state_at(t);
        let lg = ok(local_geometry(spec, &st.x), "geometry")?;
        let (_, kp) = curvature_matrices(&lg, &st);
        let f = (4.0 * lg.phi).exp() / lg.inner(&st.v, &st.v);
        let block = kp.view((1, 1), (n - 1, n - 1)).into_owned();
        let sym = (&block + block.transpose()) * (0.5 * f);
        k_max = k_max.max(sym.symmetric_eigenvalues().max());
    }
    Ok(k_max)
}

fn c7_conjugate_spacing() -> Outcome {
    let mut pairs = 0;
    let mut worst = f64::INFINITY;
    let mut runs: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
    runs.push(("sphere".into(), vec![1.0, 0.0], vec![0.0, 1.0]));
    runs.push(("sphere-3".into(), vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]));
    runs.push(("sphere-r2".into(), vec![2.0, 0.0], vec![0.0, 1.0]));
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for d in catalog::all() {
        let p = d.spec.sample_point(&mut rng);
        let v = random_unit(&d.spec, &p, &mut rng);
        runs.push((d.name.clone(), p, v));
    }
    for (name, p, v) in runs {
        let spec = catalog::by_name(&name).unwrap().spec;
        let probe = match integrate_geodesic(&spec, &p, &v, 30.0, &GeodesicOptions::default()) {
            Ok(t) => t,
            Err(WsecError::DomainExit { partial, .. }) => *partial,
            Err(e) => return Err(format!("{name}: {e}")),
        };
        let k = certified_upper(&spec, &probe)?;
        if !(k > 0.0) {
            continue;
        }
        // long enough for three conjugate points in the model
        let t_end = if probe.complete { probe.t_at_s(3.2 * PI / k.sqrt()) } else { 0.99 * probe.t_end() };
        let tr = ok(integrate_geodesic(&spec, &p, &v, t_end.min(probe.t_end()), &GeodesicOptions::default()), &name)?;
        let k = certified_upper(&spec, &tr)?;
        let conj: Vec<f64> = ok(conjugate_points(&spec, &tr), &name)?.iter().map(|&t| tr.s_at(t)).collect();
        for w in conj.windows(2) {
            let gap = w[1] - w[0] - PI / k.sqrt();
            worst = worst.min(gap);
            pairs += 1;
            ensure!(gap >= -1e-3, "{name}: Δs = {} below π/√K = {}", w[1] - w[0], PI / k.sqrt());
        }
    }
    ensure!(pairs >= 4, "only {pairs} consecutive pairs detected");
    Ok(format!("{pairs} consecutive pairs, worst Δs − π/√K = {worst:.2e}"))
}

fn c8_index_negativity() -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    for (name, p, v) in [("sphere", vec![1.0, 0.0], vec![0.0, 1.0]), ("sphere-3", vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0])] {
        let spec = catalog::by_name(name).unwrap().spec;
        let tr = to_s(&spec, &p, &v, 1.1 * PI)?;
        for dir in 0..spec.dim - 1 {
            let f = VectorFieldAlong::sine_mode(&tr, 1, dir);
            let i = ok(index_form(&spec, &tr, &f, IndexFormKind::Classical), "index")?;
            let w = ok(weighted_index_form(&spec, &tr, &f), "weighted index")?;
            ensure!(i < -1e-3 && w < -1e-3, "{name} direction {dir}: {i}, {w}");
            worst = worst.max(i).max(w);
        }
    }
    Ok(format!("3 fields, largest index {worst:.4}"))
}

fn c9_tubes() -> Outcome {
    let o = TubeOptions::default();
    let mut detail = Vec::new();
    let cap = ok(ImmersedSubmanifold::single_point(sphere(), catalog::sphere_to_chart(1.0, &[0.0, 0.0, -1.0])), "point")?;
    let equator = ok(ImmersedSubmanifold::curve(sphere(), |u| vec![u.cos(), u.sin()], (0.0, 2.0 * PI), 4), "equator")?;
    for r in [0.5f64, 1.0] {
        let start = Instant::now();
        let e = ok(tube_volume_estimate(&cap, r, RadiusKind::Distance, VolumeWeight::VolF, &o), "cap")?;
        let exact = 2.0 * PI * (1.0 - r.cos());
        ensure!((e.value - exact).abs() <= 0.01 * exact, "cap r = {r}: {} vs {exact}", e.value);
        ensure!(start.elapsed().as_secs_f64() < 60.0, "cap run too slow");
        let start = Instant::now();
        let b = ok(tube_volume_estimate(&equator, r, RadiusKind::Distance, VolumeWeight::VolF, &o), "band")?;
        let exact_b = 4.0 * PI * r.sin();
        ensure!((b.value - exact_b).abs() <= 0.01 * exact_b, "band r = {r}: {} vs {exact_b}", b.value);
        ensure!(start.elapsed().as_secs_f64() < 60.0, "band run too slow");
        detail.push(format!("r={r}: cap {:.1e}, band {:.1e}", (e.value / exact - 1.0).abs(), (b.value / exact_b - 1.0).abs()));
    }
    let start = Instant::now();
    let eq3 = catalog::by_name("euclidean-quadratic-3").unwrap().spec;
    let p = ok(ImmersedSubmanifold::single_point(eq3, vec![0.0; 3]), "point")?;
    let r = ok(hk_bound_check(&p, 1.0, 0.5, RadiusKind::Reparametrized, 1e-6, &o), "s-tube")?;
    ensure!(r.pass && r.rel_margin >= 0.0, "s-tube margin {}", r.rel_margin);
    ensure!(start.elapsed().as_secs_f64() < 60.0, "s-tube run too slow");
    detail.push(format!("s-tube margin {:.3}", r.rel_margin));
    Ok(detail.join(", "))
}

fn c10_log_wedge() -> Outcome {
    let o = CheckOptions::default();
    let sph = catalog::round_sphere(3, 1.0).spec;
    let p = catalog::sphere_to_chart(1.0, &[0.0, 0.0, 0.0, -1.0]);
    let tr = ok(integrate_geodesic(&sph, &p, &[0.5, 0.0, 0.0], 3.1, &GeodesicOptions::default()), "geodesic")?;
    let fam = ok(normal_jacobi_family(&sph, &tr), "family")?;
    let e3 = flat(3);
    let te = ok(integrate_geodesic(&e3, &[0.0; 3], &[1.0, 0.0, 0.0], 3.1, &GeodesicOptions::default()), "geodesic")?;
    let fe = ok(normal_jacobi_family(&e3, &te), "family")?;
    let v = ok(log_wedge_comparison((&sph, &fam), (&e3, &fe), (0.05, 3.0), &o), "sphere/flat")?;
    ensure!(v.pass, "sphere vs flat margin {}", v.worst_margin);
    let cot_gap = v.s_grid.iter().zip(&v.lhs).map(|(s, l)| (l - 2.0 / s.tan()).abs()).fold(0.0, f64::max);

    let r0 = 2e-3;
    let s0 = catalog::by_name("rotational-k1").unwrap().radial.unwrap().s_of(r0);
    let r_end = radial_r_of_s(s0 + 2.6);
    let (rot, _, rf) = rotational_pole_field("rotational-k1", r0, r_end - r0)?;
    let y = [s0.sin(), 0.0, -s0.cos()];
    let m0 = catalog::sphere_to_chart(1.0, &y);
    let speed = 0.5 * (1.0 + m0.iter().map(|c| c * c).sum::<f64>());
    let tm = to_s(&sphere(), &m0, &[speed, 0.0], 2.7)?;
    let mf = ok(
        integrate_jacobi_family(
            &sphere(),
            &tm,
            &DMatrix::from_column_slice(2, 1, &[0.0, s0.sin()]),
            &DMatrix::from_column_slice(2, 1, &[0.0, s0.cos()]),
            &OdeOptions::default(),
        ),
        "model family",
    )?;
    let w = ok(log_wedge_comparison((&rot, &rf), (&sphere(), &mf), (0.05, 2.5), &CheckOptions { hypothesis_tol: 1e-5, ..o }), "rotational")?;
    let gap = w.lhs.iter().zip(&w.rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure!(gap <= 1e-4, "rotational equality margin {gap:.2e}");
    Ok(format!("sphere/flat margin {:.3} (cot gap {cot_gap:.1e}), rotational equality {gap:.1e}", v.worst_margin))
}

fn c11_bounds() -> Outcome {
    let b = SampleBudget::default();
    let o = OptimizerOptions::default();
    let sph = catalog::by_name("sphere").unwrap().spec;
    let f = DensityFamily::default_for(&sph, &b);
    let lo = ok(estimate_kappa_lower(&sph, &f, 1.0, &b, &o), "κ̲")?;
    let hi = ok(estimate_k_upper(&sph, &f, 1.0, &b, &o), "K̄")?;
    ensure!((0.95..=1.0 + 1e-9).contains(&lo.value), "sphere κ̲ = {}", lo.value);
    ensure!((1.0 - 1e-9..=1.05).contains(&hi.value), "sphere K̄ = {}", hi.value);
    ensure!(lo.value <= hi.value + 1e-9, "sphere ordering {} > {}", lo.value, hi.value);

    let tor = catalog::by_name("flat-torus").unwrap().spec;
    let ft = DensityFamily::default_for(&tor, &b);
    let tl = ok(estimate_kappa_lower(&tor, &ft, 1.0, &b, &o), "torus κ̲")?;
    let th = ok(estimate_k_upper(&tor, &ft, 1.0, &b, &o), "torus K̄")?;
    ensure!(!tl.sign_phase_succeeded && tl.value <= 1e-6, "torus κ̲ = {} (sign phase {})", tl.value, tl.sign_phase_succeeded);
    ensure!(tl.value <= th.value + 1e-9, "torus ordering {} > {}", tl.value, th.value);

    let params: Vec<f64> = (0..f.parameter_dim()).map(|i| 0.02 * ((i + 1) as f64).sin()).collect();
    let base = ok(sample_objective(&sph, &f, &params, &b), "objective")?;
    let mut worst: f64 = 0.0;
    for c in [-0.8, 0.3, 1.1] {
        let sh = ok(sample_objective(&sph, &f.shifted(c), &params, &b), "objective")?;
        let s = (4.0 * c).exp();
        worst = worst.max((sh.min_e4sec / (s * base.min_e4sec) - 1.0).abs()).max((sh.max_e4sec / (s * base.max_e4sec) - 1.0).abs());
    }
    ensure!(worst <= 1e-10, "e^{{4c}} identity off by {worst:.2e}");
    Ok(format!("sphere [{:.4}, {:.4}], torus κ̲ {:.1e}, shift identity {worst:.1e}", lo.value, hi.value, tl.value))
}

fn c12_convexity() -> Outcome {
    let prof = ok(build_modified_distance(0.0, 5.0), "profile")?;
    let res = prof.residual();
    ensure!(res <= 1e-9, "residual {res:.2e}");
    for a in [0.5, 1.0, 2.0] {
        let r = ok(build_modified_distance(a, 5.0), "profile")?.residual();
        ensure!(r <= 1e-9, "residual {r:.2e} at a = {a}");
    }
    let hyp = catalog::by_name("hyperbolic").unwrap().spec;
    let gs = ok(sample_tilde_geodesics(&hyp, &[0.0, 0.0], 0.4, 6, 0.5, 0), "geodesics")?;
    let v = ok(weighted_convexity_check(&hyp, &[0.0, 0.0], &prof, &gs, &ConvexityOptions::default()), "convexity")?;
    ensure!(v.pass, "margin {}", v.worst_margin);
    Ok(format!("residual {res:.1e}, hyperbolic margin {:.3}", v.worst_margin))
}

fn c13_connection_identities() -> Outcome {
    let mut trace: f64 = 0.0;
    let mut torsion: f64 = 0.0;
    for d in catalog::all() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let x = d.spec.sample_point(&mut rng);
            let c = ok(connection_defects(&d.spec, &x), &d.name)?;
            ensure!(c.trace <= 1e-6 && c.torsion <= 1e-6, "{} at {x:?}: {c:?}", d.name);
            trace = trace.max(c.trace);
            torsion = torsion.max(c.torsion);
        }
    }
    Ok(format!("trace defect {trace:.1e}, torsion {torsion:.1e}"))
}

fn run_cli(args: &[&str]) -> Result<Value, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_wsec")).args(args).env_remove("WSEC_THREADS").output().map_err(|e| e.to_string())?;
    let mut v: Value = serde_json::from_slice(&out.stdout).map_err(|e| format!("{args:?}: {e}"))?;
    v.as_object_mut().ok_or("report is not an object")?.remove("timing");
    Ok(v)
}

fn c14_determinism() -> Outcome {
    let runs: Vec<Vec<&str>> = vec![
        vec!["curvature", "--space", "warped-sphere", "--budget", "12,3"],
        vec!["geodesic", "--space", "hyperbolic-3", "--length", "2"],
        vec!["jacobi", "--space", "sphere", "--point", "1,0", "--direction", "0,1", "--length", "3.5"],
        vec!["compare", "rauch1", "--space", "sphere", "--model-kappa", "0", "--length", "3"],
        vec!["compare", "rauch2", "--space", "sphere", "--model-kappa", "0", "--length", "1"],
        vec!["compare", "hessian", "--space", "euclidean-quadratic", "--model-kappa", "1", "--length", "0.5"],
        vec!["compare", "myers", "--space", "sphere", "--model-kappa", "1", "--budget", "12,1"],
        vec!["compare", "log-wedge", "--space", "sphere-3", "--model-kappa", "0", "--length", "2"],
        vec!["tube", "--space", "sphere", "--radius", "0.7"],
        vec!["bounds", "--space", "sphere", "--budget", "16,2"],
        vec!["convexity", "--space", "hyperbolic"],
        vec!["catalog", "list"],
        vec!["catalog", "show", "rotational-k1"],
    ];
    for args in &runs {
        let seeded: Vec<&str> = args.iter().copied().chain(["--seed", "17"]).collect();
        let a = run_cli(&seeded)?;
        let b = run_cli(&seeded)?;
        ensure!(a == b, "{args:?} differs between runs");
    }
    Ok(format!("{} commands reproduced", runs.len()))
}

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("two-route weighted curvature agreement", c1_two_route_curvature),
        ("constant radial weighted curvature", c2_radial_curvature),
        ("Jacobi closed form on the rotational sphere", c3_jacobi_closed_form),
        ("Rauch comparisons", c4_rauch),
        ("Hessian comparison", c5_hessian),
        ("Myers diameter bound", c6_myers),
        ("conjugate point spacing", c7_conjugate_spacing),
        ("index negativity past π", c8_index_negativity),
        ("tube volumes", c9_tubes),
        ("log-wedge comparison", c10_log_wedge),
        ("curvature bound estimator", c11_bounds),
        ("weighted convexity", c12_convexity),
        ("measure-parallel trace and torsion", c13_connection_identities),
        ("CLI determinism", c14_determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let r = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match r {
            Ok(d) => println!("criterion {:>2} PASS  {name}: {d} [{secs:.1} s]", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {d} [{secs:.1} s]", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
