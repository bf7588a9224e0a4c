//! Example spaces with closed-form reference values.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::json;

use crate::error::{Result, WsecError};
use crate::jet::Jet;
use crate::manifold::{MetricDensitySpec, PointSampler};
use crate::model::{model_sn, sn_jet, ModelSpace};
use crate::quadrature::gl8;

pub type PlaneTruth = Arc<dyn Fn(&[f64], &[f64], &[f64]) -> f64 + Send + Sync>;
pub type PairTruth = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
pub type RadialTruth = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type RadialProfileFn = Arc<dyn Fn(Jet) -> Jet + Send + Sync>;

/// Closed-form reference values. Plane truths take a point and a
/// g-orthonormal pair (U, V).
#[derive(Clone, Default)]
pub struct Truths {
    pub sectional: Option<PlaneTruth>,
    pub weighted_sectional: Option<PlaneTruth>,
    /// r ↦ sec̄_φ(∂_r, X) for rotationally symmetric spaces.
    pub weighted_sectional_radial: Option<RadialTruth>,
    /// r ↦ |J(r)| for the radial Jacobi field with J(0) = 0, |J′(0)| = 1.
    pub jacobi_norm: Option<RadialTruth>,
    pub distance: Option<PairTruth>,
    pub s_distance: Option<PairTruth>,
}

impl Truths {
    pub fn present(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if self.sectional.is_some() {
            v.push("sectional");
        }
        if self.weighted_sectional.is_some() {
            v.push("weighted_sectional");
        }
        if self.weighted_sectional_radial.is_some() {
            v.push("weighted_sectional_radial");
        }
        if self.jacobi_norm.is_some() {
            v.push("jacobi_norm");
        }
        if self.distance.is_some() {
            v.push("distance");
        }
        if self.s_distance.is_some() {
            v.push("s_distance");
        }
        v
    }
}

#[derive(Clone)]
pub struct SpaceDescriptor {
    pub name: String,
    pub summary: String,
    pub params: serde_json::Value,
    pub spec: MetricDensitySpec,
    pub truths: Truths,
    pub radial: Option<Arc<RadialProfile>>,
}

impl std::fmt::Debug for SpaceDescriptor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpaceDescriptor")
            .field("name", &self.name)
            .field("params", &self.params)
            .field("truths", &self.truths.present())
            .finish()
    }
}

impl SpaceDescriptor {
    pub fn describe(&self) -> serde_json::Value {
        json!({
            "name": self.name,
            "summary": self.summary,
            "dim": self.spec.dim,
            "params": self.params,
            "truths": self.truths.present(),
            "periodic": self.spec.periods.is_some(),
        })
    }
}

fn euclid_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn ball_sampler(n: usize, radius: f64) -> PointSampler {
    Arc::new(move |rng: &mut ChaCha8Rng| {
        let d: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let l = euclid_dot(&d, &d).sqrt();
        let r = radius * rng.gen::<f64>().powf(1.0 / n as f64);
        d.iter().map(|c| c * r / l).collect()
    })
}

fn flat_metric(n: usize) -> crate::manifold::MetricField {
    Arc::new(move |_x: &[Jet]| {
        let mut m = vec![Jet::constant(0.0); n * n];
        for i in 0..n {
            m[i * n + i] = Jet::constant(1.0);
        }
        m
    })
}

fn conformal_flat(n: usize, f: impl Fn(&[Jet]) -> Jet + Send + Sync + 'static) -> crate::manifold::MetricField {
    Arc::new(move |x: &[Jet]| {
        let c = f(x);
        let mut m = vec![Jet::constant(0.0); n * n];
        for i in 0..n {
            m[i * n + i] = c;
        }
        m
    })
}

fn norm2(x: &[Jet]) -> Jet {
    let mut s = Jet::constant(0.0);
    for &c in x {
        s += c * c;
    }
    s
}

/// ℝⁿ with φ = (κ/2)|x|², sampled on the unit ball.
pub fn euclidean_quadratic(n: usize, kappa: f64) -> SpaceDescriptor {
    assert!(n >= 2);
    let spec = MetricDensitySpec::new(
        format!("euclidean-quadratic(n={n},kappa={kappa})"),
        n,
        flat_metric(n),
        Arc::new(move |x: &[Jet]| norm2(x) * (0.5 * kappa)),
    )
    .with_sampler(ball_sampler(n, 1.0));
    let truths = Truths {
        sectional: Some(Arc::new(|_, _, _| 0.0)),
        weighted_sectional: Some(Arc::new(move |p, u, _| {
            let xu = euclid_dot(p, u);
            kappa + kappa * kappa * xu * xu
        })),
        distance: Some(Arc::new(|p, q| {
            p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
        })),
        s_distance: if kappa == 0.0 {
            Some(Arc::new(|p, q| p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()))
        } else {
            None
        },
        ..Default::default()
    };
    SpaceDescriptor {
        name: spec.name.clone(),
        summary: "flat space with quadratic density".into(),
        params: json!({"n": n, "kappa": kappa}),
        spec,
        truths,
        radial: None,
    }
}

/// Stereographic image of a point of the radius-R sphere in ℝ^{n+1}, projected
/// from the north pole (0, …, 0, R).
pub fn sphere_to_chart(r: f64, y: &[f64]) -> Vec<f64> {
    let n = y.len() - 1;
    let d = r - y[n];
    y[..n].iter().map(|c| r * c / d).collect()
}

pub fn chart_to_sphere(r: f64, x: &[f64]) -> Vec<f64> {
    let q: f64 = euclid_dot(x, x);
    let d = q + r * r;
    let mut y: Vec<f64> = x.iter().map(|c| 2.0 * r * r * c / d).collect();
    y.push(r * (q - r * r) / d);
    y
}

/// Round sphere of radius R in the stereographic chart. The chart domain
/// omits the cap of geodesic radius 1e-3 about the projection pole; the
/// sampler draws uniformly from the sphere minus a cap of radius 0.1·R.
pub fn round_sphere(n: usize, radius: f64) -> SpaceDescriptor {
    assert!(n >= 2 && radius > 0.0);
    let r = radius;
    let chart_max = r / (1e-3 / (2.0 * r)).tan();
    let sample_max = r / (0.1 / 2.0f64).tan();
    let spec = MetricDensitySpec::new(
        format!("round-sphere(n={n},R={r})"),
        n,
        conformal_flat(n, move |x| {
            let d = norm2(x) + r * r;
            (4.0 * r.powi(4)) / (d * d)
        }),
        Arc::new(|_x: &[Jet]| Jet::constant(0.0)),
    )
    .with_domain(Arc::new(move |x: &[f64]| euclid_dot(x, x).sqrt() <= chart_max))
    .with_sampler(Arc::new(move |rng: &mut ChaCha8Rng| loop {
        let d: Vec<f64> = (0..=n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let l = euclid_dot(&d, &d).sqrt();
        let y: Vec<f64> = d.iter().map(|c| r * c / l).collect();
        let x = sphere_to_chart(r, &y);
        if euclid_dot(&x, &x).sqrt() <= sample_max {
            return x;
        }
    }));
    let k = 1.0 / (r * r);
    let dist: PairTruth = Arc::new(move |p, q| {
        let (a, b) = (chart_to_sphere(r, p), chart_to_sphere(r, q));
        // chord form stays accurate near 0 and π
        let diff: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let sum: f64 = a.iter().zip(&b).map(|(x, y)| (x + y) * (x + y)).sum::<f64>().sqrt();
        2.0 * r * diff.atan2(sum)
    });
    let truths = Truths {
        sectional: Some(Arc::new(move |_, _, _| k)),
        weighted_sectional: Some(Arc::new(move |_, _, _| k)),
        distance: Some(dist.clone()),
        s_distance: Some(dist),
        ..Default::default()
    };
    SpaceDescriptor {
        name: spec.name.clone(),
        summary: "round sphere, stereographic chart, zero density".into(),
        params: json!({"n": n, "R": r}),
        spec,
        truths,
        radial: None,
    }
}

/// Constant curvature κ model: g = 4/(1 + κ|x|²)² δ with zero density. The
/// origin is the natural base point; geodesics from it are straight rays.
pub fn constant_curvature(n: usize, kappa: f64) -> SpaceDescriptor {
    assert!(n >= 2);
    let limit = if kappa < 0.0 { (1.0 - 1e-3) / (-kappa).sqrt() } else { f64::INFINITY };
    let sample = if kappa < 0.0 { 0.9 / (-kappa).sqrt() } else { 1.0 };
    let spec = MetricDensitySpec::new(
        format!("constant-curvature(n={n},kappa={kappa})"),
        n,
        conformal_flat(n, move |x| {
            let d = norm2(x) * kappa + 1.0;
            Jet::constant(4.0) / (d * d)
        }),
        Arc::new(|_x: &[Jet]| Jet::constant(0.0)),
    )
    .with_domain(Arc::new(move |x: &[f64]| euclid_dot(x, x).sqrt() < limit && x.iter().all(|c| c.is_finite())))
    .with_sampler(ball_sampler(n, sample.min(1.0)));
    let truths = Truths {
        sectional: Some(Arc::new(move |_, _, _| kappa)),
        weighted_sectional: Some(Arc::new(move |_, _, _| kappa)),
        ..Default::default()
    };
    SpaceDescriptor {
        name: spec.name.clone(),
        summary: "constant curvature model, conformal chart, zero density".into(),
        params: json!({"n": n, "kappa": kappa}),
        spec,
        truths,
        radial: None,
    }
}

/// Poincaré ball, domain |x| < 1 − 1e-3, sampled on the ball of radius 0.9.
pub fn hyperbolic_ball(n: usize) -> SpaceDescriptor {
    assert!(n >= 2);
    let spec = MetricDensitySpec::new(
        format!("hyperbolic-ball(n={n})"),
        n,
        conformal_flat(n, |x| {
            let d = 1.0 - norm2(x);
            4.0 / (d * d)
        }),
        Arc::new(|_x: &[Jet]| Jet::constant(0.0)),
    )
    .with_domain(Arc::new(|x: &[f64]| euclid_dot(x, x).sqrt() < 1.0 - 1e-3))
    .with_sampler(ball_sampler(n, 0.9));
    let dist: PairTruth = Arc::new(|p, q| {
        let d2: f64 = p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
        let arg = 1.0 + 2.0 * d2 / ((1.0 - euclid_dot(p, p)) * (1.0 - euclid_dot(q, q)));
        arg.acosh()
    });
    let truths = Truths {
        sectional: Some(Arc::new(|_, _, _| -1.0)),
        weighted_sectional: Some(Arc::new(|_, _, _| -1.0)),
        distance: Some(dist.clone()),
        s_distance: Some(dist),
        ..Default::default()
    };
    SpaceDescriptor {
        name: spec.name.clone(),
        summary: "hyperbolic space, Poincaré ball chart, zero density".into(),
        params: json!({"n": n}),
        spec,
        truths,
        radial: None,
    }
}

/// Flat torus ℝⁿ/(P₁ℤ × … × Pₙℤ); distances are taken over lattice images.
pub fn flat_torus(n: usize, periods: Vec<f64>) -> SpaceDescriptor {
    assert_eq!(periods.len(), n);
    let bounds = periods.iter().map(|&p| (0.0, p)).collect();
    let spec = MetricDensitySpec::new(
        format!("flat-torus(n={n},periods={periods:?})"),
        n,
        flat_metric(n),
        Arc::new(|_x: &[Jet]| Jet::constant(0.0)),
    )
    .with_box(bounds)
    .with_periods(periods.clone());
    let per = periods.clone();
    let dist: PairTruth = Arc::new(move |p, q| {
        p.iter()
            .zip(q)
            .zip(&per)
            .map(|((a, b), l)| {
                let d = (a - b).rem_euclid(*l);
                let d = d.min(l - d);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    });
    let truths = Truths {
        sectional: Some(Arc::new(|_, _, _| 0.0)),
        weighted_sectional: Some(Arc::new(|_, _, _| 0.0)),
        distance: Some(dist.clone()),
        s_distance: Some(dist),
        ..Default::default()
    };
    SpaceDescriptor {
        name: spec.name.clone(),
        summary: "flat torus, periodic box chart, zero density".into(),
        params: json!({"n": n, "periods": periods}),
        spec,
        truths,
        radial: None,
    }
}

/// Radial data of g = dr² + e^{2φ(r)} sn_k(s(r))² g_{S^{n−1}} with
/// s(r) = ∫₀ʳ e^{−2φ}.
pub struct RadialProfile {
    pub k: f64,
    pub phi: RadialProfileFn,
    h: f64,
    cum: Vec<f64>,
    /// Largest radius of the chart (first zero of sn_k∘s, or a cap).
    pub r_max: f64,
}

impl RadialProfile {
    const R_CAP: f64 = 20.0;

    pub fn new(k: f64, phi: RadialProfileFn) -> Self {
        let h = 0.005;
        let panels = (Self::R_CAP / h) as usize;
        let mut cum = Vec::with_capacity(panels + 1);
        cum.push(0.0);
        let w = |t: f64| (-2.0 * phi(Jet::constant(t)).value()).exp();
        for i in 0..panels {
            let a = i as f64 * h;
            let next = cum[i] + gl8(a, a + h, w);
            cum.push(next);
        }
        let mut prof = RadialProfile { k, phi, h, cum, r_max: 3.0 };
        if k > 0.0 {
            let target = ModelSpace::new(k).first_zero();
            if prof.s_of(Self::R_CAP * 0.999) <= target {
                prof.r_max = Self::R_CAP * 0.999;
            } else {
                let (mut a, mut b) = (0.0, Self::R_CAP * 0.999);
                for _ in 0..200 {
                    let m = 0.5 * (a + b);
                    if prof.s_of(m) < target {
                        a = m;
                    } else {
                        b = m;
                    }
                }
                prof.r_max = 0.5 * (a + b);
            }
        }
        prof
    }

    pub fn phi_of(&self, r: f64) -> f64 {
        (self.phi)(Jet::constant(r)).value()
    }

    pub fn s_of(&self, r: f64) -> f64 {
        let i = ((r / self.h).floor() as usize).min(self.cum.len() - 1);
        let a = i as f64 * self.h;
        let w = |t: f64| (-2.0 * self.phi_of(t)).exp();
        self.cum[i] + gl8(a, r, w)
    }

    /// s(r) as a jet in the chart variables carried by `r`.
    pub fn s_jet(&self, r: Jet) -> Jet {
        let v = r.value();
        let p = (self.phi)(Jet::var(v, 0, 1, 1));
        let e = (-2.0 * p.value()).exp();
        r.chain(self.s_of(v), e, -2.0 * p.grad(0) * e)
    }

    /// e^{φ(r)} sn_k(s(r)).
    pub fn warp(&self, r: f64) -> f64 {
        self.phi_of(r).exp() * model_sn(self.k, self.s_of(r))
    }
}

/// Radially symmetric space with prescribed radial weighted curvature
/// k·e^{−4φ}, in polar coordinates (r, θ₁, …, θ_{n−1}).
pub fn rotationally_symmetric(n: usize, k: f64, phi: RadialProfileFn, label: &str) -> Result<SpaceDescriptor> {
    assert!(n >= 2);
    let prof = Arc::new(RadialProfile::new(k, phi.clone()));
    let r_lo = 1e-3;
    let r_hi = prof.r_max - 1e-3;
    for i in 0..=1000 {
        let r = r_lo + (r_hi - r_lo) * i as f64 / 1000.0;
        let w = prof.warp(r);
        if !(w > 0.0) || !w.is_finite() {
            return Err(WsecError::Profile(format!("warping function vanishes at r = {r}")));
        }
    }
    let p2 = prof.clone();
    let metric: crate::manifold::MetricField = Arc::new(move |x: &[Jet]| {
        let r = x[0];
        let f = (p2.phi)(r).exp() * sn_jet(p2.k, p2.s_jet(r));
        let f2 = f * f;
        let mut m = vec![Jet::constant(0.0); n * n];
        m[0] = Jet::constant(1.0);
        let mut h = f2;
        for j in 1..n {
            m[j * n + j] = h;
            if j < n - 1 {
                let s = x[j].sin();
                h = h * s * s;
            }
        }
        m
    });
    let p3 = prof.clone();
    let density: crate::manifold::ScalarField = Arc::new(move |x: &[Jet]| (p3.phi)(x[0]));
    let a_lo = 1e-3;
    let a_hi = std::f64::consts::PI - 1e-3;
    let mut bounds = vec![(r_lo, r_hi)];
    for j in 1..n {
        bounds.push(if j < n - 1 { (0.1, std::f64::consts::PI - 0.1) } else { (0.0, 2.0 * std::f64::consts::PI) });
    }
    let spec = MetricDensitySpec::new(format!("rotational(n={n},k={k},phi={label})"), n, metric, density)
        .with_domain(Arc::new(move |x: &[f64]| {
            x[0] >= r_lo && x[0] <= r_hi && x[1..x.len() - 1].iter().all(|&a| a >= a_lo && a <= a_hi)
        }))
        .with_box(bounds);
    let pr = prof.clone();
    let pj = prof.clone();
    let truths = Truths {
        weighted_sectional_radial: Some(Arc::new(move |r| k * (-4.0 * pr.phi_of(r)).exp())),
        jacobi_norm: Some(Arc::new(move |r| pj.warp(r))),
        s_distance: None,
        sectional: None,
        weighted_sectional: None,
        distance: None,
    };
    Ok(SpaceDescriptor {
        name: spec.name.clone(),
        summary: "rotationally symmetric space with constant radial weighted curvature".into(),
        params: json!({"n": n, "k": k, "phi": label, "r_max": prof.r_max}),
        spec,
        truths,
        radial: Some(prof),
    })
}

/// dr² + e^{2r} g_N with φ = A·r over a catalog base N; r sampled in [−1, 1].
pub fn warped_r_cross_n(base: &SpaceDescriptor, a: f64) -> SpaceDescriptor {
    let bspec = base.spec.clone();
    let nb = bspec.dim;
    let n = nb + 1;
    let bm = bspec.metric.clone();
    let metric: crate::manifold::MetricField = Arc::new(move |x: &[Jet]| {
        let w = (2.0 * x[0]).exp();
        let gb = bm(&x[1..]);
        let mut m = vec![Jet::constant(0.0); n * n];
        m[0] = Jet::constant(1.0);
        for i in 0..nb {
            for j in 0..nb {
                m[(i + 1) * n + j + 1] = w * gb[i * nb + j];
            }
        }
        m
    });
    let bd = bspec.domain.clone();
    let bs = bspec.sampler.clone();
    let spec = MetricDensitySpec::new(
        format!("warped(base={},A={a})", base.name),
        n,
        metric,
        Arc::new(move |x: &[Jet]| x[0] * a),
    )
    .with_domain(Arc::new(move |x: &[f64]| x[0].abs() <= 3.0 && bd(&x[1..])))
    .with_sampler(Arc::new(move |rng: &mut ChaCha8Rng| {
        let mut x = vec![rng.gen_range(-1.0..1.0)];
        x.extend(bs(rng));
        x
    }));
    let flat_base = base.truths.sectional.as_ref().map_or(false, |f| {
        let x = vec![0.1; nb];
        let mut u = vec![0.0; nb];
        u[0] = 1.0;
        f(&x, &u, &u) == 0.0
    }) && nb >= 1;
    let truths = if flat_base {
        Truths {
            sectional: Some(Arc::new(|_, _, _| -1.0)),
            weighted_sectional: Some(Arc::new(move |_, u, _| {
                let c2 = u[0] * u[0];
                -1.0 + a * (1.0 - c2) + a * a * c2
            })),
            ..Default::default()
        }
    } else {
        Truths::default()
    };
    SpaceDescriptor {
        name: spec.name.clone(),
        summary: "warped product dr² + e^{2r} g_N with linear density".into(),
        params: json!({"base": base.name, "A": a}),
        spec,
        truths,
        radial: None,
    }
}

/// Built-in profile φ(r) = 0.1 sin r.
pub fn sine_profile() -> RadialProfileFn {
    Arc::new(|r: Jet| r.sin() * 0.1)
}

/// Names accepted by [`by_name`].
pub fn names() -> Vec<&'static str> {
    vec![
        "euclidean",
        "euclidean-quadratic",
        "euclidean-quadratic-3",
        "sphere",
        "sphere-3",
        "sphere-r2",
        "hyperbolic",
        "hyperbolic-3",
        "flat-torus",
        "rotational-k1",
        "rotational-k0",
        "rotational-km1",
        "warped-torus",
        "warped-sphere",
    ]
}

pub fn by_name(name: &str) -> Option<SpaceDescriptor> {
    let mut d = match name {
        "euclidean" => euclidean_quadratic(2, 0.0),
        "euclidean-quadratic" => euclidean_quadratic(2, 1.0),
        "euclidean-quadratic-3" => euclidean_quadratic(3, 1.0),
        "sphere" => round_sphere(2, 1.0),
        "sphere-3" => round_sphere(3, 1.0),
        "sphere-r2" => round_sphere(2, 2.0),
        "hyperbolic" => hyperbolic_ball(2),
        "hyperbolic-3" => hyperbolic_ball(3),
        "flat-torus" => flat_torus(2, vec![1.0, 1.0]),
        "rotational-k1" => rotationally_symmetric(2, 1.0, sine_profile(), "0.1*sin(r)").ok()?,
        "rotational-k0" => rotationally_symmetric(2, 0.0, sine_profile(), "0.1*sin(r)").ok()?,
        "rotational-km1" => rotationally_symmetric(2, -1.0, sine_profile(), "0.1*sin(r)").ok()?,
        "warped-torus" => warped_r_cross_n(&flat_torus(2, vec![1.0, 1.0]), 2.0),
        "warped-sphere" => warped_r_cross_n(&round_sphere(2, 1.0), 1.0),
        _ => return None,
    };
    d.name = name.to_string();
    d.spec.name = name.to_string();
    Some(d)
}

pub fn all() -> Vec<SpaceDescriptor> {
    names().into_iter().filter_map(by_name).collect()
}
