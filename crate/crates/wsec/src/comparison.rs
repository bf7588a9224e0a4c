//! Model comparison functions and checks of the weighted comparison theorems.
//!
//! Every check returns a [`ComparisonVerdict`] sampled on a grid in the
//! reparametrized parameter s, where ds = e^{2φ} dt along a unit-speed
//! geodesic σ(t) and γ(s) = σ(t(s)).

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Result, WsecError};
use crate::geodesic::{
    conjugate_points, curvature_matrices, integrate_geodesic, integrate_jacobi_family, minimizing_geodesic,
    reparametrized_distance, singular_times, smooth_distance, GeoState, GeodesicOptions, GeodesicTrajectory,
    JacobiTrajectory, ShootingOptions,
};
use crate::manifold::{local_geometry, LocalGeometry, MetricDensitySpec};
pub use crate::model::{model_cs, model_sn, monotone_model_ratio, ModelSpace};
use crate::ode::{self, DenseSolution, OdeOptions, OdeStatus};
use crate::quadrature::gl8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Theorem {
    Rauch1,
    Rauch2,
    HessianLower,
    HessianUpper,
    Myers,
    TubeVolume,
    Riccati,
    Convexity,
    LogWedge,
}

/// Sampled comparison of `lhs ≤ rhs`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComparisonVerdict {
    pub theorem: Theorem,
    pub s_grid: Vec<f64>,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    /// min(rhs − lhs) over the grid.
    pub worst_margin: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub metadata: Value,
}

impl ComparisonVerdict {
    pub fn new(theorem: Theorem, s_grid: Vec<f64>, lhs: Vec<f64>, rhs: Vec<f64>, tolerance: f64, metadata: Value) -> Self {
        assert_eq!(s_grid.len(), lhs.len());
        assert_eq!(s_grid.len(), rhs.len());
        let worst_margin = lhs.iter().zip(&rhs).map(|(l, r)| r - l).fold(f64::INFINITY, f64::min);
        let pass = worst_margin >= -tolerance;
        ComparisonVerdict { theorem, s_grid, lhs, rhs, worst_margin, tolerance, pass, metadata }
    }

    /// Index of the grid node where the margin is smallest.
    pub fn worst_index(&self) -> Option<usize> {
        (0..self.s_grid.len()).min_by(|&a, &b| {
            let ma = self.rhs[a] - self.lhs[a];
            let mb = self.rhs[b] - self.lhs[b];
            ma.partial_cmp(&mb).unwrap()
        })
    }

    /// CSV with header `s,lhs,rhs,margin`.
    pub fn to_csv(&self) -> String {
        use crate::geodesic::c_exp;
        let mut out = String::from("s,lhs,rhs,margin\n");
        for i in 0..self.s_grid.len() {
            let (s, l, r) = (self.s_grid[i], self.lhs[i], self.rhs[i]);
            out.push_str(&format!("{},{},{},{}\n", c_exp(s), c_exp(l), c_exp(r), c_exp(r - l)));
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct CheckOptions {
    pub tol: f64,
    /// Grid nodes in s.
    pub grid: usize,
    /// Random orthonormal directions per node for hypothesis sampling.
    pub planes: usize,
    pub seed: u64,
    /// Slack allowed in sampled curvature hypotheses.
    pub hypothesis_tol: f64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions { tol: 1e-8, grid: 512, planes: 64, seed: 0, hypothesis_tol: 1e-6 }
    }
}

pub(crate) fn uniform_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

pub(crate) fn random_unit_vec(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let l = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if l > 1e-8 {
            return v.iter().map(|c| c / l).collect();
        }
    }
}

fn quad(m: &DMatrix<f64>, v: &[f64]) -> f64 {
    let n = v.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += v[i] * m[(i, j)] * v[j];
        }
    }
    s
}

fn perp(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    m.view((1, 1), (n - 1, n - 1)).into_owned()
}

/// e^{4φ}·(normal block of K^φ)/|σ′|², i.e. R^{∇^φ}(E_i, γ̇, γ̇, E_j) with γ̇ = e^{2φ}σ′ for unit σ′.
fn weighted_normal_curvature(spec: &MetricDensitySpec, st: &GeoState) -> Result<(LocalGeometry, DMatrix<f64>)> {
    let lg = local_geometry(spec, &st.x)?;
    let (_, kp) = curvature_matrices(&lg, st);
    let sp2 = lg.inner(&st.v, &st.v);
    let f = (4.0 * lg.phi).exp() / sp2;
    Ok((lg, perp(&kp) * f))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

pub(crate) struct RauchData {
    grid: Vec<f64>,
    t: Vec<f64>,
    t_hat: Vec<f64>,
}

pub(crate) fn rauch_common(
    spec: &MetricDensitySpec,
    spec_hat: &MetricDensitySpec,
    geod: &GeodesicTrajectory,
    geod_hat: &GeodesicTrajectory,
    opts: &CheckOptions,
) -> Result<(RauchData, Value)> {
    if spec.dim != spec_hat.dim {
        return Err(WsecError::Config(format!("dimensions differ: {} vs {}", spec.dim, spec_hat.dim)));
    }
    if spec.dim < 2 {
        return Err(WsecError::Config("comparison needs dimension at least 2".into()));
    }
    let s_end = (geod.s_end() - geod.s_start()).min(geod_hat.s_end() - geod_hat.s_start());
    if !(s_end > 0.0) {
        return Err(WsecError::IntervalMismatch(format!(
            "s-lengths {} and {}",
            geod.s_end() - geod.s_start(),
            geod_hat.s_end() - geod_hat.s_start()
        )));
    }
    let grid = uniform_grid(0.0, s_end, opts.grid);
    let t: Vec<f64> = grid.iter().map(|s| geod.t_at_s(geod.s_start() + s)).collect();
    let t_hat: Vec<f64> = grid.iter().map(|s| geod_hat.t_at_s(geod_hat.s_start() + s)).collect();

    // sampled hypothesis R^φ(V,γ̇,γ̇,V) ≥ R̂^φ̂(V̂,γ̇̂,γ̇̂,V̂)
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let m = spec.dim - 1;
    let mut worst = f64::INFINITY;
    let mut worst_s = 0.0;
    for (i, s) in grid.iter().enumerate() {
        let (_, k) = weighted_normal_curvature(spec, &geod.state_at(t[i]))?;
        let (_, kh) = weighted_normal_curvature(spec_hat, &geod_hat.state_at(t_hat[i]))?;
        let d = k - kh;
        let mut dirs: Vec<Vec<f64>> = (0..m).map(|a| (0..m).map(|b| if a == b { 1.0 } else { 0.0 }).collect()).collect();
        for _ in 0..opts.planes {
            dirs.push(random_unit_vec(&mut rng, m));
        }
        for v in &dirs {
            let slack = quad(&d, v);
            if slack < worst {
                worst = slack;
                worst_s = *s;
            }
        }
    }
    if worst < -opts.hypothesis_tol {
        return Err(WsecError::HypothesisFailed(format!(
            "weighted curvature comparison violated by {:.3e} at s = {:.6}",
            -worst, worst_s
        )));
    }
    let meta = json!({
        "s_end": s_end,
        "grid": grid.len(),
        "planes_per_node": opts.planes + m,
        "seed": opts.seed,
        "hypothesis_worst_slack": worst,
        "hypothesis_worst_s": worst_s,
    });
    Ok((RauchData { grid, t, t_hat }, meta))
}

/// |J̇(0)| in the s-parameter: e^{2φ(0)}|J′(0)|.
fn s_derivative_norm(j: &JacobiTrajectory) -> f64 {
    let (_, b) = j.eval(j.t[0]);
    (2.0 * j.along.phi[0]).exp() * norm(&b)
}

fn check_normal(j: &JacobiTrajectory, label: &str) -> Result<f64> {
    let (a, b) = j.eval(j.t[0]);
    let scale = 1.0 + norm(&a) + norm(&b);
    let defect = (a[0].abs() + b[0].abs()) / scale;
    if defect > 1e-8 {
        return Err(WsecError::HypothesisFailed(format!("{label} is not normal to the geodesic (defect {defect:.3e})")));
    }
    Ok(defect)
}

/// First Rauch comparison: with J(0) = Ĵ(0) = 0 and |J̇(0)| = |Ĵ̇(0)|,
/// e^{φ(0)−φ(s)}|J(s)| ≤ e^{φ̂(0)−φ̂(s)}|Ĵ(s)|.
pub fn rauch1_check(
    spec: &MetricDensitySpec,
    spec_hat: &MetricDensitySpec,
    geod: &GeodesicTrajectory,
    geod_hat: &GeodesicTrajectory,
    j: &JacobiTrajectory,
    j_hat: &JacobiTrajectory,
    opts: &CheckOptions,
) -> Result<ComparisonVerdict> {
    let (a0, _) = j.eval(j.t[0]);
    let (ah0, _) = j_hat.eval(j_hat.t[0]);
    let (d, dh) = (s_derivative_norm(j), s_derivative_norm(j_hat));
    if norm(&a0) > 1e-8 || norm(&ah0) > 1e-8 {
        return Err(WsecError::HypothesisFailed("Jacobi fields must vanish at s = 0".into()));
    }
    if (d - dh).abs() > 1e-8 * d.max(dh).max(1.0) {
        return Err(WsecError::HypothesisFailed(format!("initial s-derivative norms differ: {d} vs {dh}")));
    }
    check_normal(j, "J")?;
    check_normal(j_hat, "J_hat")?;
    let (data, mut meta) = rauch_common(spec, spec_hat, geod, geod_hat, opts)?;
    let s_end = *data.grid.last().unwrap();
    for t in conjugate_points(spec, geod)? {
        let s = geod.s_at(t) - geod.s_start();
        if s < s_end * (1.0 - 1e-9) {
            return Err(WsecError::ConjugatePointInRange(s));
        }
    }
    let lhs = weighted_norms(spec, geod, j, &data.t);
    let rhs = weighted_norms(spec_hat, geod_hat, j_hat, &data.t_hat);
    let deriv = differential_margin(spec, spec_hat, geod, geod_hat, j, j_hat, &data);
    meta["derivative_worst_margin"] = json!(deriv);
    meta["initial_s_derivative"] = json!(d);
    Ok(ComparisonVerdict::new(Theorem::Rauch1, data.grid, lhs, rhs, opts.tol, meta))
}

/// e^{φ(0)−φ(t)}|J(t)| at the given parameters.
fn weighted_norms(spec: &MetricDensitySpec, traj: &GeodesicTrajectory, j: &JacobiTrajectory, ts: &[f64]) -> Vec<f64> {
    let phi0 = traj.phi[0];
    ts.iter()
        .map(|&t| {
            let x = traj.state_at(t).x;
            (phi0 - spec.phi(&x)).exp() * j.norm_at(t)
        })
        .collect()
}

/// v̇/v − 2dφ(γ̇) with v = |J|², in the s-parameter.
fn log_rate(spec: &MetricDensitySpec, traj: &GeodesicTrajectory, j: &JacobiTrajectory, t: f64) -> Option<f64> {
    let (a, b) = j.eval(t);
    let v: f64 = a.iter().map(|c| c * c).sum();
    if v < 1e-24 {
        return None;
    }
    let vt: f64 = 2.0 * a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>();
    let (phi, dphi) = traj.phi_dphi_at(spec, t);
    let e2 = (2.0 * phi).exp();
    Some(e2 * vt / v - 2.0 * e2 * dphi)
}

fn differential_margin(
    spec: &MetricDensitySpec,
    spec_hat: &MetricDensitySpec,
    geod: &GeodesicTrajectory,
    geod_hat: &GeodesicTrajectory,
    j: &JacobiTrajectory,
    j_hat: &JacobiTrajectory,
    data: &RauchData,
) -> f64 {
    let s_end = *data.grid.last().unwrap();
    let mut worst = f64::INFINITY;
    for i in 0..data.grid.len() {
        // near s = 0 both rates blow up like 2/s and cancel badly
        if data.grid[i] < 0.02 * s_end {
            continue;
        }
        if let (Some(l), Some(r)) = (log_rate(spec, geod, j, data.t[i]), log_rate(spec_hat, geod_hat, j_hat, data.t_hat[i])) {
            worst = worst.min(r - l);
        }
    }
    worst
}

/// τ(s) = ∫₀ˢ |e^{−φ̂}Ĵ|²(0) / |e^{−φ̂}Ĵ|²(ξ) dξ on `grid` (s measured from the start of `geod_hat`).
pub fn rauch2_tau(spec_hat: &MetricDensitySpec, geod_hat: &GeodesicTrajectory, j_hat: &JacobiTrajectory, grid: &[f64]) -> Vec<f64> {
    let s0 = geod_hat.s_start();
    let w = |s: f64| {
        let t = geod_hat.t_at_s(s0 + s);
        let x = geod_hat.state_at(t).x;
        (-2.0 * spec_hat.phi(&x)).exp() * j_hat.norm_at(t).powi(2)
    };
    let w0 = w(0.0);
    let mut out = Vec::with_capacity(grid.len());
    let mut acc = 0.0;
    let mut prev = 0.0;
    for &s in grid {
        if s > prev {
            acc += gl8(prev, s, |xi| w0 / w(xi));
        }
        out.push(acc);
        prev = s;
    }
    out
}

/// Second Rauch comparison: with J′(0) = Ĵ′(0) = 0 and |J(0)| = |Ĵ(0)|,
/// e^{φ(0)−φ(s)}|J(s)| ≤ e^{φ̂(0)−φ̂(s)}|Ĵ(s)|·e^{(dφ̂(γ̇̂(0)) − dφ(γ̇(0)))τ(s)}.
pub fn rauch2_check(
    spec: &MetricDensitySpec,
    spec_hat: &MetricDensitySpec,
    geod: &GeodesicTrajectory,
    geod_hat: &GeodesicTrajectory,
    j: &JacobiTrajectory,
    j_hat: &JacobiTrajectory,
    opts: &CheckOptions,
) -> Result<ComparisonVerdict> {
    let (a0, b0) = j.eval(j.t[0]);
    let (ah0, bh0) = j_hat.eval(j_hat.t[0]);
    if norm(&b0) > 1e-8 || norm(&bh0) > 1e-8 {
        return Err(WsecError::HypothesisFailed("Jacobi fields must have vanishing derivative at s = 0".into()));
    }
    let (n0, nh0) = (norm(&a0), norm(&ah0));
    if (n0 - nh0).abs() > 1e-8 * n0.max(nh0).max(1.0) {
        return Err(WsecError::HypothesisFailed(format!("initial norms differ: {n0} vs {nh0}")));
    }
    check_normal(j, "J")?;
    check_normal(j_hat, "J_hat")?;
    let (data, mut meta) = rauch_common(spec, spec_hat, geod, geod_hat, opts)?;
    let s_end = *data.grid.last().unwrap();

    // focal points of the family J(0) ⊥ σ′, J′(0) = 0
    let n = spec.dim;
    let a = DMatrix::from_fn(n, n - 1, |i, j| if i == j + 1 { 1.0 } else { 0.0 });
    let fam = integrate_jacobi_family(spec, geod, &a, &DMatrix::zeros(n, n - 1), &OdeOptions::default())?;
    for t in singular_times(&fam) {
        let s = geod.s_at(t) - geod.s_start();
        if s < s_end * (1.0 - 1e-9) {
            return Err(WsecError::FocalPointInRange(s));
        }
    }

    let tau = rauch2_tau(spec_hat, geod_hat, j_hat, &data.grid);
    let (phi0, dphi0) = geod.phi_dphi_at(spec, geod.t_start());
    let (phih0, dphih0) = geod_hat.phi_dphi_at(spec_hat, geod_hat.t_start());
    let c = (2.0 * phih0).exp() * dphih0 - (2.0 * phi0).exp() * dphi0;
    let lhs = weighted_norms(spec, geod, j, &data.t);
    let rhs: Vec<f64> = weighted_norms(spec_hat, geod_hat, j_hat, &data.t_hat)
        .into_iter()
        .zip(&tau)
        .map(|(r, ta)| r * (c * ta).exp())
        .collect();
    meta["exponent"] = json!(c);
    meta["tau_end"] = json!(tau.last().copied());
    Ok(ComparisonVerdict::new(Theorem::Rauch2, data.grid, lhs, rhs, opts.tol, meta))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundSide {
    Lower,
    Upper,
}

/// sec̄_φ ≥ value·e^{−4φ} (lower) or ≤ value·e^{−4φ} (upper) on the relevant planes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvatureBound {
    pub side: BoundSide,
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct HessianOptions {
    pub tol: f64,
    pub shooting: ShootingOptions,
    /// Central-difference step, scaled by max(1, |q|).
    pub fd_step: f64,
    /// Fixed steps of the flow realising the distance function.
    pub flow_steps: usize,
    /// Start of the Riccati evolution.
    pub riccati_s0: f64,
    /// Nodes along the geodesic for hypothesis sampling.
    pub hypothesis_nodes: usize,
    pub check: CheckOptions,
}

impl Default for HessianOptions {
    fn default() -> Self {
        HessianOptions {
            tol: 1e-5,
            shooting: ShootingOptions::default(),
            fd_step: 1e-4,
            flow_steps: 400,
            riccati_s0: 1e-3,
            hypothesis_nodes: 64,
            check: CheckOptions { planes: 16, ..Default::default() },
        }
    }
}

/// Checks (Hess r − dφ(∇r)g)(Y,Y) against e^{−2φ(q)}·cs_κ(s)/sn_κ(s), s = s(p,q),
/// with r = d(p, ·).
pub fn hessian_comparison_check(
    spec: &MetricDensitySpec,
    p: &[f64],
    q: &[f64],
    y: &[f64],
    bound: CurvatureBound,
    opts: &HessianOptions,
) -> Result<ComparisonVerdict> {
    let n = spec.dim;
    if n < 2 {
        return Err(WsecError::Config("comparison needs dimension at least 2".into()));
    }
    let conn = minimizing_geodesic(spec, p, q, &opts.shooting)?;
    if conn.length == 0.0 {
        return Err(WsecError::Config("p and q coincide".into()));
    }
    let traj = &conn.trajectory;
    let target = conn.target.clone();
    let end = traj.state_at(traj.t_end());
    let lg = local_geometry(spec, &target)?;
    let grad_r = end.v.clone();
    let yy = lg.inner(y, y);
    let yr = lg.inner(y, &grad_r);
    if (yy - 1.0).abs() > 1e-6 || yr.abs() > 1e-6 {
        return Err(WsecError::HypothesisFailed(format!("Y must be unit and orthogonal to grad r (|Y|² = {yy}, g(Y, grad r) = {yr})")));
    }

    // Hess r(Y,Y) by central differences on the fixed-step distance function
    let yc = norm(y);
    let dir: Vec<f64> = y.iter().map(|c| c / yc).collect();
    let qn = norm(&target);
    let h = opts.fd_step * qn.max(1.0);
    let (r0, w0) = smooth_distance(spec, p, &target, &conn.initial_velocity, opts.flow_steps)?;
    let shifted = |sgn: f64| -> Vec<f64> { target.iter().zip(&dir).map(|(a, b)| a + sgn * h * b).collect() };
    let (rp, _) = smooth_distance(spec, p, &shifted(1.0), &w0, opts.flow_steps)?;
    let (rm, _) = smooth_distance(spec, p, &shifted(-1.0), &w0, opts.flow_steps)?;
    let d2 = (rp - 2.0 * r0 + rm) / (h * h) * yc * yc;
    let dr: Vec<f64> = (0..n).map(|k| (0..n).map(|l| lg.g[(k, l)] * grad_r[l]).sum()).collect();
    let mut corr = 0.0;
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                corr += lg.gamma.get(k, i, j) * y[i] * y[j] * dr[k];
            }
        }
    }
    let hess = d2 - corr;
    let weighted = hess - lg.dphi_of(&grad_r) * yy;

    let s = conn.s_length;
    let model = ModelSpace::new(bound.value);
    if s >= model.first_zero() {
        return Err(WsecError::ModelDomain(format!("s(p,q) = {s} is past the first zero of sn_κ")));
    }
    let rhs_model = (-2.0 * lg.phi).exp() * model.ct(s);

    // Riccati route
    let m = n - 1;
    let s0 = opts.riccati_s0.min(0.1 * s);
    let start = DMatrix::identity(m, m) * model.ct(s0);
    let yf: Vec<f64> = end.frame[1..].iter().map(|e| lg.inner(y, e)).collect();
    let riccati = match radial_riccati(spec, traj, &start, (s0, s)) {
        Ok(prof) => Some((-2.0 * lg.phi).exp() * quad(&prof.eval(s), &yf)),
        Err(_) => None,
    };
    let two_route = riccati.map(|r| (r - weighted).abs());

    // radial-plane hypothesis along the geodesic
    let mut rng = ChaCha8Rng::seed_from_u64(opts.check.seed);
    let mut worst = f64::INFINITY;
    let nodes = opts.hypothesis_nodes.max(2);
    for i in 0..nodes {
        let t = traj.t_end() * i as f64 / (nodes - 1) as f64;
        let (_, k) = weighted_normal_curvature(spec, &traj.state_at(t))?;
        for _ in 0..opts.check.planes.max(1) {
            let z = random_unit_vec(&mut rng, m);
            let v = quad(&k, &z);
            let slack = match bound.side {
                BoundSide::Lower => v - bound.value,
                BoundSide::Upper => bound.value - v,
            };
            worst = worst.min(slack);
        }
    }
    if worst < -opts.check.hypothesis_tol {
        return Err(WsecError::HypothesisFailed(format!("radial weighted curvature bound violated by {:.3e}", -worst)));
    }
    let meta = json!({
        "s": s,
        "r": conn.length,
        "hess_r": hess,
        "fd_step": h,
        "riccati": riccati,
        "two_route_difference": two_route,
        "two_route_agree": two_route.map(|d| d <= 1e-4 * weighted.abs().max(1.0)),
        "min_index_eigenvalue": conn.min_index_eigenvalue,
        "near_cut_locus": conn.min_index_eigenvalue.map(|e| e < 1e-3),
        "hypothesis_worst_slack": worst,
        "hypothesis_samples": nodes * opts.check.planes.max(1),
        "seed": opts.check.seed,
    });
    let (theorem, lhs, rhs) = match bound.side {
        BoundSide::Lower => (Theorem::HessianLower, weighted, rhs_model),
        BoundSide::Upper => (Theorem::HessianUpper, rhs_model, weighted),
    };
    Ok(ComparisonVerdict::new(theorem, vec![s], vec![lhs], vec![rhs], opts.tol, meta))
}

/// Sampled solution of the weighted radial Riccati equation
/// dS/ds = −S² − e^{4φ}K^φ in the parallel normal frame.
#[derive(Clone, Debug, Default)]
pub struct RiccatiProfile {
    pub s: Vec<f64>,
    pub matrices: Vec<DMatrix<f64>>,
    dense: DenseSolution,
    dim: usize,
}

impl RiccatiProfile {
    pub fn eval(&self, s: f64) -> DMatrix<f64> {
        let (y, _) = self.dense.eval(s);
        DMatrix::from_column_slice(self.dim, self.dim, &y)
    }

    pub fn trace_at(&self, s: f64) -> f64 {
        self.eval(s).trace()
    }

    pub fn traces(&self) -> Vec<f64> {
        self.matrices.iter().map(|m| m.trace()).collect()
    }

    pub fn s_end(&self) -> f64 {
        self.s.last().copied().unwrap_or(0.0)
    }
}

/// Point-tube start value cs_κ(s₀)/sn_κ(s₀)·I.
pub fn point_tube_start(kappa: f64, s0: f64, m: usize) -> DMatrix<f64> {
    DMatrix::identity(m, m) * ModelSpace::new(kappa).ct(s0)
}

/// Integrate the Riccati equation along `traj` over `s_range` (s measured
/// from the start of the trajectory) from the symmetric start value `s0`.
pub fn radial_riccati(
    spec: &MetricDensitySpec,
    traj: &GeodesicTrajectory,
    s0: &DMatrix<f64>,
    s_range: (f64, f64),
) -> Result<RiccatiProfile> {
    let m = spec.dim - 1;
    if s0.nrows() != m || s0.ncols() != m {
        return Err(WsecError::Config(format!("start matrix must be {m}×{m}")));
    }
    if (s0 - s0.transpose()).amax() > 1e-12 * s0.amax().max(1.0) {
        return Err(WsecError::Config("start matrix must be symmetric".into()));
    }
    let (a, b) = s_range;
    let base = traj.s_start();
    if a < 0.0 || b > traj.s_end() - base + 1e-12 || b <= a {
        return Err(WsecError::IntervalMismatch(format!("[{a}, {b}] not inside [0, {}]", traj.s_end() - base)));
    }
    let rhs = |s: f64, y: &[f64], dy: &mut [f64]| {
        let t = traj.t_at_s(base + s);
        let Ok((_, k)) = weighted_normal_curvature(spec, &traj.state_at(t)) else {
            return false;
        };
        let sm = DMatrix::from_column_slice(m, m, y);
        let d = -(&sm * &sm) - k;
        dy.copy_from_slice(d.as_slice());
        true
    };
    let event = |_s: f64, y: &[f64]| y.iter().fold(0.0f64, |acc, v| acc.max(v.abs())) - 1e8;
    let opts = OdeOptions { rtol: 1e-10, atol: 1e-12, ..Default::default() };
    let (dense, status) = ode::integrate(rhs, a, s0.as_slice(), b, &opts, Some(&event));
    let profile = RiccatiProfile {
        s: dense.t.clone(),
        matrices: dense.y.iter().map(|y| DMatrix::from_column_slice(m, m, y)).collect(),
        dense,
        dim: m,
    };
    match status {
        OdeStatus::Complete => Ok(profile),
        OdeStatus::Event(s) => Err(WsecError::Blowup { at_s: s, partial: Box::new(profile) }),
        OdeStatus::DomainExit(s) | OdeStatus::StepFailure(s) => Err(WsecError::StepFailure(s)),
    }
}

#[derive(Clone, Debug)]
pub struct MyersOptions {
    pub tol: f64,
    pub seed: u64,
    pub shooting: ShootingOptions,
    /// Pairs checked in addition to the random ones.
    pub extra_pairs: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Default for MyersOptions {
    fn default() -> Self {
        MyersOptions {
            tol: 1e-4,
            seed: 0,
            shooting: ShootingOptions { restarts: 0, check_minimality: false, ..Default::default() },
            extra_pairs: Vec::new(),
        }
    }
}

/// Checks s(p,q) ≤ π/√κ over random pairs from the space's sampler.
pub fn myers_check(spec: &MetricDensitySpec, kappa_lower: f64, n_pairs: usize, opts: &MyersOptions) -> Result<ComparisonVerdict> {
    if !(kappa_lower > 0.0) {
        return Err(WsecError::Config(format!("Myers bound needs a positive curvature bound, got {kappa_lower}")));
    }
    let bound = PI / kappa_lower.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..n_pairs).map(|_| (spec.sample_point(&mut rng), spec.sample_point(&mut rng))).collect();
    pairs.extend(opts.extra_pairs.iter().cloned());
    let results: Vec<std::result::Result<f64, String>> = pairs
        .par_iter()
        .enumerate()
        .map(|(i, (p, q))| {
            let mut so = opts.shooting.clone();
            so.seed = opts.seed.wrapping_add(i as u64);
            reparametrized_distance(spec, p, q, &so).map_err(|e| e.to_string())
        })
        .collect();
    let mut grid = Vec::new();
    let mut lhs = Vec::new();
    let mut skipped = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(s) => {
                grid.push(i as f64);
                lhs.push(s);
            }
            Err(e) => skipped.push(json!({"pair": i, "reason": e})),
        }
    }
    let rhs = vec![bound; lhs.len()];
    let max_s = lhs.iter().copied().fold(0.0f64, f64::max);
    let meta = json!({
        "pairs": pairs.len(),
        "random_pairs": n_pairs,
        "extra_pairs": opts.extra_pairs.len(),
        "skipped": skipped,
        "max_s": max_s,
        "bound": bound,
        "seed": opts.seed,
        "restarts": opts.shooting.restarts,
    });
    Ok(ComparisonVerdict::new(Theorem::Myers, grid, lhs, rhs, opts.tol, meta))
}

/// Solution of h″ − a h′ = 1 with h(0) = h′(0) = 0.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModifiedDistanceProfile {
    pub a_bound: f64,
    pub t_max: f64,
    /// (t, h, h′) triples.
    pub h_samples: Vec<(f64, f64, f64)>,
}

impl ModifiedDistanceProfile {
    pub fn h(&self, t: f64) -> f64 {
        let a = self.a_bound;
        let x = a * t;
        if x.abs() < 1e-3 {
            0.5 * t * t * (1.0 + x / 3.0 + x * x / 12.0 + x * x * x / 60.0 + x.powi(4) / 360.0)
        } else {
            (x.exp_m1() - x) / (a * a)
        }
    }

    pub fn h1(&self, t: f64) -> f64 {
        let a = self.a_bound;
        if a == 0.0 {
            t
        } else {
            (a * t).exp_m1() / a
        }
    }

    pub fn h2(&self, t: f64) -> f64 {
        (self.a_bound * t).exp()
    }

    /// max |h″ − a h′ − 1| over the samples.
    pub fn residual(&self) -> f64 {
        self.h_samples
            .iter()
            .map(|&(t, _, h1)| (self.h2(t) - self.a_bound * h1 - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

pub fn build_modified_distance(a_bound: f64, t_max: f64) -> Result<ModifiedDistanceProfile> {
    if !(a_bound >= 0.0) || !(t_max > 0.0) {
        return Err(WsecError::Config(format!("need a ≥ 0 and T > 0, got a = {a_bound}, T = {t_max}")));
    }
    let mut prof = ModifiedDistanceProfile { a_bound, t_max, h_samples: Vec::new() };
    let samples = 257;
    prof.h_samples = (0..samples)
        .map(|i| {
            let t = t_max * i as f64 / (samples - 1) as f64;
            (t, prof.h(t), prof.h1(t))
        })
        .collect();
    Ok(prof)
}

#[derive(Clone, Debug)]
pub struct ConvexityOptions {
    pub tol: f64,
    /// Interior evaluation points per geodesic.
    pub points: usize,
    /// Finite-difference step in the g̃-arclength.
    pub fd_step: f64,
    pub flow_steps: usize,
    /// Points closer than this to p are skipped.
    pub min_r: f64,
    /// Random planes per point for the sec̄_φ ≤ 0 hypothesis.
    pub planes: usize,
    pub hypothesis_tol: f64,
    pub seed: u64,
}

impl Default for ConvexityOptions {
    fn default() -> Self {
        ConvexityOptions {
            tol: 1e-8,
            points: 8,
            fd_step: 1e-3,
            flow_steps: 100,
            min_r: 0.05,
            planes: 8,
            hypothesis_tol: 1e-8,
            seed: 0,
        }
    }
}

/// Geodesics of g̃ = e^{−2φ}g with g̃-unit speed, starting at points drawn
/// uniformly from the chart ball B(center, radius).
pub fn sample_tilde_geodesics(
    spec: &MetricDensitySpec,
    center: &[f64],
    radius: f64,
    count: usize,
    length: f64,
    seed: u64,
) -> Result<Vec<GeodesicTrajectory>> {
    let tilde = crate::manifold::conformal_involution(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.dim;
    let mut out = Vec::new();
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > 100 * count.max(1) {
            return Err(WsecError::Config("could not sample g̃-geodesics inside the domain".into()));
        }
        let d = random_unit_vec(&mut rng, n);
        let rad = radius * rng.gen::<f64>().powf(1.0 / n as f64);
        let x: Vec<f64> = center.iter().zip(&d).map(|(c, v)| c + rad * v).collect();
        if !spec.contains(&x) {
            continue;
        }
        let v = crate::geodesic::random_unit(&tilde, &x, &mut rng);
        match integrate_geodesic(&tilde, &x, &v, length, &GeodesicOptions::default()) {
            Ok(t) => out.push(t),
            Err(_) => continue,
        }
    }
    Ok(out)
}

/// Checks (u∘σ̃)″ − 2φ′(u∘σ̃)′ ≥ −tol with u = h∘r_p along g̃-geodesics σ̃.
pub fn weighted_convexity_check(
    spec: &MetricDensitySpec,
    p: &[f64],
    profile: &ModifiedDistanceProfile,
    tilde_geodesics: &[GeodesicTrajectory],
    opts: &ConvexityOptions,
) -> Result<ComparisonVerdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut hyp_worst = f64::NEG_INFINITY;
    let mut grid = Vec::new();
    let mut q_vals = Vec::new();
    let mut equiv: f64 = 0.0;
    let mut skipped = 0usize;
    let d = opts.fd_step;
    for traj in tilde_geodesics {
        let (t0, t1) = (traj.t_start(), traj.t_end());
        if t1 - t0 <= 6.0 * d {
            continue;
        }
        let mut warm: Option<Vec<f64>> = None;
        let dist = |x: &[f64], warm: &mut Option<Vec<f64>>| -> Result<f64> {
            let w0 = warm.clone().unwrap_or_else(|| x.iter().zip(p).map(|(a, b)| a - b).collect());
            let (r, w) = smooth_distance(spec, p, x, &w0, opts.flow_steps)?;
            *warm = Some(w);
            Ok(r)
        };
        for k in 0..opts.points {
            let t = t0 + 3.0 * d + (t1 - t0 - 6.0 * d) * (k as f64 + 0.5) / opts.points as f64;
            let st = traj.state_at(t);
            let lg = local_geometry(spec, &st.x)?;
            for _ in 0..opts.planes {
                let (u, v) = crate::manifold::random_orthonormal_pair(&lg, &mut rng);
                let w = lg.weighted_sectional(&u, &v, crate::manifold::CurvatureRoute::TensorFormula)?;
                hyp_worst = hyp_worst.max(w.value);
            }
            let mut ut = [0.0; 5];
            for (i, off) in [-2.0, -1.0, 0.0, 1.0, 2.0].iter().enumerate() {
                let x = traj.state_at(t + off * d).x;
                ut[i] = profile.h(dist(&x, &mut warm)?);
            }
            let r_here = dist(&st.x, &mut warm)?;
            if r_here < opts.min_r {
                skipped += 1;
                continue;
            }
            let u1 = (-ut[4] + 8.0 * ut[3] - 8.0 * ut[1] + ut[0]) / (12.0 * d);
            let u2 = (-ut[4] + 16.0 * ut[3] - 30.0 * ut[2] + 16.0 * ut[1] - ut[0]) / (12.0 * d * d);
            let dphi = lg.dphi_of(&st.v);
            let q = u2 - 2.0 * dphi * u1;

            // same quantity through the s-parameter, ds = e^{2φ} dt
            let s = traj.s_at(t);
            let ds = (2.0 * lg.phi).exp() * d;
            let mut us = [0.0; 5];
            for (i, off) in [-2.0, -1.0, 0.0, 1.0, 2.0].iter().enumerate() {
                let x = traj.state_at(traj.t_at_s(s + off * ds)).x;
                us[i] = profile.h(dist(&x, &mut warm)?);
            }
            let uss = (-us[4] + 16.0 * us[3] - 30.0 * us[2] + 16.0 * us[1] - us[0]) / (12.0 * ds * ds);
            let q_s = (4.0 * lg.phi).exp() * uss;
            equiv = equiv.max((q - q_s).abs());
            grid.push(s);
            q_vals.push(q);
        }
    }
    if hyp_worst > opts.hypothesis_tol {
        return Err(WsecError::HypothesisFailed(format!("sampled weighted sectional curvature {hyp_worst:.3e} > 0")));
    }
    if grid.is_empty() {
        return Err(WsecError::Config("no interior evaluation points".into()));
    }
    let meta = json!({
        "geodesics": tilde_geodesics.len(),
        "points": grid.len(),
        "skipped_near_p": skipped,
        "a_bound": profile.a_bound,
        "hypothesis_max_sec_phi": hyp_worst,
        "parameter_equivalence_max_diff": equiv,
        "min_second_derivative": q_vals.iter().copied().fold(f64::INFINITY, f64::min),
        "seed": opts.seed,
    });
    let lhs = vec![0.0; grid.len()];
    Ok(ComparisonVerdict::new(Theorem::Convexity, grid, lhs, q_vals, opts.tol, meta))
}
