//! Sampled estimates of the curvature bounds κ̲(a), K̄(a) and the pinching
//! ratio δ(a), optimized over linear families of densities.
//!
//! A family is the span of basis functions b_i; the density for parameters p
//! is φ = Σ p_i b_i + c, where the constant c is chosen by projection. At a
//! sample point and an orthonormal pair (U, V),
//! sec̄_φ(U,V) = sec(U,V) + Hess φ(U,U) + dφ(U)², which is quadratic in p.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WsecError};
use crate::jet::Jet;
use crate::manifold::{local_geometry, orthonormal_basis, random_orthonormal_pair, MetricDensitySpec, ScalarField};

pub const CAVEAT: &str = "sampled-resolution estimate over a parametric family";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignMode {
    /// φ ≤ 0 with max φ = 0.
    Nonpositive,
    /// φ ≥ 0 with min φ = 0.
    Nonnegative,
}

/// Linear span of basis densities plus a constant shift.
#[derive(Clone)]
pub struct DensityFamily {
    pub id: String,
    pub basis: Vec<ScalarField>,
    pub shift: f64,
}

impl std::fmt::Debug for DensityFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DensityFamily")
            .field("id", &self.id)
            .field("parameter_dim", &self.basis.len())
            .field("shift", &self.shift)
            .finish()
    }
}

impl DensityFamily {
    pub fn parameter_dim(&self) -> usize {
        self.basis.len()
    }

    /// Only φ ≡ shift.
    pub fn zero() -> Self {
        DensityFamily { id: "zero".into(), basis: Vec::new(), shift: 0.0 }
    }

    /// Monomials of total degree 1..=degree in x/scale, followed by the
    /// radial profile log(1 + |x/scale|²).
    pub fn polynomial(n: usize, degree: usize, scale: f64) -> Self {
        let mut basis: Vec<ScalarField> = Vec::new();
        for exps in monomial_exponents(n, degree) {
            basis.push(Arc::new(move |x: &[Jet]| {
                let mut v = Jet::constant(1.0);
                for (i, &e) in exps.iter().enumerate() {
                    if e > 0 {
                        v = v * x[i].scale(1.0 / scale).powi(e as i32);
                    }
                }
                v
            }));
        }
        basis.push(Arc::new(move |x: &[Jet]| {
            let mut r2 = Jet::constant(0.0);
            for &c in x {
                let y = c.scale(1.0 / scale);
                r2 += y * y;
            }
            (r2 + Jet::constant(1.0)).ln()
        }));
        DensityFamily { id: format!("polynomial(n={n},degree={degree})+radial"), basis, shift: 0.0 }
    }

    /// Trigonometric polynomials periodic on the box with the given periods.
    pub fn fourier(periods: &[f64], order: i32) -> Self {
        let n = periods.len();
        let mut basis: Vec<ScalarField> = Vec::new();
        let mut ks: Vec<Vec<i32>> = vec![vec![]];
        for _ in 0..n {
            ks = ks.iter().flat_map(|k| (-order..=order).map(move |c| [k.clone(), vec![c]].concat())).collect();
        }
        for k in ks {
            // one representative of each ±k pair
            let first = k.iter().find(|&&c| c != 0);
            if first.map_or(true, |&c| c < 0) {
                continue;
            }
            let w: Vec<f64> = k.iter().zip(periods).map(|(&c, &p)| 2.0 * std::f64::consts::PI * c as f64 / p).collect();
            let w2 = w.clone();
            basis.push(Arc::new(move |x: &[Jet]| phase(&w, x).cos()));
            basis.push(Arc::new(move |x: &[Jet]| phase(&w2, x).sin()));
        }
        DensityFamily { id: format!("fourier(order={order})"), basis, shift: 0.0 }
    }

    /// Fourier family on periodic charts, polynomials scaled to the sample cloud otherwise.
    pub fn default_for(spec: &MetricDensitySpec, budget: &SampleBudget) -> Self {
        if let Some(p) = &spec.periods {
            return Self::fourier(p, 2);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
        let r = (0..budget.points.max(1))
            .map(|_| spec.sample_point(&mut rng).iter().map(|c| c * c).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
            .max(1e-3);
        Self::polynomial(spec.dim, 4, r)
    }

    pub fn shifted(&self, c: f64) -> Self {
        let mut f = self.clone();
        f.shift += c;
        f
    }

    /// The density φ_p as a scalar field.
    pub fn density(&self, params: &[f64]) -> ScalarField {
        let basis = self.basis.clone();
        let p = params.to_vec();
        let shift = self.shift;
        Arc::new(move |x: &[Jet]| {
            let mut v = Jet::constant(shift);
            for (b, &c) in basis.iter().zip(&p) {
                if c != 0.0 {
                    v += b(x).scale(c);
                }
            }
            v
        })
    }
}

fn phase(w: &[f64], x: &[Jet]) -> Jet {
    let mut s = Jet::constant(0.0);
    for (wi, &xi) in w.iter().zip(x) {
        if *wi != 0.0 {
            s += xi.scale(*wi);
        }
    }
    s
}

fn monomial_exponents(n: usize, degree: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for d in 1..=degree {
        let mut stack: Vec<Vec<usize>> = vec![vec![]];
        for i in 0..n {
            let mut next = Vec::new();
            for e in stack {
                let used: usize = e.iter().sum();
                if i + 1 == n {
                    let mut e2 = e.clone();
                    e2.push(d - used);
                    next.push(e2);
                } else {
                    for k in 0..=(d - used) {
                        let mut e2 = e.clone();
                        e2.push(k);
                        next.push(e2);
                    }
                }
            }
            stack = next;
        }
        out.extend(stack);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleBudget {
    pub points: usize,
    /// Random planes per point, on top of the ordered coordinate-frame pairs.
    pub planes: usize,
    pub seed: u64,
}

impl Default for SampleBudget {
    fn default() -> Self {
        SampleBudget { points: 96, planes: 8, seed: 0 }
    }
}

/// Basis data at one point: values, g-norm Gram of differentials, and per
/// plane the classical curvature with dφ(U), Hess φ(U,U) of each basis element.
struct PointData {
    x: Vec<f64>,
    values: Vec<f64>,
    /// dB_i as covectors, for |dφ|_g.
    dvals: Vec<Vec<f64>>,
    g_inv: DMatrix<f64>,
    sec: Vec<f64>,
    du: Vec<Vec<f64>>,
    huu: Vec<Vec<f64>>,
}

fn point_data(spec: &MetricDensitySpec, family: &DensityFamily, x: &[f64], planes: usize, rng: &mut ChaCha8Rng) -> Result<PointData> {
    let lg = local_geometry(spec, x)?;
    let n = spec.dim;
    let frame = orthonormal_basis(&lg.g, None);
    let mut pairs: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                pairs.push((frame[i].clone(), frame[j].clone()));
            }
        }
    }
    for _ in 0..planes {
        pairs.push(random_orthonormal_pair(&lg, rng));
    }
    let seeded = Jet::seed(x, 2);
    let jets: Vec<Jet> = family.basis.iter().map(|b| b(&seeded)).collect();
    let values = jets.iter().map(|j| j.value()).collect();
    let dvals: Vec<Vec<f64>> = jets.iter().map(|j| (0..n).map(|i| j.grad(i)).collect()).collect();
    let hess: Vec<DMatrix<f64>> = jets
        .iter()
        .map(|j| {
            DMatrix::from_fn(n, n, |a, b| {
                let mut h = j.hess(a, b);
                for k in 0..n {
                    h -= lg.gamma.get(k, a, b) * j.grad(k);
                }
                h
            })
        })
        .collect();
    let mut sec = Vec::with_capacity(pairs.len());
    let mut du = Vec::with_capacity(pairs.len());
    let mut huu = Vec::with_capacity(pairs.len());
    // the shift is constant, so only the metric part and the basis enter
    for (u, v) in &pairs {
        sec.push(lg.sectional(u, v)?);
        du.push(dvals.iter().map(|d| d.iter().zip(u).map(|(a, b)| a * b).sum()).collect());
        huu.push(
            hess.iter()
                .map(|h| {
                    let mut s = 0.0;
                    for a in 0..n {
                        for b in 0..n {
                            s += u[a] * h[(a, b)] * u[b];
                        }
                    }
                    s
                })
                .collect(),
        );
    }
    Ok(PointData { x: x.to_vec(), values, dvals, g_inv: lg.g_inv, sec, du, huu })
}

fn dotp(p: &[f64], v: &[f64]) -> f64 {
    p.iter().zip(v).map(|(a, b)| a * b).sum()
}

impl PointData {
    fn phi(&self, p: &[f64]) -> f64 {
        dotp(p, &self.values)
    }

    fn dphi_norm(&self, p: &[f64]) -> f64 {
        let n = self.g_inv.nrows();
        let d: Vec<f64> = (0..n).map(|i| self.dvals.iter().zip(p).map(|(dv, c)| c * dv[i]).sum()).collect();
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += d[i] * self.g_inv[(i, j)] * d[j];
            }
        }
        s.sqrt()
    }

    /// sec̄_φ on each plane.
    fn weighted(&self, p: &[f64]) -> impl Iterator<Item = f64> + '_ {
        let p = p.to_vec();
        (0..self.sec.len()).map(move |k| {
            let d = dotp(&p, &self.du[k]);
            self.sec[k] + dotp(&p, &self.huu[k]) + d * d
        })
    }
}

/// Sampled extremes of sec̄_φ and of e^{4φ}sec̄_φ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSample {
    pub min_e4sec: f64,
    pub max_e4sec: f64,
    pub min_sec: f64,
    pub max_sec: f64,
}

struct Samples {
    points: Vec<PointData>,
}

impl Samples {
    fn new(spec: &MetricDensitySpec, family: &DensityFamily, budget: &SampleBudget) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
        let xs: Vec<Vec<f64>> = (0..budget.points).map(|_| spec.sample_point(&mut rng)).collect();
        let seeds: Vec<u64> = (0..xs.len()).map(|_| rng.gen()).collect();
        let points = xs
            .par_iter()
            .zip(&seeds)
            .map(|(x, &s)| point_data(spec, family, x, budget.planes, &mut ChaCha8Rng::seed_from_u64(s)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Samples { points })
    }

    fn evaluate(&self, p: &[f64], shift: f64) -> ObjectiveSample {
        let mut o = ObjectiveSample {
            min_e4sec: f64::INFINITY,
            max_e4sec: f64::NEG_INFINITY,
            min_sec: f64::INFINITY,
            max_sec: f64::NEG_INFINITY,
        };
        for pd in &self.points {
            let e4 = (4.0 * (pd.phi(p) + shift)).exp();
            for s in pd.weighted(p) {
                o.min_sec = o.min_sec.min(s);
                o.max_sec = o.max_sec.max(s);
                o.min_e4sec = o.min_e4sec.min(e4 * s);
                o.max_e4sec = o.max_e4sec.max(e4 * s);
            }
        }
        o
    }

    /// Scale p onto |dφ|_g ≤ a, then the constant fixing the sign mode.
    fn project(&self, p: &[f64], a: f64, mode: SignMode) -> (Vec<f64>, f64) {
        let d = self.points.iter().map(|pd| pd.dphi_norm(p)).fold(0.0, f64::max);
        let q: Vec<f64> = if d > a { p.iter().map(|c| c * a / d).collect() } else { p.to_vec() };
        let vals = self.points.iter().map(|pd| pd.phi(&q));
        let shift = match mode {
            SignMode::Nonpositive => -vals.fold(f64::NEG_INFINITY, f64::max),
            SignMode::Nonnegative => -vals.fold(f64::INFINITY, f64::min),
        };
        (q, if shift.is_finite() { shift } else { 0.0 })
    }
}

/// min and max of e^{4φ(p)}sec̄_φ(U,V) over `budget.points` random points
/// and, per point, the ordered coordinate-frame pairs plus `budget.planes`
/// random orthonormal pairs. The family shift is included in φ.
pub fn sample_objective(
    spec: &MetricDensitySpec,
    family: &DensityFamily,
    params: &[f64],
    budget: &SampleBudget,
) -> Result<ObjectiveSample> {
    if params.len() != family.parameter_dim() {
        return Err(WsecError::Config(format!(
            "family {} expects {} parameters, got {}",
            family.id,
            family.parameter_dim(),
            params.len()
        )));
    }
    Ok(Samples::new(spec, family, budget)?.evaluate(params, family.shift))
}

#[derive(Clone, Debug)]
pub struct OptimizerOptions {
    pub restarts: usize,
    pub initial_step: f64,
    pub min_step: f64,
    pub max_evals: usize,
    /// Temperature of the log-sum-exp soft extreme used by the polish.
    pub temperature: f64,
    pub polish_iters: usize,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions {
            restarts: 8,
            initial_step: 0.5,
            min_step: 1e-3,
            max_evals: 4000,
            temperature: 1e-2,
            polish_iters: 20,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    KappaLower,
    KUpper,
    Delta,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TraceEntry {
    pub phase: String,
    pub restart: usize,
    pub evaluations: usize,
    pub best: f64,
    pub stalled: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundEstimate {
    pub kind: BoundKind,
    pub value: f64,
    pub a: f64,
    pub family_id: String,
    pub sample_budget: SampleBudget,
    pub optimizer_trace: Vec<TraceEntry>,
    /// Whether the strict-sign phase (PWSC for κ̲, NWSC for K̄) succeeded.
    pub sign_phase_succeeded: bool,
    pub sign_mode: Option<SignMode>,
    pub params: Vec<f64>,
    pub shift: f64,
    /// Set when the optimizer ran out of evaluations before converging.
    pub stalled: bool,
    pub caveat: String,
}

/// Quantity being maximized; K̄ problems are negated.
#[derive(Clone, Copy)]
enum Goal {
    MinSec,
    MinE4,
    NegMaxSec,
    NegMaxE4,
}

impl Goal {
    fn of(self, o: &ObjectiveSample) -> f64 {
        match self {
            Goal::MinSec => o.min_sec,
            Goal::MinE4 => o.min_e4sec,
            Goal::NegMaxSec => -o.max_sec,
            Goal::NegMaxE4 => -o.max_e4sec,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Goal::MinSec => "max min sec_phi",
            Goal::MinE4 => "max min e4phi sec_phi",
            Goal::NegMaxSec => "min max sec_phi",
            Goal::NegMaxE4 => "min max e4phi sec_phi",
        }
    }

    fn soft(self, s: &Samples, p: &[f64], shift: f64, temp: f64) -> f64 {
        let mut vals: Vec<f64> = Vec::new();
        for pd in &s.points {
            let e4 = (4.0 * (pd.phi(p) + shift)).exp();
            for w in pd.weighted(p) {
                vals.push(match self {
                    Goal::MinSec => w,
                    Goal::MinE4 => e4 * w,
                    Goal::NegMaxSec => -w,
                    Goal::NegMaxE4 => -e4 * w,
                });
            }
        }
        // soft minimum −T log Σ exp(−v/T)
        let m = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let acc: f64 = vals.iter().map(|v| (-(v - m) / temp).exp()).sum();
        m - temp * acc.ln()
    }
}

struct Problem<'a> {
    samples: &'a Samples,
    a: f64,
    mode: SignMode,
    goal: Goal,
}

impl Problem<'_> {
    fn value(&self, p: &[f64]) -> (f64, Vec<f64>, f64) {
        let (q, shift) = self.samples.project(p, self.a, self.mode);
        let v = self.goal.of(&self.samples.evaluate(&q, shift));
        (v, q, shift)
    }
}

struct RunResult {
    best: f64,
    params: Vec<f64>,
    evals: usize,
    stalled: bool,
}

fn pattern_search(prob: &Problem, start: Vec<f64>, opts: &OptimizerOptions) -> RunResult {
    let k = start.len();
    let (mut best, mut x, _) = prob.value(&start);
    let mut evals = 1;
    let mut step = opts.initial_step;
    let mut stalled = false;
    while step >= opts.min_step && k > 0 {
        let mut improved = false;
        for i in 0..k {
            for dir in [1.0, -1.0] {
                if evals >= opts.max_evals {
                    stalled = true;
                    break;
                }
                let mut y = x.clone();
                y[i] += dir * step;
                let (v, q, _) = prob.value(&y);
                evals += 1;
                if v > best + 1e-15 {
                    best = v;
                    x = q;
                    improved = true;
                    break;
                }
            }
        }
        if stalled {
            break;
        }
        if !improved {
            step *= 0.5;
        }
    }
    // soft-extreme polish with central-difference gradients
    let mut t = opts.initial_step * 0.1;
    for _ in 0..opts.polish_iters {
        if k == 0 || evals >= opts.max_evals {
            break;
        }
        let (q0, sh0) = prob.samples.project(&x, prob.a, prob.mode);
        let f0 = prob.goal.soft(prob.samples, &q0, sh0, opts.temperature);
        let h = 1e-6;
        let grad: Vec<f64> = (0..k)
            .map(|i| {
                let mut xp = q0.clone();
                let mut xm = q0.clone();
                xp[i] += h;
                xm[i] -= h;
                let (a, sa) = prob.samples.project(&xp, prob.a, prob.mode);
                let (b, sb) = prob.samples.project(&xm, prob.a, prob.mode);
                (prob.goal.soft(prob.samples, &a, sa, opts.temperature) - prob.goal.soft(prob.samples, &b, sb, opts.temperature))
                    / (2.0 * h)
            })
            .collect();
        evals += 2 * k;
        let gn = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !(gn > 1e-12) || !f0.is_finite() {
            break;
        }
        let mut accepted = false;
        while t > 1e-8 {
            let y: Vec<f64> = q0.iter().zip(&grad).map(|(a, g)| a + t * g / gn).collect();
            let (v, q, _) = prob.value(&y);
            evals += 1;
            if v > best + 1e-15 {
                best = v;
                x = q;
                accepted = true;
                t *= 2.0;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    RunResult { best, params: x, evals, stalled }
}

/// Critical points of φ reached by gradient ascent (descent) from the
/// sampled maximizer (minimizer), kept when they lie inside the bounding box
/// of the samples. At such points Hess φ is semidefinite, which the sampled
/// extremes would otherwise miss.
fn critical_points(spec: &MetricDensitySpec, family: &DensityFamily, samples: &Samples, p: &[f64]) -> Vec<Vec<f64>> {
    if p.iter().all(|c| *c == 0.0) || samples.points.is_empty() {
        return Vec::new();
    }
    let n = spec.dim;
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for pd in &samples.points {
        for i in 0..n {
            lo[i] = lo[i].min(pd.x[i]);
            hi[i] = hi[i].max(pd.x[i]);
        }
    }
    let dens = family.density(p);
    let mut out = Vec::new();
    for sign in [1.0, -1.0] {
        let start = samples
            .points
            .iter()
            .max_by(|a, b| (sign * a.phi(p)).partial_cmp(&(sign * b.phi(p))).unwrap())
            .map(|pd| pd.x.clone())
            .unwrap();
        let eval = |x: &[f64]| -> Option<(f64, Vec<f64>, DMatrix<f64>)> {
            if !spec.contains(x) {
                return None;
            }
            let j = dens(&Jet::seed(x, 2));
            let grad = (0..n).map(|i| sign * j.grad(i)).collect();
            let hess = DMatrix::from_fn(n, n, |a, b| sign * j.hess(a, b));
            Some((sign * j.value(), grad, hess))
        };
        let mut x = start;
        let mut ok = false;
        for _ in 0..100 {
            let Some((f, g, h)) = eval(&x) else { break };
            let gn = g.iter().map(|c| c * c).sum::<f64>().sqrt();
            if gn < 1e-10 {
                ok = true;
                break;
            }
            // Newton step when the Hessian is negative definite, gradient step otherwise
            let gv = nalgebra::DVector::from_column_slice(&g);
            let newton = (-h.clone()).cholesky().map(|c| c.solve(&gv));
            let dir: Vec<f64> = match newton {
                Some(d) => d.iter().copied().collect(),
                None => g.clone(),
            };
            let mut t = 1.0;
            let mut moved = false;
            while t > 1e-12 {
                let y: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
                if let Some((fy, _, _)) = eval(&y) {
                    if fy > f {
                        x = y;
                        moved = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !moved {
                ok = gn < 1e-6;
                break;
            }
        }
        if let Some(per) = &spec.periods {
            for (c, l) in x.iter_mut().zip(per) {
                *c = c.rem_euclid(*l);
            }
        }
        let inside = x.iter().enumerate().all(|(i, c)| *c >= lo[i] && *c <= hi[i]);
        if ok && inside {
            out.push(x);
        }
    }
    out
}

fn optimize_phase(
    spec: &MetricDensitySpec,
    family: &DensityFamily,
    samples: &Samples,
    a: f64,
    mode: SignMode,
    goal: Goal,
    warm: Option<&[f64]>,
    budget: &SampleBudget,
    opts: &OptimizerOptions,
    trace: &mut Vec<TraceEntry>,
) -> Result<(f64, Vec<f64>, f64, bool)> {
    let k = family.parameter_dim();
    let prob = Problem { samples, a, mode, goal };
    let starts: Vec<Vec<f64>> = (0..opts.restarts.max(1))
        .map(|r| {
            if r == 0 {
                warm.map_or(vec![0.0; k], |w| w.to_vec())
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(budget.seed.wrapping_add(1000 + r as u64));
                (0..k).map(|_| 0.3 * rng.sample::<f64, _>(StandardNormal)).collect()
            }
        })
        .collect();
    let runs: Vec<RunResult> = starts.into_par_iter().map(|s| pattern_search(&prob, s, opts)).collect();
    let mut best_idx = 0;
    for (i, r) in runs.iter().enumerate() {
        trace.push(TraceEntry {
            phase: format!("{} ({:?})", goal.name(), mode),
            restart: i,
            evaluations: r.evals,
            best: r.best,
            stalled: r.stalled,
        });
        if r.best > runs[best_idx].best {
            best_idx = i;
        }
    }
    let run = &runs[best_idx];
    // re-evaluate with the critical points of φ added to the samples
    let extra = critical_points(spec, family, samples, &run.params);
    let mut verified = Samples { points: Vec::new() };
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed ^ 0x5eed);
    for x in &extra {
        verified.points.push(point_data(spec, family, x, budget.planes, &mut rng)?);
    }
    let all = Samples { points: samples.points.iter().chain(verified.points.iter()).map(clone_pd).collect() };
    let (q, shift) = all.project(&run.params, a, mode);
    let value = goal.of(&all.evaluate(&q, shift));
    Ok((value, q, shift, run.stalled))
}

fn clone_pd(p: &PointData) -> PointData {
    PointData {
        x: p.x.clone(),
        values: p.values.clone(),
        dvals: p.dvals.clone(),
        g_inv: p.g_inv.clone(),
        sec: p.sec.clone(),
        du: p.du.clone(),
        huu: p.huu.clone(),
    }
}

/// κ̲(a): PWSC phase over φ ≤ 0 first, the nonnegative branch otherwise.
pub fn estimate_kappa_lower(
    spec: &MetricDensitySpec,
    family: &DensityFamily,
    a: f64,
    budget: &SampleBudget,
    opts: &OptimizerOptions,
) -> Result<BoundEstimate> {
    estimate(spec, family, a, budget, opts, BoundKind::KappaLower)
}

/// K̄(a): NWSC phase over φ ≤ 0 first, the nonnegative branch otherwise.
pub fn estimate_k_upper(
    spec: &MetricDensitySpec,
    family: &DensityFamily,
    a: f64,
    budget: &SampleBudget,
    opts: &OptimizerOptions,
) -> Result<BoundEstimate> {
    estimate(spec, family, a, budget, opts, BoundKind::KUpper)
}

fn estimate(
    spec: &MetricDensitySpec,
    family: &DensityFamily,
    a: f64,
    budget: &SampleBudget,
    opts: &OptimizerOptions,
    kind: BoundKind,
) -> Result<BoundEstimate> {
    if !(a >= 0.0) {
        return Err(WsecError::Config(format!("derivative bound a must be nonnegative, got {a}")));
    }
    let samples = Samples::new(spec, family, budget)?;
    let lower = kind == BoundKind::KappaLower;
    let (strict, scaled) = if lower { (Goal::MinSec, Goal::MinE4) } else { (Goal::NegMaxSec, Goal::NegMaxE4) };
    let mut trace = Vec::new();
    let (sv, sp, _, st1) =
        optimize_phase(spec, family, &samples, a, SignMode::Nonpositive, strict, None, budget, opts, &mut trace)?;
    let succeeded = sv > 0.0;
    let (mode, warm) = if succeeded { (SignMode::Nonpositive, Some(sp)) } else { (SignMode::Nonnegative, None) };
    let (v, params, shift, st2) =
        optimize_phase(spec, family, &samples, a, mode, scaled, warm.as_deref(), budget, opts, &mut trace)?;
    Ok(BoundEstimate {
        kind,
        value: if lower { v } else { -v },
        a,
        family_id: family.id.clone(),
        sample_budget: *budget,
        optimizer_trace: trace,
        sign_phase_succeeded: succeeded,
        sign_mode: Some(mode),
        params,
        shift,
        stalled: st1 || st2,
        caveat: CAVEAT.to_string(),
    })
}

/// δ(a) = κ̲(a)/K̄(a) from the two estimates on the same samples.
pub fn pinching(
    spec: &MetricDensitySpec,
    family: &DensityFamily,
    a: f64,
    budget: &SampleBudget,
    opts: &OptimizerOptions,
) -> Result<(BoundEstimate, BoundEstimate, BoundEstimate)> {
    let lo = estimate_kappa_lower(spec, family, a, budget, opts)?;
    if !(lo.value > 0.0) {
        return Err(WsecError::NotPositivelyCurved(lo.value));
    }
    let hi = estimate_k_upper(spec, family, a, budget, opts)?;
    let mut trace = lo.optimizer_trace.clone();
    trace.extend(hi.optimizer_trace.iter().cloned());
    let delta = BoundEstimate {
        kind: BoundKind::Delta,
        value: lo.value / hi.value,
        a,
        family_id: family.id.clone(),
        sample_budget: *budget,
        optimizer_trace: trace,
        sign_phase_succeeded: lo.sign_phase_succeeded,
        sign_mode: None,
        params: Vec::new(),
        shift: 0.0,
        stalled: lo.stalled || hi.stalled,
        caveat: format!("{CAVEAT}; ratio of two such estimates"),
    };
    Ok((lo, hi, delta))
}
