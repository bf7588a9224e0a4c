//! Geodesics with their standard reparametrization, parallel frames, Jacobi
//! fields, conjugate points, index forms and the two-point problem.
//!
//! Geodesics are integrated in the g-parameter t. The reparametrized
//! parameter s(t) = ∫ e^{-2φ} dt is carried along as an extra state
//! component, together with a parallel orthonormal frame whose first vector
//! is tangent.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, WsecError};
use crate::manifold::{
    christoffel, g_inner, invert_metric, local_geometry, orthonormal_basis, raw_derivs, LocalGeometry,
    MetricDensitySpec, MetricField, Tensor3,
};
use crate::ode::{self, DenseSolution, OdeOptions, OdeStatus};
use crate::quadrature::gl8_nodes;

#[derive(Clone, Debug)]
pub struct GeodesicOptions {
    pub ode: OdeOptions,
    /// Stop as soon as the reparametrized parameter reaches this value.
    pub stop_at_s: Option<f64>,
}

impl Default for GeodesicOptions {
    fn default() -> Self {
        GeodesicOptions { ode: OdeOptions::default(), stop_at_s: None }
    }
}

pub(crate) struct FirstOrder {
    pub gamma: Tensor3,
    pub phi: f64,
}

pub(crate) fn first_order(spec: &MetricDensitySpec, x: &[f64]) -> Option<FirstOrder> {
    if !spec.contains(x) {
        return None;
    }
    let d = raw_derivs(spec, x, false);
    let g_inv = invert_metric(&d.g, x).ok()?;
    let gamma = christoffel(&g_inv, &d.dg);
    Some(FirstOrder { gamma, phi: d.phi })
}

fn gamma_contract(gamma: &Tensor3, k: usize, a: &[f64], b: &[f64]) -> f64 {
    let n = gamma.n;
    let mut s = 0.0;
    for i in 0..n {
        if a[i] == 0.0 {
            continue;
        }
        for j in 0..n {
            s += gamma.get(k, i, j) * a[i] * b[j];
        }
    }
    s
}

/// Right-hand side for the state (x, v, s[, frame]).
fn geodesic_rhs(spec: &MetricDensitySpec, with_frame: bool, y: &[f64], dy: &mut [f64]) -> bool {
    let n = spec.dim;
    let (x, v) = (&y[..n], &y[n..2 * n]);
    let Some(fo) = first_order(spec, x) else {
        return false;
    };
    dy[..n].copy_from_slice(v);
    for k in 0..n {
        dy[n + k] = -gamma_contract(&fo.gamma, k, v, v);
    }
    dy[2 * n] = (-2.0 * fo.phi).exp();
    if with_frame {
        for a in 0..n {
            let off = 2 * n + 1 + a * n;
            let e = &y[off..off + n];
            for k in 0..n {
                dy[off + k] = -gamma_contract(&fo.gamma, k, v, e);
            }
        }
    }
    dy.iter().all(|c| c.is_finite())
}

/// Interpolated state of a geodesic.
#[derive(Clone, Debug)]
pub struct GeoState {
    pub t: f64,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub accel: Vec<f64>,
    pub s: f64,
    /// Parallel orthonormal frame, `frame[0]` parallel to v.
    pub frame: Vec<Vec<f64>>,
}

impl GeoState {
    /// Frame vectors as the columns of an n×n matrix.
    pub fn frame_matrix(&self) -> DMatrix<f64> {
        let n = self.x.len();
        DMatrix::from_fn(n, n, |i, a| self.frame[a][i])
    }
}

#[derive(Clone, Debug)]
pub struct GeodesicTrajectory {
    pub spec_name: String,
    pub dim: usize,
    pub t: Vec<f64>,
    pub positions: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
    pub s: Vec<f64>,
    pub phi: Vec<f64>,
    /// g-norm of the initial velocity.
    pub speed: f64,
    pub complete: bool,
    dense: DenseSolution,
    metric: MetricHolder,
}

#[derive(Clone)]
struct MetricHolder(MetricField);

impl std::fmt::Debug for MetricHolder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("MetricField")
    }
}

impl GeodesicTrajectory {
    fn from_dense(spec: &MetricDensitySpec, dense: DenseSolution, speed: f64, complete: bool) -> Self {
        let n = spec.dim;
        let positions: Vec<Vec<f64>> = dense.y.iter().map(|y| y[..n].to_vec()).collect();
        let phi = positions.iter().map(|x| spec.phi(x)).collect();
        GeodesicTrajectory {
            spec_name: spec.name.clone(),
            dim: n,
            t: dense.t.clone(),
            velocities: dense.y.iter().map(|y| y[n..2 * n].to_vec()).collect(),
            s: dense.y.iter().map(|y| y[2 * n]).collect(),
            positions,
            phi,
            speed,
            complete,
            dense,
            metric: MetricHolder(spec.metric.clone()),
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn t_start(&self) -> f64 {
        self.t[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.t.last().unwrap()
    }

    pub fn s_start(&self) -> f64 {
        self.s[0]
    }

    pub fn s_end(&self) -> f64 {
        *self.s.last().unwrap()
    }

    pub fn has_frame(&self) -> bool {
        self.dense.y[0].len() > 2 * self.dim + 1
    }

    fn unpack(&self, t: f64, y: &[f64], dy: &[f64]) -> GeoState {
        let n = self.dim;
        let mut frame: Vec<Vec<f64>> = if y.len() > 2 * n + 1 {
            (0..n).map(|a| y[2 * n + 1 + a * n..2 * n + 1 + (a + 1) * n].to_vec()).collect()
        } else {
            Vec::new()
        };
        if !frame.is_empty() {
            // interpolation drifts off orthonormality between nodes
            let m = (self.metric.0)(&crate::jet::Jet::consts(&y[..n]));
            let g = DMatrix::from_fn(n, n, |i, j| m[i * n + j].value());
            for a in 0..n {
                for b in 0..a {
                    let c = g_inner(&g, &frame[a], &frame[b]);
                    let (head, tail) = frame.split_at_mut(a);
                    for k in 0..n {
                        tail[0][k] -= c * head[b][k];
                    }
                }
                let l = g_inner(&g, &frame[a], &frame[a]).sqrt();
                frame[a].iter_mut().for_each(|c| *c /= l);
            }
        }
        GeoState {
            t,
            x: y[..n].to_vec(),
            v: y[n..2 * n].to_vec(),
            accel: dy[n..2 * n].to_vec(),
            s: y[2 * n],
            frame,
        }
    }

    /// State at sample `i`.
    pub fn sample(&self, i: usize) -> GeoState {
        self.unpack(self.t[i], &self.dense.y[i], &self.dense.dy[i])
    }

    /// Cubic Hermite interpolated state at `t`.
    pub fn state_at(&self, t: f64) -> GeoState {
        let (y, dy) = self.dense.eval(t);
        self.unpack(t, &y, &dy)
    }

    pub fn s_at(&self, t: f64) -> f64 {
        let (y, _) = self.dense.eval(t);
        y[2 * self.dim]
    }

    /// Inverse of s(t) on the sampled range.
    pub fn t_at_s(&self, s: f64) -> f64 {
        if s <= self.s[0] {
            return self.t[0];
        }
        if s >= self.s_end() {
            return self.t_end();
        }
        let i = match self.s.binary_search_by(|a| a.partial_cmp(&s).unwrap()) {
            Ok(i) => return self.t[i],
            Err(i) => i - 1,
        };
        let (mut a, mut b) = (self.t[i], self.t[i + 1]);
        // Newton on the Hermite interpolant, safeguarded by bisection.
        let mut t = a + (b - a) * (s - self.s[i]) / (self.s[i + 1] - self.s[i]);
        for _ in 0..60 {
            let (y, dy) = self.dense.eval(t);
            let f = y[2 * self.dim] - s;
            if f.abs() < 1e-15 {
                break;
            }
            if f > 0.0 {
                b = t;
            } else {
                a = t;
            }
            let newton = t - f / dy[2 * self.dim];
            t = if newton > a && newton < b { newton } else { 0.5 * (a + b) };
            if b - a < 1e-15 * (1.0 + t.abs()) {
                break;
            }
        }
        t
    }

    /// φ(σ(t)) and dφ(σ′(t)).
    pub fn phi_dphi_at(&self, spec: &MetricDensitySpec, t: f64) -> (f64, f64) {
        let st = self.state_at(t);
        phi_dphi(spec, &st.x, &st.v)
    }

    /// CSV with header `t,s,phi,x_1..x_n,v_1..v_n`, values in `%.12e` form.
    pub fn to_csv(&self) -> String {
        let n = self.dim;
        let mut out = String::from("t,s,phi");
        for i in 1..=n {
            out.push_str(&format!(",x_{i}"));
        }
        for i in 1..=n {
            out.push_str(&format!(",v_{i}"));
        }
        out.push('\n');
        for i in 0..self.len() {
            let mut row = vec![self.t[i], self.s[i], self.phi[i]];
            row.extend_from_slice(&self.positions[i]);
            row.extend_from_slice(&self.velocities[i]);
            let cells: Vec<String> = row.iter().map(|&v| c_exp(v)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// C-style `%.12e`.
pub fn c_exp(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    let s = format!("{v:.12e}");
    let (mant, exp) = s.split_once('e').unwrap();
    let e: i32 = exp.parse().unwrap();
    let sign = if e < 0 { '-' } else { '+' };
    format!("{mant}e{sign}{:02}", e.abs())
}

pub(crate) fn phi_dphi(spec: &MetricDensitySpec, x: &[f64], v: &[f64]) -> (f64, f64) {
    let j = (spec.density)(&crate::jet::Jet::seed(x, 1));
    let d = (0..spec.dim).map(|i| j.grad(i) * v[i]).sum();
    (j.value(), d)
}

/// Integrate the geodesic with σ(0) = p, σ′(0) = v over [0, t_end].
pub fn integrate_geodesic(
    spec: &MetricDensitySpec,
    p: &[f64],
    v: &[f64],
    t_end: f64,
    opts: &GeodesicOptions,
) -> Result<GeodesicTrajectory> {
    let n = spec.dim;
    if !spec.contains(p) {
        return Err(WsecError::Domain(p.to_vec()));
    }
    let g = spec.metric_at(p);
    g.clone().cholesky().ok_or_else(|| WsecError::SingularMetric(p.to_vec()))?;
    let speed = g_inner(&g, v, v).sqrt();
    if !(speed > 0.0) {
        return Err(WsecError::Config("initial velocity must be nonzero".into()));
    }
    let frame = orthonormal_basis(&g, Some(v));
    let mut y0 = Vec::with_capacity(2 * n + 1 + n * n);
    y0.extend_from_slice(p);
    y0.extend_from_slice(v);
    y0.push(0.0);
    for e in &frame {
        y0.extend_from_slice(e);
    }
    let event = opts.stop_at_s.map(|target| move |_t: f64, y: &[f64]| y[2 * n] - target);
    let ev_ref: Option<&dyn Fn(f64, &[f64]) -> f64> = event.as_ref().map(|e| e as &dyn Fn(f64, &[f64]) -> f64);
    let (dense, status) = ode::integrate(|_t, y, dy| geodesic_rhs(spec, true, y, dy), 0.0, &y0, t_end, &opts.ode, ev_ref);
    match status {
        OdeStatus::Complete | OdeStatus::Event(_) => Ok(GeodesicTrajectory::from_dense(spec, dense, speed, true)),
        OdeStatus::DomainExit(t) => {
            if dense.is_empty() {
                return Err(WsecError::Domain(p.to_vec()));
            }
            let partial = GeodesicTrajectory::from_dense(spec, dense, speed, false);
            Err(WsecError::DomainExit { t, partial: Box::new(partial) })
        }
        OdeStatus::StepFailure(t) => Err(WsecError::StepFailure(t)),
    }
}

/// Integrate a unit-speed geodesic until its reparametrized length reaches `s_end`.
pub fn integrate_to_s(
    spec: &MetricDensitySpec,
    p: &[f64],
    v: &[f64],
    s_end: f64,
    t_max: f64,
    opts: &GeodesicOptions,
) -> Result<GeodesicTrajectory> {
    let mut o = opts.clone();
    o.stop_at_s = Some(s_end);
    let traj = integrate_geodesic(spec, p, v, t_max, &o)?;
    if traj.s_end() < s_end - 1e-12 {
        return Err(WsecError::Config(format!(
            "reparametrized length {} not reached before t = {}",
            s_end, t_max
        )));
    }
    Ok(traj)
}

/// max_k |γ̈ᵏ + (Γ_φ)ᵏ_ij γ̇ⁱγ̇ʲ| over samples, with γ̇ = e^{2φ}σ′.
pub fn phi_geodesic_residual(spec: &MetricDensitySpec, traj: &GeodesicTrajectory) -> Result<f64> {
    let n = spec.dim;
    let mut worst: f64 = 0.0;
    for i in 0..traj.len() {
        let st = traj.sample(i);
        let lg = local_geometry(spec, &st.x)?;
        let e2 = (2.0 * lg.phi).exp();
        let dv = lg.dphi_of(&st.v);
        let gd: Vec<f64> = st.v.iter().map(|c| e2 * c).collect();
        for k in 0..n {
            let gdd = e2 * e2 * (st.accel[k] + 2.0 * dv * st.v[k]);
            let r = gdd + gamma_contract(&lg.gamma_phi, k, &gd, &gd);
            worst = worst.max(r.abs());
        }
    }
    Ok(worst)
}

/// A vector field parallel along a geodesic.
#[derive(Clone, Debug)]
pub struct TransportedField {
    pub t: Vec<f64>,
    /// Chart components at each trajectory sample.
    pub vectors: Vec<Vec<f64>>,
    /// Components in the trajectory's parallel frame (constant).
    pub frame_components: Vec<f64>,
}

pub fn parallel_transport(spec: &MetricDensitySpec, traj: &GeodesicTrajectory, v0: &[f64]) -> TransportedField {
    let g0 = spec.metric_at(&traj.positions[0]);
    let s0 = traj.sample(0);
    let c: Vec<f64> = s0.frame.iter().map(|e| g_inner(&g0, v0, e)).collect();
    let vectors = (0..traj.len())
        .map(|i| {
            let st = traj.sample(i);
            combine(&st.frame, &c)
        })
        .collect();
    TransportedField { t: traj.t.clone(), vectors, frame_components: c }
}

fn combine(frame: &[Vec<f64>], c: &[f64]) -> Vec<f64> {
    let n = frame[0].len();
    let mut out = vec![0.0; n];
    for (e, ci) in frame.iter().zip(c) {
        for k in 0..n {
            out[k] += ci * e[k];
        }
    }
    out
}

/// Frame matrices K_ij = g(R(E_j, v)v, E_i) for the Levi-Civita and the
/// weighted connection at an interpolated state.
pub fn curvature_matrices(lg: &LocalGeometry, st: &GeoState) -> (DMatrix<f64>, DMatrix<f64>) {
    let e = st.frame_matrix();
    let ge = &lg.g * &e;
    let k = ge.transpose() * lg.jacobi_operator(&st.v, false) * &e;
    let kp = ge.transpose() * lg.jacobi_operator(&st.v, true) * &e;
    (k, kp)
}

/// Several Jacobi fields along one geodesic, stored as frame components
/// a (fields as columns) and their covariant derivatives b.
#[derive(Clone, Debug)]
pub struct JacobiFamily {
    pub along: Arc<GeodesicTrajectory>,
    pub fields: usize,
    pub dense: DenseSolution,
}

impl JacobiFamily {
    pub fn eval(&self, t: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.along.dim;
        let m = self.fields;
        let (y, _) = self.dense.eval(t);
        (DMatrix::from_column_slice(n, m, &y[..n * m]), DMatrix::from_column_slice(n, m, &y[n * m..]))
    }

    pub fn sample(&self, i: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.along.dim;
        let m = self.fields;
        let y = &self.dense.y[i];
        (DMatrix::from_column_slice(n, m, &y[..n * m]), DMatrix::from_column_slice(n, m, &y[n * m..]))
    }

    pub fn t(&self) -> &[f64] {
        &self.dense.t
    }

    /// Single-field view.
    pub fn field(&self, j: usize) -> JacobiTrajectory {
        let n = self.along.dim;
        let m = self.fields;
        let mut dense = DenseSolution::default();
        let mut a = Vec::new();
        let mut b = Vec::new();
        let mut jv = Vec::new();
        let mut jp = Vec::new();
        for (i, &t) in self.dense.t.iter().enumerate() {
            let y = &self.dense.y[i];
            let dy = &self.dense.dy[i];
            let ai = y[j * n..(j + 1) * n].to_vec();
            let bi = y[n * m + j * n..n * m + (j + 1) * n].to_vec();
            let mut yy = ai.clone();
            yy.extend_from_slice(&bi);
            let mut dd = dy[j * n..(j + 1) * n].to_vec();
            dd.extend_from_slice(&dy[n * m + j * n..n * m + (j + 1) * n]);
            dense.t.push(t);
            dense.y.push(yy);
            dense.dy.push(dd);
            let st = self.along.state_at(t);
            jv.push(combine(&st.frame, &ai));
            jp.push(combine(&st.frame, &bi));
            a.push(ai);
            b.push(bi);
        }
        JacobiTrajectory { along: self.along.clone(), t: dense.t.clone(), a, b, j: jv, j_prime: jp, dense }
    }
}

#[derive(Clone, Debug)]
pub struct JacobiTrajectory {
    pub along: Arc<GeodesicTrajectory>,
    pub t: Vec<f64>,
    /// Components of J in the parallel frame.
    pub a: Vec<Vec<f64>>,
    /// Components of J′ in the parallel frame.
    pub b: Vec<Vec<f64>>,
    /// Chart components of J.
    pub j: Vec<Vec<f64>>,
    /// Chart components of J′.
    pub j_prime: Vec<Vec<f64>>,
    dense: DenseSolution,
}

impl JacobiTrajectory {
    /// Frame components (J, J′) at `t`.
    pub fn eval(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let n = self.along.dim;
        let (y, _) = self.dense.eval(t);
        (y[..n].to_vec(), y[n..].to_vec())
    }

    pub fn norm_at(&self, t: f64) -> f64 {
        let (a, _) = self.eval(t);
        a.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn norms(&self) -> Vec<f64> {
        self.a.iter().map(|a| a.iter().map(|c| c * c).sum::<f64>().sqrt()).collect()
    }
}

/// Integrate the Jacobi equation for several fields at once. Columns of
/// `a0`, `b0` are initial frame components of J and J′.
pub fn integrate_jacobi_family(
    spec: &MetricDensitySpec,
    traj: &GeodesicTrajectory,
    a0: &DMatrix<f64>,
    b0: &DMatrix<f64>,
    opts: &OdeOptions,
) -> Result<JacobiFamily> {
    let along = Arc::new(traj.clone());
    integrate_jacobi_family_arc(spec, along, a0, b0, opts)
}

pub fn integrate_jacobi_family_arc(
    spec: &MetricDensitySpec,
    along: Arc<GeodesicTrajectory>,
    a0: &DMatrix<f64>,
    b0: &DMatrix<f64>,
    opts: &OdeOptions,
) -> Result<JacobiFamily> {
    if !along.has_frame() {
        return Err(WsecError::Config("trajectory carries no parallel frame".into()));
    }
    let n = along.dim;
    let m = a0.ncols();
    let mut y0 = a0.as_slice().to_vec();
    y0.extend_from_slice(b0.as_slice());
    let rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        let st = along.state_at(t);
        let Ok(lg) = local_geometry(spec, &st.x) else {
            return false;
        };
        let (k, _) = curvature_matrices(&lg, &st);
        dy[..n * m].copy_from_slice(&y[n * m..]);
        for j in 0..m {
            for i in 0..n {
                let mut acc = 0.0;
                for l in 0..n {
                    acc += k[(i, l)] * y[j * n + l];
                }
                dy[n * m + j * n + i] = -acc;
            }
        }
        true
    };
    let (dense, status) = ode::integrate(rhs, along.t_start(), &y0, along.t_end(), opts, None);
    match status {
        OdeStatus::Complete => Ok(JacobiFamily { along, fields: m, dense }),
        OdeStatus::DomainExit(t) | OdeStatus::StepFailure(t) | OdeStatus::Event(t) => Err(WsecError::StepFailure(t)),
    }
}

/// Jacobi field with initial value `j0` and covariant derivative `j0_prime`
/// (chart components at the start of `traj`).
pub fn integrate_jacobi(
    spec: &MetricDensitySpec,
    traj: &GeodesicTrajectory,
    j0: &[f64],
    j0_prime: &[f64],
) -> Result<JacobiTrajectory> {
    let n = spec.dim;
    let g0 = spec.metric_at(&traj.positions[0]);
    let st = traj.sample(0);
    let a0 = DMatrix::from_fn(n, 1, |i, _| g_inner(&g0, j0, &st.frame[i]));
    let b0 = DMatrix::from_fn(n, 1, |i, _| g_inner(&g0, j0_prime, &st.frame[i]));
    let fam = integrate_jacobi_family(spec, traj, &a0, &b0, &OdeOptions::default())?;
    Ok(fam.field(0))
}

/// Family of the n−1 normal Jacobi fields with J(0) = 0 and J′(0) = e_i.
pub fn normal_jacobi_family(spec: &MetricDensitySpec, traj: &GeodesicTrajectory) -> Result<JacobiFamily> {
    let n = spec.dim;
    let a0 = DMatrix::zeros(n, n - 1);
    let b0 = DMatrix::from_fn(n, n - 1, |i, j| if i == j + 1 { 1.0 } else { 0.0 });
    integrate_jacobi_family(spec, traj, &a0, &b0, &OdeOptions::default())
}

fn perp_block(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    a.view((1, 0), (n - 1, a.ncols())).into_owned()
}

fn min_singular(a: &DMatrix<f64>) -> f64 {
    a.clone().singular_values().min()
}

/// Times where the normal block of the family's J-matrix is singular. A
/// zero is accepted when the refined smallest singular value is below
/// `1e-6 · max(1, |J′|)`.
pub fn singular_times(fam: &JacobiFamily) -> Vec<f64> {
    let t = fam.t();
    let f = |tt: f64| {
        let (a, _) = fam.eval(tt);
        min_singular(&perp_block(&a))
    };
    let sig: Vec<f64> = (0..t.len()).map(|i| min_singular(&perp_block(&fam.sample(i).0))).collect();
    let mut out: Vec<f64> = Vec::new();
    let last = t.len() - 1;
    for i in 1..=last {
        let is_min = if i < last { sig[i] <= sig[i - 1] && sig[i] <= sig[i + 1] } else { sig[i] < sig[i - 1] };
        if !is_min {
            continue;
        }
        let (lo, hi) = (t[i - 1], if i < last { t[i + 1] } else { t[i] });
        let tm = golden_min(&f, lo, hi, 1e-10);
        let (_, b) = fam.eval(tm);
        let scale = perp_block(&b).norm().max(1.0);
        if f(tm) < 1e-6 * scale && out.last().map_or(true, |&p| tm - p > 1e-6) {
            out.push(tm);
        }
    }
    out
}

fn golden_min<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Parameters t of points conjugate to σ(0) along `traj`.
pub fn conjugate_points(spec: &MetricDensitySpec, traj: &GeodesicTrajectory) -> Result<Vec<f64>> {
    Ok(singular_times(&normal_jacobi_family(spec, traj)?))
}

pub type FieldProfile = Arc<dyn Fn(f64) -> (Vec<f64>, Vec<f64>) + Send + Sync>;

/// A vector field along a geodesic given by its components in the parallel
/// frame: `components` are the n−1 normal ones, `tangential` the optional
/// e₁ component. Derivatives are with respect to t.
#[derive(Clone)]
pub struct VectorFieldAlong {
    pub t: Vec<f64>,
    pub components: Vec<Vec<f64>>,
    pub derivatives: Vec<Vec<f64>>,
    pub tangential: Option<Vec<(f64, f64)>>,
    profile: Option<FieldProfile>,
    tangential_profile: Option<Arc<dyn Fn(f64) -> (f64, f64) + Send + Sync>>,
}

impl std::fmt::Debug for VectorFieldAlong {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VectorFieldAlong")
            .field("samples", &self.t.len())
            .field("has_profile", &self.profile.is_some())
            .field("tangential", &self.tangential.is_some())
            .finish()
    }
}

impl VectorFieldAlong {
    /// Field from a closure t ↦ (u(t), u′(t)), sampled at the trajectory's samples.
    pub fn from_fn<F>(traj: &GeodesicTrajectory, f: F) -> Self
    where
        F: Fn(f64) -> (Vec<f64>, Vec<f64>) + Send + Sync + 'static,
    {
        let (components, derivatives) = traj.t.iter().map(|&t| f(t)).unzip();
        VectorFieldAlong {
            t: traj.t.clone(),
            components,
            derivatives,
            tangential: None,
            profile: Some(Arc::new(f)),
            tangential_profile: None,
        }
    }

    /// Field from sampled components and derivatives; evaluated between
    /// samples by cubic Hermite interpolation.
    pub fn from_samples(t: Vec<f64>, components: Vec<Vec<f64>>, derivatives: Vec<Vec<f64>>) -> Self {
        assert_eq!(t.len(), components.len());
        assert_eq!(t.len(), derivatives.len());
        VectorFieldAlong { t, components, derivatives, tangential: None, profile: None, tangential_profile: None }
    }

    /// u_i(t) = sin(kπ(t − t₀)/T) in normal direction `dir` (0-based among normals).
    pub fn sine_mode(traj: &GeodesicTrajectory, k: usize, dir: usize) -> Self {
        let t0 = traj.t_start();
        let len = traj.t_end() - t0;
        let m = traj.dim - 1;
        let w = k as f64 * std::f64::consts::PI / len;
        Self::from_fn(traj, move |t| {
            let mut u = vec![0.0; m];
            let mut du = vec![0.0; m];
            u[dir] = (w * (t - t0)).sin();
            du[dir] = w * (w * (t - t0)).cos();
            (u, du)
        })
    }

    /// Add a tangential component f(t) with derivative.
    pub fn with_tangential<F>(mut self, f: F) -> Self
    where
        F: Fn(f64) -> (f64, f64) + Send + Sync + 'static,
    {
        self.tangential = Some(self.t.iter().map(|&t| f(t)).collect());
        self.tangential_profile = Some(Arc::new(f));
        self
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn eval(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        if let Some(p) = &self.profile {
            return p(t);
        }
        let dense = DenseSolution { t: self.t.clone(), y: self.components.clone(), dy: self.derivatives.clone() };
        // Value from the Hermite interpolant; derivative by interpolating u′ linearly.
        let (u, _) = dense.eval(t);
        let i = dense.segment(t);
        let th = ((t - self.t[i]) / (self.t[i + 1] - self.t[i])).clamp(0.0, 1.0);
        let du = self.derivatives[i].iter().zip(&self.derivatives[i + 1]).map(|(a, b)| a + th * (b - a)).collect();
        (u, du)
    }

    pub fn eval_tangential(&self, t: f64) -> Option<(f64, f64)> {
        if let Some(p) = &self.tangential_profile {
            return Some(p(t));
        }
        let tan = self.tangential.as_ref()?;
        let dense = DenseSolution {
            t: self.t.clone(),
            y: tan.iter().map(|p| vec![p.0]).collect(),
            dy: tan.iter().map(|p| vec![p.1]).collect(),
        };
        let (y, dy) = dense.eval(t);
        Some((y[0], dy[0]))
    }

    /// max over samples of |g(V, σ′/|σ′|)|.
    pub fn tangential_defect(&self) -> f64 {
        self.tangential.as_ref().map_or(0.0, |v| v.iter().fold(0.0, |m, p| m.max(p.0.abs())))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IndexFormKind {
    Classical,
    WeightedRewrite,
}

/// Curvature data sampled at quadrature nodes along a geodesic.
#[derive(Clone, Debug)]
pub struct IndexQuadrature {
    pub nodes: Vec<(f64, f64)>,
    /// Normal blocks of K.
    pub k: Vec<DMatrix<f64>>,
    pub k_phi: Vec<DMatrix<f64>>,
    pub phi: Vec<f64>,
    pub dphi_v: Vec<f64>,
    pub t0: f64,
    pub t1: f64,
    /// (φ, dφ(σ′)) at both ends.
    pub ends: [(f64, f64); 2],
}

impl IndexQuadrature {
    /// Nodes are 8-point Gauss rules on each integrator step, or on
    /// `panels` uniform panels when given.
    pub fn new(spec: &MetricDensitySpec, traj: &GeodesicTrajectory, panels: Option<usize>) -> Result<Self> {
        let (t0, t1) = (traj.t_start(), traj.t_end());
        let breaks: Vec<f64> = match panels {
            Some(p) => (0..=p).map(|i| t0 + (t1 - t0) * i as f64 / p as f64).collect(),
            None => traj.t.clone(),
        };
        let mut nodes = Vec::new();
        for w in breaks.windows(2) {
            nodes.extend_from_slice(&gl8_nodes(w[0], w[1]));
        }
        let mut k = Vec::with_capacity(nodes.len());
        let mut k_phi = Vec::with_capacity(nodes.len());
        let mut phi = Vec::with_capacity(nodes.len());
        let mut dphi_v = Vec::with_capacity(nodes.len());
        for &(t, _) in &nodes {
            let st = traj.state_at(t);
            let lg = local_geometry(spec, &st.x)?;
            let (kk, kp) = curvature_matrices(&lg, &st);
            k.push(perp_square(&kk));
            k_phi.push(perp_square(&kp));
            phi.push(lg.phi);
            dphi_v.push(lg.dphi_of(&st.v));
        }
        let ends = [traj.phi_dphi_at(spec, t0), traj.phi_dphi_at(spec, t1)];
        Ok(IndexQuadrature { nodes, k, k_phi, phi, dphi_v, t0, t1, ends })
    }

    /// Classical index form ∫ (|V′|² − g(R(V,σ′)σ′,V)) dt.
    pub fn classical(&self, v: &VectorFieldAlong) -> f64 {
        let mut s = 0.0;
        for (i, &(t, w)) in self.nodes.iter().enumerate() {
            let (u, du) = v.eval(t);
            let mut val = dot(&du, &du) - quad(&self.k[i], &u);
            if let Some((_, df)) = v.eval_tangential(t) {
                val += df * df;
            }
            s += w * val;
        }
        s
    }

    /// ∫ (|V′ − dφ(σ′)V|² − R^φ(V,σ′,σ′,V)) dt + dφ(σ′)|V|² between the ends.
    pub fn weighted_rewrite(&self, v: &VectorFieldAlong) -> Result<f64> {
        check_orthogonal(v)?;
        let mut s = 0.0;
        for (i, &(t, w)) in self.nodes.iter().enumerate() {
            let (u, du) = v.eval(t);
            let d = self.dphi_v[i];
            let diff: Vec<f64> = du.iter().zip(&u).map(|(a, b)| a - d * b).collect();
            s += w * (dot(&diff, &diff) - quad(&self.k_phi[i], &u));
        }
        let (u0, _) = v.eval(self.t0);
        let (u1, _) = v.eval(self.t1);
        Ok(s + self.ends[1].1 * dot(&u1, &u1) - self.ends[0].1 * dot(&u0, &u0))
    }

    /// I(e^φV, e^φV) written in the reparametrized parameter and pulled
    /// back to t: ∫ e^{2φ}(|V′|² − R^φ(V,σ′,σ′,V)) dt + e^{2φ}dφ(σ′)|V|² between the ends.
    pub fn weighted_index(&self, v: &VectorFieldAlong) -> Result<f64> {
        check_orthogonal(v)?;
        let mut s = 0.0;
        for (i, &(t, w)) in self.nodes.iter().enumerate() {
            let (u, du) = v.eval(t);
            s += w * (2.0 * self.phi[i]).exp() * (dot(&du, &du) - quad(&self.k_phi[i], &u));
        }
        let (u0, _) = v.eval(self.t0);
        let (u1, _) = v.eval(self.t1);
        let b1 = (2.0 * self.ends[1].0).exp() * self.ends[1].1 * dot(&u1, &u1);
        let b0 = (2.0 * self.ends[0].0).exp() * self.ends[0].1 * dot(&u0, &u0);
        Ok(s + b1 - b0)
    }

    /// Symmetric matrix of the classical index form on `fields`.
    pub fn classical_matrix(&self, fields: &[VectorFieldAlong]) -> DMatrix<f64> {
        let m = fields.len();
        let mut out = DMatrix::zeros(m, m);
        for (i, &(t, w)) in self.nodes.iter().enumerate() {
            let vals: Vec<(Vec<f64>, Vec<f64>)> = fields.iter().map(|f| f.eval(t)).collect();
            for a in 0..m {
                let ku = &self.k[i] * nalgebra::DVector::from_column_slice(&vals[a].0);
                for b in a..m {
                    let v = dot(&vals[a].1, &vals[b].1) - dot(ku.as_slice(), &vals[b].0);
                    out[(a, b)] += w * v;
                }
            }
        }
        for a in 0..m {
            for b in 0..a {
                out[(a, b)] = out[(b, a)];
            }
        }
        out
    }
}

fn check_orthogonal(v: &VectorFieldAlong) -> Result<()> {
    let d = v.tangential_defect();
    if d > 1e-6 {
        return Err(WsecError::NonOrthogonalField(d));
    }
    Ok(())
}

fn perp_square(k: &DMatrix<f64>) -> DMatrix<f64> {
    let n = k.nrows();
    k.view((1, 1), (n - 1, n - 1)).into_owned()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn quad(k: &DMatrix<f64>, u: &[f64]) -> f64 {
    let n = u.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += u[i] * k[(i, j)] * u[j];
        }
    }
    s
}

pub fn index_form(
    spec: &MetricDensitySpec,
    traj: &GeodesicTrajectory,
    v: &VectorFieldAlong,
    form: IndexFormKind,
) -> Result<f64> {
    let iq = IndexQuadrature::new(spec, traj, None)?;
    match form {
        IndexFormKind::Classical => Ok(iq.classical(v)),
        IndexFormKind::WeightedRewrite => iq.weighted_rewrite(v),
    }
}

pub fn weighted_index_form(spec: &MetricDensitySpec, traj: &GeodesicTrajectory, v: &VectorFieldAlong) -> Result<f64> {
    IndexQuadrature::new(spec, traj, None)?.weighted_index(v)
}

/// The field e^φ V with covariant derivative e^φ(V′ + dφ(σ′)V).
pub fn scale_by_density(spec: &MetricDensitySpec, traj: &GeodesicTrajectory, v: &VectorFieldAlong) -> VectorFieldAlong {
    let spec = spec.clone();
    let tr = Arc::new(traj.clone());
    let src = v.clone();
    VectorFieldAlong::from_fn(traj, move |t| {
        let (p, dp) = tr.phi_dphi_at(&spec, t);
        let (u, du) = src.eval(t);
        let e = p.exp();
        let w = u.iter().map(|c| e * c).collect();
        let dw = du.iter().zip(&u).map(|(d, c)| e * (d + dp * c)).collect();
        (w, dw)
    })
}

/// Copy parallel-frame components from one geodesic to another at matched s.
pub fn transplant_field(
    src: (&MetricDensitySpec, &GeodesicTrajectory),
    dst: (&MetricDensitySpec, &GeodesicTrajectory),
    v_src: &VectorFieldAlong,
) -> Result<VectorFieldAlong> {
    let lo = src.1.s_start().max(dst.1.s_start());
    let hi = src.1.s_end().min(dst.1.s_end());
    if !(hi > lo) {
        return Err(WsecError::IntervalMismatch(format!(
            "[{}, {}] vs [{}, {}]",
            src.1.s_start(),
            src.1.s_end(),
            dst.1.s_start(),
            dst.1.s_end()
        )));
    }
    let (sspec, dspec) = (src.0.clone(), dst.0.clone());
    let (stra, dtra) = (Arc::new(src.1.clone()), Arc::new(dst.1.clone()));
    let field = v_src.clone();
    let dt = dtra.clone();
    let profile = move |t: f64| {
        let s = dt.s_at(t).clamp(lo, hi);
        let ts = stra.t_at_s(s);
        let (u, du) = field.eval(ts);
        let (ps, _) = stra.phi_dphi_at(&sspec, ts);
        let (pd, _) = dt.phi_dphi_at(&dspec, t);
        let f = (2.0 * ps - 2.0 * pd).exp();
        (u, du.iter().map(|d| d * f).collect())
    };
    let ts: Vec<f64> = dtra.t.iter().copied().filter(|&t| {
        let s = dtra.s_at(t);
        s >= lo - 1e-12 && s <= hi + 1e-12
    }).collect();
    let (components, derivatives) = ts.iter().map(|&t| profile(t)).unzip();
    Ok(VectorFieldAlong {
        t: ts,
        components,
        derivatives,
        tangential: None,
        profile: Some(Arc::new(profile)),
        tangential_profile: None,
    })
}

#[derive(Clone, Debug)]
pub struct ShootingOptions {
    /// Random-direction restarts after the straight-line seed (at most 32).
    pub restarts: usize,
    pub seed: u64,
    /// Endpoint residual tolerance in chart units.
    pub tol: f64,
    pub max_iter: usize,
    /// Use a fixed-step flow so the endpoint map is smooth in its inputs.
    pub fixed_steps: Option<usize>,
    pub check_minimality: bool,
    /// Sine modes per normal direction for the minimality test.
    pub modes: usize,
    pub warm_start: Option<Vec<f64>>,
    pub geodesic: GeodesicOptions,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        ShootingOptions {
            restarts: 8,
            seed: 0,
            tol: 1e-10,
            max_iter: 80,
            fixed_steps: None,
            check_minimality: true,
            modes: 5,
            warm_start: None,
            geodesic: GeodesicOptions::default(),
        }
    }
}

/// A geodesic joining two points.
#[derive(Clone, Debug)]
pub struct Connection {
    /// Unit-speed trajectory from p.
    pub trajectory: GeodesicTrajectory,
    /// Initial velocity w of the geodesic on [0, 1] with endpoint q.
    pub initial_velocity: Vec<f64>,
    pub length: f64,
    pub s_length: f64,
    /// Smallest eigenvalue of the index matrix on the sine test fields.
    pub min_index_eigenvalue: Option<f64>,
    /// Chart image of q reached (differs from q by a lattice vector on tori).
    pub target: Vec<f64>,
}

fn shoot_opts(fixed: Option<usize>, rtol: f64) -> OdeOptions {
    OdeOptions { rtol, atol: rtol * 1e-2, min_samples: 4, fixed_steps: fixed, max_steps: 20_000 }
}

/// Endpoint at t = 1 of the geodesic with initial data (p, w).
pub fn shoot(spec: &MetricDensitySpec, p: &[f64], w: &[f64], fixed_steps: Option<usize>) -> Option<Vec<f64>> {
    shoot_tol(spec, p, w, fixed_steps, 1e-12)
}

fn shoot_tol(spec: &MetricDensitySpec, p: &[f64], w: &[f64], fixed_steps: Option<usize>, rtol: f64) -> Option<Vec<f64>> {
    let n = spec.dim;
    let mut y0 = p.to_vec();
    y0.extend_from_slice(w);
    y0.push(0.0);
    let (sol, st) = ode::integrate(|_t, y, dy| geodesic_rhs(spec, false, y, dy), 0.0, &y0, 1.0, &shoot_opts(fixed_steps, rtol), None);
    match st {
        OdeStatus::Complete => Some(sol.y.last().unwrap()[..n].to_vec()),
        _ => None,
    }
}

/// Levenberg–Marquardt on w ↦ exp_p(w) − target: a loose-tolerance solve
/// followed by a tight polish.
fn lm_solve(spec: &MetricDensitySpec, p: &[f64], target: &[f64], w0: &[f64], opts: &ShootingOptions) -> Option<Vec<f64>> {
    lm_solve_capped(spec, p, target, w0, opts, f64::INFINITY)
}

fn lm_solve_capped(
    spec: &MetricDensitySpec,
    p: &[f64],
    target: &[f64],
    w0: &[f64],
    opts: &ShootingOptions,
    max_len: f64,
) -> Option<Vec<f64>> {
    let cap = LengthCap { g: spec.metric_at(p), max_len };
    if opts.fixed_steps.is_some() {
        return lm_stage(spec, p, target, w0, opts, 0.0, opts.tol, &cap);
    }
    let coarse = lm_stage(spec, p, target, w0, opts, 1e-8, 1e-6, &cap)?;
    lm_stage(spec, p, target, &coarse, opts, 1e-12, opts.tol, &cap)
}

struct LengthCap {
    g: DMatrix<f64>,
    max_len: f64,
}

impl LengthCap {
    fn exceeded(&self, w: &[f64]) -> bool {
        self.max_len.is_finite() && g_inner(&self.g, w, w).sqrt() > self.max_len
    }
}

/// Follow the solution while the target moves from p along the chart
/// polyline `path` (ending at the target), warm-starting each stage.
fn continuation_seed(
    spec: &MetricDensitySpec,
    p: &[f64],
    path: &[Vec<f64>],
    opts: &ShootingOptions,
    max_len: f64,
) -> Option<Vec<f64>> {
    let cap = LengthCap { g: spec.metric_at(p), max_len };
    let mut w: Vec<f64> = vec![0.0; p.len()];
    let mut from = p.to_vec();
    for (leg, to) in path.iter().enumerate() {
        let line: Vec<f64> = to.iter().zip(&from).map(|(a, b)| a - b).collect();
        let at = |f: f64| -> Vec<f64> { from.iter().zip(&line).map(|(a, b)| a + f * b).collect() };
        let mut f: f64 = 0.0;
        let mut step: f64 = 0.125;
        while f < 1.0 {
            let next = (f + step).min(1.0);
            let q = at(next);
            if !spec.contains(&q) {
                return None;
            }
            let guess: Vec<f64> = if leg == 0 {
                if f == 0.0 {
                    line.iter().map(|c| c * next).collect()
                } else {
                    w.iter().map(|c| c * next / f).collect()
                }
            } else {
                // extrapolate the exponential map linearly in the target
                w.clone()
            };
            match lm_stage(spec, p, &q, &guess, opts, 1e-8, 1e-6, &cap) {
                Some(wn) => {
                    f = next;
                    w = wn;
                    step = (step * 1.5).min(0.25);
                }
                None => {
                    step *= 0.5;
                    if step < 1e-3 {
                        return None;
                    }
                }
            }
        }
        from = to.clone();
    }
    Some(w)
}

/// g-length of the chart segment from p to q (midpoint rule, 64 cells);
/// infinite if the segment leaves the domain.
fn chart_segment_length(spec: &MetricDensitySpec, p: &[f64], q: &[f64]) -> f64 {
    let line: Vec<f64> = q.iter().zip(p).map(|(a, b)| a - b).collect();
    let cells = 64;
    let mut len = 0.0;
    for i in 0..cells {
        let f = (i as f64 + 0.5) / cells as f64;
        let x: Vec<f64> = p.iter().zip(&line).map(|(a, b)| a + f * b).collect();
        if !spec.contains(&x) {
            return f64::INFINITY;
        }
        len += g_inner(&spec.metric_at(&x), &line, &line).sqrt() / cells as f64;
    }
    len
}

/// Endpoint and velocity at t = 1 of the geodesic with initial data (p, w).
fn shoot_state(spec: &MetricDensitySpec, p: &[f64], w: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
    let n = spec.dim;
    let mut y0 = p.to_vec();
    y0.extend_from_slice(w);
    y0.push(0.0);
    let (sol, st) = ode::integrate(|_t, y, dy| geodesic_rhs(spec, false, y, dy), 0.0, &y0, 1.0, &shoot_opts(None, 1e-12), None);
    match st {
        OdeStatus::Complete => {
            let y = sol.y.last().unwrap();
            Some((y[..n].to_vec(), y[n..2 * n].to_vec()))
        }
        _ => None,
    }
}

/// Seeds from continuation: along the segment, backwards from the target,
/// and through a detour midpoint.
fn continuation_seeds(
    spec: &MetricDensitySpec,
    p: &[f64],
    target: &[f64],
    opts: &ShootingOptions,
    rng: &mut ChaCha8Rng,
    max_len: f64,
) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    if let Some(w) = continuation_seed(spec, p, &[target.to_vec()], opts, max_len) {
        out.push(w);
    }
    if let Some(wr) = continuation_seed(spec, target, &[p.to_vec()], opts, max_len) {
        if let Some((_, v)) = shoot_state(spec, target, &wr) {
            out.push(v.iter().map(|c| -c).collect());
        }
    }
    let line: Vec<f64> = target.iter().zip(p).map(|(a, b)| a - b).collect();
    let len = line.iter().map(|c| c * c).sum::<f64>().sqrt();
    for _ in 0..4 {
        let d: Vec<f64> = (0..p.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let m: Vec<f64> = p.iter().zip(target).zip(&d).map(|((a, b), c)| 0.5 * (a + b) + 0.5 * len * c).collect();
        if spec.contains(&m) {
            if let Some(w) = continuation_seed(spec, p, &[m, target.to_vec()], opts, max_len) {
                out.push(w);
            }
            break;
        }
    }
    out
}

fn lm_stage(
    spec: &MetricDensitySpec,
    p: &[f64],
    target: &[f64],
    w0: &[f64],
    opts: &ShootingOptions,
    rtol: f64,
    tol: f64,
    cap: &LengthCap,
) -> Option<Vec<f64>> {
    let n = spec.dim;
    let resid = |w: &[f64]| -> Option<Vec<f64>> {
        let x = shoot_tol(spec, p, w, opts.fixed_steps, rtol.max(1e-14))?;
        Some(x.iter().zip(target).map(|(a, b)| a - b).collect())
    };
    let scale = target.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = tol * scale;
    let mut w = w0.to_vec();
    let mut r = resid(&w)?;
    let mut cost = dot(&r, &r);
    let mut lambda = 1e-4;
    let mut checkpoint = cost;
    for iter in 0..opts.max_iter {
        if r.iter().all(|c| c.abs() < tol) {
            return Some(w);
        }
        if iter > 0 && iter % 10 == 0 {
            // give up on seeds that stagnate
            if cost > 0.25 * checkpoint {
                return None;
            }
            checkpoint = cost;
        }
        let wn = w.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let h = if opts.fixed_steps.is_some() || rtol < 1e-10 { 1e-6 * wn } else { 1e-4 * wn };
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut wp = w.clone();
            wp[j] += h;
            let mut wm = w.clone();
            wm[j] -= h;
            match (resid(&wp), resid(&wm)) {
                (Some(a), Some(b)) => {
                    for i in 0..n {
                        jac[(i, j)] = (a[i] - b[i]) / (2.0 * h);
                    }
                }
                (Some(a), None) => {
                    for i in 0..n {
                        jac[(i, j)] = (a[i] - r[i]) / h;
                    }
                }
                (None, Some(b)) => {
                    for i in 0..n {
                        jac[(i, j)] = (r[i] - b[i]) / h;
                    }
                }
                (None, None) => return None,
            }
        }
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let rhs = -(&jt * nalgebra::DVector::from_column_slice(&r));
        let mut accepted = false;
        while lambda < 1e12 {
            let mut a = jtj.clone();
            for i in 0..n {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(delta) = a.lu().solve(&rhs) else {
                lambda *= 10.0;
                continue;
            };
            let wt: Vec<f64> = w.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
            if cap.exceeded(&wt) {
                return None;
            }
            if let Some(rt) = resid(&wt) {
                let ct = dot(&rt, &rt);
                if ct < cost {
                    w = wt;
                    r = rt;
                    cost = ct;
                    lambda = (lambda / 10.0).max(1e-14);
                    accepted = true;
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !accepted {
            return if r.iter().all(|c| c.abs() < 1e3 * tol) { Some(w) } else { None };
        }
    }
    if r.iter().all(|c| c.abs() < 1e3 * tol) {
        Some(w)
    } else {
        None
    }
}

fn lattice_images(spec: &MetricDensitySpec, q: &[f64]) -> Vec<Vec<f64>> {
    let Some(per) = &spec.periods else {
        return vec![q.to_vec()];
    };
    let n = spec.dim;
    let mut out = vec![q.to_vec()];
    let total = 3usize.pow(n as u32);
    for code in 0..total {
        let mut c = code;
        let mut img = q.to_vec();
        let mut zero = true;
        for i in 0..n {
            let k = (c % 3) as f64 - 1.0;
            c /= 3;
            if k != 0.0 {
                zero = false;
            }
            img[i] += k * per[i];
        }
        if !zero {
            out.push(img);
        }
    }
    out
}

/// Shooting solutions (w, g-length, target) from p to q, sorted by length,
/// deduplicated by direction with angular tolerance 1e-4.
pub fn shooting_solutions(
    spec: &MetricDensitySpec,
    p: &[f64],
    q: &[f64],
    opts: &ShootingOptions,
) -> Result<Vec<(Vec<f64>, f64, Vec<f64>)>> {
    let n = spec.dim;
    if !spec.contains(p) {
        return Err(WsecError::Domain(p.to_vec()));
    }
    if !spec.contains(q) {
        return Err(WsecError::Domain(q.to_vec()));
    }
    let g = spec.metric_at(p);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut sols: Vec<(Vec<f64>, f64, Vec<f64>)> = Vec::new();
    let push = |w: Vec<f64>, target: Vec<f64>, sols: &mut Vec<(Vec<f64>, f64, Vec<f64>)>| {
        let len = g_inner(&g, &w, &w).sqrt();
        let dup = sols.iter().any(|(w2, l2, _)| {
            let c = g_inner(&g, &w, w2) / (len * l2).max(1e-300);
            c.clamp(-1.0, 1.0).acos() < 1e-4 && (len - l2).abs() < 1e-6 * (1.0 + len)
        });
        if !dup {
            sols.push((w, len, target));
        }
    };
    for target in lattice_images(spec, q) {
        let line: Vec<f64> = target.iter().zip(p).map(|(a, b)| a - b).collect();
        if line.iter().all(|c| *c == 0.0) {
            push(vec![0.0; n], target.clone(), &mut sols);
            continue;
        }
        let mut seeds = Vec::new();
        if let Some(ws) = &opts.warm_start {
            seeds.push(ws.clone());
        }
        // the chart segment's length bounds the distance from above
        let bound = 2.0 * chart_segment_length(spec, p, &target);
        seeds.extend(continuation_seeds(spec, p, &target, opts, &mut rng, bound));
        seeds.push(line.clone());
        let l0 = g_inner(&g, &line, &line).sqrt();
        for _ in 0..opts.restarts.min(32) {
            let d: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let dn = g_inner(&g, &d, &d).sqrt();
            let f = l0 * rng.gen_range(0.5..2.0);
            seeds.push(d.iter().map(|c| c / dn * f).collect());
        }
        for s in seeds {
            // longer candidates than a few times the best one are not pursued
            let best = sols.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
            let cap = if best.is_finite() { bound.min(4.0 * best.max(1e-3)) } else { bound };
            if let Some(w) = lm_solve_capped(spec, p, &target, &s, opts, cap) {
                push(w, target.clone(), &mut sols);
            }
        }
    }
    sols.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    Ok(sols)
}

/// Smallest eigenvalue of the classical index form on the sine test fields.
pub fn min_index_eigenvalue(spec: &MetricDensitySpec, traj: &GeodesicTrajectory, modes: usize) -> Result<f64> {
    let panels = 32.max(8 * modes);
    let iq = IndexQuadrature::new(spec, traj, Some(panels))?;
    let mut fields = Vec::new();
    for dir in 0..spec.dim - 1 {
        for k in 1..=modes {
            fields.push(VectorFieldAlong::sine_mode(traj, k, dir));
        }
    }
    let m = iq.classical_matrix(&fields);
    Ok(m.symmetric_eigen().eigenvalues.min())
}

/// All locally minimizing geodesics found from p to q, shortest first.
pub fn connecting_geodesics(
    spec: &MetricDensitySpec,
    p: &[f64],
    q: &[f64],
    opts: &ShootingOptions,
) -> Result<Vec<Connection>> {
    let n = spec.dim;
    let sols = shooting_solutions(spec, p, q, opts)?;
    let g = spec.metric_at(p);
    let mut out = Vec::new();
    for (w, len, target) in sols {
        if len == 0.0 {
            let traj = GeodesicTrajectory::from_dense(
                spec,
                DenseSolution {
                    t: vec![0.0],
                    y: vec![{
                        let mut y = p.to_vec();
                        let e = orthonormal_basis(&g, None);
                        y.extend(std::iter::repeat(0.0).take(n + 1));
                        for v in e {
                            y.extend(v);
                        }
                        y
                    }],
                    dy: vec![vec![0.0; 2 * n + 1 + n * n]],
                },
                0.0,
                true,
            );
            out.push(Connection {
                trajectory: traj,
                initial_velocity: w,
                length: 0.0,
                s_length: 0.0,
                min_index_eigenvalue: None,
                target,
            });
            continue;
        }
        let unit: Vec<f64> = w.iter().map(|c| c / len).collect();
        let traj = match integrate_geodesic(spec, p, &unit, len, &opts.geodesic) {
            Ok(t) => t,
            Err(_) => continue,
        };
        let mie = if opts.check_minimality && n >= 2 {
            let e = min_index_eigenvalue(spec, &traj, opts.modes)?;
            if e < -1e-6 {
                continue;
            }
            Some(e)
        } else {
            None
        };
        out.push(Connection {
            s_length: traj.s_end(),
            trajectory: traj,
            initial_velocity: w,
            length: len,
            min_index_eigenvalue: mie,
            target,
        });
    }
    if out.is_empty() {
        return Err(WsecError::NoConnectionFound(format!(
            "no locally minimizing geodesic from {p:?} to {q:?} after {} restarts",
            opts.restarts.min(32)
        )));
    }
    Ok(out)
}

pub fn minimizing_geodesic(spec: &MetricDensitySpec, p: &[f64], q: &[f64], opts: &ShootingOptions) -> Result<Connection> {
    Ok(connecting_geodesics(spec, p, q, opts)?.remove(0))
}

/// Reparametrized distance: smallest s-length among the locally minimizing
/// geodesics found.
pub fn reparametrized_distance(spec: &MetricDensitySpec, p: &[f64], q: &[f64], opts: &ShootingOptions) -> Result<f64> {
    let c = connecting_geodesics(spec, p, q, opts)?;
    Ok(c.iter().map(|c| c.s_length).fold(f64::INFINITY, f64::min))
}

/// g-distance via a fixed-step flow; smooth in q for finite differencing.
pub fn smooth_distance(
    spec: &MetricDensitySpec,
    p: &[f64],
    q: &[f64],
    warm: &[f64],
    steps: usize,
) -> Result<(f64, Vec<f64>)> {
    let opts = ShootingOptions {
        restarts: 0,
        tol: 1e-14,
        max_iter: 60,
        fixed_steps: Some(steps),
        check_minimality: false,
        warm_start: Some(warm.to_vec()),
        ..Default::default()
    };
    let w = lm_solve(spec, p, q, warm, &opts).ok_or_else(|| WsecError::NoConnectionFound(format!("{q:?}")))?;
    let g = spec.metric_at(p);
    Ok((g_inner(&g, &w, &w).sqrt(), w))
}

/// Gaussian direction made g-unit at x.
pub fn random_unit(spec: &MetricDensitySpec, x: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let g = spec.metric_at(x);
    let d: Vec<f64> = (0..spec.dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let l = g_inner(&g, &d, &d).sqrt();
    d.iter().map(|c| c / l).collect()
}
