//! Manifolds with density in a single coordinate chart.
//!
//! A [`MetricDensitySpec`] holds the triple (M, g, φ): a metric field g_ij(x), a
//! density φ(x) (the measure is e^{-(n+1)φ} dvol_g) and a domain predicate.
//! [`local_geometry`] evaluates Christoffel symbols of the Levi-Civita and of
//! the weighted connection ∇^φ_X Y = ∇_X Y − dφ(X)Y − dφ(Y)X together with both
//! curvature tensors, using R(X,Y)Z = ∇_X∇_Y Z − ∇_Y∇_X Z − ∇_[X,Y] Z.

use std::fmt;
use std::ops::Deref;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WsecError};
use crate::jet::Jet;

pub type ScalarField = Arc<dyn Fn(&[Jet]) -> Jet + Send + Sync>;
/// Returns the n×n metric matrix in row-major order.
pub type MetricField = Arc<dyn Fn(&[Jet]) -> Vec<Jet> + Send + Sync>;
pub type DomainPredicate = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;
pub type PointSampler = Arc<dyn Fn(&mut ChaCha8Rng) -> Vec<f64> + Send + Sync>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartPoint {
    pub coords: Vec<f64>,
}

impl ChartPoint {
    pub fn new(coords: Vec<f64>) -> Self {
        assert!(coords.iter().all(|c| c.is_finite()), "chart coordinates must be finite");
        ChartPoint { coords }
    }
}

impl Deref for ChartPoint {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.coords
    }
}

impl From<Vec<f64>> for ChartPoint {
    fn from(v: Vec<f64>) -> Self {
        ChartPoint::new(v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TangentVector {
    pub base: ChartPoint,
    pub components: Vec<f64>,
}

impl TangentVector {
    pub fn new(base: ChartPoint, components: Vec<f64>) -> Self {
        assert_eq!(base.len(), components.len(), "tangent vector dimension mismatch");
        TangentVector { base, components }
    }
}

impl Deref for TangentVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.components
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum DiffBackend {
    /// Forward-mode second-order dual numbers.
    Dual,
    /// Central finite differences; `None` picks h = eps^{1/3} max(1, |x|).
    CentralDifference(Option<f64>),
}

#[derive(Clone)]
pub struct MetricDensitySpec {
    pub name: String,
    pub dim: usize,
    pub metric: MetricField,
    pub density: ScalarField,
    pub domain: DomainPredicate,
    pub backend: DiffBackend,
    pub sampler: PointSampler,
    /// Lattice periods for charts of flat tori; geodesic endpoints are
    /// compared modulo these.
    pub periods: Option<Vec<f64>>,
}

impl fmt::Debug for MetricDensitySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MetricDensitySpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("backend", &self.backend)
            .field("periods", &self.periods)
            .finish()
    }
}

impl MetricDensitySpec {
    pub fn new(name: impl Into<String>, dim: usize, metric: MetricField, density: ScalarField) -> Self {
        assert!(dim >= 1 && dim <= crate::jet::MAX_DIM);
        let bounds = vec![(-1.0, 1.0); dim];
        MetricDensitySpec {
            name: name.into(),
            dim,
            metric,
            density,
            domain: Arc::new(|x: &[f64]| x.iter().all(|c| c.is_finite())),
            backend: DiffBackend::Dual,
            sampler: box_sampler(bounds),
            periods: None,
        }
    }

    pub fn with_domain(mut self, domain: DomainPredicate) -> Self {
        self.domain = domain;
        self
    }

    pub fn with_sampler(mut self, sampler: PointSampler) -> Self {
        self.sampler = sampler;
        self
    }

    pub fn with_box(self, bounds: Vec<(f64, f64)>) -> Self {
        self.with_sampler(box_sampler(bounds))
    }

    pub fn with_backend(mut self, backend: DiffBackend) -> Self {
        self.backend = backend;
        self
    }

    pub fn with_density(mut self, density: ScalarField) -> Self {
        self.density = density;
        self
    }

    pub fn with_periods(mut self, periods: Vec<f64>) -> Self {
        self.periods = Some(periods);
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim && x.iter().all(|c| c.is_finite()) && (self.domain)(x)
    }

    pub fn phi(&self, x: &[f64]) -> f64 {
        (self.density)(&Jet::consts(x)).value()
    }

    pub fn metric_at(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.dim;
        let m = (self.metric)(&Jet::consts(x));
        DMatrix::from_fn(n, n, |i, j| m[i * n + j].value())
    }

    /// Draw a point of the domain from the space's sampler.
    pub fn sample_point(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        for _ in 0..10_000 {
            let x = (self.sampler)(rng);
            if self.contains(&x) {
                return x;
            }
        }
        panic!("sampler for {} produced no domain point in 10000 draws", self.name)
    }
}

pub fn box_sampler(bounds: Vec<(f64, f64)>) -> PointSampler {
    Arc::new(move |rng: &mut ChaCha8Rng| bounds.iter().map(|&(lo, hi)| rng.gen_range(lo..hi)).collect())
}

/// Rank-3 array indexed as `[k][i][j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    pub n: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(n: usize) -> Self {
        Tensor3 { n, data: vec![0.0; n * n * n] }
    }
    #[inline]
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.data[(k * self.n + i) * self.n + j]
    }
    #[inline]
    pub fn set(&mut self, k: usize, i: usize, j: usize, v: f64) {
        let n = self.n;
        self.data[(k * n + i) * n + j] = v;
    }
}

/// Curvature tensor with `get(i, j, k, l)` the ∂_l component of R(∂_i, ∂_j)∂_k.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4 {
    pub n: usize,
    pub data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(n: usize) -> Self {
        Tensor4 { n, data: vec![0.0; n * n * n * n] }
    }
    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        let n = self.n;
        self.data[((i * n + j) * n + k) * n + l]
    }
    #[inline]
    fn set(&mut self, i: usize, j: usize, k: usize, l: usize, v: f64) {
        let n = self.n;
        self.data[((i * n + j) * n + k) * n + l] = v;
    }
}

/// Raw partial derivatives of g and φ at a point.
#[derive(Clone, Debug)]
pub(crate) struct RawDerivs {
    pub g: DMatrix<f64>,
    /// ∂_k g_ij as `[k][i][j]`.
    pub dg: Tensor3,
    /// ∂_k ∂_l g_ij as `[(k*n + l)][i][j]`, absent for first-order requests.
    pub ddg: Option<Vec<f64>>,
    pub phi: f64,
    pub dphi: Vec<f64>,
    pub ddphi: Option<DMatrix<f64>>,
}

fn fd_step(x: &[f64], step: Option<f64>) -> f64 {
    step.unwrap_or_else(|| {
        let norm = x.iter().map(|c| c * c).sum::<f64>().sqrt();
        f64::EPSILON.cbrt() * norm.max(1.0)
    })
}

fn plain_eval(spec: &MetricDensitySpec, x: &[f64]) -> (Vec<f64>, f64) {
    let xs = Jet::consts(x);
    let m = (spec.metric)(&xs).iter().map(|j| j.value()).collect();
    let p = (spec.density)(&xs).value();
    (m, p)
}

pub(crate) fn raw_derivs(spec: &MetricDensitySpec, x: &[f64], second: bool) -> RawDerivs {
    match spec.backend {
        DiffBackend::Dual => raw_derivs_dual(spec, x, second),
        DiffBackend::CentralDifference(step) => raw_derivs_fd(spec, x, second, step),
    }
}

fn raw_derivs_dual(spec: &MetricDensitySpec, x: &[f64], second: bool) -> RawDerivs {
    let n = spec.dim;
    let xs = Jet::seed(x, if second { 2 } else { 1 });
    let m = (spec.metric)(&xs);
    let ph = (spec.density)(&xs);
    let g = DMatrix::from_fn(n, n, |i, j| 0.5 * (m[i * n + j].value() + m[j * n + i].value()));
    let mut dg = Tensor3::zeros(n);
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                dg.set(k, i, j, m[i * n + j].grad(k));
            }
        }
    }
    let ddg = second.then(|| {
        let mut d = vec![0.0; n * n * n * n];
        for k in 0..n {
            for l in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        d[((k * n + l) * n + i) * n + j] = m[i * n + j].hess(k, l);
                    }
                }
            }
        }
        d
    });
    RawDerivs {
        g,
        dg,
        ddg,
        phi: ph.value(),
        dphi: (0..n).map(|i| ph.grad(i)).collect(),
        ddphi: second.then(|| DMatrix::from_fn(n, n, |i, j| ph.hess(i, j))),
    }
}

fn raw_derivs_fd(spec: &MetricDensitySpec, x: &[f64], second: bool, step: Option<f64>) -> RawDerivs {
    let n = spec.dim;
    let h = fd_step(x, step);
    let shifted = |d: &[(usize, f64)]| {
        let mut y = x.to_vec();
        for &(k, s) in d {
            y[k] += s * h;
        }
        plain_eval(spec, &y)
    };
    let (m0, p0) = plain_eval(spec, x);
    let plus: Vec<_> = (0..n).map(|k| shifted(&[(k, 1.0)])).collect();
    let minus: Vec<_> = (0..n).map(|k| shifted(&[(k, -1.0)])).collect();
    let g = DMatrix::from_fn(n, n, |i, j| 0.5 * (m0[i * n + j] + m0[j * n + i]));
    let mut dg = Tensor3::zeros(n);
    let mut dphi = vec![0.0; n];
    for k in 0..n {
        for idx in 0..n * n {
            dg.data[k * n * n + idx] = (plus[k].0[idx] - minus[k].0[idx]) / (2.0 * h);
        }
        dphi[k] = (plus[k].1 - minus[k].1) / (2.0 * h);
    }
    let (ddg, ddphi) = if second {
        let mut d = vec![0.0; n * n * n * n];
        let mut dp = DMatrix::zeros(n, n);
        for k in 0..n {
            for idx in 0..n * n {
                d[(k * n + k) * n * n + idx] = (plus[k].0[idx] - 2.0 * m0[idx] + minus[k].0[idx]) / (h * h);
            }
            dp[(k, k)] = (plus[k].1 - 2.0 * p0 + minus[k].1) / (h * h);
            for l in 0..k {
                let pp = shifted(&[(k, 1.0), (l, 1.0)]);
                let pm = shifted(&[(k, 1.0), (l, -1.0)]);
                let mp = shifted(&[(k, -1.0), (l, 1.0)]);
                let mm = shifted(&[(k, -1.0), (l, -1.0)]);
                for idx in 0..n * n {
                    let v = (pp.0[idx] - pm.0[idx] - mp.0[idx] + mm.0[idx]) / (4.0 * h * h);
                    d[(k * n + l) * n * n + idx] = v;
                    d[(l * n + k) * n * n + idx] = v;
                }
                let v = (pp.1 - pm.1 - mp.1 + mm.1) / (4.0 * h * h);
                dp[(k, l)] = v;
                dp[(l, k)] = v;
            }
        }
        (Some(d), Some(dp))
    } else {
        (None, None)
    };
    RawDerivs { g, dg, ddg, phi: p0, dphi, ddphi }
}

/// Pointwise differential-geometric data of (g, φ).
#[derive(Clone, Debug)]
pub struct LocalGeometry {
    pub at: ChartPoint,
    pub phi: f64,
    pub g: DMatrix<f64>,
    pub g_inv: DMatrix<f64>,
    pub dphi: Vec<f64>,
    /// Covariant Hessian ∂_i∂_jφ − Γ^k_ij ∂_kφ.
    pub hess_phi: DMatrix<f64>,
    /// Γ^k_ij as `get(k, i, j)`.
    pub gamma: Tensor3,
    pub gamma_phi: Tensor3,
    pub riem: Tensor4,
    pub riem_phi: Tensor4,
}

fn check_point(spec: &MetricDensitySpec, p: &[f64]) -> Result<()> {
    if !spec.contains(p) {
        return Err(WsecError::Domain(p.to_vec()));
    }
    Ok(())
}

pub(crate) fn invert_metric(g: &DMatrix<f64>, p: &[f64]) -> Result<DMatrix<f64>> {
    let chol = g.clone().cholesky().ok_or_else(|| WsecError::SingularMetric(p.to_vec()))?;
    Ok(chol.inverse())
}

/// Christoffel symbols of the second kind from g^{-1} and ∂g.
pub(crate) fn christoffel(g_inv: &DMatrix<f64>, dg: &Tensor3) -> Tensor3 {
    let n = g_inv.nrows();
    let mut first = Tensor3::zeros(n);
    for l in 0..n {
        for i in 0..n {
            for j in 0..n {
                first.set(l, i, j, 0.5 * (dg.get(i, j, l) + dg.get(j, i, l) - dg.get(l, i, j)));
            }
        }
    }
    let mut gamma = Tensor3::zeros(n);
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for l in 0..n {
                    s += g_inv[(k, l)] * first.get(l, i, j);
                }
                gamma.set(k, i, j, s);
            }
        }
    }
    gamma
}

fn weighted_gamma(gamma: &Tensor3, dphi: &[f64]) -> Tensor3 {
    let n = gamma.n;
    let mut gp = gamma.clone();
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let mut v = gamma.get(k, i, j);
                if k == j {
                    v -= dphi[i];
                }
                if k == i {
                    v -= dphi[j];
                }
                gp.set(k, i, j, v);
            }
        }
    }
    gp
}

/// R^l_ijk = ∂_iΓ^l_jk − ∂_jΓ^l_ik + Γ^m_jk Γ^l_im − Γ^m_ik Γ^l_jm.
/// `dgamma[m]` holds ∂_m Γ.
fn curvature(gamma: &Tensor3, dgamma: &[Tensor3]) -> Tensor4 {
    let n = gamma.n;
    let mut r = Tensor4::zeros(n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            for k in 0..n {
                for l in 0..n {
                    let mut v = dgamma[i].get(l, j, k) - dgamma[j].get(l, i, k);
                    for m in 0..n {
                        v += gamma.get(m, j, k) * gamma.get(l, i, m) - gamma.get(m, i, k) * gamma.get(l, j, m);
                    }
                    r.set(i, j, k, l, v);
                }
            }
        }
    }
    r
}

/// Compute all pointwise geometric data at `p`.
pub fn local_geometry(spec: &MetricDensitySpec, p: &[f64]) -> Result<LocalGeometry> {
    check_point(spec, p)?;
    let n = spec.dim;
    let d = raw_derivs(spec, p, true);
    let g_inv = invert_metric(&d.g, p)?;
    let gamma = christoffel(&g_inv, &d.dg);
    let ddg = d.ddg.as_ref().expect("second derivatives requested");
    let ddphi = d.ddphi.as_ref().expect("second derivatives requested");

    // ∂_m g^{kl} = −g^{ka} ∂_m g_ab g^{bl}
    let mut dginv = Vec::with_capacity(n);
    for m in 0..n {
        let dgm = DMatrix::from_fn(n, n, |a, b| d.dg.get(m, a, b));
        dginv.push(-(&g_inv * dgm * &g_inv));
    }
    let ddg_at = |m: usize, q: usize, i: usize, j: usize| ddg[((m * n + q) * n + i) * n + j];
    let mut dgamma = Vec::with_capacity(n);
    for m in 0..n {
        let mut t = Tensor3::zeros(n);
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let mut s = 0.0;
                    for l in 0..n {
                        let c = 0.5 * (d.dg.get(i, j, l) + d.dg.get(j, i, l) - d.dg.get(l, i, j));
                        let dc = 0.5 * (ddg_at(m, i, j, l) + ddg_at(m, j, i, l) - ddg_at(m, l, i, j));
                        s += dginv[m][(k, l)] * c + g_inv[(k, l)] * dc;
                    }
                    t.set(k, i, j, s);
                }
            }
        }
        dgamma.push(t);
    }
    let riem = curvature(&gamma, &dgamma);

    let gamma_phi = weighted_gamma(&gamma, &d.dphi);
    let mut dgamma_phi = dgamma.clone();
    for (m, t) in dgamma_phi.iter_mut().enumerate() {
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let mut v = t.get(k, i, j);
                    if k == j {
                        v -= ddphi[(m, i)];
                    }
                    if k == i {
                        v -= ddphi[(m, j)];
                    }
                    t.set(k, i, j, v);
                }
            }
        }
    }
    let riem_phi = curvature(&gamma_phi, &dgamma_phi);

    let hess_phi = DMatrix::from_fn(n, n, |i, j| {
        let mut v = ddphi[(i, j)];
        for k in 0..n {
            v -= gamma.get(k, i, j) * d.dphi[k];
        }
        v
    });
    Ok(LocalGeometry {
        at: ChartPoint::new(p.to_vec()),
        phi: d.phi,
        g: d.g,
        g_inv,
        dphi: d.dphi,
        hess_phi,
        gamma,
        gamma_phi,
        riem,
        riem_phi,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CurvatureRoute {
    /// sec(U,V) + Hess φ(U,U) + dφ(U)².
    HessianFormula,
    /// g(R^{∇^φ}(V,U)U, V).
    TensorFormula,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightedSectional {
    pub value: f64,
    /// Orthonormal frame (U, V) actually used, in this order.
    pub frame: (Vec<f64>, Vec<f64>),
}

impl LocalGeometry {
    pub fn dim(&self) -> usize {
        self.g.nrows()
    }

    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        g_inner(&self.g, u, v)
    }

    pub fn norm(&self, u: &[f64]) -> f64 {
        self.inner(u, u).sqrt()
    }

    /// dφ(u).
    pub fn dphi_of(&self, u: &[f64]) -> f64 {
        self.dphi.iter().zip(u).map(|(a, b)| a * b).sum()
    }

    /// Metric gradient ∇φ.
    pub fn grad_phi(&self) -> Vec<f64> {
        let n = self.dim();
        (0..n).map(|i| (0..n).map(|j| self.g_inv[(i, j)] * self.dphi[j]).sum()).collect()
    }

    fn apply(t: &Tensor4, x: &[f64], y: &[f64], z: &[f64]) -> Vec<f64> {
        let n = t.n;
        let mut out = vec![0.0; n];
        for i in 0..n {
            if x[i] == 0.0 {
                continue;
            }
            for j in 0..n {
                let xy = x[i] * y[j];
                if xy == 0.0 || i == j {
                    continue;
                }
                for k in 0..n {
                    let c = xy * z[k];
                    if c == 0.0 {
                        continue;
                    }
                    for (l, o) in out.iter_mut().enumerate() {
                        *o += c * t.get(i, j, k, l);
                    }
                }
            }
        }
        out
    }

    /// R(X,Y)Z for the Levi-Civita connection.
    pub fn riem_apply(&self, x: &[f64], y: &[f64], z: &[f64]) -> Vec<f64> {
        Self::apply(&self.riem, x, y, z)
    }

    /// R^{∇^φ}(X,Y)Z.
    pub fn riem_phi_apply(&self, x: &[f64], y: &[f64], z: &[f64]) -> Vec<f64> {
        Self::apply(&self.riem_phi, x, y, z)
    }

    /// Coordinate matrix M with R(X, v)v = M X (weighted connection if `weighted`).
    pub fn jacobi_operator(&self, v: &[f64], weighted: bool) -> DMatrix<f64> {
        let t = if weighted { &self.riem_phi } else { &self.riem };
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for p in 0..n {
            for q in 0..n {
                if p == q {
                    continue;
                }
                for r in 0..n {
                    let c = v[q] * v[r];
                    if c == 0.0 {
                        continue;
                    }
                    for l in 0..n {
                        m[(l, p)] += c * t.get(p, q, r, l);
                    }
                }
            }
        }
        m
    }

    /// Gram–Schmidt orthonormalisation of (U, V) with respect to g.
    pub fn orthonormalize(&self, u: &[f64], v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let uu = self.inner(u, u);
        let vv = self.inner(v, v);
        let uv = self.inner(u, v);
        let gram = uu * vv - uv * uv;
        if !(gram >= 1e-12) {
            return Err(WsecError::DegeneratePlane(gram));
        }
        let nu = uu.sqrt();
        let e1: Vec<f64> = u.iter().map(|c| c / nu).collect();
        let c = self.inner(v, &e1);
        let w: Vec<f64> = v.iter().zip(&e1).map(|(a, b)| a - c * b).collect();
        let nw = self.norm(&w);
        let e2 = w.iter().map(|a| a / nw).collect();
        Ok((e1, e2))
    }

    /// Classical sectional curvature g(R(V,U)U,V) / (|U|²|V|² − g(U,V)²).
    pub fn sectional(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        let gram = self.inner(u, u) * self.inner(v, v) - self.inner(u, v).powi(2);
        if !(gram >= 1e-12) {
            return Err(WsecError::DegeneratePlane(gram));
        }
        let r = self.riem_apply(v, u, u);
        Ok(self.inner(&r, v) / gram)
    }

    pub fn weighted_sectional(&self, u: &[f64], v: &[f64], route: CurvatureRoute) -> Result<WeightedSectional> {
        let (e1, e2) = self.orthonormalize(u, v)?;
        let value = match route {
            CurvatureRoute::HessianFormula => {
                let sec = self.inner(&self.riem_apply(&e2, &e1, &e1), &e2);
                let n = self.dim();
                let mut h = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        h += e1[i] * self.hess_phi[(i, j)] * e1[j];
                    }
                }
                let d = self.dphi_of(&e1);
                sec + h + d * d
            }
            CurvatureRoute::TensorFormula => self.inner(&self.riem_phi_apply(&e2, &e1, &e1), &e2),
        };
        Ok(WeightedSectional { value, frame: (e1, e2) })
    }
}

/// Sectional curvature of the plane spanned by U and V at p.
pub fn sectional(spec: &MetricDensitySpec, p: &[f64], u: &[f64], v: &[f64]) -> Result<f64> {
    local_geometry(spec, p)?.sectional(u, v)
}

/// Weighted sectional curvature sec̄_φ(U, V); the argument order matters.
pub fn weighted_sectional(
    spec: &MetricDensitySpec,
    p: &[f64],
    u: &[f64],
    v: &[f64],
    route: CurvatureRoute,
) -> Result<WeightedSectional> {
    local_geometry(spec, p)?.weighted_sectional(u, v, route)
}

/// The pair (e^{-2φ} g, −φ).
pub fn conformal_involution(spec: &MetricDensitySpec) -> MetricDensitySpec {
    let metric = spec.metric.clone();
    let density = spec.density.clone();
    let d2 = spec.density.clone();
    let mut out = spec.clone();
    out.name = format!("conformal({})", spec.name);
    out.metric = Arc::new(move |x: &[Jet]| {
        let f = (-2.0 * density(x)).exp();
        metric(x).into_iter().map(|m| m * f).collect()
    });
    out.density = Arc::new(move |x: &[Jet]| -d2(x));
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedHessians {
    /// g(∇^φ_U ∇u, V).
    pub whess2: f64,
    /// (∇^φ_U du)(V).
    pub whess3: f64,
    /// Hess_{g̃} u(U, V) for g̃ = e^{-2φ} g.
    pub conf_hess: f64,
}

/// Covariant Hessian matrix and differential of a scalar field.
pub fn scalar_hessian(spec: &MetricDensitySpec, lg: &LocalGeometry, u: &ScalarField) -> (Vec<f64>, DMatrix<f64>) {
    let n = spec.dim;
    let x = &lg.at.coords;
    let (du, ddu) = match spec.backend {
        DiffBackend::Dual => {
            let j = u(&Jet::seed(x, 2));
            ((0..n).map(|i| j.grad(i)).collect::<Vec<_>>(), DMatrix::from_fn(n, n, |i, k| j.hess(i, k)))
        }
        DiffBackend::CentralDifference(step) => {
            let h = fd_step(x, step);
            let f = |d: &[(usize, f64)]| {
                let mut y = x.to_vec();
                for &(k, s) in d {
                    y[k] += s * h;
                }
                u(&Jet::consts(&y)).value()
            };
            let f0 = f(&[]);
            let du: Vec<f64> = (0..n).map(|k| (f(&[(k, 1.0)]) - f(&[(k, -1.0)])) / (2.0 * h)).collect();
            let mut dd = DMatrix::zeros(n, n);
            for k in 0..n {
                dd[(k, k)] = (f(&[(k, 1.0)]) - 2.0 * f0 + f(&[(k, -1.0)])) / (h * h);
                for l in 0..k {
                    let v = (f(&[(k, 1.0), (l, 1.0)]) - f(&[(k, 1.0), (l, -1.0)]) - f(&[(k, -1.0), (l, 1.0)])
                        + f(&[(k, -1.0), (l, -1.0)]))
                        / (4.0 * h * h);
                    dd[(k, l)] = v;
                    dd[(l, k)] = v;
                }
            }
            (du, dd)
        }
    };
    let hess = DMatrix::from_fn(n, n, |i, j| {
        let mut v = ddu[(i, j)];
        for k in 0..n {
            v -= lg.gamma.get(k, i, j) * du[k];
        }
        v
    });
    (du, hess)
}

pub fn weighted_hessians(
    spec: &MetricDensitySpec,
    u: &ScalarField,
    p: &[f64],
    uvec: &[f64],
    vvec: &[f64],
) -> Result<WeightedHessians> {
    let lg = local_geometry(spec, p)?;
    let (du, hess) = scalar_hessian(spec, &lg, u);
    let n = spec.dim;
    let mut h = 0.0;
    for i in 0..n {
        for j in 0..n {
            h += uvec[i] * hess[(i, j)] * vvec[j];
        }
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let du_u = dot(&du, uvec);
    let du_v = dot(&du, vvec);
    let dp_u = lg.dphi_of(uvec);
    let dp_v = lg.dphi_of(vvec);
    let mut grad_dot = 0.0;
    for i in 0..n {
        for j in 0..n {
            grad_dot += lg.dphi[i] * lg.g_inv[(i, j)] * du[j];
        }
    }
    let guv = lg.inner(uvec, vvec);
    Ok(WeightedHessians {
        whess2: h - dp_u * du_v - grad_dot * guv,
        whess3: h + dp_u * du_v + dp_v * du_u,
        conf_hess: h + dp_u * du_v + du_u * dp_v - grad_dot * guv,
    })
}

/// Summary of the invariants of a `MetricDensitySpec` checked at sampled points.
#[derive(Clone, Debug, Serialize)]
pub struct SpecCheck {
    pub points: usize,
    pub min_metric_eigenvalue: f64,
    pub max_backend_rel_error: f64,
}

/// Check positive definiteness and dual vs finite-difference agreement on Γ
/// and Hess φ at `points` sampled domain points.
pub fn check_spec(spec: &MetricDensitySpec, points: usize, rng: &mut ChaCha8Rng) -> Result<SpecCheck> {
    let mut min_eig = f64::INFINITY;
    let mut max_err: f64 = 0.0;
    let dual = spec.clone().with_backend(DiffBackend::Dual);
    let fd = spec.clone().with_backend(DiffBackend::CentralDifference(None));
    for _ in 0..points {
        let x = spec.sample_point(rng);
        let a = local_geometry(&dual, &x)?;
        let b = local_geometry(&fd, &x)?;
        let eig = a.g.clone().symmetric_eigen().eigenvalues.min();
        min_eig = min_eig.min(eig);
        let scale_g = a.gamma.data.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (p, q) in a.gamma.data.iter().zip(&b.gamma.data) {
            max_err = max_err.max((p - q).abs() / scale_g);
        }
        let scale_h = a.hess_phi.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (p, q) in a.hess_phi.iter().zip(b.hess_phi.iter()) {
            max_err = max_err.max((p - q).abs() / scale_h);
        }
    }
    Ok(SpecCheck { points, min_metric_eigenvalue: min_eig, max_backend_rel_error: max_err })
}

/// Defects of the two structural identities of ∇^φ at a point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConnectionDefects {
    /// max_i |Σ_k Γ^φ^k_ik − ∂_i log(√det g · e^{−(n+1)φ})|, relative to max(1, |∂ log|).
    pub trace: f64,
    /// max |Γ^φ^k_ij − Γ^φ^k_ji|.
    pub torsion: f64,
}

/// log det of a symmetric positive definite matrix of jets, by Gaussian
/// elimination with value-based pivoting.
pub fn jet_log_det(m: &[Jet], n: usize) -> Result<Jet> {
    let mut a = m.to_vec();
    let mut acc = Jet::constant(0.0);
    for c in 0..n {
        let piv = (c..n)
            .max_by(|&i, &j| a[i * n + c].value().abs().total_cmp(&a[j * n + c].value().abs()))
            .unwrap();
        if a[piv * n + c].value().abs() < 1e-300 {
            return Err(WsecError::SingularMetric(m.iter().map(|j| j.value()).collect()));
        }
        if piv != c {
            for k in 0..n {
                a.swap(c * n + k, piv * n + k);
            }
        }
        let d = a[c * n + c];
        // a swap flips the sign of det; only |det| enters the logarithm
        acc += if d.value() < 0.0 { (-d).ln() } else { d.ln() };
        for r in (c + 1)..n {
            let f = a[r * n + c] / d;
            for k in c..n {
                let t = a[c * n + k];
                a[r * n + k] -= f * t;
            }
        }
    }
    Ok(acc)
}

/// Checks that ∇^φ is torsion-free and that its trace Σ_k Γ^φ^k_ik equals the
/// logarithmic derivative of the density of μ = e^{−(n+1)φ} dvol_g.
pub fn connection_defects(spec: &MetricDensitySpec, p: &[f64]) -> Result<ConnectionDefects> {
    let lg = local_geometry(spec, p)?;
    let n = spec.dim;
    let x = Jet::seed(p, 1);
    let logdet = jet_log_det(&(spec.metric)(&x), n)?;
    let phi = (spec.density)(&x);
    let log_mu = logdet.scale(0.5) - phi.scale((n + 1) as f64);
    let mut trace: f64 = 0.0;
    let mut torsion: f64 = 0.0;
    for i in 0..n {
        let tr: f64 = (0..n).map(|k| lg.gamma_phi.get(k, i, k)).sum();
        let target = log_mu.grad(i);
        trace = trace.max((tr - target).abs() / target.abs().max(1.0));
        for j in 0..n {
            for k in 0..n {
                torsion = torsion.max((lg.gamma_phi.get(k, i, j) - lg.gamma_phi.get(k, j, i)).abs());
            }
        }
    }
    Ok(ConnectionDefects { trace, torsion })
}

/// Orthonormal pair drawn uniformly from the g-unit sphere at `lg`.
pub fn random_orthonormal_pair(lg: &LocalGeometry, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    use rand_distr::StandardNormal;
    let n = lg.dim();
    loop {
        let u: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let (u, v) = (to_metric_frame(lg, &u), to_metric_frame(lg, &v));
        if let Ok(pair) = lg.orthonormalize(&u, &v) {
            return pair;
        }
    }
}

/// Map Euclidean-distributed components to a g-isotropic distribution via
/// the inverse Cholesky factor, so random draws are uniform on the g-sphere.
fn to_metric_frame(lg: &LocalGeometry, w: &[f64]) -> Vec<f64> {
    let chol = lg.g.clone().cholesky().expect("metric positive definite");
    let l = chol.l();
    let n = lg.dim();
    let mut out = vec![0.0; n];
    // Solve L^T x = w.
    for i in (0..n).rev() {
        let mut s = w[i];
        for j in i + 1..n {
            s -= l[(j, i)] * out[j];
        }
        out[i] = s / l[(i, i)];
    }
    out
}

pub fn g_inner(g: &DMatrix<f64>, u: &[f64], v: &[f64]) -> f64 {
    let n = g.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += u[i] * g[(i, j)] * v[j];
        }
    }
    s
}

/// g-orthonormal basis of T_pM by Gram–Schmidt on `first` followed by the
/// coordinate basis.
pub fn orthonormal_basis(g: &DMatrix<f64>, first: Option<&[f64]>) -> Vec<Vec<f64>> {
    let n = g.nrows();
    let mut seeds: Vec<Vec<f64>> = Vec::new();
    if let Some(f) = first {
        seeds.push(f.to_vec());
    }
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        seeds.push(e);
    }
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    for s in seeds {
        if basis.len() == n {
            break;
        }
        let scale = g_inner(g, &s, &s).sqrt();
        let mut w = s.clone();
        // two passes for numerical orthogonality
        for _ in 0..2 {
            for b in &basis {
                let c = g_inner(g, &w, b);
                for (wi, bi) in w.iter_mut().zip(b) {
                    *wi -= c * bi;
                }
            }
        }
        let nw = g_inner(g, &w, &w).sqrt();
        if nw > 1e-6 * scale {
            basis.push(w.iter().map(|c| c / nw).collect());
        }
    }
    basis
}
