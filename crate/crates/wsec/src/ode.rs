//! Dormand–Prince 5(4) integrator with cubic Hermite dense output.
//!
//! The right-hand side writes into a buffer and returns `false` when the
//! state is outside its domain; the step is then retried with a smaller size.

#[derive(Clone, Debug)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Lower bound on the number of accepted steps over the span.
    pub min_samples: usize,
    /// Take exactly this many equal steps without error control.
    pub fixed_steps: Option<usize>,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions { rtol: 1e-9, atol: 1e-11, min_samples: 256, fixed_steps: None, max_steps: 200_000 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum OdeStatus {
    Complete,
    /// The event function crossed zero at this time.
    Event(f64),
    DomainExit(f64),
    StepFailure(f64),
}

/// Accepted steps with states and derivatives, interpolable by cubic Hermite.
#[derive(Clone, Debug, Default)]
pub struct DenseSolution {
    pub t: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    pub dy: Vec<Vec<f64>>,
}

impl DenseSolution {
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

    /// Index `i` with t[i] ≤ t ≤ t[i+1], clamped to the sampled range.
    pub fn segment(&self, t: f64) -> usize {
        let n = self.t.len();
        if n < 2 {
            return 0;
        }
        match self.t.binary_search_by(|a| a.partial_cmp(&t).unwrap()) {
            Ok(i) => i.min(n - 2),
            Err(0) => 0,
            Err(i) => (i - 1).min(n - 2),
        }
    }

    /// Interpolated state and derivative at `t`.
    pub fn eval(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let m = self.y[0].len();
        let mut y = vec![0.0; m];
        let mut dy = vec![0.0; m];
        self.eval_into(t, &mut y, &mut dy);
        (y, dy)
    }

    pub fn eval_into(&self, t: f64, y: &mut [f64], dy: &mut [f64]) {
        if self.t.len() == 1 {
            y.copy_from_slice(&self.y[0]);
            dy.copy_from_slice(&self.dy[0]);
            return;
        }
        let i = self.segment(t);
        let (t0, t1) = (self.t[i], self.t[i + 1]);
        let h = t1 - t0;
        let th = (t - t0) / h;
        let h00 = (1.0 + 2.0 * th) * (1.0 - th) * (1.0 - th);
        let h10 = th * (1.0 - th) * (1.0 - th);
        let h01 = th * th * (3.0 - 2.0 * th);
        let h11 = th * th * (th - 1.0);
        let d00 = 6.0 * th * (th - 1.0) / h;
        let d10 = (1.0 - th) * (1.0 - 3.0 * th);
        let d01 = -d00;
        let d11 = th * (3.0 * th - 2.0);
        let (y0, y1, f0, f1) = (&self.y[i], &self.y[i + 1], &self.dy[i], &self.dy[i + 1]);
        for k in 0..y.len() {
            y[k] = h00 * y0[k] + h10 * h * f0[k] + h01 * y1[k] + h11 * h * f1[k];
            dy[k] = d00 * y0[k] + d10 * f0[k] + d01 * y1[k] + d11 * f1[k];
        }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

struct Stages {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y5: Vec<f64>,
}

/// One Dormand–Prince step. Returns the error norm, or `None` if a stage
/// left the domain. `k[0]` must hold f(t, y); on success `k[6]` holds f at
/// the new point and `y5` the new state.
fn try_step<F>(f: &mut F, t: f64, y: &[f64], h: f64, st: &mut Stages, rtol: f64, atol: f64) -> Option<f64>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> bool,
{
    let m = y.len();
    macro_rules! stage {
        ($dst:expr, $c:expr, $( ($a:expr, $ki:expr) ),* ) => {{
            for i in 0..m {
                let mut acc = 0.0;
                $( acc += $a * st.k[$ki][i]; )*
                st.tmp[i] = y[i] + h * acc;
            }
            let (_, rest) = st.k.split_at_mut($dst);
            if !f(t + $c * h, &st.tmp, &mut rest[0]) {
                return None;
            }
        }};
    }
    stage!(1, C2, (A21, 0));
    stage!(2, C3, (A31, 0), (A32, 1));
    stage!(3, C4, (A41, 0), (A42, 1), (A43, 2));
    stage!(4, C5, (A51, 0), (A52, 1), (A53, 2), (A54, 3));
    stage!(5, 1.0, (A61, 0), (A62, 1), (A63, 2), (A64, 3), (A65, 4));
    for i in 0..m {
        st.y5[i] = y[i] + h * (B1 * st.k[0][i] + B3 * st.k[2][i] + B4 * st.k[3][i] + B5 * st.k[4][i] + B6 * st.k[5][i]);
    }
    {
        let (_, rest) = st.k.split_at_mut(6);
        if !f(t + h, &st.y5, &mut rest[0]) {
            return None;
        }
    }
    let mut err = 0.0;
    for i in 0..m {
        let e = h
            * (E1 * st.k[0][i] + E3 * st.k[2][i] + E4 * st.k[3][i] + E5 * st.k[4][i] + E6 * st.k[5][i]
                + E7 * st.k[6][i]);
        let sc = atol + rtol * y[i].abs().max(st.y5[i].abs());
        err += (e / sc) * (e / sc);
    }
    let err = (err / m as f64).sqrt();
    if !err.is_finite() || !st.y5.iter().all(|v| v.is_finite()) {
        return None;
    }
    Some(err)
}

/// Integrate y' = f(t, y) from `t0` to `t_end`. An optional event function
/// stops integration where it first crosses from negative to nonnegative.
pub fn integrate<F>(
    mut f: F,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    opts: &OdeOptions,
    event: Option<&dyn Fn(f64, &[f64]) -> f64>,
) -> (DenseSolution, OdeStatus)
where
    F: FnMut(f64, &[f64], &mut [f64]) -> bool,
{
    let m = y0.len();
    let mut sol = DenseSolution::default();
    let mut f0 = vec![0.0; m];
    if !f(t0, y0, &mut f0) {
        return (sol, OdeStatus::DomainExit(t0));
    }
    sol.t.push(t0);
    sol.y.push(y0.to_vec());
    sol.dy.push(f0.clone());
    let span = t_end - t0;
    if span <= 0.0 {
        return (sol, OdeStatus::Complete);
    }
    let mut st = Stages {
        k: std::array::from_fn(|_| vec![0.0; m]),
        tmp: vec![0.0; m],
        y5: vec![0.0; m],
    };
    let mut t = t0;
    let mut y = y0.to_vec();
    st.k[0].copy_from_slice(&f0);
    let mut ev_prev = event.map(|e| e(t0, y0));

    let fixed = opts.fixed_steps;
    let h_max = match fixed {
        Some(nsteps) => span / nsteps.max(1) as f64,
        None => span / opts.min_samples.max(1) as f64,
    };
    let mut h = match fixed {
        Some(_) => h_max,
        None => {
            let ynorm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            let fnorm = f0.iter().map(|v| v * v).sum::<f64>().sqrt();
            let guess = if fnorm > 0.0 { 0.01 * (ynorm.max(1e-3)) / fnorm } else { h_max };
            guess.min(h_max).max(span * 1e-8)
        }
    };
    let h_min = span * 1e-14;
    let mut steps = 0usize;
    let mut domain_trouble = false;
    let mut step_index = 0usize;
    while t < t_end {
        if steps >= opts.max_steps {
            return (sol, OdeStatus::StepFailure(t));
        }
        steps += 1;
        let last = match fixed {
            Some(nsteps) => step_index + 1 == nsteps.max(1),
            None => t + h >= t_end - 1e-12 * span,
        };
        let h_try = if last { t_end - t } else { h };
        match try_step(&mut f, t, &y, h_try, &mut st, opts.rtol, opts.atol) {
            None => {
                domain_trouble = true;
                h = h_try * 0.25;
                if h < h_min {
                    return (sol, OdeStatus::DomainExit(t));
                }
            }
            Some(err) if fixed.is_some() || err <= 1.0 => {
                let t_new = if last { t_end } else { t + h_try };
                if let (Some(e), Some(prev)) = (event, ev_prev) {
                    let cur = e(t_new, &st.y5);
                    if prev < 0.0 && cur >= 0.0 {
                        sol.t.push(t_new);
                        sol.y.push(st.y5.clone());
                        sol.dy.push(st.k[6].clone());
                        let te = locate_event(&sol, e, t, t_new);
                        let (ye, _) = sol.eval(te);
                        sol.t.pop();
                        sol.y.pop();
                        sol.dy.pop();
                        let mut fe = vec![0.0; m];
                        f(te, &ye, &mut fe);
                        if te > t {
                            sol.t.push(te);
                            sol.y.push(ye);
                            sol.dy.push(fe);
                        }
                        return (sol, OdeStatus::Event(te));
                    }
                    ev_prev = Some(cur);
                }
                t = t_new;
                y.copy_from_slice(&st.y5);
                let k6 = std::mem::take(&mut st.k[6]);
                st.k[0].copy_from_slice(&k6);
                st.k[6] = k6;
                sol.t.push(t);
                sol.y.push(y.clone());
                sol.dy.push(st.k[0].clone());
                step_index += 1;
                if fixed.is_none() {
                    let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                    let fac = if domain_trouble { fac.min(1.0) } else { fac };
                    h = (h_try * fac).min(h_max);
                    domain_trouble = false;
                }
            }
            Some(err) => {
                h = h_try * (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
                if h < h_min {
                    return (sol, OdeStatus::StepFailure(t));
                }
            }
        }
    }
    (sol, OdeStatus::Complete)
}

fn locate_event(sol: &DenseSolution, e: &dyn Fn(f64, &[f64]) -> f64, mut a: f64, mut b: f64) -> f64 {
    for _ in 0..100 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let (y, _) = sol.eval(mid);
        if e(mid, &y) >= 0.0 {
            b = mid;
        } else {
            a = mid;
        }
    }
    b
}
