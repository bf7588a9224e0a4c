//! Second-order forward-mode dual numbers.
//!
//! A [`Jet`] carries a value, its gradient and its (symmetric) Hessian with
//! respect to up to [`MAX_DIM`] seed variables. Jets seeded with order 1 skip
//! the Hessian bookkeeping, which is all the geodesic right-hand side needs.

use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

/// Largest supported chart dimension.
pub const MAX_DIM: usize = 8;
const HLEN: usize = MAX_DIM * (MAX_DIM + 1) / 2;

#[inline]
fn hidx(i: usize, j: usize) -> usize {
    let (a, b) = if i <= j { (i, j) } else { (j, i) };
    b * (b + 1) / 2 + a
}

#[derive(Clone, Copy, Debug)]
pub struct Jet {
    v: f64,
    n: u8,
    ord: u8,
    g: [f64; MAX_DIM],
    h: [f64; HLEN],
}

impl Jet {
    /// A constant with zero derivatives.
    pub fn constant(v: f64) -> Self {
        Jet { v, n: 0, ord: 2, g: [0.0; MAX_DIM], h: [0.0; HLEN] }
    }

    /// Seed variable `i` of `n` with value `v`, tracking derivatives up to `ord`.
    pub fn var(v: f64, i: usize, n: usize, ord: u8) -> Self {
        assert!(n <= MAX_DIM, "dimension {n} exceeds MAX_DIM");
        let mut j = Jet { v, n: n as u8, ord, g: [0.0; MAX_DIM], h: [0.0; HLEN] };
        j.g[i] = 1.0;
        j
    }

    /// Seed all coordinates of `x`.
    pub fn seed(x: &[f64], ord: u8) -> Vec<Jet> {
        let n = x.len();
        x.iter().enumerate().map(|(i, &v)| Jet::var(v, i, n, ord)).collect()
    }

    /// Constant jets for plain evaluation.
    pub fn consts(x: &[f64]) -> Vec<Jet> {
        x.iter().map(|&v| Jet::constant(v)).collect()
    }

    pub fn value(&self) -> f64 {
        self.v
    }

    pub fn grad(&self, i: usize) -> f64 {
        if i < self.n as usize {
            self.g[i]
        } else {
            0.0
        }
    }

    pub fn hess(&self, i: usize, j: usize) -> f64 {
        if i < self.n as usize && j < self.n as usize {
            self.h[hidx(i, j)]
        } else {
            0.0
        }
    }

    fn meta(a: &Jet, b: &Jet) -> (u8, u8) {
        let n = a.n.max(b.n);
        let ord = if a.n == 0 {
            b.ord
        } else if b.n == 0 {
            a.ord
        } else {
            a.ord.min(b.ord)
        };
        (n, ord)
    }

    /// Apply a scalar function given its value and first two derivatives at `self.v`.
    pub fn chain(&self, f0: f64, f1: f64, f2: f64) -> Jet {
        let mut r = Jet { v: f0, n: self.n, ord: self.ord, g: [0.0; MAX_DIM], h: [0.0; HLEN] };
        let n = self.n as usize;
        for i in 0..n {
            r.g[i] = f1 * self.g[i];
        }
        if self.ord >= 2 {
            for j in 0..n {
                for i in 0..=j {
                    let k = hidx(i, j);
                    r.h[k] = f1 * self.h[k] + f2 * self.g[i] * self.g[j];
                }
            }
        }
        r
    }

    pub fn exp(self) -> Jet {
        let e = self.v.exp();
        self.chain(e, e, e)
    }

    pub fn ln(self) -> Jet {
        let x = self.v;
        self.chain(x.ln(), 1.0 / x, -1.0 / (x * x))
    }

    pub fn sin(self) -> Jet {
        let (s, c) = self.v.sin_cos();
        self.chain(s, c, -s)
    }

    pub fn cos(self) -> Jet {
        let (s, c) = self.v.sin_cos();
        self.chain(c, -s, -c)
    }

    pub fn tan(self) -> Jet {
        let t = self.v.tan();
        let d = 1.0 + t * t;
        self.chain(t, d, 2.0 * t * d)
    }

    pub fn sinh(self) -> Jet {
        let (s, c) = (self.v.sinh(), self.v.cosh());
        self.chain(s, c, s)
    }

    pub fn cosh(self) -> Jet {
        let (s, c) = (self.v.sinh(), self.v.cosh());
        self.chain(c, s, c)
    }

    pub fn tanh(self) -> Jet {
        let t = self.v.tanh();
        let d = 1.0 - t * t;
        self.chain(t, d, -2.0 * t * d)
    }

    pub fn atan(self) -> Jet {
        let x = self.v;
        let d = 1.0 / (1.0 + x * x);
        self.chain(x.atan(), d, -2.0 * x * d * d)
    }

    pub fn atanh(self) -> Jet {
        let x = self.v;
        let d = 1.0 / (1.0 - x * x);
        self.chain(x.atanh(), d, 2.0 * x * d * d)
    }

    pub fn sqrt(self) -> Jet {
        let r = self.v.sqrt();
        self.chain(r, 0.5 / r, -0.25 / (r * self.v))
    }

    pub fn powi(self, k: i32) -> Jet {
        let x = self.v;
        let kf = k as f64;
        let f0 = x.powi(k);
        let f1 = if k == 0 { 0.0 } else { kf * x.powi(k - 1) };
        let f2 = if k == 0 || k == 1 { 0.0 } else { kf * (kf - 1.0) * x.powi(k - 2) };
        self.chain(f0, f1, f2)
    }

    pub fn powf(self, p: f64) -> Jet {
        let x = self.v;
        self.chain(x.powf(p), p * x.powf(p - 1.0), p * (p - 1.0) * x.powf(p - 2.0))
    }

    /// `self^e` for a jet exponent.
    pub fn pow(self, e: Jet) -> Jet {
        if e.n == 0 {
            let p = e.v;
            if p.fract() == 0.0 && p.abs() < 64.0 {
                return self.powi(p as i32);
            }
            return self.powf(p);
        }
        (self.ln() * e).exp()
    }

    pub fn square(self) -> Jet {
        self * self
    }

    pub fn recip(self) -> Jet {
        let x = self.v;
        self.chain(1.0 / x, -1.0 / (x * x), 2.0 / (x * x * x))
    }

    pub fn scale(mut self, c: f64) -> Jet {
        self.v *= c;
        let n = self.n as usize;
        for i in 0..n {
            self.g[i] *= c;
        }
        if self.ord >= 2 {
            for k in 0..n * (n + 1) / 2 {
                self.h[k] *= c;
            }
        }
        self
    }

    pub fn is_finite(&self) -> bool {
        let n = self.n as usize;
        self.v.is_finite()
            && self.g[..n].iter().all(|x| x.is_finite())
            && self.h[..n * (n + 1) / 2].iter().all(|x| x.is_finite())
    }
}

impl From<f64> for Jet {
    fn from(v: f64) -> Self {
        Jet::constant(v)
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, b: Jet) -> Jet {
        let (n, ord) = Jet::meta(&self, &b);
        let mut r = Jet { v: self.v + b.v, n, ord, g: [0.0; MAX_DIM], h: [0.0; HLEN] };
        let nu = n as usize;
        for i in 0..nu {
            r.g[i] = self.g[i] + b.g[i];
        }
        if ord >= 2 {
            for k in 0..nu * (nu + 1) / 2 {
                r.h[k] = self.h[k] + b.h[k];
            }
        }
        r
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, b: Jet) -> Jet {
        self + (-b)
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, b: Jet) -> Jet {
        if b.n == 0 {
            return self.scale(b.v);
        }
        if self.n == 0 {
            return b.scale(self.v);
        }
        let (n, ord) = Jet::meta(&self, &b);
        let mut r = Jet { v: self.v * b.v, n, ord, g: [0.0; MAX_DIM], h: [0.0; HLEN] };
        let nu = n as usize;
        for i in 0..nu {
            r.g[i] = self.v * b.g[i] + b.v * self.g[i];
        }
        if ord >= 2 {
            for j in 0..nu {
                for i in 0..=j {
                    let k = hidx(i, j);
                    r.h[k] = self.v * b.h[k]
                        + b.v * self.h[k]
                        + self.g[i] * b.g[j]
                        + self.g[j] * b.g[i];
                }
            }
        }
        r
    }
}

impl Div for Jet {
    type Output = Jet;
    fn div(self, b: Jet) -> Jet {
        if b.n == 0 {
            return self.scale(1.0 / b.v);
        }
        self * b.recip()
    }
}

impl Add<f64> for Jet {
    type Output = Jet;
    fn add(mut self, c: f64) -> Jet {
        self.v += c;
        self
    }
}

impl Sub<f64> for Jet {
    type Output = Jet;
    fn sub(mut self, c: f64) -> Jet {
        self.v -= c;
        self
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(self, c: f64) -> Jet {
        self.scale(c)
    }
}

impl Div<f64> for Jet {
    type Output = Jet;
    fn div(self, c: f64) -> Jet {
        self.scale(1.0 / c)
    }
}

impl Add<Jet> for f64 {
    type Output = Jet;
    fn add(self, j: Jet) -> Jet {
        j + self
    }
}

impl Sub<Jet> for f64 {
    type Output = Jet;
    fn sub(self, j: Jet) -> Jet {
        (-j) + self
    }
}

impl Mul<Jet> for f64 {
    type Output = Jet;
    fn mul(self, j: Jet) -> Jet {
        j.scale(self)
    }
}

impl Div<Jet> for f64 {
    type Output = Jet;
    fn div(self, j: Jet) -> Jet {
        j.recip().scale(self)
    }
}

impl AddAssign for Jet {
    fn add_assign(&mut self, b: Jet) {
        *self = *self + b;
    }
}

impl SubAssign for Jet {
    fn sub_assign(&mut self, b: Jet) {
        *self = *self - b;
    }
}

impl MulAssign for Jet {
    fn mul_assign(&mut self, b: Jet) {
        *self = *self * b;
    }
}
