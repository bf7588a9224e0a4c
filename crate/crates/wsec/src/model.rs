//! Constant-curvature comparison functions sn_κ and cs_κ.

use serde::{Deserialize, Serialize};

use crate::error::{Result, WsecError};
use crate::jet::Jet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpace {
    pub kappa: f64,
}

impl ModelSpace {
    pub fn new(kappa: f64) -> Self {
        ModelSpace { kappa }
    }

    pub fn sn(&self, s: f64) -> f64 {
        model_sn(self.kappa, s)
    }

    pub fn cs(&self, s: f64) -> f64 {
        model_cs(self.kappa, s)
    }

    /// cs_κ/sn_κ.
    pub fn ct(&self, s: f64) -> f64 {
        self.cs(s) / self.sn(s)
    }

    /// First positive zero of sn_κ (infinite for κ ≤ 0).
    pub fn first_zero(&self) -> f64 {
        if self.kappa > 0.0 {
            std::f64::consts::PI / self.kappa.sqrt()
        } else {
            f64::INFINITY
        }
    }
}

/// sn_κ: sn″ = −κ sn, sn(0) = 0, sn′(0) = 1.
pub fn model_sn(kappa: f64, s: f64) -> f64 {
    let x = kappa * s * s;
    if x.abs() < 1e-8 {
        s * (1.0 - x / 6.0 + x * x / 120.0)
    } else if kappa > 0.0 {
        let r = kappa.sqrt();
        (r * s).sin() / r
    } else {
        let r = (-kappa).sqrt();
        (r * s).sinh() / r
    }
}

/// cs_κ = sn_κ′.
pub fn model_cs(kappa: f64, s: f64) -> f64 {
    let x = kappa * s * s;
    if x.abs() < 1e-8 {
        1.0 - x / 2.0 + x * x / 24.0
    } else if kappa > 0.0 {
        (kappa.sqrt() * s).cos()
    } else {
        ((-kappa).sqrt() * s).cosh()
    }
}

pub fn sn_jet(kappa: f64, s: Jet) -> Jet {
    let v = s.value();
    let sn = model_sn(kappa, v);
    s.chain(sn, model_cs(kappa, v), -kappa * sn)
}

pub fn cs_jet(kappa: f64, s: Jet) -> Jet {
    let v = s.value();
    let cs = model_cs(kappa, v);
    s.chain(cs, -kappa * model_sn(kappa, v), -kappa * cs)
}

/// Whether cs_κ/sn_κ decreases from s1 to s2.
pub fn monotone_model_ratio(kappa: f64, s1: f64, s2: f64) -> Result<bool> {
    let z = ModelSpace::new(kappa).first_zero();
    if !(s1 > 0.0 && s1 < s2 && s2 < z) {
        return Err(WsecError::ModelDomain(format!("need 0 < s1 < s2 < {z}, got s1 = {s1}, s2 = {s2}")));
    }
    let m = ModelSpace::new(kappa);
    Ok(m.ct(s1) >= m.ct(s2))
}
