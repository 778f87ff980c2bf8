//! Pressure closures for the fluid models.

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PressureClosure {
    /// p(n) = T n
    Isothermal { t: f64 },
    /// p(n) = coef n^gamma, gamma > 1
    Isentropic { coef: f64, gamma: f64 },
}

impl PressureClosure {
    pub fn isothermal(t: f64) -> Self {
        PressureClosure::Isothermal { t }
    }

    pub fn pressure(&self, n: f64) -> f64 {
        match *self {
            PressureClosure::Isothermal { t } => t * n,
            PressureClosure::Isentropic { coef, gamma } => coef * n.powf(gamma),
        }
    }

    pub fn dpressure(&self, n: f64) -> f64 {
        match *self {
            PressureClosure::Isothermal { t } => t,
            PressureClosure::Isentropic { coef, gamma } => coef * gamma * n.powf(gamma - 1.0),
        }
    }

    /// Sound speed sqrt(p'(n)).
    pub fn sound_speed(&self, n: f64) -> f64 {
        self.dpressure(n).max(0.0).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            PressureClosure::Isothermal { t } if t > 0.0 && t.is_finite() => Ok(()),
            PressureClosure::Isentropic { coef, gamma } if coef > 0.0 && gamma > 1.0 => Ok(()),
            _ => Err(Error::InvalidInput("pressure closure parameters out of range".into())),
        }
    }

    /// The isothermal slope, when the closure is linear in n.
    pub fn isothermal_slope(&self) -> Option<f64> {
        match *self {
            PressureClosure::Isothermal { t } => Some(t),
            _ => None,
        }
    }
}
