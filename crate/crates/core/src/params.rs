use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use crate::error::{Error, Result};

/// Physical and economic constants shared by all models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Angle of the incoming light rays, in ]0, pi/2[.
    pub theta0: f64,
    /// Leaf density per unit stem length (Model 1).
    pub kappa: f64,
    /// Stem length (Model 1).
    pub ell: f64,
    /// Stems per unit length (Model 1 equilibrium).
    pub rho: f64,
    /// Transport cost exponent, in ]0, 1[ (Model 2).
    pub alpha: f64,
    /// Transport cost coefficient (Model 2).
    pub c: f64,
    /// Stem density (Model 2 equilibrium).
    pub rho0: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams { theta0: FRAC_PI_4, kappa: 1.0, ell: 1.0, rho: 0.0, alpha: 0.5, c: 1.0, rho0: 0.0 }
    }
}

fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { field, reason: reason.into() }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("theta0", self.theta0),
            ("kappa", self.kappa),
            ("ell", self.ell),
            ("rho", self.rho),
            ("alpha", self.alpha),
            ("c", self.c),
            ("rho0", self.rho0),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(invalid(name, "must be finite"));
            }
        }
        if !(self.theta0 > 0.0 && self.theta0 < FRAC_PI_2) {
            return Err(invalid("theta0", format!("{} is outside ]0, pi/2[", self.theta0)));
        }
        if !(self.kappa > 0.0) {
            return Err(invalid("kappa", format!("{} must be positive", self.kappa)));
        }
        if !(self.ell > 0.0) {
            return Err(invalid("ell", format!("{} must be positive", self.ell)));
        }
        if self.rho < 0.0 {
            return Err(invalid("rho", format!("{} must be non-negative", self.rho)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid("alpha", format!("{} is outside ]0, 1[", self.alpha)));
        }
        if !(self.c > 0.0) {
            return Err(invalid("c", format!("{} must be positive", self.c)));
        }
        if self.rho0 < 0.0 {
            return Err(invalid("rho0", format!("{} must be non-negative", self.rho0)));
        }
        Ok(())
    }

    /// Direction `n = (sin theta0, -cos theta0)` along which the light rays travel.
    pub fn sun_direction(&self) -> (f64, f64) {
        (self.theta0.sin(), -self.theta0.cos())
    }

    pub fn rho_kappa(&self) -> f64 {
        self.rho * self.kappa
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ModelParams::default().validate().unwrap();
    }

    #[test]
    fn negative_kappa_names_field() {
        let p = ModelParams { kappa: -1.0, ..Default::default() };
        match p.validate() {
            Err(Error::InvalidParameter { field, .. }) => assert_eq!(field, "kappa"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sun_direction_is_unit() {
        let (a, b) = ModelParams::default().sun_direction();
        assert!((a * a + b * b - 1.0).abs() < 1e-15);
        assert!(b < 0.0 && a > 0.0);
    }
}
