use serde::{Deserialize, Serialize};

/// Settings of the SIMP/OC loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerParams {
    /// Target mean density over the whole domain, in (0, 1).
    pub volfrac: f64,
    pub maxiter: u32,
    #[serde(rename = "p")]
    pub penal: f64,
    /// OC move limit.
    #[serde(rename = "move")]
    pub move_limit: f64,
    /// OC damping exponent.
    pub eta: f64,
    pub change_tol: f64,
    pub remove_voids: bool,
    pub iterative_solver: bool,
    pub void_threshold: f64,
    /// Consecutive low iterations before an element becomes a passive void.
    pub void_patience: u32,
    /// Filter radius in element units.
    pub rmin: f64,
}

impl Default for OptimizerParams {
    fn default() -> Self {
        Self {
            volfrac: 0.3,
            maxiter: 100,
            penal: 3.0,
            move_limit: 0.2,
            eta: 0.5,
            change_tol: 0.01,
            remove_voids: true,
            iterative_solver: true,
            void_threshold: 0.01,
            void_patience: 5,
            rmin: 1.5,
        }
    }
}

pub fn validate_volfrac(v: f64) -> Result<(), String> {
    if v.is_finite() && v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(format!("volfrac {v} outside (0, 1)"))
    }
}

pub fn validate_maxiter(n: u32) -> Result<(), String> {
    if n >= 1 {
        Ok(())
    } else {
        Err("maxiter must be >= 1".into())
    }
}

impl OptimizerParams {
    pub fn validate(&self) -> Result<(), String> {
        validate_volfrac(self.volfrac)?;
        validate_maxiter(self.maxiter)?;
        let checks = [
            (self.penal.is_finite() && self.penal >= 1.0, "p must be >= 1"),
            (self.move_limit > 0.0 && self.move_limit <= 1.0, "move must be in (0, 1]"),
            (self.eta > 0.0 && self.eta.is_finite(), "eta must be > 0"),
            (self.change_tol >= 0.0 && self.change_tol.is_finite(), "change_tol must be >= 0"),
            ((0.0..1.0).contains(&self.void_threshold), "void_threshold must be in [0, 1)"),
            (self.void_patience >= 1, "void_patience must be >= 1"),
            (self.rmin.is_finite() && self.rmin >= 1.0, "rmin must be >= 1"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err((*msg).to_string()),
            None => Ok(()),
        }
    }
}
