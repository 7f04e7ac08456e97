//! Taylor-Hood discretization of the Stokes problem pulled back to the rest channel.

mod space;
mod stokes;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use space::{p2_values, TaylorHoodSpace, CONSTRAINED};
pub use stokes::{deformed_mesh_csv, FlowSummary, FluidModel, FluidSolution, SaddleSystem, VelocityBlock};

/// Physical data in CGS units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// Kinematic viscosity, g/(cm s).
    pub nu: f64,
    /// Peak inflow speed, cm/s.
    pub v0: f64,
    /// Volume force.
    pub force: [f64; 2],
    /// Wall spring constant, g/s^2.
    pub spring: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            nu: 0.035,
            v0: 30.0,
            force: [0.0; 2],
            spring: 62.5,
        }
    }
}

impl PhysicalConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::Argument(format!("viscosity must be positive, got {}", self.nu)));
        }
        if !(self.spring > 0.0 && self.spring.is_finite()) {
            return Err(Error::Argument(format!("spring constant must be positive, got {}", self.spring)));
        }
        if !self.v0.is_finite() || self.force.iter().any(|f| !f.is_finite()) {
            return Err(Error::Argument("inflow speed and force must be finite".into()));
        }
        Ok(())
    }
}
