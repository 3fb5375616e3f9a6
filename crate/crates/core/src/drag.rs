//! Aerodynamic drag and the gradient-flow acceleration bound.
//!
//! The controller only consumes `F`, `∂F/∂v` and `∂F/∂p̂`, so any model that
//! implements [`DragModel`] with the right sign structure can be swapped in:
//! zero at `v = 0`, increasing in `v`, decreasing in `p̂` behind a
//! predecessor and constant in `p̂` for a free-stream vehicle.

use core::fmt;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Coefficients of the exponential-wake drag law
/// `F = c0·v²·(1 − c1·exp(c2·p̂))` (the wake term is absent in free stream).
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(default))]
pub struct DragCoefficients {
    /// Base drag per unit mass (1/m).
    pub c0: f64,
    /// Maximum wake reduction fraction, in [0, 1).
    pub c1: f64,
    /// Wake decay rate (1/m).
    pub c2: f64,
}

impl Default for DragCoefficients {
    fn default() -> Self {
        Self {
            c0: 4e-4,
            c1: 0.6,
            c2: 0.08,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DragPartials {
    /// ∂F/∂v (1/s)
    pub dv: f64,
    /// ∂F/∂p̂ (1/s²)
    pub dp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DragError {
    NegativeSpeed(f64),
    /// Followers need `v > 0` because `∂F/∂v` divides the gradient bound.
    NonPositiveFollowerSpeed(f64),
}

impl fmt::Display for DragError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NegativeSpeed(v) => write!(f, "drag is undefined for negative speed {v}"),
            Self::NonPositiveFollowerSpeed(v) => {
                write!(f, "follower drag partials need positive speed, got {v}")
            }
        }
    }
}

impl core::error::Error for DragError {}

/// Specific drag force (m/s²) as a function of speed and relative position.
pub trait DragModel {
    fn force(&self, v: f64, p_hat: f64, is_leader: bool) -> Result<f64, DragError>;
    fn partials(&self, v: f64, p_hat: f64, is_leader: bool) -> Result<DragPartials, DragError>;
}

impl DragCoefficients {
    fn wake_factor(&self, p_hat: f64, is_leader: bool) -> f64 {
        if is_leader {
            1.0
        } else {
            1.0 - self.c1 * libm::exp(self.c2 * p_hat)
        }
    }
}

impl DragModel for DragCoefficients {
    fn force(&self, v: f64, p_hat: f64, is_leader: bool) -> Result<f64, DragError> {
        if v < 0.0 {
            return Err(DragError::NegativeSpeed(v));
        }
        Ok(self.c0 * v * v * self.wake_factor(p_hat, is_leader))
    }

    fn partials(&self, v: f64, p_hat: f64, is_leader: bool) -> Result<DragPartials, DragError> {
        if is_leader {
            if v < 0.0 {
                return Err(DragError::NegativeSpeed(v));
            }
            return Ok(DragPartials {
                dv: 2.0 * self.c0 * v,
                dp: 0.0,
            });
        }
        if v <= 0.0 {
            return Err(DragError::NonPositiveFollowerSpeed(v));
        }
        let wake = self.c1 * libm::exp(self.c2 * p_hat);
        Ok(DragPartials {
            dv: 2.0 * self.c0 * v * (1.0 - wake),
            dp: -self.c0 * v * v * wake * self.c2,
        })
    }
}

pub fn drag_force(
    v: f64,
    p_hat: f64,
    is_leader: bool,
    model: &impl DragModel,
) -> Result<f64, DragError> {
    model.force(v, p_hat, is_leader)
}

pub fn drag_partials(
    v: f64,
    p_hat: f64,
    is_leader: bool,
    model: &impl DragModel,
) -> Result<DragPartials, DragError> {
    model.partials(v, p_hat, is_leader)
}

/// Largest acceleration that does not increase the drag cost.
///
/// Leaders get `0`; followers get `(|F_p̂| / F_v)·v̂`.
pub fn gradient_flow_bound(
    v: f64,
    p_hat: f64,
    v_hat: f64,
    is_leader: bool,
    model: &impl DragModel,
) -> Result<f64, DragError> {
    if is_leader {
        return Ok(0.0);
    }
    let d = model.partials(v, p_hat, false)?;
    Ok(libm::fabs(d.dp) / d.dv * v_hat)
}
