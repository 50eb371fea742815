//! The Kurth steady state: distribution function, potential, particle energy
//! and the analytic phase-space gradients.
//!
//! All quantities are in model units with unit total mass and unit support
//! radius. Spherically symmetric variables are `r = |x|`, `p_r = x·v/|x|` and
//! `beta = |x ∧ v|²`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{KurthError, Result};
use crate::vec3::{self, Vec3};

/// Normalisation `3/(4π³)` of the distribution function.
pub const KURTH_NORM: f64 = 3.0 / (4.0 * PI * PI * PI);

/// Uniform mass density `3/(4π)` inside the unit ball.
pub const KURTH_DENSITY: f64 = 3.0 / (4.0 * PI);

/// A Cartesian phase-space point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseVec {
    pub x: Vec3,
    pub v: Vec3,
}

impl PhaseVec {
    pub fn new(x: Vec3, v: Vec3) -> Self {
        Self { x, v }
    }

    /// `|x ∧ v|²` from the explicit cross product.
    pub fn angular_momentum_sq(&self) -> f64 {
        vec3::norm2(&vec3::cross(&self.x, &self.v))
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(self.v.iter()).all(|c| c.is_finite())
    }
}

/// A point in the spherically symmetric variables `(r, p_r, beta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialState {
    pub r: f64,
    pub p_r: f64,
    pub beta: f64,
}

impl RadialState {
    pub fn new(r: f64, p_r: f64, beta: f64) -> Result<Self> {
        if !(r.is_finite() && p_r.is_finite() && beta.is_finite()) {
            return Err(KurthError::InvalidParameter(format!(
                "non-finite radial state ({r}, {p_r}, {beta})"
            )));
        }
        if r < 0.0 || beta < 0.0 {
            return Err(KurthError::InvalidParameter(format!(
                "radial state needs r >= 0 and beta >= 0, got r = {r}, beta = {beta}"
            )));
        }
        Ok(Self { r, p_r, beta })
    }
}

/// Value of the support function `F` together with the membership predicate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportInfo {
    pub value: f64,
    /// `F > 0` and `beta < 1`.
    pub inside: bool,
}

/// Converts a Cartesian point to `(r, p_r, beta)`.
///
/// `beta` is evaluated as `|x|²|v|² - (x·v)²` and clamped at zero to absorb
/// cancellation for nearly collinear `x` and `v`.
pub fn to_radial(p: &PhaseVec) -> Result<RadialState> {
    let r2 = vec3::norm2(&p.x);
    if r2 == 0.0 {
        return Err(KurthError::ZeroRadius);
    }
    let r = r2.sqrt();
    let xv = vec3::dot(&p.x, &p.v);
    let beta = (r2 * vec3::norm2(&p.v) - xv * xv).max(0.0);
    Ok(RadialState {
        r,
        p_r: xv / r,
        beta,
    })
}

/// `beta / r²`, treating `0/0` at the origin as zero.
fn centrifugal(r: f64, beta: f64) -> Result<f64> {
    if beta == 0.0 {
        Ok(0.0)
    } else if r == 0.0 {
        Err(KurthError::CentrifugalSingularity { beta })
    } else {
        Ok(beta / (r * r))
    }
}

/// Support function `F(r, p_r, beta) = 1 - r² - p_r² - beta/r² + beta`.
pub fn support(s: &RadialState) -> Result<SupportInfo> {
    let value = 1.0 - s.r * s.r - s.p_r * s.p_r - centrifugal(s.r, s.beta)? + s.beta;
    Ok(SupportInfo {
        value,
        inside: value > 0.0 && s.beta < 1.0,
    })
}

/// Gravitational potential of the uniform unit ball.
pub fn potential(r: f64) -> f64 {
    if r <= 1.0 {
        0.5 * r * r - 1.5
    } else {
        -1.0 / r
    }
}

/// Radial derivative `U'(r)` of [`potential`].
pub fn potential_derivative(r: f64) -> f64 {
    if r <= 1.0 {
        r
    } else {
        1.0 / (r * r)
    }
}

/// `U(r) + beta / (2 r²)`.
pub fn effective_potential(r: f64, beta: f64) -> Result<f64> {
    Ok(potential(r) + 0.5 * centrifugal(r, beta)?)
}

/// Particle energy `p_r²/2 + U_eff(r, beta)`.
pub fn energy(s: &RadialState) -> Result<f64> {
    Ok(0.5 * s.p_r * s.p_r + effective_potential(s.r, s.beta)?)
}

/// Kurth distribution in energy/angular-momentum form.
///
/// Zero unless `-2(1 + e) + beta > 0` and `beta < 1`.
pub fn eval_q_tilde(e: f64, beta: f64) -> f64 {
    let g = -2.0 * (1.0 + e) + beta;
    if g > 0.0 && beta < 1.0 {
        KURTH_NORM / g.sqrt()
    } else {
        0.0
    }
}

/// Kurth distribution evaluated through the support function.
pub fn eval_q_radial(s: &RadialState) -> Result<f64> {
    let info = support(s)?;
    Ok(if info.inside {
        KURTH_NORM / info.value.sqrt()
    } else {
        0.0
    })
}

/// Cartesian support value `1 - |x|² - |v|² + |x ∧ v|²` and `|x ∧ v|²`.
fn cartesian_support(p: &PhaseVec) -> (f64, f64) {
    let l2 = p.angular_momentum_sq();
    (1.0 - vec3::norm2(&p.x) - vec3::norm2(&p.v) + l2, l2)
}

/// Kurth distribution `Q_K(x, v)`.
pub fn eval_q(p: &PhaseVec) -> f64 {
    let (f, l2) = cartesian_support(p);
    if f > 0.0 && l2 < 1.0 {
        KURTH_NORM / f.sqrt()
    } else {
        0.0
    }
}

/// Analytic gradients `(∇ₓQ, ∇ᵥQ)` on the open support.
pub fn grad_q(p: &PhaseVec) -> Result<(Vec3, Vec3)> {
    let (f, l2) = cartesian_support(p);
    if !(f > 0.0 && l2 < 1.0) {
        return Err(KurthError::OutsideSupport { support: f });
    }
    let q = KURTH_NORM / f.sqrt();
    // (4π³/3)² Q³
    let pref = q * q * q / (KURTH_NORM * KURTH_NORM);
    let xv = vec3::dot(&p.x, &p.v);
    let gx = vec3::lincomb(&p.x, 1.0 - vec3::norm2(&p.v), &p.v, xv);
    let gv = vec3::lincomb(&p.v, 1.0 - vec3::norm2(&p.x), &p.x, xv);
    Ok((vec3::scale(&gx, pref), vec3::scale(&gv, pref)))
}
