//! Numerical flux evaluation: explicit central + Rusanov fluxes for the 1D
//! hydrodynamic subsystems, and the implicit mass-flux corrections that make
//! the time steppers uniformly stable in the stiffness parameter.

use crate::closure::PressureClosure;
use crate::{Error, Result};

/// Scalar numerical viscosity choice for the interface flux.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ViscosityChoice {
    /// Local Lax-Friedrichs coefficient from the full-system wave speed
    /// `max(|u_L| + c_L, |u_R| + c_R)`, scaled by the given constant.
    RusanovScalar { scale: f64 },
    None,
}

impl ViscosityChoice {
    pub fn rusanov() -> Self {
        ViscosityChoice::RusanovScalar { scale: 1.0 }
    }

    fn coefficient(&self, u_left: f64, c_left: f64, u_right: f64, c_right: f64) -> f64 {
        match *self {
            ViscosityChoice::RusanovScalar { scale } => {
                scale * (u_left.abs() + c_left).max(u_right.abs() + c_right)
            }
            ViscosityChoice::None => 0.0,
        }
    }
}

/// Interface flux for the 1D electron fluid: mass and momentum components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HydroFluxEp {
    pub f_n: f64,
    pub f_u: f64,
}

/// Central + viscosity flux `f = 1/2 [F(U_L) + F(U_R) + mu (U_L - U_R)]`
/// for states `U = (n, q)` with `F(U) = (q, q^2/n + p(n))`.
pub fn flux_ep_explicit(
    left: (f64, f64),
    right: (f64, f64),
    closure: &PressureClosure,
    visc: ViscosityChoice,
) -> Result<HydroFluxEp> {
    let (nl, ql) = left;
    let (nr, qr) = right;
    if nl <= 0.0 || nr <= 0.0 {
        return Err(Error::InvalidInput(format!("non-positive density at interface: {nl}, {nr}")));
    }
    let ul = ql / nl;
    let ur = qr / nr;
    let mu = visc.coefficient(ul, closure.sound_speed(nl), ur, closure.sound_speed(nr));
    let f_n = 0.5 * (ql + qr + mu * (nl - nr));
    let f_u = 0.5 * (ql * ul + closure.pressure(nl) + qr * ur + closure.pressure(nr) + mu * (ql - qr));
    Ok(HydroFluxEp { f_n, f_u })
}

/// Implicit mass flux for the electrostatic stepper:
/// the explicit flux minus the time-step corrections built from the new
/// electric field and the neighboring momentum fluxes.
#[allow(clippy::too_many_arguments)]
pub fn mass_flux_ap(
    f_n_expl: f64,
    n_left: f64,
    n_right: f64,
    e_face_new: f64,
    f_u_right_neighbor: f64,
    f_u_left_neighbor: f64,
    delta: f64,
    h: f64,
) -> f64 {
    f_n_expl
        - 0.5 * delta * (n_left + n_right) * e_face_new
        - 0.5 * delta / h * (f_u_right_neighbor - f_u_left_neighbor)
}

/// Interface flux for the 1D two-velocity-component fluid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HydroFluxEm {
    pub f_n: f64,
    pub f_ux: f64,
    pub f_uy: f64,
}

/// Central + viscosity flux for states `U = (n, q_x, q_y)` with
/// `F(U) = (q_x, q_x^2/n + p(n), q_x q_y / n)`.
pub fn flux_em_explicit(
    left: (f64, f64, f64),
    right: (f64, f64, f64),
    closure: &PressureClosure,
    visc: ViscosityChoice,
) -> Result<HydroFluxEm> {
    let (nl, qxl, qyl) = left;
    let (nr, qxr, qyr) = right;
    if nl <= 0.0 || nr <= 0.0 {
        return Err(Error::InvalidInput(format!("non-positive density at interface: {nl}, {nr}")));
    }
    let uxl = qxl / nl;
    let uxr = qxr / nr;
    let mu = visc.coefficient(uxl, closure.sound_speed(nl), uxr, closure.sound_speed(nr));
    let f_n = 0.5 * (qxl + qxr + mu * (nl - nr));
    let f_ux = 0.5 * (qxl * uxl + closure.pressure(nl) + qxr * uxr + closure.pressure(nr) + mu * (qxl - qxr));
    let f_uy = 0.5 * (qxl * qyl / nl + qxr * qyr / nr + mu * (qyl - qyr));
    Ok(HydroFluxEm { f_n, f_ux, f_uy })
}

/// Implicit mass flux for the electromagnetic stepper; adds the magnetic
/// correction to [`mass_flux_ap`].
#[allow(clippy::too_many_arguments)]
pub fn mass_flux_ap_em(
    f_n_expl: f64,
    n_left: f64,
    n_right: f64,
    ex_face_new: f64,
    f_ux_right_neighbor: f64,
    f_ux_left_neighbor: f64,
    qy_left: f64,
    qy_right: f64,
    bz_face: f64,
    delta: f64,
    h: f64,
) -> f64 {
    mass_flux_ap(f_n_expl, n_left, n_right, ex_face_new, f_ux_right_neighbor, f_ux_left_neighbor, delta, h)
        - 0.5 * delta * (qy_left + qy_right) * bz_face
}

/// Rusanov coefficient of the explicit transport subsystem only (eigenvalues
/// 0 and u): the maximal |u| of the adjacent cells. Used by the strongly
/// magnetized stepper whose pressure flux is implicit.
pub fn rusanov_speed_explicit(u_left: [f64; 3], u_right: [f64; 3]) -> f64 {
    let nl = (u_left[0] * u_left[0] + u_left[1] * u_left[1] + u_left[2] * u_left[2]).sqrt();
    let nr = (u_right[0] * u_right[0] + u_right[1] * u_right[1] + u_right[2] * u_right[2]).sqrt();
    nl.max(nr)
}
