//! 1D electron-fluid/Maxwell time steppers (components `n, q_x, q_y, E_x,
//! E_y, B_z`) on a periodic grid.
//!
//! Staggering: `n`, `q_x`, `q_y`, `E_y` are cell-centered; `E_x` and `B_z`
//! live at the interfaces `x_{k+1/2}`.
//!
//! The classical stepper treats the Maxwell part semi-implicitly (implicit
//! magnetic field in the transverse Ampere equation) and the Lorentz force
//! with the new density; its time step must resolve the plasma period. The
//! uniformly stable stepper makes the Maxwell part fully implicit and the
//! mass flux implicit; the transverse field then solves a tridiagonal
//! elliptic equation whose diagonal stays positive at `lambda = 0`. Both
//! steppers preserve the discrete Gauss law exactly because the longitudinal
//! Ampere current is the mass flux itself.

use crate::flux::{flux_em_explicit, mass_flux_ap_em, HydroFluxEm, ViscosityChoice};
use crate::grid::{Bc1d, Grid1D};
use crate::linsolve::{solve_tridiagonal, Gauge};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EmState {
    pub n: Vec<f64>,
    pub qx: Vec<f64>,
    pub qy: Vec<f64>,
    /// Face-centered longitudinal electric field at `x_{k+1/2}`.
    pub ex: Vec<f64>,
    /// Cell-centered transverse electric field.
    pub ey: Vec<f64>,
    /// Face-centered magnetic field at `x_{k+1/2}`.
    pub bz: Vec<f64>,
}

impl EmState {
    pub fn validate(&self, grid: &Grid1D) -> Result<()> {
        let n = grid.n_cells;
        let faces = grid.n_interfaces();
        if self.n.len() != n
            || self.qx.len() != n
            || self.qy.len() != n
            || self.ey.len() != n
            || self.ex.len() != faces
            || self.bz.len() != faces
        {
            return Err(Error::InvalidInput("state arrays do not match grid".into()));
        }
        if self.n.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidInput("density must be positive and finite".into()));
        }
        Ok(())
    }
}

pub type EmParams = crate::euler_poisson::EpParams;

fn require_periodic(grid: &Grid1D) -> Result<()> {
    if grid.bc != Bc1d::Periodic {
        return Err(Error::Unsupported("the fluid/Maxwell steppers run on periodic grids".into()));
    }
    Ok(())
}

fn explicit_fluxes(state: &EmState, params: &EmParams, grid: &Grid1D) -> Result<Vec<HydroFluxEm>> {
    let n = grid.n_cells;
    let visc = ViscosityChoice::RusanovScalar { scale: params.visc_const };
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let kp = grid.wrap(k as isize + 1);
        out.push(flux_em_explicit(
            (state.n[k], state.qx[k], state.qy[k]),
            (state.n[kp], state.qx[kp], state.qy[kp]),
            &params.closure,
            visc,
        )?);
    }
    Ok(out)
}

/// Interface-to-cell average at cell k of a face field.
fn cell_average(face: &[f64], grid: &Grid1D, k: usize) -> f64 {
    let km = grid.wrap(k as isize - 1);
    0.5 * (face[k] + face[km])
}

/// Classical semi-implicit step; requires `lambda > 0`.
///
/// Update order: explicit density, longitudinal Ampere, explicit Faraday,
/// transverse Ampere with the new magnetic field, then momentum with the new
/// density and fields.
pub fn step_classical_em(state: &EmState, params: &EmParams, grid: &Grid1D) -> Result<EmState> {
    require_periodic(grid)?;
    state.validate(grid)?;
    if !(params.lambda > 0.0) {
        return Err(Error::InvalidInput("the classical stepper needs lambda > 0".into()));
    }
    let n = grid.n_cells;
    let (h, delta) = (grid.h, params.delta);
    let lam2 = params.lambda * params.lambda;
    let fx = explicit_fluxes(state, params, grid)?;

    let mut n_new = vec![0.0; n];
    for k in 0..n {
        let km = grid.wrap(k as isize - 1);
        n_new[k] = state.n[k] - delta / h * (fx[k].f_n - fx[km].f_n);
    }
    if n_new.iter().any(|&v| v <= 0.0) {
        return Err(Error::InvalidInput("density became non-positive; reduce the time step".into()));
    }
    // longitudinal Ampere with the mass flux as current
    let mut ex_new = vec![0.0; n];
    for k in 0..n {
        ex_new[k] = state.ex[k] + delta / lam2 * fx[k].f_n;
    }
    // explicit Faraday
    let mut bz_new = vec![0.0; n];
    for k in 0..n {
        let kp = grid.wrap(k as isize + 1);
        bz_new[k] = state.bz[k] - delta / h * (state.ey[kp] - state.ey[k]);
    }
    // transverse Ampere, implicit magnetic field
    let mut ey_new = vec![0.0; n];
    for k in 0..n {
        let km = grid.wrap(k as isize - 1);
        ey_new[k] = state.ey[k] + delta / lam2 * (state.qy[k] - (bz_new[k] - bz_new[km]) / h);
    }
    // momentum with new density and fields, old magnetic average in the drift
    let mut qx_new = vec![0.0; n];
    let mut qy_new = vec![0.0; n];
    for k in 0..n {
        let km = grid.wrap(k as isize - 1);
        let ex_tilde = 0.5 * (ex_new[k] + ex_new[km]);
        let bz_tilde = cell_average(&state.bz, grid, k);
        qx_new[k] = state.qx[k] - delta / h * (fx[k].f_ux - fx[km].f_ux)
            - delta * (n_new[k] * ex_tilde + state.qy[k] * bz_tilde);
        qy_new[k] = state.qy[k] - delta / h * (fx[k].f_uy - fx[km].f_uy)
            - delta * (n_new[k] * ey_new[k] - state.qx[k] * bz_tilde);
    }
    Ok(EmState { n: n_new, qx: qx_new, qy: qy_new, ex: ex_new, ey: ey_new, bz: bz_new })
}

/// Uniformly stable step; accepts `lambda = 0`.
///
/// Update order: (i) tridiagonal solve for the new transverse field,
/// (ii) explicit update of the longitudinal field, (iii) implicit Faraday,
/// (iv) momentum with the explicit density in the Lorentz force,
/// (v) conservative density update with the implicit mass flux.
pub fn step_ap_em(state: &EmState, params: &EmParams, grid: &Grid1D) -> Result<EmState> {
    require_periodic(grid)?;
    state.validate(grid)?;
    let n = grid.n_cells;
    let (h, delta) = (grid.h, params.delta);
    let lam2 = params.lambda * params.lambda;
    let d2 = delta * delta;
    let fx = explicit_fluxes(state, params, grid)?;

    // (i) transverse field: (lam^2 + d^2 n_k) Ey_k - d^2/h^2 (Ey_{k+1} - 2Ey_k + Ey_{k-1}) = rhs
    let mut lower = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    for k in 0..n {
        let km = grid.wrap(k as isize - 1);
        let bz_tilde = cell_average(&state.bz, grid, k);
        lower[k] = -d2 / (h * h);
        upper[k] = -d2 / (h * h);
        diag[k] = lam2 + d2 * state.n[k] + 2.0 * d2 / (h * h);
        rhs[k] = lam2 * state.ey[k] + delta * state.qy[k] - delta / h * (state.bz[k] - state.bz[km])
            - d2 / h * (fx[k].f_uy - fx[km].f_uy)
            + d2 * state.qx[k] * bz_tilde;
    }
    let ey_new = solve_tridiagonal(&lower, &diag, &upper, &rhs, true, Gauge::None)?;

    // (ii) longitudinal field, explicit formula
    let mut ex_new = vec![0.0; n];
    for k in 0..n {
        let kp = grid.wrap(k as isize + 1);
        let km = grid.wrap(k as isize - 1);
        let a = lam2 + 0.5 * d2 * (state.n[k] + state.n[kp]);
        ex_new[k] = (lam2 * state.ex[k] + delta * fx[k].f_n
            - 0.5 * d2 / h * (fx[kp].f_ux - fx[km].f_ux)
            - 0.5 * d2 * (state.qy[k] + state.qy[kp]) * state.bz[k])
            / a;
    }
    // (iii) implicit Faraday
    let mut bz_new = vec![0.0; n];
    for k in 0..n {
        let kp = grid.wrap(k as isize + 1);
        bz_new[k] = state.bz[k] - delta / h * (ey_new[kp] - ey_new[k]);
    }
    // (iv) momentum with explicit density in the force
    let mut qx_new = vec![0.0; n];
    let mut qy_new = vec![0.0; n];
    for k in 0..n {
        let km = grid.wrap(k as isize - 1);
        let ex_tilde = 0.5 * (ex_new[k] + ex_new[km]);
        let bz_tilde = cell_average(&state.bz, grid, k);
        qx_new[k] = state.qx[k] - delta / h * (fx[k].f_ux - fx[km].f_ux)
            - delta * (state.n[k] * ex_tilde + state.qy[k] * bz_tilde);
        qy_new[k] = state.qy[k] - delta / h * (fx[k].f_uy - fx[km].f_uy)
            - delta * (state.n[k] * ey_new[k] - state.qx[k] * bz_tilde);
    }
    // (v) implicit mass flux and conservative density update
    let mut fn_tilde = vec![0.0; n];
    for k in 0..n {
        let kp = grid.wrap(k as isize + 1);
        let km = grid.wrap(k as isize - 1);
        fn_tilde[k] = mass_flux_ap_em(
            fx[k].f_n,
            state.n[k],
            state.n[kp],
            ex_new[k],
            fx[kp].f_ux,
            fx[km].f_ux,
            state.qy[k],
            state.qy[kp],
            state.bz[k],
            delta,
            h,
        );
    }
    let mut n_new = vec![0.0; n];
    for k in 0..n {
        let km = grid.wrap(k as isize - 1);
        n_new[k] = state.n[k] - delta / h * (fn_tilde[k] - fn_tilde[km]);
    }
    if n_new.iter().any(|&v| v <= 0.0) {
        return Err(Error::InvalidInput("density became non-positive; reduce the time step".into()));
    }
    Ok(EmState { n: n_new, qx: qx_new, qy: qy_new, ex: ex_new, ey: ey_new, bz: bz_new })
}

/// Max-norm residual of the discrete Gauss law
/// `lambda^2 (E_x|_{k+1/2} - E_x|_{k-1/2})/h = 1 - n_k`.
pub fn gauss_residual_em(state: &EmState, params: &EmParams, grid: &Grid1D) -> f64 {
    let lam2 = params.lambda * params.lambda;
    let mut worst = 0.0f64;
    for k in 0..grid.n_cells {
        let km = grid.wrap(k as isize - 1);
        let r = lam2 / grid.h * (state.ex[k] - state.ex[km]) - (1.0 - state.n[k]);
        worst = worst.max(r.abs());
    }
    worst
}

/// Residual of the quasineutral current identity
/// `u_y|_k - (B_z|_{k+1/2} - B_z|_{k-1/2})/h = 0`.
pub fn qn_current_residual(state: &EmState, grid: &Grid1D) -> f64 {
    let mut worst = 0.0f64;
    for k in 0..grid.n_cells {
        let km = grid.wrap(k as isize - 1);
        let r = state.qy[k] / state.n[k] - (state.bz[k] - state.bz[km]) / grid.h;
        worst = worst.max(r.abs());
    }
    worst
}

/// Builds a state whose longitudinal field solves the discrete Gauss law for
/// the density profile. With `bz_from_uy` the magnetic field additionally
/// satisfies the quasineutral current identity (requires zero-mean `u_y`);
/// otherwise `B_z` is uniform at `bz_mean`.
pub fn init_well_prepared_em(
    n_profile: &[f64],
    ux_profile: &[f64],
    uy_profile: &[f64],
    params: &EmParams,
    grid: &Grid1D,
    bz_from_uy: bool,
    bz_mean: f64,
) -> Result<EmState> {
    require_periodic(grid)?;
    let n = grid.n_cells;
    if n_profile.len() != n || ux_profile.len() != n || uy_profile.len() != n {
        return Err(Error::InvalidInput("profile length does not match grid".into()));
    }
    if n_profile.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidInput("density profile must be positive".into()));
    }
    let h = grid.h;
    let lam2 = params.lambda * params.lambda;
    let mut ex = vec![0.0; n];
    if params.lambda > 0.0 {
        // integrate the Gauss law, zero-mean field
        let total: f64 = n_profile.iter().map(|&v| 1.0 - v).sum();
        if total.abs() > 1e-10 * n as f64 {
            return Err(Error::InvalidInput("density profile must have unit mean on a periodic domain".into()));
        }
        let mut acc = 0.0;
        for k in 0..n {
            acc += h * (1.0 - n_profile[k]) / lam2;
            ex[k] = acc;
        }
        let mean = ex.iter().sum::<f64>() / n as f64;
        for v in &mut ex {
            *v -= mean;
        }
    } else if n_profile.iter().any(|&v| (v - 1.0).abs() > 1e-12) {
        return Err(Error::InvalidInput("lambda = 0 requires a unit density profile".into()));
    }
    let mut bz = vec![bz_mean; n];
    if bz_from_uy {
        let total: f64 = uy_profile.iter().sum();
        if total.abs() > 1e-10 * n as f64 {
            return Err(Error::InvalidInput("transverse velocity must have zero mean to build the magnetic field".into()));
        }
        let mut acc = 0.0;
        for k in 0..n {
            acc += h * uy_profile[k];
            bz[k] = acc;
        }
        let mean = bz.iter().sum::<f64>() / n as f64;
        for v in &mut bz {
            *v += bz_mean - mean;
        }
    }
    let qx: Vec<f64> = n_profile.iter().zip(ux_profile).map(|(&nv, &uv)| nv * uv).collect();
    let qy: Vec<f64> = n_profile.iter().zip(uy_profile).map(|(&nv, &uv)| nv * uv).collect();
    Ok(EmState { n: n_profile.to_vec(), qx, qy, ex, ey: vec![0.0; n], bz })
}
