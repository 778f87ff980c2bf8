//! 1D electron-fluid/Poisson time steppers on a periodic grid.
//!
//! Two schemes share the same explicit hydrodynamic fluxes:
//!
//! - [`step_classical`]: density and momentum advance explicitly, the
//!   potential follows from the Poisson equation with the new density and
//!   the force term uses the new field. Stable only while the time step
//!   resolves the plasma period (`delta = O(lambda)`).
//! - [`step_ap`]: the potential solves a reformulated elliptic equation that
//!   stays nonsingular as `lambda -> 0`, the momentum uses the old density in
//!   the force, and the mass update uses the implicit flux correction. The
//!   discrete Gauss law is then preserved to round-off for every `lambda`,
//!   including `lambda = 0`.

use crate::closure::PressureClosure;
use crate::flux::{flux_ep_explicit, mass_flux_ap, HydroFluxEp, ViscosityChoice};
use crate::grid::{Bc1d, Grid1D};
use crate::linsolve::{solve_tridiagonal, Gauge};
use crate::{Error, Result};

/// Conservative state: cell-centered density, momentum and potential, plus
/// the face-centered electric field `E_{k+1/2} = -(phi_{k+1} - phi_k)/h`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpState {
    pub n: Vec<f64>,
    pub q: Vec<f64>,
    pub phi: Vec<f64>,
    pub e: Vec<f64>,
}

impl EpState {
    pub fn validate(&self, grid: &Grid1D) -> Result<()> {
        let n = grid.n_cells;
        if self.n.len() != n || self.q.len() != n || self.phi.len() != n || self.e.len() != grid.n_interfaces() {
            return Err(Error::InvalidInput("state arrays do not match grid".into()));
        }
        if self.n.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidInput("density must be positive and finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpParams {
    /// Scaled Debye length.
    pub lambda: f64,
    /// Time step.
    pub delta: f64,
    pub closure: PressureClosure,
    /// Scale constant on the Rusanov coefficient.
    pub visc_const: f64,
}

impl EpParams {
    pub fn new(lambda: f64, delta: f64, closure: PressureClosure) -> Result<Self> {
        if lambda < 0.0 || !lambda.is_finite() {
            return Err(Error::InvalidInput("lambda must be nonnegative".into()));
        }
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::InvalidInput("delta must be positive".into()));
        }
        closure.validate()?;
        Ok(EpParams { lambda, delta, closure, visc_const: 1.0 })
    }

    fn viscosity(&self) -> ViscosityChoice {
        ViscosityChoice::RusanovScalar { scale: self.visc_const }
    }
}

fn require_periodic(grid: &Grid1D) -> Result<()> {
    if grid.bc != Bc1d::Periodic {
        return Err(Error::Unsupported("the fluid/Poisson steppers run on periodic grids".into()));
    }
    Ok(())
}

/// Gauged periodic solve for the potential equations. The right-hand sides
/// are built from `1 - n` plus telescoping flux differences, so their exact
/// mean vanishes up to the quantization floor of the order-one density;
/// that floor is removed before the solve. A mean beyond it means the data
/// are genuinely incompatible (non-unit total mass).
pub(crate) fn solve_gauged(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &[f64],
) -> Result<Vec<f64>> {
    let n = rhs.len() as f64;
    let mean = rhs.iter().sum::<f64>() / n;
    let scale = rhs.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if mean.abs() > (1e-10 * scale).max(1e-12) {
        return Err(Error::Singular(format!(
            "periodic potential equation is incompatible: right-hand side mean {mean:.3e} (total mass must match the background)"
        )));
    }
    let centered: Vec<f64> = rhs.iter().map(|v| v - mean).collect();
    solve_tridiagonal(lower, diag, upper, &centered, true, Gauge::ZeroMean)
}

/// Explicit interface fluxes; index k holds the flux at `x_{k+1/2}`.
fn explicit_fluxes(state: &EpState, params: &EpParams, grid: &Grid1D) -> Result<Vec<HydroFluxEp>> {
    let n = grid.n_cells;
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let kp = grid.wrap(k as isize + 1);
        out.push(flux_ep_explicit(
            (state.n[k], state.q[k]),
            (state.n[kp], state.q[kp]),
            &params.closure,
            params.viscosity(),
        )?);
    }
    Ok(out)
}

/// CFL-limited time step from the hydrodynamic wave speed.
pub fn hydro_cfl_delta(state: &EpState, grid: &Grid1D, closure: &PressureClosure, cfl: f64) -> f64 {
    let mut speed = 0.0f64;
    for k in 0..grid.n_cells {
        speed = speed.max((state.q[k] / state.n[k]).abs() + closure.sound_speed(state.n[k]));
    }
    cfl * grid.h / speed.max(1e-30)
}

/// Classical semi-implicit step: explicit density, Poisson solve for the new
/// potential, force with the new density and field. Requires `lambda > 0`.
pub fn step_classical(state: &EpState, params: &EpParams, grid: &Grid1D) -> Result<EpState> {
    require_periodic(grid)?;
    state.validate(grid)?;
    if !(params.lambda > 0.0) {
        return Err(Error::InvalidInput("the classical stepper needs lambda > 0".into()));
    }
    let n = grid.n_cells;
    let (h, delta, lam2) = (grid.h, params.delta, params.lambda * params.lambda);
    let fx = explicit_fluxes(state, params, grid)?;

    let mut n_new = vec![0.0; n];
    for k in 0..n {
        let km = grid.wrap(k as isize - 1);
        n_new[k] = state.n[k] - delta / h * (fx[k].f_n - fx[km].f_n);
    }
    if n_new.iter().any(|&v| v <= 0.0) {
        return Err(Error::InvalidInput("density became non-positive; reduce the time step".into()));
    }

    // Poisson: -lambda^2 (phi_{k+1} - 2 phi_k + phi_{k-1})/h^2 = 1 - n_k,
    // gauged to zero mean.
    let coeff = lam2 / (h * h);
    let lower = vec![-coeff; n];
    let upper = vec![-coeff; n];
    let diag = vec![2.0 * coeff; n];
    let rhs: Vec<f64> = n_new.iter().map(|&v| 1.0 - v).collect();
    let phi = solve_gauged(&lower, &diag, &upper, &rhs)?;

    let mut e = vec![0.0; n];
    for k in 0..n {
        let kp = grid.wrap(k as isize + 1);
        e[k] = -(phi[kp] - phi[k]) / h;
    }
    let mut q_new = vec![0.0; n];
    for k in 0..n {
        let km = grid.wrap(k as isize - 1);
        let e_tilde = 0.5 * (e[k] + e[km]);
        q_new[k] = state.q[k] - delta / h * (fx[k].f_u - fx[km].f_u) - delta * n_new[k] * e_tilde;
    }
    Ok(EpState { n: n_new, q: q_new, phi, e })
}

/// Uniformly stable step: reformulated elliptic solve for the potential,
/// explicit density in the force, implicit mass flux. Accepts `lambda = 0`.
pub fn step_ap(state: &EpState, params: &EpParams, grid: &Grid1D) -> Result<EpState> {
    require_periodic(grid)?;
    state.validate(grid)?;
    let n = grid.n_cells;
    let (h, delta, lam2) = (grid.h, params.delta, params.lambda * params.lambda);
    let fx = explicit_fluxes(state, params, grid)?;

    // Elliptic operator coefficients at interfaces:
    // a_{k+1/2} = lambda^2 + (delta^2/2)(n_k + n_{k+1}).
    let mut a = vec![0.0; n];
    for k in 0..n {
        let kp = grid.wrap(k as isize + 1);
        a[k] = lam2 + 0.5 * delta * delta * (state.n[k] + state.n[kp]);
    }
    let mut lower = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let h2 = h * h;
    for k in 0..n {
        let km = grid.wrap(k as isize - 1);
        let kp = grid.wrap(k as isize + 1);
        let k2m = grid.wrap(k as isize - 2);
        lower[k] = -a[km] / h2;
        upper[k] = -a[k] / h2;
        diag[k] = (a[k] + a[km]) / h2;
        // momentum-flux second difference over interfaces k+3/2 .. k-3/2
        rhs[k] = 1.0 - state.n[k] + delta / h * (fx[k].f_n - fx[km].f_n)
            - 0.5 * delta * delta / h2 * (fx[kp].f_u - fx[k].f_u - fx[km].f_u + fx[k2m].f_u);
    }
    let phi = solve_gauged(&lower, &diag, &upper, &rhs)?;

    let mut e = vec![0.0; n];
    for k in 0..n {
        let kp = grid.wrap(k as isize + 1);
        e[k] = -(phi[kp] - phi[k]) / h;
    }
    let mut q_new = vec![0.0; n];
    for k in 0..n {
        let km = grid.wrap(k as isize - 1);
        let e_tilde = 0.5 * (e[k] + e[km]);
        q_new[k] = state.q[k] - delta / h * (fx[k].f_u - fx[km].f_u) - delta * state.n[k] * e_tilde;
    }
    // Implicit mass flux and conservative density update.
    let mut fn_tilde = vec![0.0; n];
    for k in 0..n {
        let kp = grid.wrap(k as isize + 1);
        let km = grid.wrap(k as isize - 1);
        fn_tilde[k] = mass_flux_ap(
            fx[k].f_n,
            state.n[k],
            state.n[kp],
            e[k],
            fx[kp].f_u,
            fx[km].f_u,
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
    Ok(EpState { n: n_new, q: q_new, phi, e })
}

/// Max-norm residual of the discrete Gauss law
/// `lambda^2 (E_{k+1/2} - E_{k-1/2})/h = 1 - n_k`.
pub fn gauss_residual(state: &EpState, params: &EpParams, grid: &Grid1D) -> f64 {
    let lam2 = params.lambda * params.lambda;
    let mut worst = 0.0f64;
    for k in 0..grid.n_cells {
        let km = grid.wrap(k as isize - 1);
        let r = lam2 / grid.h * (state.e[k] - state.e[km]) - (1.0 - state.n[k]);
        worst = worst.max(r.abs());
    }
    worst
}

/// Builds a state whose potential and field solve the discrete Poisson
/// equation for the given density profile. With `project_divergence` the
/// momentum is corrected so its centered divergence vanishes, which prepares
/// the data for the quasineutral regime.
pub fn init_well_prepared(
    n_profile: &[f64],
    u_profile: &[f64],
    params: &EpParams,
    grid: &Grid1D,
    project_divergence: bool,
) -> Result<EpState> {
    require_periodic(grid)?;
    let n = grid.n_cells;
    if n_profile.len() != n || u_profile.len() != n {
        return Err(Error::InvalidInput("profile length does not match grid".into()));
    }
    if n_profile.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidInput("density profile must be positive".into()));
    }
    let h = grid.h;
    let lam2 = params.lambda * params.lambda;
    let (phi, e) = if params.lambda > 0.0 {
        let coeff = lam2 / (h * h);
        let lower = vec![-coeff; n];
        let upper = vec![-coeff; n];
        let diag = vec![2.0 * coeff; n];
        let rhs: Vec<f64> = n_profile.iter().map(|&v| 1.0 - v).collect();
        let phi = solve_gauged(&lower, &diag, &upper, &rhs)?;
        let mut e = vec![0.0; n];
        for k in 0..n {
            let kp = grid.wrap(k as isize + 1);
            e[k] = -(phi[kp] - phi[k]) / h;
        }
        (phi, e)
    } else {
        // At lambda = 0 the Gauss law forces n = 1 exactly.
        if n_profile.iter().any(|&v| (v - 1.0).abs() > 1e-12) {
            return Err(Error::InvalidInput("lambda = 0 requires a unit density profile".into()));
        }
        (vec![0.0; n], vec![0.0; n])
    };
    let mut q: Vec<f64> = n_profile.iter().zip(u_profile).map(|(&nv, &uv)| nv * uv).collect();
    if project_divergence {
        project_centered_divergence_free(&mut q, grid)?;
    }
    Ok(EpState { n: n_profile.to_vec(), q, phi, e })
}

/// Removes the centered-divergence part of `q`: solves
/// `D G psi = D q` with `D`/`G` the centered difference, then `q -= G psi`.
/// The stride-2 coupling splits into parity sublattices, each a periodic
/// tridiagonal system with a constant nullspace.
fn project_centered_divergence_free(q: &mut [f64], grid: &Grid1D) -> Result<()> {
    let n = grid.n_cells;
    let h = grid.h;
    let div: Vec<f64> = (0..n)
        .map(|k| (q[grid.wrap(k as isize + 1)] - q[grid.wrap(k as isize - 1)]) / (2.0 * h))
        .collect();
    let mut psi = vec![0.0; n];
    // cycles of the +2 stride permutation
    let cycles: Vec<Vec<usize>> = if n % 2 == 0 {
        vec![(0..n).step_by(2).collect(), (1..n).step_by(2).collect()]
    } else {
        let mut c = Vec::with_capacity(n);
        let mut k = 0usize;
        for _ in 0..n {
            c.push(k);
            k = (k + 2) % n;
        }
        vec![c]
    };
    let c4 = 1.0 / (4.0 * h * h);
    for cyc in cycles {
        let m = cyc.len();
        if m < 3 {
            return Err(Error::InvalidInput("grid too small for divergence projection".into()));
        }
        let lower = vec![c4; m];
        let upper = vec![c4; m];
        let diag = vec![-2.0 * c4; m];
        let rhs: Vec<f64> = cyc.iter().map(|&k| div[k]).collect();
        let sol = solve_tridiagonal(&lower, &diag, &upper, &rhs, true, Gauge::ZeroMean)?;
        for (i, &k) in cyc.iter().enumerate() {
            psi[k] = sol[i];
        }
    }
    for k in 0..n {
        q[k] -= (psi[grid.wrap(k as isize + 1)] - psi[grid.wrap(k as isize - 1)]) / (2.0 * h);
    }
    Ok(())
}

/// Total mass `sum n_k h`.
pub fn total_mass(state: &EpState, grid: &Grid1D) -> f64 {
    state.n.iter().sum::<f64>() * grid.h
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    fn grid(n: usize) -> Grid1D {
        Grid1D::new(n, 1.0 / n as f64, Bc1d::Periodic).unwrap()
    }

    fn params(lambda: f64, delta: f64) -> EpParams {
        EpParams::new(lambda, delta, PressureClosure::isothermal(1.0)).unwrap()
    }

    fn sinusoidal_state(g: &Grid1D, lambda: f64, amp_n: f64, amp_u: f64) -> EpState {
        let n: Vec<f64> = (0..g.n_cells).map(|k| 1.0 + amp_n * (TAU * g.cell_center(k)).sin()).collect();
        let u: Vec<f64> = (0..g.n_cells).map(|k| amp_u * (TAU * g.cell_center(k)).cos()).collect();
        let p = params(lambda, 1.0);
        init_well_prepared(&n, &u, &p, g, false).unwrap()
    }

    #[test]
    fn uniform_rest_state_is_fixed_point_of_both_steppers() {
        let g = grid(16);
        let p = params(1.0, 0.01);
        let s = init_well_prepared(&vec![1.0; 16], &vec![0.0; 16], &p, &g, false).unwrap();
        let c = step_classical(&s, &p, &g).unwrap();
        let a = step_ap(&s, &p, &g).unwrap();
        for k in 0..16 {
            assert!((c.n[k] - 1.0).abs() < 1e-14);
            assert!(c.q[k].abs() < 1e-14);
            assert!((a.n[k] - 1.0).abs() < 1e-14);
            assert!(a.q[k].abs() < 1e-14);
        }
    }

    #[test]
    fn mass_is_conserved_exactly() {
        let g = grid(32);
        let mut s = sinusoidal_state(&g, 1.0, 0.1, 0.05);
        let p = params(1.0, 0.2 * hydro_cfl_delta(&s, &g, &PressureClosure::isothermal(1.0), 1.0));
        let m0 = total_mass(&s, &g);
        for _ in 0..50 {
            s = step_ap(&s, &p, &g).unwrap();
        }
        assert!((total_mass(&s, &g) - m0).abs() < 1e-13);
        let mut s2 = sinusoidal_state(&g, 1.0, 0.1, 0.05);
        for _ in 0..50 {
            s2 = step_classical(&s2, &p, &g).unwrap();
        }
        assert!((total_mass(&s2, &g) - m0).abs() < 1e-13);
    }

    #[test]
    fn classical_rejects_lambda_zero() {
        let g = grid(8);
        let p = params(0.0, 0.01);
        let s = init_well_prepared(&vec![1.0; 8], &vec![0.0; 8], &p, &g, false).unwrap();
        assert!(step_classical(&s, &p, &g).is_err());
        assert!(step_ap(&s, &p, &g).is_ok());
    }

    #[test]
    fn gauss_residual_zero_after_poisson_init_and_preserved_by_ap() {
        let g = grid(24);
        let p = params(0.5, 0.004);
        let mut s = sinusoidal_state(&g, 0.5, 0.05, 0.02);
        assert!(gauss_residual(&s, &p, &g) < 1e-13);
        for _ in 0..200 {
            s = step_ap(&s, &p, &g).unwrap();
            assert!(gauss_residual(&s, &p, &g) < 1e-12);
        }
    }

    #[test]
    fn gauss_residual_detects_single_face_perturbation() {
        let g = grid(16);
        let p = params(0.7, 0.01);
        let mut s = sinusoidal_state(&g, 0.7, 0.05, 0.0);
        let eps = 1e-3;
        s.e[5] += eps;
        let expected = p.lambda * p.lambda * eps / g.h;
        assert!((gauss_residual(&s, &p, &g) - expected).abs() < 1e-12);
    }

    #[test]
    fn ap_limit_density_pinned_for_tiny_debye_length() {
        // Well-prepared data: density stays within 10 max(lambda^2, round-off)
        // of the background over 100 hydrodynamic-CFL steps.
        for &lambda in &[0.0, 1e-8] {
            let g = grid(32);
            let p = params(lambda, 0.004);
            let u: Vec<f64> = (0..32).map(|_| 0.01).collect();
            let mut s = init_well_prepared(&vec![1.0; 32], &u, &p, &g, true).unwrap();
            let bound = 10.0 * (lambda * lambda).max(1e-13);
            for _ in 0..100 {
                s = step_ap(&s, &p, &g).unwrap();
                let worst = s.n.iter().map(|v| (v - 1.0).abs()).fold(0.0f64, f64::max);
                assert!(worst <= bound, "lambda={lambda:e}: |n-1| = {worst:.3e}");
            }
        }
    }

    #[test]
    fn divergence_projection_zeroes_centered_divergence() {
        let g = grid(20);
        let p = params(1.0, 0.01);
        let n: Vec<f64> = vec![1.0; 20];
        let u: Vec<f64> = (0..20).map(|k| 0.3 * (TAU * g.cell_center(k)).sin() + 0.1).collect();
        let s = init_well_prepared(&n, &u, &p, &g, true).unwrap();
        for k in 0..20 {
            let d = (s.q[g.wrap(k as isize + 1)] - s.q[g.wrap(k as isize - 1)]) / (2.0 * g.h);
            assert!(d.abs() < 1e-12, "centered divergence {d:.3e} at {k}");
        }
    }

    /// One reformulated step must satisfy the defining equations of the
    /// unreformulated scheme: mass balance with the implicit flux, momentum
    /// balance, Gauss law and the field/potential relation.
    #[test]
    fn ap_step_satisfies_unreformulated_equations() {
        let g = grid(8);
        let p = params(1.0, 0.01);
        let s = sinusoidal_state(&g, 1.0, 0.2, 0.1);
        let s1 = step_ap(&s, &p, &g).unwrap();
        let r = fdep_residuals(&s, &s1, &p, &g);
        assert!(r < 1e-12, "scheme-equivalence residual {r:.3e}");
    }

    /// Plug-in residual of the coupled implicit scheme, relative to the
    /// magnitude of its terms.
    pub(crate) fn fdep_residuals(old: &EpState, new: &EpState, p: &EpParams, g: &Grid1D) -> f64 {
        let n = g.n_cells;
        let (h, delta, lam2) = (g.h, p.delta, p.lambda * p.lambda);
        let fx = explicit_fluxes(old, p, g).unwrap();
        let mut worst = 0.0f64;
        for k in 0..n {
            let km = g.wrap(k as isize - 1);
            let kp = g.wrap(k as isize + 1);
            // implicit mass flux from the new field
            let ft = |kk: usize| {
                let kkp = g.wrap(kk as isize + 1);
                let kkm = g.wrap(kk as isize - 1);
                mass_flux_ap(fx[kk].f_n, old.n[kk], old.n[kkp], new.e[kk], fx[kkp].f_u, fx[kkm].f_u, delta, h)
            };
            let mass = (new.n[k] - old.n[k]) / delta + (ft(k) - ft(km)) / h;
            let scale_m = (old.n[k] / delta).abs().max(ft(k).abs() / h).max(1.0);
            worst = worst.max(mass.abs() / scale_m);
            let e_tilde = 0.5 * (new.e[k] + new.e[km]);
            let mom = (new.q[k] - old.q[k]) / delta + (fx[k].f_u - fx[km].f_u) / h + old.n[k] * e_tilde;
            let scale_q = (old.q[k] / delta).abs().max(fx[k].f_u.abs() / h).max(1.0);
            worst = worst.max(mom.abs() / scale_q);
            let gauss = lam2 / h * (new.e[k] - new.e[km]) - (1.0 - new.n[k]);
            worst = worst.max(gauss.abs());
            let efield = new.e[k] + (new.phi[kp] - new.phi[k]) / h;
            worst = worst.max(efield.abs());
        }
        worst
    }
}
