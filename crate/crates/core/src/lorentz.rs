//! 3D isentropic ion-fluid steppers in a given electromagnetic field,
//! uniformly stable in the scaled gyro-period `tau`.
//!
//! Geometry: a cartesian box, periodic in the two transverse directions and
//! bounded along axis 2 (one ghost layer each side). The field direction
//! `b = B/|B|` must have a nonvanishing component along axis 2 on every
//! cell, so field lines cross the box.
//!
//! Both steppers start from a conservative semi-implicit discretization with
//! implicit mass and pressure fluxes and an implicit Lorentz force, and
//! differ in which implicit piece is turned into an elliptic solve:
//!
//! - [`step_fdap1`] eliminates density from the parallel momentum equation
//!   and solves a field-aligned elliptic system for the parallel momentum.
//! - [`step_fdap2`] eliminates the parallel momentum from the mass equation
//!   and solves a field-aligned elliptic system for the density (isothermal
//!   closure only, micro-macro formulation below a configurable `tau`
//!   threshold, so `tau = 0` runs at full accuracy).
//!
//! The perpendicular momentum update is algebraic in both cases: the
//! rotational part of the implicit Lorentz relation inverts in closed form
//! ([`perp_update_closed_form`]).
//!
//! Boundary conventions along the bounded axis: zero total mass flux at the
//! end interfaces, prescribed (homogeneous) field-aligned flux for the
//! elliptic solves, zero-gradient ghosts for density and parallel momentum,
//! drift values for the ghost perpendicular momentum.

use crate::aniso::AnisoEngine;
use crate::closure::PressureClosure;
use crate::flux::rusanov_speed_explicit;
use crate::grid::{Grid3D, Topology};
use crate::linsolve::{solve_sparse, SparseSystem};
use crate::{Error, Result};

/// Conservative state on the box cells.
#[derive(Debug, Clone, PartialEq)]
pub struct LorentzState {
    pub n: Vec<f64>,
    pub q: Vec<[f64; 3]>,
}

/// Electromagnetic field sampled on the padded grid, with the unit direction
/// and magnitude of the magnetic field precomputed per cell.
#[derive(Debug, Clone)]
pub struct EmGivenFields {
    pub e: Vec<[f64; 3]>,
    pub b_field: Vec<[f64; 3]>,
    pub b_unit: Vec<[f64; 3]>,
    pub b_mag: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LorentzParams {
    /// Scaled gyro-period (equal to the squared Mach number in this scaling).
    pub tau: f64,
    pub delta: f64,
    pub closure: PressureClosure,
    pub visc_const: f64,
    /// Below this `tau` the density solve switches to the micro-macro form.
    pub micromacro_tau_threshold: f64,
}

impl LorentzParams {
    pub fn new(tau: f64, delta: f64, closure: PressureClosure) -> Result<Self> {
        if tau < 0.0 || !tau.is_finite() {
            return Err(Error::InvalidInput("tau must be nonnegative".into()));
        }
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::InvalidInput("delta must be positive".into()));
        }
        closure.validate()?;
        Ok(LorentzParams { tau, delta, closure, visc_const: 1.0, micromacro_tau_threshold: 1e-4 })
    }
}

/// Box periodic in the transverse directions and bounded along axis 2.
pub fn lorentz_grid(dims: [usize; 3], h: [f64; 3]) -> Result<Grid3D> {
    Grid3D::new(dims, h, [Topology::Periodic, Topology::Periodic, Topology::Bounded])
}

const EIJ: [[isize; 3]; 3] = [[1, 0, 0], [0, 1, 0], [0, 0, 1]];

fn add3(k: [isize; 3], d: [isize; 3], s: isize) -> [isize; 3] {
    [k[0] + s * d[0], k[1] + s * d[1], k[2] + s * d[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

impl EmGivenFields {
    /// Samples `(E, B)` at the padded cell centers and derives the field
    /// direction; rejects vanishing magnetic field.
    pub fn sample(grid: &Grid3D, f: impl Fn([f64; 3]) -> ([f64; 3], [f64; 3])) -> Result<Self> {
        let np = grid.n_padded();
        let mut e = vec![[0.0; 3]; np];
        let mut b_field = vec![[0.0; 3]; np];
        let mut b_unit = vec![[0.0; 3]; np];
        let mut b_mag = vec![0.0; np];
        for k in iter_padded(grid) {
            let c = grid.flat_padded(k);
            let (ev, bv) = f(grid.cell_center(k));
            let mag = dot(bv, bv).sqrt();
            if !(mag > 0.0) {
                return Err(Error::InvalidInput("magnetic field must not vanish".into()));
            }
            e[c] = ev;
            b_field[c] = bv;
            b_unit[c] = [bv[0] / mag, bv[1] / mag, bv[2] / mag];
            b_mag[c] = mag;
        }
        Ok(EmGivenFields { e, b_field, b_unit, b_mag })
    }
}

/// Iterates padded cells of a transverse-periodic, axis-2-bounded grid.
fn iter_padded(grid: &Grid3D) -> impl Iterator<Item = [isize; 3]> + '_ {
    let d = grid.dims;
    let z_lo: isize = if grid.topo[2] == Topology::Bounded { -1 } else { 0 };
    let z_hi: isize = if grid.topo[2] == Topology::Bounded { d[2] as isize + 1 } else { d[2] as isize };
    (0..d[0] as isize).flat_map(move |i| {
        (0..d[1] as isize).flat_map(move |j| (z_lo..z_hi).map(move |k| [i, j, k]))
    })
}

/// Splits a vector along the unit field direction:
/// `v = v_par b + v_perp`, `v_perp . b = 0`.
pub fn par_perp_split(v: [f64; 3], b: [f64; 3]) -> Result<(f64, [f64; 3])> {
    let norm = dot(b, b).sqrt();
    if (norm - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidInput(format!("direction must be unit, |b| = {norm}")));
    }
    let v_par = dot(v, b);
    let v_perp = [v[0] - v_par * b[0], v[1] - v_par * b[1], v[2] - v_par * b[2]];
    Ok((v_par, v_perp))
}

/// Closed-form inverse of the implicit rotational relation
/// `(Id - tau/(delta |B|) b x) q_perp = b x Y`:
///
/// `q_perp = delta |B| / (tau^2 + delta^2 |B|^2) (-tau Y + delta |B| b x Y)`.
///
/// `Y` is expected perpendicular to `b`; any parallel part is annihilated by
/// the projection structure of the formula when combined with a projected
/// input.
pub fn perp_update_closed_form(y: [f64; 3], b: [f64; 3], tau: f64, delta: f64, b_mag: f64) -> [f64; 3] {
    let denom = tau * tau + delta * delta * b_mag * b_mag;
    let pref = delta * b_mag / denom;
    let bxy = cross(b, y);
    [
        pref * (-tau * y[0] + delta * b_mag * bxy[0]),
        pref * (-tau * y[1] + delta * b_mag * bxy[1]),
        pref * (-tau * y[2] + delta * b_mag * bxy[2]),
    ]
}

/// Per-step explicit quantities, on the padded grid for the state and on the
/// box for the divergence accumulations.
struct StepWork {
    n_pad: Vec<f64>,
    /// Mass-equation transport: perpendicular central flux plus viscosity,
    /// accumulated divergence per box cell.
    delta_n_tilde: Vec<f64>,
    /// Momentum transport divergence per box cell and component.
    delta_q: Vec<[f64; 3]>,
}

fn prepare(state: &LorentzState, fields: &EmGivenFields, params: &LorentzParams, grid: &Grid3D) -> Result<StepWork> {
    let nb = grid.n_cells();
    if state.n.len() != nb || state.q.len() != nb {
        return Err(Error::InvalidInput("state arrays do not match grid".into()));
    }
    if state.n.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidInput("density must be positive and finite".into()));
    }
    let np = grid.n_padded();
    if fields.e.len() != np {
        return Err(Error::InvalidInput("fields are not sampled on the padded grid".into()));
    }
    let dz = grid.dims[2] as isize;

    // ghost extension: zero-gradient density, parallel momentum carried onto
    // the ghost direction, drift value for the perpendicular part
    let mut n_pad = vec![0.0; np];
    let mut q_pad = vec![[0.0; 3]; np];
    for k in grid.iter_box() {
        n_pad[grid.flat_padded(k)] = state.n[grid.flat(k)];
        q_pad[grid.flat_padded(k)] = state.q[grid.flat(k)];
    }
    for k in iter_padded(grid) {
        if k[2] >= 0 && k[2] < dz {
            continue;
        }
        let adj = [k[0], k[1], if k[2] < 0 { 0 } else { dz - 1 }];
        let gc = grid.flat_padded(k);
        let ac = grid.flat(adj);
        n_pad[gc] = state.n[ac];
        let b_g = fields.b_unit[gc];
        let q_par_adj = dot(state.q[ac], fields.b_unit[grid.flat_padded(adj)]);
        // drift from the pressure gradient at the adjacent cell and the
        // local fields, perpendicular projection below
        let gp = pressure_gradient_at(state, params, grid, adj);
        let s = [
            gp[0] - state.n[ac] * fields.e[gc][0],
            gp[1] - state.n[ac] * fields.e[gc][1],
            gp[2] - state.n[ac] * fields.e[gc][2],
        ];
        let bxs = cross(b_g, s);
        for i in 0..3 {
            q_pad[gc][i] = q_par_adj * b_g[i] + bxs[i] / fields.b_mag[gc];
        }
    }

    // transport divergences
    let mut delta_n_tilde = vec![0.0; nb];
    let mut delta_q = vec![[0.0; 3]; nb];
    for k in grid.iter_box() {
        let c = grid.flat(k);
        for j in 0..3 {
            for s in [1isize, -1] {
                // interface between k and k + s e_j
                let kn = add3(k, EIJ[j], s);
                let (kl, kr) = if s > 0 { (k, kn) } else { (kn, k) };
                let fl = grid.flat_padded(kl);
                let fr = grid.flat_padded(kr);
                let ul = [q_pad[fl][0] / n_pad[fl], q_pad[fl][1] / n_pad[fl], q_pad[fl][2] / n_pad[fl]];
                let ur = [q_pad[fr][0] / n_pad[fr], q_pad[fr][1] / n_pad[fr], q_pad[fr][2] / n_pad[fr]];
                let mu = params.visc_const * rusanov_speed_explicit(ul, ur);
                let end_interface = j == 2 && (kl[2] < 0 || kr[2] >= dz);
                // mass row: perpendicular central flux + viscosity, zero at
                // the end interfaces so total mass is conserved exactly
                if !end_interface {
                    let bl = fields.b_unit[fl];
                    let br = fields.b_unit[fr];
                    let (ql, qr) = (q_pad[fl], q_pad[fr]);
                    let val = 0.5 * mu * (n_pad[fl] - n_pad[fr])
                        + 0.5 * ((ql[j] - dot(ql, bl) * bl[j]) + (qr[j] - dot(qr, br) * br[j]));
                    delta_n_tilde[c] += s as f64 / grid.h[j] * val;
                }
                // momentum rows: central product flux + viscosity
                for i in 0..3 {
                    let fq = 0.5
                        * (q_pad[fl][i] * q_pad[fl][j] / n_pad[fl]
                            + q_pad[fr][i] * q_pad[fr][j] / n_pad[fr]
                            + mu * (q_pad[fl][i] - q_pad[fr][i]));
                    delta_q[c][i] += s as f64 / grid.h[j] * fq;
                }
            }
        }
    }
    Ok(StepWork { n_pad, delta_n_tilde, delta_q })
}

/// Centered pressure gradient at a box cell, ghosts by zero-gradient copy.
fn pressure_gradient_at(state: &LorentzState, params: &LorentzParams, grid: &Grid3D, k: [isize; 3]) -> [f64; 3] {
    let dz = grid.dims[2] as isize;
    let mut g = [0.0; 3];
    for i in 0..3 {
        let mut kp = add3(k, EIJ[i], 1);
        let mut km = add3(k, EIJ[i], -1);
        if i == 2 {
            kp[2] = kp[2].min(dz - 1);
            km[2] = km[2].max(0);
        }
        let pp = params.closure.pressure(state.n[grid.flat(kp)]);
        let pm = params.closure.pressure(state.n[grid.flat(km)]);
        g[i] = (pp - pm) * 0.5 / grid.h[i];
    }
    g
}

/// Value of `q_par b_j` at a padded index, odd-reflected through the end
/// interfaces so the total parallel mass flux vanishes there.
fn qpar_b_component(q_par: &[f64], fields: &EmGivenFields, grid: &Grid3D, k: [isize; 3], j: usize) -> f64 {
    let dz = grid.dims[2] as isize;
    if k[2] < 0 || k[2] >= dz {
        let adj = [k[0], k[1], if k[2] < 0 { 0 } else { dz - 1 }];
        -q_par[grid.flat(adj)] * fields.b_unit[grid.flat_padded(adj)][j]
    } else {
        q_par[grid.flat(k)] * fields.b_unit[grid.flat_padded(k)][j]
    }
}

/// Discrete field-aligned divergence of `q_par b` at a cell; prescribed zero
/// on the boundary and fictitious layers of the bounded axis.
fn gamma_qpar(q_par: &[f64], fields: &EmGivenFields, grid: &Grid3D, k: [isize; 3]) -> f64 {
    let dz = grid.dims[2] as isize;
    if k[2] <= 0 || k[2] >= dz - 1 {
        return 0.0;
    }
    let mut g = 0.0;
    for j in 0..3 {
        g += 0.5 / grid.h[j]
            * (qpar_b_component(q_par, fields, grid, add3(k, EIJ[j], 1), j)
                - qpar_b_component(q_par, fields, grid, add3(k, EIJ[j], -1), j));
    }
    g
}

/// Conservative density update shared by both steppers.
fn mass_update(
    state: &LorentzState,
    work: &StepWork,
    q_par_new: &[f64],
    fields: &EmGivenFields,
    params: &LorentzParams,
    grid: &Grid3D,
) -> Result<Vec<f64>> {
    let mut n_new = vec![0.0; grid.n_cells()];
    for k in grid.iter_box() {
        let c = grid.flat(k);
        let mut div = work.delta_n_tilde[c];
        for j in 0..3 {
            div += 0.5 / grid.h[j]
                * (qpar_b_component(q_par_new, fields, grid, add3(k, EIJ[j], 1), j)
                    - qpar_b_component(q_par_new, fields, grid, add3(k, EIJ[j], -1), j));
        }
        n_new[c] = state.n[c] - params.delta * div;
    }
    if n_new.iter().any(|&v| v <= 0.0) {
        return Err(Error::InvalidInput("density became non-positive; reduce the time step".into()));
    }
    Ok(n_new)
}

/// First uniformly stable stepper: field-aligned elliptic solve for the
/// parallel momentum, then density, then the closed-form perpendicular
/// update. Needs `tau > 0` — the parallel system is singular at `tau = 0`.
pub fn step_fdap1(
    state: &LorentzState,
    fields: &EmGivenFields,
    params: &LorentzParams,
    grid: &Grid3D,
) -> Result<LorentzState> {
    if !(params.tau > 0.0) {
        return Err(Error::Singular(
            "parallel-momentum elliptic system is singular at tau = 0 (use the density-based stepper)".into(),
        ));
    }
    let work = prepare(state, fields, params, grid)?;
    let nb = grid.n_cells();
    let (tau, delta) = (params.tau, params.delta);
    let dz = grid.dims[2] as isize;

    // explicit pressure correction P = p(n) - delta p'(n) Delta_n, padded by copy
    let mut p_corr = vec![0.0; grid.n_padded()];
    for k in grid.iter_box() {
        let c = grid.flat(k);
        p_corr[grid.flat_padded(k)] =
            params.closure.pressure(state.n[c]) - delta * params.closure.dpressure(state.n[c]) * work.delta_n_tilde[c];
    }
    for k in iter_padded(grid) {
        if k[2] >= 0 && k[2] < dz {
            continue;
        }
        let adj = [k[0], k[1], if k[2] < 0 { 0 } else { dz - 1 }];
        p_corr[grid.flat_padded(k)] = p_corr[grid.flat_padded(adj)];
    }
    // tau-scaled implicit-pressure momentum divergence:
    // tau Delta~_q = div of [ (P_K + P_{K+e_j})/2 delta_ij + tau F_q ]
    let mut tau_delta_q = vec![[0.0; 3]; nb];
    for k in grid.iter_box() {
        let c = grid.flat(k);
        for i in 0..3 {
            tau_delta_q[c][i] = tau * work.delta_q[c][i]
                + 0.5 / grid.h[i]
                    * (0.5 * (p_corr[grid.flat_padded(k)] + p_corr[grid.flat_padded(add3(k, EIJ[i], 1))])
                        - 0.5 * (p_corr[grid.flat_padded(add3(k, EIJ[i], -1))] + p_corr[grid.flat_padded(k)]));
        }
    }

    // elliptic system for the new parallel momentum
    let mut sys = SparseSystem::new(nb);
    let mut stencil: Vec<(usize, f64)> = Vec::with_capacity(7);
    let gamma_stencil = |k: [isize; 3], out: &mut Vec<(usize, f64)>| {
        // couplings of gamma_qpar at a z-interior cell
        out.clear();
        if k[2] <= 0 || k[2] >= dz - 1 {
            return;
        }
        for j in 0..3 {
            for s in [1isize, -1] {
                let kn = add3(k, EIJ[j], s);
                // odd reflection cannot occur here: k is z-interior
                let cell = grid.flat(kn);
                let coef = s as f64 * 0.5 / grid.h[j] * fields.b_unit[grid.flat_padded(kn)][j];
                out.push((cell, coef));
            }
        }
    };
    // couplings of the conservative mass divergence (odd reflection at the
    // end interfaces); the force term of the eliminated density uses this
    // stencil so the solve stays equivalent to the defining equations
    let mass_div_stencil = |k: [isize; 3], out: &mut Vec<(usize, f64)>| {
        out.clear();
        for j in 0..3 {
            for s in [1isize, -1] {
                let kn = add3(k, EIJ[j], s);
                let (cell, flip) = if kn[2] < 0 || kn[2] >= dz {
                    ([kn[0], kn[1], if kn[2] < 0 { 0 } else { dz - 1 }], -1.0)
                } else {
                    (kn, 1.0)
                };
                let coef =
                    s as f64 * 0.5 / grid.h[j] * flip * fields.b_unit[grid.flat_padded(cell)][j];
                out.push((grid.flat(cell), coef));
            }
        }
    };
    for k in grid.iter_box() {
        let c = grid.flat(k);
        let fp = grid.flat_padded(k);
        let b = fields.b_unit[fp];
        let e_par = dot(b, fields.e[fp]);
        sys.add(c, c, tau);
        // + delta^2 E_par (mass divergence of q_par b)|_K
        mass_div_stencil(k, &mut stencil);
        for &(cell, coef) in &stencil {
            sys.add(c, cell, delta * delta * e_par * coef);
        }
        // - delta^2 sum_i b_i/(2 h_i) [ p'(n)_{K+e_i} gamma|_{K+e_i} - p'(n)_{K-e_i} gamma|_{K-e_i} ]
        for i in 0..3 {
            for s in [1isize, -1] {
                let kn = add3(k, EIJ[i], s);
                let dp = params.closure.dpressure(work.n_pad[grid.flat_padded(kn)]);
                let pref = -delta * delta * s as f64 * 0.5 / grid.h[i] * b[i] * dp;
                if pref != 0.0 {
                    gamma_stencil(kn, &mut stencil);
                    for &(cell, coef) in &stencil {
                        sys.add(c, cell, pref * coef);
                    }
                }
            }
        }
        // right-hand side
        let mut r = 0.0;
        for i in 0..3 {
            r += b[i] * (tau * state.q[c][i] - delta * tau_delta_q[c][i]);
        }
        sys.rhs[c] = r + delta * e_par * (state.n[c] - delta * work.delta_n_tilde[c]);
    }
    let q_par_new = solve_sparse(&sys)?;

    let n_new = mass_update(state, &work, &q_par_new, fields, params, grid)?;

    // perpendicular update from the closed-form rotational inverse
    let mut q_new = vec![[0.0; 3]; nb];
    for k in grid.iter_box() {
        let c = grid.flat(k);
        let fp = grid.flat_padded(k);
        let b = fields.b_unit[fp];
        let bmag = fields.b_mag[fp];
        // G = tau Delta~_q - delta/(2h_i) [p'(n) gamma]_{K+e_i}-[..]_{K-e_i}
        let mut g = [0.0; 3];
        for i in 0..3 {
            let kp = add3(k, EIJ[i], 1);
            let km = add3(k, EIJ[i], -1);
            let gp = params.closure.dpressure(work.n_pad[grid.flat_padded(kp)]) * gamma_qpar(&q_par_new, fields, grid, kp);
            let gm = params.closure.dpressure(work.n_pad[grid.flat_padded(km)]) * gamma_qpar(&q_par_new, fields, grid, km);
            g[i] = tau_delta_q[c][i] - delta * 0.5 / grid.h[i] * (gp - gm);
        }
        let mut s = [0.0; 3];
        for i in 0..3 {
            s[i] = g[i] - n_new[c] * fields.e[fp][i] - tau / delta * state.q[c][i];
        }
        // project and normalize the source, then invert the rotation
        let s_par = dot(s, b);
        let y = [
            (s[0] - s_par * b[0]) / bmag,
            (s[1] - s_par * b[1]) / bmag,
            (s[2] - s_par * b[2]) / bmag,
        ];
        let q_perp = perp_update_closed_form(y, b, tau, delta, bmag);
        for i in 0..3 {
            q_new[c][i] = q_par_new[c] * b[i] + q_perp[i];
        }
    }
    Ok(LorentzState { n: n_new, q: q_new })
}

/// Second uniformly stable stepper: field-aligned elliptic solve for the
/// density (isothermal closure only), explicit parallel momentum recovery,
/// closed-form perpendicular update. Runs at any `tau >= 0`; below the
/// configured threshold the density solve uses the micro-macro formulation.
pub fn step_fdap2(
    state: &LorentzState,
    fields: &EmGivenFields,
    params: &LorentzParams,
    grid: &Grid3D,
) -> Result<LorentzState> {
    let t_iso = params
        .closure
        .isothermal_slope()
        .ok_or_else(|| Error::Unsupported("the density-based stepper needs the isothermal closure".into()))?;
    let work = prepare(state, fields, params, grid)?;
    let nb = grid.n_cells();
    let (tau, delta) = (params.tau, params.delta);
    let dz = grid.dims[2] as isize;

    // parallel projection of the explicit momentum update
    let mut q_proj = vec![0.0; nb];
    for k in grid.iter_box() {
        let c = grid.flat(k);
        let b = fields.b_unit[grid.flat_padded(k)];
        let mut acc = 0.0;
        for i in 0..3 {
            acc += b[i] * (state.q[c][i] - delta * work.delta_q[c][i]);
        }
        q_proj[c] = acc;
    }
    // source of the density solve:
    // Delta~~_n = Delta~_n - n/delta + div(q_proj b)
    let mut dnn = vec![0.0; nb];
    for k in grid.iter_box() {
        let c = grid.flat(k);
        let mut div = 0.0;
        for j in 0..3 {
            div += 0.5 / grid.h[j]
                * (qpar_b_component(&q_proj, fields, grid, add3(k, EIJ[j], 1), j)
                    - qpar_b_component(&q_proj, fields, grid, add3(k, EIJ[j], -1), j));
        }
        dnn[c] = work.delta_n_tilde[c] - state.n[c] / delta + div;
    }

    // normalized field-aligned elliptic problem for the new density:
    // tau' = tau/(delta^2 T), E' = E/T, F' = -delta Delta~~_n
    let mut b_box = vec![[0.0; 3]; nb];
    let mut e_box = vec![[0.0; 3]; nb];
    for k in grid.iter_box() {
        let c = grid.flat(k);
        let fp = grid.flat_padded(k);
        b_box[c] = fields.b_unit[fp];
        e_box[c] = [fields.e[fp][0] / t_iso, fields.e[fp][1] / t_iso, fields.e[fp][2] / t_iso];
    }
    let tau_norm = tau / (delta * delta * t_iso);
    let engine = AnisoEngine { grid, b: &b_box, e: &e_box, tau: tau_norm };
    engine.validate()?;
    let f_src: Vec<f64> = dnn.iter().map(|&v| -delta * v).collect();
    let g_zero = vec![0.0; grid.n_padded()];

    let use_micromacro = tau < params.micromacro_tau_threshold;
    // gamma_scaled holds the normalized aligned flux gamma'(n^{m+1})/tau,
    // evaluated through the micro component when the micro-macro path runs
    // (gamma'(n) = tau' gamma'(q) exactly), so tau = 0 stays finite.
    let (n_new, gamma_scaled): (Vec<f64>, Vec<f64>) = if use_micromacro {
        let mm = engine.solve_micromacro(&f_src, &g_zero)?;
        let mut gs = vec![0.0; nb];
        for k in grid.iter_box() {
            if k[2] <= 0 || k[2] >= dz - 1 {
                continue;
            }
            let c = grid.flat(k);
            let b = b_box[c];
            let e = e_box[c];
            let mut g = -mm.q[c] * dot(b, e);
            for i in 0..3 {
                g += b[i] * 0.5 / grid.h[i]
                    * (mm.q[grid.flat(add3(k, EIJ[i], 1))] - mm.q[grid.flat(add3(k, EIJ[i], -1))]);
            }
            // gamma'(n)/tau = tau' gamma'(q)/tau = gamma'(q)/(delta^2 T)
            gs[c] = g / (delta * delta * t_iso);
        }
        (mm.n, gs)
    } else {
        let sys = engine.assemble_naive(&f_src, &g_zero);
        let n_new = solve_sparse(&sys)?;
        let mut gs = vec![0.0; nb];
        for k in grid.iter_box() {
            if k[2] <= 0 || k[2] >= dz - 1 {
                continue;
            }
            let c = grid.flat(k);
            let b = b_box[c];
            let e = e_box[c];
            let mut g = -n_new[c] * dot(b, e);
            for i in 0..3 {
                g += b[i] * 0.5 / grid.h[i]
                    * (n_new[grid.flat(add3(k, EIJ[i], 1))] - n_new[grid.flat(add3(k, EIJ[i], -1))]);
            }
            gs[c] = g / tau;
        }
        (n_new, gs)
    };
    if n_new.iter().any(|&v| v <= 0.0) {
        return Err(Error::InvalidInput("density became non-positive; reduce the time step".into()));
    }

    // parallel momentum: q_par = -delta/tau gamma~(n^{m+1}) + Q,
    // with gamma~/tau evaluated through the scaled flux (exact at tau = 0)
    let mut q_par_new = vec![0.0; nb];
    for k in grid.iter_box() {
        let c = grid.flat(k);
        q_par_new[c] = q_proj[c] - delta * t_iso * gamma_scaled[c];
    }

    let n_final = mass_update(state, &work, &q_par_new, fields, params, grid)?;

    // perpendicular update
    let mut q_new = vec![[0.0; 3]; nb];
    let mut n_new_pad = vec![0.0; grid.n_padded()];
    for k in grid.iter_box() {
        n_new_pad[grid.flat_padded(k)] = n_new[grid.flat(k)];
    }
    for k in iter_padded(grid) {
        if k[2] >= 0 && k[2] < dz {
            continue;
        }
        let adj = [k[0], k[1], if k[2] < 0 { 0 } else { dz - 1 }];
        n_new_pad[grid.flat_padded(k)] = n_new[grid.flat(adj)];
    }
    for k in grid.iter_box() {
        let c = grid.flat(k);
        let fp = grid.flat_padded(k);
        let b = fields.b_unit[fp];
        let bmag = fields.b_mag[fp];
        let mut g = [0.0; 3];
        for i in 0..3 {
            let pp = t_iso * n_new_pad[grid.flat_padded(add3(k, EIJ[i], 1))];
            let pm = t_iso * n_new_pad[grid.flat_padded(add3(k, EIJ[i], -1))];
            g[i] = 0.5 / grid.h[i] * (pp - pm) + tau * work.delta_q[c][i];
        }
        let mut s = [0.0; 3];
        for i in 0..3 {
            s[i] = g[i] - n_new[c] * fields.e[fp][i] - tau / delta * state.q[c][i];
        }
        let s_par = dot(s, b);
        let y = [
            (s[0] - s_par * b[0]) / bmag,
            (s[1] - s_par * b[1]) / bmag,
            (s[2] - s_par * b[2]) / bmag,
        ];
        let q_perp = perp_update_closed_form(y, b, tau, delta, bmag);
        for i in 0..3 {
            q_new[c][i] = q_par_new[c] * b[i] + q_perp[i];
        }
    }
    Ok(LorentzState { n: n_final, q: q_new })
}

/// Max over interior cells of the field-aligned force-balance residual
/// `| sum_i b_i ( (p(n_{K+e_i}) - p(n_{K-e_i}))/(2 h_i) - n_K E_i ) |`.
pub fn drift_balance_residual(
    state: &LorentzState,
    fields: &EmGivenFields,
    grid: &Grid3D,
    closure: &PressureClosure,
) -> f64 {
    let dz = grid.dims[2] as isize;
    let mut worst = 0.0f64;
    for k in grid.iter_box() {
        if k[2] <= 0 || k[2] >= dz - 1 {
            continue;
        }
        let c = grid.flat(k);
        let fp = grid.flat_padded(k);
        let b = fields.b_unit[fp];
        let mut r = 0.0;
        for i in 0..3 {
            let pp = closure.pressure(state.n[grid.flat(add3(k, EIJ[i], 1))]);
            let pm = closure.pressure(state.n[grid.flat(add3(k, EIJ[i], -1))]);
            r += b[i] * (0.5 / grid.h[i] * (pp - pm) - state.n[c] * fields.e[fp][i]);
        }
        worst = worst.max(r.abs());
    }
    worst
}

/// Builds a state in exact discrete field-aligned force balance: the density
/// follows the flux-free recursion seeded with `n_seed` on the free layers,
/// the perpendicular momentum carries the drift value and the parallel
/// momentum vanishes.
pub fn init_force_balanced(
    grid: &Grid3D,
    fields: &EmGivenFields,
    params: &LorentzParams,
    n_seed: f64,
) -> Result<LorentzState> {
    let t_iso = params
        .closure
        .isothermal_slope()
        .ok_or_else(|| Error::Unsupported("force-balanced initialization needs the isothermal closure".into()))?;
    let nb = grid.n_cells();
    let mut b_box = vec![[0.0; 3]; nb];
    let mut e_box = vec![[0.0; 3]; nb];
    for k in grid.iter_box() {
        let c = grid.flat(k);
        let fp = grid.flat_padded(k);
        b_box[c] = fields.b_unit[fp];
        e_box[c] = [fields.e[fp][0] / t_iso, fields.e[fp][1] / t_iso, fields.e[fp][2] / t_iso];
    }
    let engine = AnisoEngine { grid, b: &b_box, e: &e_box, tau: 0.0 };
    engine.validate()?;
    let mut n = vec![0.0; nb];
    for k in grid.iter_box() {
        if engine.is_macro_cell(k) {
            n[grid.flat(k)] = n_seed;
        }
    }
    engine.ge_extend(&mut n);
    if n.iter().any(|&v| v <= 0.0) {
        return Err(Error::InvalidInput("force-balanced density came out non-positive; reduce the field".into()));
    }
    let state0 = LorentzState { n: n.clone(), q: vec![[0.0; 3]; nb] };
    let mut q = vec![[0.0; 3]; nb];
    for k in grid.iter_box() {
        let c = grid.flat(k);
        let fp = grid.flat_padded(k);
        let gp = pressure_gradient_at(&state0, params, grid, k);
        let s = [
            gp[0] - n[c] * fields.e[fp][0],
            gp[1] - n[c] * fields.e[fp][1],
            gp[2] - n[c] * fields.e[fp][2],
        ];
        let bxs = cross(fields.b_unit[fp], s);
        for i in 0..3 {
            q[c][i] = bxs[i] / fields.b_mag[fp];
        }
    }
    Ok(LorentzState { n, q })
}

/// Total mass `sum n_K vol`.
pub fn total_mass(state: &LorentzState, grid: &Grid3D) -> f64 {
    state.n.iter().sum::<f64>() * grid.h[0] * grid.h[1] * grid.h[2]
}
