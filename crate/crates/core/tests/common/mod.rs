//! Shared test support: independent dense-matrix oracles for every time
//! stepper. Each oracle re-derives the scheme's defining equations with its
//! own flux evaluations and ghost handling, assembles them as one dense
//! linear system (or explicit dense sequence) and solves with a local LU.
//! Nothing here calls the production solvers.

use apfluid::closure::PressureClosure;
use apfluid::euler_maxwell::{EmParams, EmState};
use apfluid::euler_poisson::{EpParams, EpState};
use apfluid::grid::{Grid1D, Grid3D};
use apfluid::lorentz::{EmGivenFields, LorentzParams, LorentzState};

/// Plain dense LU with partial pivoting, local to the tests.
pub fn dense_solve(n: usize, a: &mut [f64], b: &mut [f64]) {
    assert_eq!(a.len(), n * n);
    for k in 0..n {
        let mut p = k;
        for r in k + 1..n {
            if a[r * n + k].abs() > a[p * n + k].abs() {
                p = r;
            }
        }
        assert!(a[p * n + k] != 0.0, "oracle matrix singular at column {k}");
        if p != k {
            for j in 0..n {
                a.swap(k * n + j, p * n + j);
            }
            b.swap(k, p);
        }
        let piv = a[k * n + k];
        for r in k + 1..n {
            let m = a[r * n + k] / piv;
            if m != 0.0 {
                a[r * n + k] = m;
                for j in k + 1..n {
                    a[r * n + j] -= m * a[k * n + j];
                }
                b[r] -= m * b[k];
            }
        }
    }
    for k in (0..n).rev() {
        let mut s = b[k];
        for j in k + 1..n {
            s -= a[k * n + j] * b[j];
        }
        b[k] = s / a[k * n + k];
    }
}

pub fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let scale = a
        .iter()
        .chain(b.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-300);
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
        / scale
}

fn wrap(k: isize, n: usize) -> usize {
    let n = n as isize;
    (((k % n) + n) % n) as usize
}

/// Full-system Rusanov coefficient used by the 1D fluid fluxes.
fn mu_full(nl: f64, ql: f64, nr: f64, qr: f64, closure: &PressureClosure) -> f64 {
    let cl = closure.dpressure(nl).max(0.0).sqrt();
    let cr = closure.dpressure(nr).max(0.0).sqrt();
    ((ql / nl).abs() + cl).max((qr / nr).abs() + cr)
}

struct EpFluxes {
    f_n: Vec<f64>,
    f_u: Vec<f64>,
}

fn ep_fluxes(s: &EpState, p: &EpParams, g: &Grid1D) -> EpFluxes {
    let n = g.n_cells;
    let mut f_n = vec![0.0; n];
    let mut f_u = vec![0.0; n];
    for k in 0..n {
        let kp = wrap(k as isize + 1, n);
        let mu = p.visc_const * mu_full(s.n[k], s.q[k], s.n[kp], s.q[kp], &p.closure);
        f_n[k] = 0.5 * (s.q[k] + s.q[kp] + mu * (s.n[k] - s.n[kp]));
        f_u[k] = 0.5
            * (s.q[k] * s.q[k] / s.n[k]
                + p.closure.pressure(s.n[k])
                + s.q[kp] * s.q[kp] / s.n[kp]
                + p.closure.pressure(s.n[kp])
                + mu * (s.q[k] - s.q[kp]));
    }
    EpFluxes { f_n, f_u }
}

/// Dense oracle for the classical fluid/Poisson step: explicit density,
/// dense gauged Poisson solve, momentum with the new density and field.
pub fn oracle_ep_classical(s: &EpState, p: &EpParams, g: &Grid1D) -> EpState {
    let n = g.n_cells;
    let (h, delta) = (g.h, p.delta);
    let lam2 = p.lambda * p.lambda;
    let fx = ep_fluxes(s, p, g);
    let mut n_new = vec![0.0; n];
    for k in 0..n {
        n_new[k] = s.n[k] - delta / h * (fx.f_n[k] - fx.f_n[wrap(k as isize - 1, n)]);
    }
    // dense Poisson with the first row replaced by the zero-mean gauge
    let mut a = vec![0.0; n * n];
    let mut rhs = vec![0.0; n];
    for k in 0..n {
        if k == 0 {
            for j in 0..n {
                a[j] = 1.0;
            }
            rhs[0] = 0.0;
            continue;
        }
        a[k * n + k] = 2.0 * lam2 / (h * h);
        a[k * n + wrap(k as isize + 1, n)] -= lam2 / (h * h);
        a[k * n + wrap(k as isize - 1, n)] -= lam2 / (h * h);
        rhs[k] = 1.0 - n_new[k];
    }
    dense_solve(n, &mut a, &mut rhs);
    let phi = rhs;
    // the dropped Poisson row must hold by consistency
    let r0 = -lam2 / (h * h) * (phi[1] - 2.0 * phi[0] + phi[n - 1]) - (1.0 - n_new[0]);
    assert!(r0.abs() < 1e-9, "dropped Poisson row residual {r0:e}");
    let mut e = vec![0.0; n];
    for k in 0..n {
        e[k] = -(phi[wrap(k as isize + 1, n)] - phi[k]) / h;
    }
    let mut q_new = vec![0.0; n];
    for k in 0..n {
        let km = wrap(k as isize - 1, n);
        q_new[k] = s.q[k] - delta / h * (fx.f_u[k] - fx.f_u[km]) - delta * n_new[k] * 0.5 * (e[k] + e[km]);
    }
    EpState { n: n_new, q: q_new, phi, e }
}

/// Dense oracle for the uniformly stable fluid/Poisson step: one coupled
/// linear system in `(n, q, phi)` built from the implicit scheme equations
/// (mass with implicit flux, momentum with explicit density, Gauss law with
/// one row traded for the zero-mean gauge).
pub fn oracle_ep_ap(s: &EpState, p: &EpParams, g: &Grid1D) -> EpState {
    let n = g.n_cells;
    let (h, delta) = (g.h, p.delta);
    let lam2 = p.lambda * p.lambda;
    let fx = ep_fluxes(s, p, g);
    let dim = 3 * n;
    let idn = |k: usize| k;
    let idq = |k: usize| n + k;
    let idp = |k: usize| 2 * n + k;
    let mut a = vec![0.0; dim * dim];
    let mut rhs = vec![0.0; dim];
    let add = |a: &mut Vec<f64>, r: usize, c: usize, v: f64| a[r * dim + c] += v;
    // E_{k+1/2} = -(phi_{k+1} - phi_k)/h as a closure over phi columns
    let e_cols = |k: usize| -> [(usize, f64); 2] {
        [(idp(wrap(k as isize + 1, n)), -1.0 / h), (idp(k), 1.0 / h)]
    };
    for k in 0..n {
        let km = wrap(k as isize - 1, n);
        let kp = wrap(k as isize + 1, n);
        let k2m = wrap(k as isize - 2, n);
        // mass: n_k/delta + (ft_k - ft_{k-1})/h = n^m/delta with
        // ft_k = f_n[k] - (delta/2)(n^m_k + n^m_{k+1}) E_k - (delta/2h)(f_u[k+1]-f_u[k-1])
        add(&mut a, idn(k), idn(k), 1.0 / delta);
        for (c, v) in e_cols(k) {
            add(&mut a, idn(k), c, -0.5 * delta / h * (s.n[k] + s.n[kp]) * v);
        }
        for (c, v) in e_cols(km) {
            add(&mut a, idn(k), c, 0.5 * delta / h * (s.n[km] + s.n[k]) * v);
        }
        rhs[idn(k)] = s.n[k] / delta - (fx.f_n[k] - fx.f_n[km]) / h
            + 0.5 * delta / (h * h) * (fx.f_u[kp] - fx.f_u[k] - fx.f_u[km] + fx.f_u[k2m]);
        // momentum: q_k/delta + n^m_k Etilde = q^m/delta - (f_u diff)/h
        add(&mut a, idq(k), idq(k), 1.0 / delta);
        for (c, v) in e_cols(k) {
            add(&mut a, idq(k), c, s.n[k] * 0.5 * v);
        }
        for (c, v) in e_cols(km) {
            add(&mut a, idq(k), c, s.n[k] * 0.5 * v);
        }
        rhs[idq(k)] = s.q[k] / delta - (fx.f_u[k] - fx.f_u[km]) / h;
        // Gauss: lam^2 (E_k - E_{k-1})/h + ... = 1 - n_k; first row gauged
        if k == 0 {
            for j in 0..n {
                add(&mut a, idp(0), idp(j), 1.0);
            }
            rhs[idp(0)] = 0.0;
        } else {
            for (c, v) in e_cols(k) {
                add(&mut a, idp(k), c, lam2 / h * v);
            }
            for (c, v) in e_cols(km) {
                add(&mut a, idp(k), c, -lam2 / h * v);
            }
            add(&mut a, idp(k), idn(k), 1.0);
            rhs[idp(k)] = 1.0;
        }
    }
    dense_solve(dim, &mut a, &mut rhs);
    let n_new = rhs[0..n].to_vec();
    let q_new = rhs[n..2 * n].to_vec();
    let phi = rhs[2 * n..3 * n].to_vec();
    let mut e = vec![0.0; n];
    for k in 0..n {
        e[k] = -(phi[wrap(k as isize + 1, n)] - phi[k]) / h;
    }
    // the traded Gauss row must hold by consistency
    let g0 = lam2 / h * (e[0] - e[n - 1]) - (1.0 - n_new[0]);
    assert!(g0.abs() < 1e-9, "traded Gauss row residual {g0:e}");
    EpState { n: n_new, q: q_new, phi, e }
}

struct EmFluxes {
    f_n: Vec<f64>,
    f_ux: Vec<f64>,
    f_uy: Vec<f64>,
}

fn em_fluxes(s: &EmState, p: &EmParams, g: &Grid1D) -> EmFluxes {
    let n = g.n_cells;
    let mut f = EmFluxes { f_n: vec![0.0; n], f_ux: vec![0.0; n], f_uy: vec![0.0; n] };
    for k in 0..n {
        let kp = wrap(k as isize + 1, n);
        let mu = p.visc_const * mu_full(s.n[k], s.qx[k], s.n[kp], s.qx[kp], &p.closure);
        f.f_n[k] = 0.5 * (s.qx[k] + s.qx[kp] + mu * (s.n[k] - s.n[kp]));
        f.f_ux[k] = 0.5
            * (s.qx[k] * s.qx[k] / s.n[k]
                + p.closure.pressure(s.n[k])
                + s.qx[kp] * s.qx[kp] / s.n[kp]
                + p.closure.pressure(s.n[kp])
                + mu * (s.qx[k] - s.qx[kp]));
        f.f_uy[k] = 0.5 * (s.qx[k] * s.qy[k] / s.n[k] + s.qx[kp] * s.qy[kp] / s.n[kp] + mu * (s.qy[k] - s.qy[kp]));
    }
    f
}

/// Dense oracle for the classical fluid/Maxwell step: the linear field block
/// is assembled and LU-solved as one matrix, then the momentum follows.
pub fn oracle_em_classical(s: &EmState, p: &EmParams, g: &Grid1D) -> EmState {
    let n = g.n_cells;
    let (h, delta) = (g.h, p.delta);
    let lam2 = p.lambda * p.lambda;
    let fx = em_fluxes(s, p, g);
    // block unknowns: [n, ex, bz, ey]
    let dim = 4 * n;
    let (idn, idex, idbz, idey) = (0usize, n, 2 * n, 3 * n);
    let mut a = vec![0.0; dim * dim];
    let mut rhs = vec![0.0; dim];
    for k in 0..n {
        let km = wrap(k as isize - 1, n);
        let kp = wrap(k as isize + 1, n);
        a[(idn + k) * dim + idn + k] = 1.0;
        rhs[idn + k] = s.n[k] - delta / h * (fx.f_n[k] - fx.f_n[km]);
        a[(idex + k) * dim + idex + k] = 1.0;
        rhs[idex + k] = s.ex[k] + delta / lam2 * fx.f_n[k];
        a[(idbz + k) * dim + idbz + k] = 1.0;
        rhs[idbz + k] = s.bz[k] - delta / h * (s.ey[kp] - s.ey[k]);
        a[(idey + k) * dim + idey + k] = 1.0;
        a[(idey + k) * dim + idbz + k] += delta / lam2 / h;
        a[(idey + k) * dim + idbz + km] -= delta / lam2 / h;
        rhs[idey + k] = s.ey[k] + delta / lam2 * s.qy[k];
    }
    dense_solve(dim, &mut a, &mut rhs);
    let n_new = rhs[idn..idn + n].to_vec();
    let ex = rhs[idex..idex + n].to_vec();
    let bz = rhs[idbz..idbz + n].to_vec();
    let ey = rhs[idey..idey + n].to_vec();
    let mut qx = vec![0.0; n];
    let mut qy = vec![0.0; n];
    for k in 0..n {
        let km = wrap(k as isize - 1, n);
        let ext = 0.5 * (ex[k] + ex[km]);
        let bzt = 0.5 * (s.bz[k] + s.bz[km]);
        qx[k] = s.qx[k] - delta / h * (fx.f_ux[k] - fx.f_ux[km]) - delta * (n_new[k] * ext + s.qy[k] * bzt);
        qy[k] = s.qy[k] - delta / h * (fx.f_uy[k] - fx.f_uy[km]) - delta * (n_new[k] * ey[k] - s.qx[k] * bzt);
    }
    EmState { n: n_new, qx, qy, ex, ey, bz }
}

/// Dense oracle for the uniformly stable fluid/Maxwell step: one coupled
/// 6N linear system in `(n, qx, qy, ex, ey, bz)` built from the implicit
/// scheme equations.
pub fn oracle_em_ap(s: &EmState, p: &EmParams, g: &Grid1D) -> EmState {
    let n = g.n_cells;
    let (h, delta) = (g.h, p.delta);
    let lam2 = p.lambda * p.lambda;
    let fx = em_fluxes(s, p, g);
    let dim = 6 * n;
    let id = |f: usize, k: usize| f * n + k; // fields in order n,qx,qy,ex,ey,bz
    let (fn_, fqx, fqy, fex, fey, fbz) = (0, 1, 2, 3, 4, 5);
    let mut a = vec![0.0; dim * dim];
    let mut rhs = vec![0.0; dim];
    for k in 0..n {
        let km = wrap(k as isize - 1, n);
        let kp = wrap(k as isize + 1, n);
        // mass with implicit flux ft_k = f_n[k] - (d/2)(n^m_k+n^m_{k+1}) ex_k
        //   - (d/2h)(f_ux[kp]-f_ux[km]) - (d/2)(qy^m_k+qy^m_{k+1}) bz^m_k
        let r = id(fn_, k);
        a[r * dim + id(fn_, k)] += 1.0 / delta;
        a[r * dim + id(fex, k)] += -0.5 * delta * (s.n[k] + s.n[kp]) / h;
        a[r * dim + id(fex, km)] += 0.5 * delta * (s.n[km] + s.n[k]) / h;
        rhs[r] = s.n[k] / delta - (fx.f_n[k] - fx.f_n[km]) / h
            + 0.5 * delta / (h * h) * (fx.f_ux[kp] - fx.f_ux[k] - fx.f_ux[km] + fx.f_ux[wrap(k as isize - 2, n)])
            + 0.5 * delta / h * ((s.qy[k] + s.qy[kp]) * s.bz[k] - (s.qy[km] + s.qy[k]) * s.bz[km]);
        // x momentum with explicit density and old magnetic average
        let r = id(fqx, k);
        a[r * dim + id(fqx, k)] += 1.0 / delta;
        a[r * dim + id(fex, k)] += 0.5 * s.n[k];
        a[r * dim + id(fex, km)] += 0.5 * s.n[k];
        rhs[r] = s.qx[k] / delta - (fx.f_ux[k] - fx.f_ux[km]) / h - s.qy[k] * 0.5 * (s.bz[k] + s.bz[km]);
        // y momentum
        let r = id(fqy, k);
        a[r * dim + id(fqy, k)] += 1.0 / delta;
        a[r * dim + id(fey, k)] += s.n[k];
        rhs[r] = s.qy[k] / delta - (fx.f_uy[k] - fx.f_uy[km]) / h + s.qx[k] * 0.5 * (s.bz[k] + s.bz[km]);
        // implicit Faraday
        let r = id(fbz, k);
        a[r * dim + id(fbz, k)] += 1.0 / delta;
        a[r * dim + id(fey, kp)] += 1.0 / h;
        a[r * dim + id(fey, k)] += -1.0 / h;
        rhs[r] = s.bz[k] / delta;
        // longitudinal Ampere with the implicit mass flux as current
        let r = id(fex, k);
        a[r * dim + id(fex, k)] += lam2 / delta + 0.5 * delta * (s.n[k] + s.n[kp]);
        rhs[r] = lam2 / delta * s.ex[k] + fx.f_n[k]
            - 0.5 * delta / h * (fx.f_ux[kp] - fx.f_ux[km])
            - 0.5 * delta * (s.qy[k] + s.qy[kp]) * s.bz[k];
        // transverse Ampere with implicit field and current
        let r = id(fey, k);
        a[r * dim + id(fey, k)] += lam2 / delta;
        a[r * dim + id(fbz, k)] += 1.0 / h;
        a[r * dim + id(fbz, km)] += -1.0 / h;
        a[r * dim + id(fqy, k)] += -1.0;
        rhs[r] = lam2 / delta * s.ey[k];
    }
    dense_solve(dim, &mut a, &mut rhs);
    EmState {
        n: rhs[0..n].to_vec(),
        qx: rhs[n..2 * n].to_vec(),
        qy: rhs[2 * n..3 * n].to_vec(),
        ex: rhs[3 * n..4 * n].to_vec(),
        ey: rhs[4 * n..5 * n].to_vec(),
        bz: rhs[5 * n..6 * n].to_vec(),
    }
}

// ---------------------------------------------------------------------------
// strongly magnetized 3D oracles
// ---------------------------------------------------------------------------

const EIJ: [[isize; 3]; 3] = [[1, 0, 0], [0, 1, 0], [0, 0, 1]];

fn add3(k: [isize; 3], d: [isize; 3], s: isize) -> [isize; 3] {
    [k[0] + s * d[0], k[1] + s * d[1], k[2] + s * d[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Explicit transport quantities of the magnetized steppers, recomputed
/// independently of the production code (same ghost conventions, separate
/// loops).
pub struct LorentzExplicit {
    pub n_pad: Vec<f64>,
    pub delta_n_tilde: Vec<f64>,
    pub delta_q: Vec<[f64; 3]>,
}

pub fn lorentz_explicit(
    s: &LorentzState,
    fields: &EmGivenFields,
    p: &LorentzParams,
    grid: &Grid3D,
) -> LorentzExplicit {
    let dz = grid.dims[2] as isize;
    let np = grid.n_padded();
    let mut n_pad = vec![0.0; np];
    let mut q_pad = vec![[0.0; 3]; np];
    for k in grid.iter_box() {
        n_pad[grid.flat_padded(k)] = s.n[grid.flat(k)];
        q_pad[grid.flat_padded(k)] = s.q[grid.flat(k)];
    }
    // ghosts: copied density, parallel-carried + drift momentum
    for i0 in 0..grid.dims[0] as isize {
        for i1 in 0..grid.dims[1] as isize {
            for kz in [-1, dz] {
                let k = [i0, i1, kz];
                let adj = [i0, i1, if kz < 0 { 0 } else { dz - 1 }];
                let gc = grid.flat_padded(k);
                let ac = grid.flat(adj);
                n_pad[gc] = s.n[ac];
                let b_g = fields.b_unit[gc];
                let q_par = dot(s.q[ac], fields.b_unit[grid.flat_padded(adj)]);
                // centered pressure gradient at the adjacent cell, clamped
                let mut gp = [0.0; 3];
                for i in 0..3 {
                    let mut up = add3(adj, EIJ[i], 1);
                    let mut dn = add3(adj, EIJ[i], -1);
                    if i == 2 {
                        up[2] = up[2].min(dz - 1);
                        dn[2] = dn[2].max(0);
                    }
                    gp[i] = (p.closure.pressure(s.n[grid.flat(up)]) - p.closure.pressure(s.n[grid.flat(dn)]))
                        * 0.5
                        / grid.h[i];
                }
                let sv = [
                    gp[0] - s.n[ac] * fields.e[gc][0],
                    gp[1] - s.n[ac] * fields.e[gc][1],
                    gp[2] - s.n[ac] * fields.e[gc][2],
                ];
                let bxs = cross(b_g, sv);
                for i in 0..3 {
                    q_pad[gc][i] = q_par * b_g[i] + bxs[i] / fields.b_mag[gc];
                }
            }
        }
    }
    let nb = grid.n_cells();
    let mut delta_n_tilde = vec![0.0; nb];
    let mut delta_q = vec![[0.0; 3]; nb];
    for k in grid.iter_box() {
        let c = grid.flat(k);
        for j in 0..3 {
            for sgn in [1isize, -1] {
                let kn = add3(k, EIJ[j], sgn);
                let (kl, kr) = if sgn > 0 { (k, kn) } else { (kn, k) };
                let (fl, fr) = (grid.flat_padded(kl), grid.flat_padded(kr));
                let ul = [q_pad[fl][0] / n_pad[fl], q_pad[fl][1] / n_pad[fl], q_pad[fl][2] / n_pad[fl]];
                let ur = [q_pad[fr][0] / n_pad[fr], q_pad[fr][1] / n_pad[fr], q_pad[fr][2] / n_pad[fr]];
                let mu = p.visc_const * dot(ul, ul).sqrt().max(dot(ur, ur).sqrt());
                let end = j == 2 && (kl[2] < 0 || kr[2] >= dz);
                if !end {
                    let (bl, br) = (fields.b_unit[fl], fields.b_unit[fr]);
                    let (ql, qr) = (q_pad[fl], q_pad[fr]);
                    let v = 0.5 * mu * (n_pad[fl] - n_pad[fr])
                        + 0.5 * ((ql[j] - dot(ql, bl) * bl[j]) + (qr[j] - dot(qr, br) * br[j]));
                    delta_n_tilde[c] += sgn as f64 / grid.h[j] * v;
                }
                for i in 0..3 {
                    let fq = 0.5
                        * (q_pad[fl][i] * q_pad[fl][j] / n_pad[fl]
                            + q_pad[fr][i] * q_pad[fr][j] / n_pad[fr]
                            + mu * (q_pad[fl][i] - q_pad[fr][i]));
                    delta_q[c][i] += sgn as f64 / grid.h[j] * fq;
                }
            }
        }
    }
    LorentzExplicit { n_pad, delta_n_tilde, delta_q }
}

/// Adds the implicit parallel mass-flux couplings of the mass row at cell
/// `k` into a dense matrix over unknowns `[n; q1; q2; q3]`, with the odd
/// reflection through the end interfaces.
fn mass_row_qpar_couplings(
    a: &mut [f64],
    dim: usize,
    row: usize,
    delta_coef: f64,
    k: [isize; 3],
    fields: &EmGivenFields,
    grid: &Grid3D,
) {
    let nb = grid.n_cells();
    let dz = grid.dims[2] as isize;
    for j in 0..3 {
        for sgn in [1isize, -1] {
            let kn = add3(k, EIJ[j], sgn);
            let (cell, refl) = if kn[2] < 0 || kn[2] >= dz {
                ([kn[0], kn[1], if kn[2] < 0 { 0 } else { dz - 1 }], -1.0)
            } else {
                (kn, 1.0)
            };
            let cb = grid.flat(cell);
            let bcell = fields.b_unit[grid.flat_padded(cell)];
            for l in 0..3 {
                a[row * dim + (1 + l) * nb + cb] +=
                    delta_coef * sgn as f64 * 0.5 / grid.h[j] * refl * bcell[j] * bcell[l];
            }
        }
    }
}

/// Couplings of the field-aligned divergence `gamma(q_par)` at a z-interior
/// cell into the momentum unknowns (zero rows elsewhere).
fn gamma_couplings(k: [isize; 3], fields: &EmGivenFields, grid: &Grid3D, out: &mut Vec<(usize, f64)>) {
    out.clear();
    let dz = grid.dims[2] as isize;
    if k[2] <= 0 || k[2] >= dz - 1 {
        return;
    }
    for j in 0..3 {
        for sgn in [1isize, -1] {
            let kn = add3(k, EIJ[j], sgn);
            let b = fields.b_unit[grid.flat_padded(kn)];
            let cb = grid.flat(kn);
            for l in 0..3 {
                out.push((l * grid.n_cells() + cb, sgn as f64 * 0.5 / grid.h[j] * b[j] * b[l]));
            }
        }
    }
}

/// Dense oracle for the parallel-momentum stepper: the coupled `4N` system
/// in `(n, q)` from the scheme's defining equations, tau-scaled momentum
/// rows.
pub fn oracle_fdap1(
    s: &LorentzState,
    fields: &EmGivenFields,
    p: &LorentzParams,
    grid: &Grid3D,
) -> LorentzState {
    let nb = grid.n_cells();
    let dz = grid.dims[2] as isize;
    let (tau, delta) = (p.tau, p.delta);
    let ex = lorentz_explicit(s, fields, p, grid);
    // pressure correction, padded by copy
    let mut p_corr = vec![0.0; grid.n_padded()];
    for k in grid.iter_box() {
        let c = grid.flat(k);
        p_corr[grid.flat_padded(k)] =
            p.closure.pressure(s.n[c]) - delta * p.closure.dpressure(s.n[c]) * ex.delta_n_tilde[c];
    }
    for i0 in 0..grid.dims[0] as isize {
        for i1 in 0..grid.dims[1] as isize {
            for kz in [-1, dz] {
                let adj = [i0, i1, if kz < 0 { 0 } else { dz - 1 }];
                p_corr[grid.flat_padded([i0, i1, kz])] = p_corr[grid.flat_padded(adj)];
            }
        }
    }
    let mut tau_delta_q = vec![[0.0; 3]; nb];
    for k in grid.iter_box() {
        let c = grid.flat(k);
        for i in 0..3 {
            tau_delta_q[c][i] = tau * ex.delta_q[c][i]
                + 0.25 / grid.h[i]
                    * (p_corr[grid.flat_padded(add3(k, EIJ[i], 1))] - p_corr[grid.flat_padded(add3(k, EIJ[i], -1))]);
        }
    }
    let dim = 4 * nb;
    let mut a = vec![0.0; dim * dim];
    let mut rhs = vec![0.0; dim];
    let mut st: Vec<(usize, f64)> = Vec::new();
    for k in grid.iter_box() {
        let c = grid.flat(k);
        let fp = grid.flat_padded(k);
        let bfield = fields.b_field[fp];
        let e = fields.e[fp];
        // mass row
        let r = c;
        a[r * dim + c] += 1.0 / delta;
        mass_row_qpar_couplings(&mut a, dim, r, 1.0, k, fields, grid);
        rhs[r] = s.n[c] / delta - ex.delta_n_tilde[c];
        // tau-scaled momentum rows
        for i in 0..3 {
            let r = (1 + i) * nb + c;
            a[r * dim + (1 + i) * nb + c] += tau / delta;
            // implicit pressure through the aligned divergence
            for sgn in [1isize, -1] {
                let kn = add3(k, EIJ[i], sgn);
                let dp = p.closure.dpressure(ex.n_pad[grid.flat_padded(kn)]);
                let pref = -delta * sgn as f64 * 0.5 / grid.h[i] * dp;
                gamma_couplings(kn, fields, grid, &mut st);
                for &(cc, v) in &st {
                    a[r * dim + nb + cc] += pref * v;
                }
            }
            // Lorentz force: - n E_i - (q x B)_i with
            // (q x B)_i = q_j B_k - q_k B_j, (i,j,k) cyclic
            a[r * dim + c] += -e[i];
            let (j, kk) = ((i + 1) % 3, (i + 2) % 3);
            a[r * dim + (1 + j) * nb + c] += -bfield[kk];
            a[r * dim + (1 + kk) * nb + c] += bfield[j];
            rhs[r] = tau / delta * s.q[c][i] - tau_delta_q[c][i];
        }
    }
    dense_solve(dim, &mut a, &mut rhs);
    let n_new = rhs[0..nb].to_vec();
    let mut q_new = vec![[0.0; 3]; nb];
    for c in 0..nb {
        for i in 0..3 {
            q_new[c][i] = rhs[(1 + i) * nb + c];
        }
    }
    LorentzState { n: n_new, q: q_new }
}

/// Dense oracle for the density-based stepper: coupled `4N` system with the
/// raw pressure gradient in the momentum rows (isothermal), the parallel
/// component of the pressure/force vector replaced by the prescribed flux on
/// the boundary layers of the bounded axis.
pub fn oracle_fdap2(
    s: &LorentzState,
    fields: &EmGivenFields,
    p: &LorentzParams,
    grid: &Grid3D,
) -> LorentzState {
    let nb = grid.n_cells();
    let dz = grid.dims[2] as isize;
    let (tau, delta) = (p.tau, p.delta);
    let t_iso = p.closure.isothermal_slope().expect("oracle needs the isothermal closure");
    let ex = lorentz_explicit(s, fields, p, grid);
    let dim = 4 * nb;
    let mut a = vec![0.0; dim * dim];
    let mut rhs = vec![0.0; dim];
    for k in grid.iter_box() {
        let c = grid.flat(k);
        let fp = grid.flat_padded(k);
        let b = fields.b_unit[fp];
        let bfield = fields.b_field[fp];
        let e = fields.e[fp];
        // mass row, identical structure to the other stepper
        let r = c;
        a[r * dim + c] += 1.0 / delta;
        mass_row_qpar_couplings(&mut a, dim, r, 1.0, k, fields, grid);
        rhs[r] = s.n[c] / delta - ex.delta_n_tilde[c];
        // pressure/force vector W_i = (p(n)_{K+e_i} - p(n)_{K-e_i})/(2h_i) - n_K E_i
        // as couplings into the density unknowns (ghost density copied)
        let mut w_rows: [Vec<(usize, f64)>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for (i, w_row) in w_rows.iter_mut().enumerate() {
            for sgn in [1isize, -1] {
                let mut kn = add3(k, EIJ[i], sgn);
                if kn[2] < 0 {
                    kn[2] = 0;
                }
                if kn[2] >= dz {
                    kn[2] = dz - 1;
                }
                w_row.push((grid.flat(kn), sgn as f64 * 0.5 / grid.h[i] * t_iso));
            }
            w_row.push((c, -e[i]));
        }
        // on the boundary layers the parallel component is the prescribed
        // (zero) aligned flux: replace W by (Id - b b) W there
        let boundary = k[2] <= 0 || k[2] >= dz - 1;
        for i in 0..3 {
            let r = (1 + i) * nb + c;
            a[r * dim + (1 + i) * nb + c] += tau / delta;
            if boundary {
                for l in 0..3 {
                    let coef = if l == i { 1.0 } else { 0.0 } - b[i] * b[l];
                    if coef != 0.0 {
                        for &(cc, v) in &w_rows[l] {
                            a[r * dim + cc] += coef * v;
                        }
                    }
                }
            } else {
                for &(cc, v) in &w_rows[i] {
                    a[r * dim + cc] += v;
                }
            }
            // Lorentz rotation (the n E_i force coupling lives in W)
            let (j, kk) = ((i + 1) % 3, (i + 2) % 3);
            a[r * dim + (1 + j) * nb + c] += -bfield[kk];
            a[r * dim + (1 + kk) * nb + c] += bfield[j];
            rhs[r] = tau / delta * s.q[c][i] - tau * ex.delta_q[c][i];
        }
    }
    dense_solve(dim, &mut a, &mut rhs);
    let n_new = rhs[0..nb].to_vec();
    let mut q_new = vec![[0.0; 3]; nb];
    for c in 0..nb {
        for i in 0..3 {
            q_new[c][i] = rhs[(1 + i) * nb + c];
        }
    }
    LorentzState { n: n_new, q: q_new }
}
