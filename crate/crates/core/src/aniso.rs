//! Solvers for strongly field-aligned elliptic problems.
//!
//! The model problem is `tau n - div_par (grad_par n - n E_par) = tau F`
//! with the conormal flux prescribed on the field-line entry and exit
//! boundaries. Discretized with centered differences it reads, in mixed
//! form,
//!
//! ```text
//! gamma_K = sum_i b_i ( (n_{K+e_i} - n_{K-e_i}) / (2 h_i) - n_K E_i )
//! -sum_j ( b_j gamma_{K+e_j} - b_j gamma_{K-e_j} ) / (2 h_j) + tau n_K = tau F_K
//! ```
//!
//! with `b_j gamma = tau g` prescribed on the last row of real cells and on
//! the fictitious layer. The naive one-field solve of the associated
//! variational form has a condition number growing like `1/tau`. The
//! micro-macro formulation splits `n = p + tau q` where `p` lies in the
//! space annihilated by the flux operator (determined by its values on a
//! small free index set and a layer-by-layer recursion along the field
//! direction, which needs `b_3 != 0`) and `q` vanishes on that free set;
//! the coupled system for `(p, q)` stays uniformly well conditioned down to
//! `tau = 0`.

use crate::grid::{Grid3D, Topology};
use crate::linsolve::{condition_estimate, solve_sparse, SparseSystem};
use crate::{Error, Result};

/// 1D problem on the index range `[-M, M]` (stored `0..=2M`), cell width
/// `h`, with Neumann-type data `g` at both ends.
#[derive(Debug, Clone)]
pub struct AnisoProblem1D {
    pub m: usize,
    pub h: f64,
    pub tau: f64,
    pub e: Vec<f64>,
    pub f: Vec<f64>,
    pub g_minus: f64,
    pub g_plus: f64,
}

impl AnisoProblem1D {
    pub fn n_cells(&self) -> usize {
        2 * self.m + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 3 {
            return Err(Error::InvalidInput("need M >= 3".into()));
        }
        if !(self.h > 0.0) || self.tau < 0.0 {
            return Err(Error::InvalidInput("h must be positive, tau nonnegative".into()));
        }
        let n = self.n_cells();
        if self.e.len() != n || self.f.len() != n {
            return Err(Error::InvalidInput("coefficient arrays do not match the index range".into()));
        }
        Ok(())
    }
}

/// Micro-macro solution: `n = p + tau q` with `p` in the flux-free space and
/// `q` vanishing on the constrained index set.
#[derive(Debug, Clone)]
pub struct MicroMacroSolution {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub n: Vec<f64>,
    pub condition_estimate: f64,
}

/// Galerkin right-hand side of the 1D variational form (no `tau` factor).
fn rhs_1d(p: &AnisoProblem1D) -> Vec<f64> {
    let n = p.n_cells();
    let c = 0.5 / p.h;
    let mut rhs = p.f.clone();
    rhs[n - 2] += c * p.g_plus;
    rhs[n - 1] += c * p.g_plus;
    rhs[1] -= c * p.g_minus;
    rhs[0] -= c * p.g_minus;
    rhs
}

/// Adds `coef * a_E(e_I, e_J)` couplings to a system through a callback.
fn for_each_ae_entry_1d(e: &[f64], h: f64, n: usize, mut emit: impl FnMut(usize, usize, f64)) {
    let c = 0.5 / h;
    for k in 1..n - 1 {
        // u-side stencil of gamma_K and v-side stencil of the centered difference
        let us = [(k + 1, c), (k - 1, -c), (k, -e[k])];
        let vs = [(k + 1, c), (k - 1, -c)];
        for &(iu, cu) in &us {
            for &(jv, cv) in &vs {
                emit(jv, iu, cu * cv);
            }
        }
    }
}

/// One-field variational solve; singular at `tau = 0`, condition number
/// grows like `1/tau`. Returns the solution and the condition estimate.
pub fn solve_naive_1d(p: &AnisoProblem1D) -> Result<(Vec<f64>, f64)> {
    p.validate()?;
    if !(p.tau > 0.0) {
        return Err(Error::InvalidInput("the one-field solve needs tau > 0".into()));
    }
    let n = p.n_cells();
    let mut sys = SparseSystem::new(n);
    for_each_ae_entry_1d(&p.e, p.h, n, |j, i, v| sys.add(j, i, v));
    for k in 0..n {
        sys.add(k, k, p.tau);
    }
    let rhs = rhs_1d(p);
    for k in 0..n {
        sys.rhs[k] = p.tau * rhs[k];
    }
    let x = solve_sparse(&sys)?;
    let cond = condition_estimate(&sys)?;
    Ok((x, cond))
}

/// The two-parameter recursion generating the flux-free space: from the
/// first two entries, `v_{K+1} = v_{K-1} + 2 h E_K v_K`.
fn ge_extend_1d(v: &mut [f64], e: &[f64], h: f64) {
    for k in 1..v.len() - 1 {
        v[k + 1] = v[k - 1] + 2.0 * h * e[k] * v[k];
    }
}

/// Splits `v = p + q` with `p` in the flux-free space (built from
/// `v[0], v[1]` by the recursion) and `q` vanishing on the first two
/// entries.
pub fn decompose_1d(v: &[f64], e: &[f64], h: f64) -> (Vec<f64>, Vec<f64>) {
    let mut p = vec![0.0; v.len()];
    p[0] = v[0];
    p[1] = v[1];
    ge_extend_1d(&mut p, e, h);
    let q: Vec<f64> = v.iter().zip(&p).map(|(a, b)| a - b).collect();
    (p, q)
}

/// Micro-macro solve of the 1D problem; well posed uniformly in `tau`,
/// including `tau = 0`.
pub fn solve_micromacro_1d(p: &AnisoProblem1D) -> Result<MicroMacroSolution> {
    p.validate()?;
    let n = p.n_cells();
    // unknowns: q on 2..n-1 first, then the two free macro entries
    let nq = n - 2;
    let dim = n;
    let qcol = |cell: usize| -> Option<usize> { cell.checked_sub(2).filter(|&c| c < nq) };
    let pcol = [nq, nq + 1];

    let mut basis0 = vec![0.0; n];
    basis0[0] = 1.0;
    ge_extend_1d(&mut basis0, &p.e, p.h);
    let mut basis1 = vec![0.0; n];
    basis1[1] = 1.0;
    ge_extend_1d(&mut basis1, &p.e, p.h);

    let mut sys = SparseSystem::new(dim);
    for_each_ae_entry_1d(&p.e, p.h, n, |j, i, v| {
        if let Some(col) = qcol(i) {
            sys.add(j, col, v);
        }
    });
    for cell in 2..n {
        sys.add(cell, qcol(cell).unwrap(), p.tau);
    }
    for j in 0..n {
        if basis0[j] != 0.0 {
            sys.add(j, pcol[0], basis0[j]);
        }
        if basis1[j] != 0.0 {
            sys.add(j, pcol[1], basis1[j]);
        }
    }
    sys.rhs = rhs_1d(p);
    let x = solve_sparse(&sys)?;
    let cond = condition_estimate(&sys)?;
    let mut pp = vec![0.0; n];
    for k in 0..n {
        pp[k] = x[pcol[0]] * basis0[k] + x[pcol[1]] * basis1[k];
    }
    let mut qq = vec![0.0; n];
    for cell in 2..n {
        qq[cell] = x[qcol(cell).unwrap()];
    }
    let nn: Vec<f64> = pp.iter().zip(&qq).map(|(a, b)| a + p.tau * b).collect();
    Ok(MicroMacroSolution { p: pp, q: qq, n: nn, condition_estimate: cond })
}

/// Max residual of `a_E(p, w)` over the micro basis `w`; the macro part of a
/// solution must annihilate the flux form.
pub fn macro_orthogonality_residual_1d(p_field: &[f64], e: &[f64], h: f64) -> f64 {
    let n = p_field.len();
    let mut ae = vec![0.0; n];
    for_each_ae_entry_1d(e, h, n, |j, i, v| ae[j] += v * p_field[i]);
    ae[2..].iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

/// Continuous field-line limit: `phi` by trapezoid quadrature of `-E`,
/// `u0 = (int F + g1 - g0) / int exp(-phi)` and `n0 = u0 exp(-phi)` on the
/// quadrature nodes.
#[derive(Debug, Clone)]
pub struct LimitOracle1D {
    pub u0: f64,
    pub x: Vec<f64>,
    pub phi: Vec<f64>,
    pub n0: Vec<f64>,
}

impl LimitOracle1D {
    /// Linear interpolation of `n0` at `x` in `[0, 1]`.
    pub fn sample(&self, x: f64) -> f64 {
        let m = self.x.len() - 1;
        let t = (x.clamp(0.0, 1.0)) * m as f64;
        let i = (t.floor() as usize).min(m - 1);
        let w = t - i as f64;
        self.n0[i] * (1.0 - w) + self.n0[i + 1] * w
    }
}

pub fn limit_oracle_1d(
    e: impl Fn(f64) -> f64,
    f: impl Fn(f64) -> f64,
    g0: f64,
    g1: f64,
    resolution: usize,
) -> Result<LimitOracle1D> {
    if resolution < 64 {
        return Err(Error::InvalidInput("need at least 64 quadrature nodes".into()));
    }
    let m = resolution;
    let dx = 1.0 / m as f64;
    let x: Vec<f64> = (0..=m).map(|i| i as f64 * dx).collect();
    let ev: Vec<f64> = x.iter().map(|&s| e(s)).collect();
    let fv: Vec<f64> = x.iter().map(|&s| f(s)).collect();
    let mut phi = vec![0.0; m + 1];
    for i in 1..=m {
        phi[i] = phi[i - 1] - 0.5 * dx * (ev[i - 1] + ev[i]);
    }
    let trap = |vals: &[f64]| -> f64 {
        let mut s = 0.5 * (vals[0] + vals[m]);
        for v in &vals[1..m] {
            s += v;
        }
        s * dx
    };
    let int_f = trap(&fv);
    let weights: Vec<f64> = phi.iter().map(|&p| (-p).exp()).collect();
    let int_w = trap(&weights);
    let u0 = (int_f + g1 - g0) / int_w;
    let n0: Vec<f64> = weights.iter().map(|&w| u0 * w).collect();
    Ok(LimitOracle1D { u0, x, phi, n0 })
}

/// 3D problem on the symmetric index box `[-M_i, M_i]`, bounded in every
/// direction, with per-cell unit field direction `b` (`b_3 != 0` everywhere),
/// electric field `e`, source `f` and flux data `g` on the padded grid.
#[derive(Debug, Clone)]
pub struct AnisoProblem3D {
    pub m: [usize; 3],
    pub h: [f64; 3],
    pub tau: f64,
    /// Unit field direction per box cell (flat order of [`Grid3D::flat`]).
    pub b: Vec<[f64; 3]>,
    pub e: Vec<[f64; 3]>,
    pub f: Vec<f64>,
    /// Flux data on the padded grid (only boundary-layer and fictitious
    /// entries are read).
    pub g: Vec<f64>,
}

impl AnisoProblem3D {
    pub fn grid(&self) -> Result<Grid3D> {
        Grid3D::symmetric_box(self.m, self.h)
    }
}

/// Assembly engine shared by the bounded-box problems and the
/// transverse-periodic steppers. The field direction must have `b_3 != 0`
/// on every cell; axis 2 is the recursion direction.
pub(crate) struct AnisoEngine<'a> {
    pub grid: &'a Grid3D,
    pub b: &'a [[f64; 3]],
    pub e: &'a [[f64; 3]],
    pub tau: f64,
}

const EIJ: [[isize; 3]; 3] = [[1, 0, 0], [0, 1, 0], [0, 0, 1]];

fn add3(k: [isize; 3], d: [isize; 3], s: isize) -> [isize; 3] {
    [k[0] + s * d[0], k[1] + s * d[1], k[2] + s * d[2]]
}

impl<'a> AnisoEngine<'a> {
    pub fn validate(&self) -> Result<()> {
        let n = self.grid.n_cells();
        if self.b.len() != n || self.e.len() != n {
            return Err(Error::InvalidInput("field arrays do not match the grid".into()));
        }
        if self.grid.topo[2] != Topology::Bounded {
            return Err(Error::InvalidInput("the recursion axis must be bounded".into()));
        }
        for (i, b) in self.b.iter().enumerate() {
            let norm = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
            if (norm - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidInput(format!("field direction not unit at cell {i}")));
            }
            if b[2].abs() < 1e-12 {
                return Err(Error::Unsupported(format!(
                    "field direction has vanishing component along the recursion axis at cell {i}"
                )));
            }
        }
        if self.tau < 0.0 {
            return Err(Error::InvalidInput("tau must be nonnegative".into()));
        }
        Ok(())
    }

    /// Interior-cell test: strictly inside along every bounded axis.
    fn is_interior(&self, k: [isize; 3]) -> bool {
        (0..3).all(|a| {
            self.grid.topo[a] == Topology::Periodic || (k[a] >= 1 && k[a] + 1 < self.grid.dims[a] as isize)
        })
    }

    /// Free macro index set: everything except (transverse-interior) x
    /// (recursion layers 2..dims_z).
    pub fn is_macro_cell(&self, k: [isize; 3]) -> bool {
        let transverse_interior = (0..2).all(|a| {
            self.grid.topo[a] == Topology::Periodic || (k[a] >= 1 && k[a] + 1 < self.grid.dims[a] as isize)
        });
        !(transverse_interior && k[2] >= 2)
    }

    /// Flux stencil at an interior cell: coefficients of
    /// `sum_i b_i ((u_{K+e_i} - u_{K-e_i})/(2h_i) - u_K E_i)`.
    fn gamma_stencil(&self, k: [isize; 3], mut emit: impl FnMut(usize, f64)) {
        let kc = self.grid.flat(k);
        let b = self.b[kc];
        let e = self.e[kc];
        let mut diag = 0.0;
        for i in 0..3 {
            let c = b[i] * 0.5 / self.grid.h[i];
            emit(self.grid.flat(add3(k, EIJ[i], 1)), c);
            emit(self.grid.flat(add3(k, EIJ[i], -1)), -c);
            diag -= b[i] * e[i];
        }
        emit(kc, diag);
    }

    /// Test-side stencil: same centered differences without the E part.
    fn test_stencil(&self, k: [isize; 3], mut emit: impl FnMut(usize, f64)) {
        let kc = self.grid.flat(k);
        let b = self.b[kc];
        for j in 0..3 {
            let c = b[j] * 0.5 / self.grid.h[j];
            emit(self.grid.flat(add3(k, EIJ[j], 1)), c);
            emit(self.grid.flat(add3(k, EIJ[j], -1)), -c);
        }
    }

    /// Adds the couplings of the flux form to `sys` through a column map
    /// (cells mapped to `None` are treated as zero, i.e. constrained).
    fn assemble_ae(&self, sys: &mut SparseSystem, col_of: &dyn Fn(usize) -> Option<usize>) {
        let mut us: Vec<(usize, f64)> = Vec::with_capacity(7);
        let mut vs: Vec<(usize, f64)> = Vec::with_capacity(6);
        for k in self.grid.iter_box() {
            if !self.is_interior(k) {
                continue;
            }
            us.clear();
            vs.clear();
            self.gamma_stencil(k, |c, v| us.push((c, v)));
            self.test_stencil(k, |c, v| vs.push((c, v)));
            for &(iu, cu) in &us {
                if let Some(col) = col_of(iu) {
                    if cu != 0.0 {
                        for &(jv, cv) in &vs {
                            if cv != 0.0 {
                                sys.add(jv, col, cu * cv);
                            }
                        }
                    }
                }
            }
        }
    }

    /// Variational right-hand side (no `tau` factor): `F` plus the
    /// prescribed-flux contributions from the bounded faces.
    pub fn assemble_rhs(&self, f: &[f64], g_padded: &[f64]) -> Vec<f64> {
        let n = self.grid.n_cells();
        let mut rhs = vec![0.0; n];
        rhs.copy_from_slice(f);
        for k in self.grid.iter_box() {
            let j = self.grid.flat(k);
            for a in 0..3 {
                if self.grid.topo[a] == Topology::Periodic {
                    continue;
                }
                let d = self.grid.dims[a] as isize;
                for s in [1isize, -1] {
                    let kp = add3(k, EIJ[a], s);
                    // flux prescribed when the referenced cell sits in the
                    // boundary layer or fictitious layer normal to axis a
                    let ka = kp[a];
                    if ka <= 0 || ka >= d - 1 {
                        rhs[j] += s as f64 * 0.5 / self.grid.h[a] * g_padded[self.grid.flat_padded(kp)];
                    }
                }
            }
        }
        rhs
    }

    /// One-field variational system `a_E + tau (.,.) = tau Gamma`.
    pub fn assemble_naive(&self, f: &[f64], g_padded: &[f64]) -> SparseSystem {
        let n = self.grid.n_cells();
        let mut sys = SparseSystem::new(n);
        self.assemble_ae(&mut sys, &|c| Some(c));
        for c in 0..n {
            sys.add(c, c, self.tau);
        }
        let rhs = self.assemble_rhs(f, g_padded);
        for c in 0..n {
            sys.rhs[c] = self.tau * rhs[c];
        }
        sys
    }

    /// Lists of macro (free) and micro cells, in flat order.
    pub fn index_sets(&self) -> (Vec<usize>, Vec<usize>) {
        let mut macro_cells = Vec::new();
        let mut micro_cells = Vec::new();
        for k in self.grid.iter_box() {
            if self.is_macro_cell(k) {
                macro_cells.push(self.grid.flat(k));
            } else {
                micro_cells.push(self.grid.flat(k));
            }
        }
        (macro_cells, micro_cells)
    }

    /// Extends a field given on the macro set to the whole box by the
    /// layer-by-layer recursion along axis 2 (requires `b_3 != 0`).
    pub fn ge_extend(&self, v: &mut [f64]) {
        let dz = self.grid.dims[2] as isize;
        for kz in 1..dz - 1 {
            for k in self.grid.iter_box().filter(|k| k[2] == kz) {
                let transverse_interior = (0..2).all(|a| {
                    self.grid.topo[a] == Topology::Periodic
                        || (k[a] >= 1 && k[a] + 1 < self.grid.dims[a] as isize)
                });
                if !transverse_interior {
                    continue;
                }
                let kc = self.grid.flat(k);
                let b = self.b[kc];
                let e = self.e[kc];
                let be = b[0] * e[0] + b[1] * e[1] + b[2] * e[2];
                let mut w = v[kc] * be;
                for i in 0..2 {
                    let c = b[i] * 0.5 / self.grid.h[i];
                    w -= c * (v[self.grid.flat(add3(k, EIJ[i], 1))] - v[self.grid.flat(add3(k, EIJ[i], -1))]);
                }
                let c3 = b[2] * 0.5 / self.grid.h[2];
                v[self.grid.flat(add3(k, EIJ[2], 1))] = v[self.grid.flat(add3(k, EIJ[2], -1))] + w / c3;
            }
        }
    }

    /// Micro-macro system: unknowns are the micro values followed by the
    /// free macro values; returns the system together with the macro basis
    /// vectors (one full field per macro degree of freedom).
    pub fn assemble_micromacro(&self, f: &[f64], g_padded: &[f64]) -> (SparseSystem, Vec<Vec<f64>>, Vec<usize>, Vec<usize>) {
        let n = self.grid.n_cells();
        let (macro_cells, micro_cells) = self.index_sets();
        let mut micro_col = vec![usize::MAX; n];
        for (c, &cell) in micro_cells.iter().enumerate() {
            micro_col[cell] = c;
        }
        let nq = micro_cells.len();
        let mut sys = SparseSystem::new(n);
        self.assemble_ae(&mut sys, &|cell| {
            let c = micro_col[cell];
            if c == usize::MAX {
                None
            } else {
                Some(c)
            }
        });
        for (c, &cell) in micro_cells.iter().enumerate() {
            sys.add(cell, c, self.tau);
        }
        // macro basis columns
        let mut basis = Vec::with_capacity(macro_cells.len());
        for (bidx, &cell) in macro_cells.iter().enumerate() {
            let mut v = vec![0.0; n];
            v[cell] = 1.0;
            self.ge_extend(&mut v);
            for (j, &vj) in v.iter().enumerate() {
                if vj != 0.0 {
                    sys.add(j, nq + bidx, vj);
                }
            }
            basis.push(v);
        }
        sys.rhs = self.assemble_rhs(f, g_padded);
        (sys, basis, macro_cells, micro_cells)
    }

    pub fn solve_micromacro(&self, f: &[f64], g_padded: &[f64]) -> Result<MicroMacroSolution> {
        let n = self.grid.n_cells();
        let (sys, basis, _macro_cells, micro_cells) = self.assemble_micromacro(f, g_padded);
        let x = solve_sparse(&sys)?;
        let cond = condition_estimate(&sys)?;
        let nq = micro_cells.len();
        let mut p = vec![0.0; n];
        for (bidx, bv) in basis.iter().enumerate() {
            let coef = x[nq + bidx];
            if coef != 0.0 {
                for (j, &vj) in bv.iter().enumerate() {
                    p[j] += coef * vj;
                }
            }
        }
        let mut q = vec![0.0; n];
        for (c, &cell) in micro_cells.iter().enumerate() {
            q[cell] = x[c];
        }
        let nn: Vec<f64> = p.iter().zip(&q).map(|(a, b)| a + self.tau * b).collect();
        Ok(MicroMacroSolution { p, q, n: nn, condition_estimate: cond })
    }
}

/// One-field variational solve of the 3D box problem; needs `tau > 0`.
pub fn solve_naive_3d(prob: &AnisoProblem3D) -> Result<(Vec<f64>, f64)> {
    if !(prob.tau > 0.0) {
        return Err(Error::InvalidInput("the one-field solve needs tau > 0".into()));
    }
    let grid = prob.grid()?;
    let engine = AnisoEngine { grid: &grid, b: &prob.b, e: &prob.e, tau: prob.tau };
    engine.validate()?;
    if prob.f.len() != grid.n_cells() || prob.g.len() != grid.n_padded() {
        return Err(Error::InvalidInput("source or boundary arrays do not match the grid".into()));
    }
    let sys = engine.assemble_naive(&prob.f, &prob.g);
    let x = solve_sparse(&sys)?;
    let cond = condition_estimate(&sys)?;
    Ok((x, cond))
}

/// Micro-macro solve of the 3D box problem; uniformly well posed in `tau`.
pub fn solve_micromacro_3d(prob: &AnisoProblem3D) -> Result<MicroMacroSolution> {
    let grid = prob.grid()?;
    let engine = AnisoEngine { grid: &grid, b: &prob.b, e: &prob.e, tau: prob.tau };
    engine.validate()?;
    if prob.f.len() != grid.n_cells() || prob.g.len() != grid.n_padded() {
        return Err(Error::InvalidInput("source or boundary arrays do not match the grid".into()));
    }
    engine.solve_micromacro(&prob.f, &prob.g)
}
