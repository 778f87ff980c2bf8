//! Small direct linear-algebra kernel: tridiagonal and cyclic-tridiagonal
//! solves, dense and sparse LU with partial pivoting, and a power-iteration
//! condition estimator.
//!
//! Everything here is deterministic; there are no iterative tolerances to
//! tune apart from the fixed iteration count of the condition estimator.

use crate::{Error, Result};

/// Gauge handling for solves whose matrix has a constant nullspace
/// (periodic difference operators).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gauge {
    None,
    ZeroMean,
}

/// Dimension below which sparse systems are factorized densely.
/// Dense is deterministic and robust at desk scale; above this the
/// sparse LU takes over.
pub const DENSE_FALLBACK_DIM: usize = 2000;

/// Solves a (cyclic-)tridiagonal system.
///
/// Row `k` reads `lower[k]*x[k-1] + diag[k]*x[k] + upper[k]*x[k+1] = rhs[k]`,
/// with indices wrapping when `periodic` is set. For a bounded system,
/// `lower[0]` and `upper[n-1]` are ignored.
///
/// With `Gauge::ZeroMean` the matrix may be singular with a constant
/// nullspace; the right-hand side must be compatible and the returned
/// solution has zero mean.
pub fn solve_tridiagonal(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &[f64],
    periodic: bool,
    gauge: Gauge,
) -> Result<Vec<f64>> {
    let n = diag.len();
    if n < 3 {
        return Err(Error::InvalidInput(format!("tridiagonal dimension {n} < 3")));
    }
    if lower.len() != n || upper.len() != n || rhs.len() != n {
        return Err(Error::InvalidInput("tridiagonal band length mismatch".into()));
    }
    if !periodic {
        if gauge == Gauge::ZeroMean {
            return Err(Error::Unsupported("zero-mean gauge is only defined for periodic systems".into()));
        }
        return thomas(lower, diag, upper, rhs);
    }
    match gauge {
        Gauge::None => cyclic_sherman_morrison(lower, diag, upper, rhs),
        Gauge::ZeroMean => cyclic_pinned_zero_mean(lower, diag, upper, rhs),
    }
}

/// Thomas algorithm for a bounded tridiagonal system.
fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut beta = diag[0];
    if beta == 0.0 {
        return Err(Error::Singular("zero pivot in tridiagonal elimination".into()));
    }
    c[0] = upper[0] / beta;
    d[0] = rhs[0] / beta;
    for k in 1..n {
        beta = diag[k] - lower[k] * c[k - 1];
        if beta == 0.0 {
            return Err(Error::Singular(format!("zero pivot at row {k} in tridiagonal elimination")));
        }
        c[k] = upper[k] / beta;
        d[k] = (rhs[k] - lower[k] * d[k - 1]) / beta;
    }
    let mut x = d;
    for k in (0..n - 1).rev() {
        x[k] -= c[k] * x[k + 1];
    }
    Ok(x)
}

/// Cyclic tridiagonal solve via a rank-one Sherman-Morrison correction.
/// Requires a nonsingular matrix.
fn cyclic_sherman_morrison(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    let alpha = lower[0]; // A[0][n-1]
    let beta = upper[n - 1]; // A[n-1][0]
    let gamma = if diag[0] != 0.0 { -diag[0] } else { -1.0 };
    // A = A' + u v^T with u = (gamma, 0, .., beta), v = (1, 0, .., alpha/gamma)
    let mut d = diag.to_vec();
    d[0] -= gamma;
    d[n - 1] -= alpha * beta / gamma;
    let y = thomas(lower, &d, upper, rhs)?;
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] += beta;
    let z = thomas(lower, &d, upper, &u)?;
    let vy = y[0] + alpha / gamma * y[n - 1];
    let vz = z[0] + alpha / gamma * z[n - 1];
    let denom = 1.0 + vz;
    if denom.abs() < 1e-300 || !denom.is_finite() {
        return Err(Error::Singular("cyclic correction factor degenerate".into()));
    }
    let fac = vy / denom;
    Ok(y.iter().zip(&z).map(|(yi, zi)| yi - fac * zi).collect())
}

/// Cyclic tridiagonal solve for a matrix with a constant nullspace:
/// pin `x[0] = 0`, solve the reduced bounded system, shift to zero mean and
/// check the dropped row for consistency of the right-hand side.
fn cyclic_pinned_zero_mean(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    let m = n - 1;
    // Reduced system in x[1..n]; couplings through x[0] drop out.
    let rl: Vec<f64> = (1..n).map(|k| if k > 1 { lower[k] } else { 0.0 }).collect();
    let rd: Vec<f64> = (1..n).map(|k| diag[k]).collect();
    let ru: Vec<f64> = (1..n).map(|k| if k < m { upper[k] } else { 0.0 }).collect();
    let rr: Vec<f64> = (1..n).map(|k| rhs[k]).collect();
    let xr = thomas(&rl, &rd, &ru, &rr)?;
    let mut x = vec![0.0; n];
    x[1..].copy_from_slice(&xr);
    // Consistency of the dropped row decides solvability.
    let r0 = lower[0] * x[n - 1] + diag[0] * x[0] + upper[0] * x[1] - rhs[0];
    let scale = rhs.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(
        x.iter()
            .zip(diag)
            .fold(0.0f64, |a, (xv, dv)| a.max((xv * dv).abs())),
    );
    if r0.abs() > 1e-9 * scale.max(1e-300) {
        return Err(Error::Singular(format!(
            "incompatible right-hand side for gauged periodic solve (residual {r0:.3e})"
        )));
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    for v in &mut x {
        *v -= mean;
    }
    Ok(x)
}

/// Assembled sparse linear system in triplet form. Duplicate `(row, col)`
/// entries are summed when the system is finalized for factorization.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    pub dim: usize,
    pub entries: Vec<(usize, usize, f64)>,
    pub rhs: Vec<f64>,
    pub symmetric: bool,
}

impl SparseSystem {
    pub fn new(dim: usize) -> Self {
        SparseSystem { dim, entries: Vec::new(), rhs: vec![0.0; dim], symmetric: false }
    }

    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.dim && col < self.dim);
        if value != 0.0 {
            self.entries.push((row, col, value));
        }
    }

    /// Compressed-column form with duplicates summed.
    fn to_csc(&self) -> Csc {
        let n = self.dim;
        let mut count = vec![0usize; n];
        for &(_, c, _) in &self.entries {
            count[c] += 1;
        }
        let mut colptr = vec![0usize; n + 1];
        for j in 0..n {
            colptr[j + 1] = colptr[j] + count[j];
        }
        let nnz = colptr[n];
        let mut rowind = vec![0usize; nnz];
        let mut values = vec![0.0; nnz];
        let mut next = colptr.clone();
        for &(r, c, v) in &self.entries {
            let p = next[c];
            rowind[p] = r;
            values[p] = v;
            next[c] += 1;
        }
        // sort each column by row and merge duplicates
        let mut out_rows = Vec::with_capacity(nnz);
        let mut out_vals = Vec::with_capacity(nnz);
        let mut out_ptr = vec![0usize; n + 1];
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for j in 0..n {
            scratch.clear();
            for p in colptr[j]..colptr[j + 1] {
                scratch.push((rowind[p], values[p]));
            }
            scratch.sort_unstable_by_key(|e| e.0);
            let mut i = 0;
            while i < scratch.len() {
                let r = scratch[i].0;
                let mut v = scratch[i].1;
                let mut k = i + 1;
                while k < scratch.len() && scratch[k].0 == r {
                    v += scratch[k].1;
                    k += 1;
                }
                if v != 0.0 {
                    out_rows.push(r);
                    out_vals.push(v);
                }
                i = k;
            }
            out_ptr[j + 1] = out_rows.len();
        }
        Csc { n, colptr: out_ptr, rowind: out_rows, values: out_vals }
    }

    /// Dense row-major copy (duplicates summed).
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.dim;
        let mut a = vec![0.0; n * n];
        for &(r, c, v) in &self.entries {
            a[r * n + c] += v;
        }
        a
    }

    /// y = A x
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        for &(r, c, v) in &self.entries {
            y[r] += v * x[c];
        }
        y
    }

    /// y = A^T x
    pub fn matvec_t(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        for &(r, c, v) in &self.entries {
            y[c] += v * x[r];
        }
        y
    }
}

struct Csc {
    n: usize,
    colptr: Vec<usize>,
    rowind: Vec<usize>,
    values: Vec<f64>,
}

/// LU factorization handle; dense or sparse depending on dimension.
pub enum Factorization {
    Dense(DenseLu),
    Sparse(SparseLu),
}

impl Factorization {
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        match self {
            Factorization::Dense(f) => f.solve(rhs),
            Factorization::Sparse(f) => f.solve(rhs),
        }
    }

    pub fn solve_transpose(&self, rhs: &[f64]) -> Vec<f64> {
        match self {
            Factorization::Dense(f) => f.solve_transpose(rhs),
            Factorization::Sparse(f) => f.solve_transpose(rhs),
        }
    }
}

/// Factorizes a sparse system (dense below [`DENSE_FALLBACK_DIM`]).
pub fn factorize(system: &SparseSystem) -> Result<Factorization> {
    if system.dim <= DENSE_FALLBACK_DIM {
        Ok(Factorization::Dense(DenseLu::factor(system.dim, system.to_dense())?))
    } else {
        Ok(Factorization::Sparse(SparseLu::factor(&system.to_csc())?))
    }
}

/// Direct solve of an assembled sparse system.
pub fn solve_sparse(system: &SparseSystem) -> Result<Vec<f64>> {
    if system.rhs.len() != system.dim {
        return Err(Error::InvalidInput("rhs length does not match system dimension".into()));
    }
    let f = factorize(system)?;
    Ok(f.solve(&system.rhs))
}

/// Dense LU with partial pivoting, row-major storage.
pub struct DenseLu {
    n: usize,
    lu: Vec<f64>,
    piv: Vec<usize>,
}

impl DenseLu {
    pub fn factor(n: usize, mut a: Vec<f64>) -> Result<Self> {
        assert_eq!(a.len(), n * n);
        let mut piv: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut p = k;
            let mut best = a[k * n + k].abs();
            for r in k + 1..n {
                let v = a[r * n + k].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == 0.0 {
                return Err(Error::Singular(format!("zero pivot at column {k}")));
            }
            if p != k {
                for j in 0..n {
                    a.swap(k * n + j, p * n + j);
                }
                piv.swap(k, p);
            }
            let pivot = a[k * n + k];
            for r in k + 1..n {
                let m = a[r * n + k] / pivot;
                a[r * n + k] = m;
                if m != 0.0 {
                    for j in k + 1..n {
                        a[r * n + j] -= m * a[k * n + j];
                    }
                }
            }
        }
        Ok(DenseLu { n, lu: a, piv })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.piv.iter().map(|&p| rhs[p]).collect();
        for k in 1..n {
            let mut s = x[k];
            for j in 0..k {
                s -= self.lu[k * n + j] * x[j];
            }
            x[k] = s;
        }
        for k in (0..n).rev() {
            let mut s = x[k];
            for j in k + 1..n {
                s -= self.lu[k * n + j] * x[j];
            }
            x[k] = s / self.lu[k * n + k];
        }
        x
    }

    /// Solves A^T x = rhs using the same factorization (A = P^T L U).
    pub fn solve_transpose(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.n;
        // A^T = U^T L^T P: first U^T y = rhs (forward), then L^T z = y (backward),
        // then x = P^T z.
        let mut y = rhs.to_vec();
        for k in 0..n {
            let mut s = y[k];
            for j in 0..k {
                s -= self.lu[j * n + k] * y[j];
            }
            y[k] = s / self.lu[k * n + k];
        }
        for k in (0..n).rev() {
            let mut s = y[k];
            for j in k + 1..n {
                s -= self.lu[j * n + k] * y[j];
            }
            y[k] = s;
        }
        let mut x = vec![0.0; n];
        for k in 0..n {
            x[self.piv[k]] = y[k];
        }
        x
    }
}

/// Sparse LU with partial pivoting (left-looking, column by column).
pub struct SparseLu {
    n: usize,
    // L columns store strictly-below-diagonal entries in pivoted row space.
    l_cols: Vec<Vec<(usize, f64)>>,
    // U columns store on/above-diagonal entries (by pivot position), diagonal last.
    u_cols: Vec<Vec<(usize, f64)>>,
    // prow[k] = original row chosen as pivot k; pinv its inverse.
    prow: Vec<usize>,
    pinv: Vec<usize>,
}

impl SparseLu {
    fn factor(a: &Csc) -> Result<Self> {
        let n = a.n;
        const UNSET: usize = usize::MAX;
        let mut l_cols: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
        let mut u_cols: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
        let mut pinv = vec![UNSET; n];
        let mut x = vec![0.0f64; n]; // dense scratch indexed by original row
        let mut mark = vec![UNSET; n];
        let mut topo: Vec<usize> = Vec::new();
        let mut stack: Vec<(usize, usize)> = Vec::new();

        for j in 0..n {
            // Symbolic: rows reachable from the structural nonzeros of A(:,j)
            // through already-computed L columns.
            topo.clear();
            for p in a.colptr[j]..a.colptr[j + 1] {
                let r0 = a.rowind[p];
                if mark[r0] == j {
                    continue;
                }
                // depth-first search over pivotal rows
                stack.push((r0, 0));
                mark[r0] = j;
                'dfs: while !stack.is_empty() {
                    let idx = stack.len() - 1;
                    let r = stack[idx].0;
                    let k = pinv[r];
                    if k != UNSET {
                        loop {
                            let pos = stack[idx].1;
                            if pos >= l_cols[k].len() {
                                break;
                            }
                            stack[idx].1 += 1;
                            let child = l_cols[k][pos].0;
                            if mark[child] != j {
                                mark[child] = j;
                                stack.push((child, 0));
                                continue 'dfs;
                            }
                        }
                    }
                    topo.push(r);
                    stack.pop();
                }
            }
            // Numeric: scatter A(:,j), then eliminate in topological order.
            for p in a.colptr[j]..a.colptr[j + 1] {
                x[a.rowind[p]] = a.values[p];
            }
            let mut ucol: Vec<(usize, f64)> = Vec::new();
            for &r in topo.iter().rev() {
                let k = pinv[r];
                if k == UNSET {
                    continue;
                }
                let xk = x[r];
                if xk != 0.0 {
                    for &(rr, lv) in &l_cols[k] {
                        x[rr] -= lv * xk;
                    }
                }
                ucol.push((k, xk));
                x[r] = 0.0;
            }
            // Pivot among non-pivotal rows.
            let mut prow_j = UNSET;
            let mut best = 0.0f64;
            for &r in &topo {
                if pinv[r] == UNSET && x[r].abs() > best {
                    best = x[r].abs();
                    prow_j = r;
                }
            }
            if prow_j == UNSET || best == 0.0 {
                // clean scratch before bailing out
                for &r in &topo {
                    x[r] = 0.0;
                }
                return Err(Error::Singular(format!("structurally or numerically singular at column {j}")));
            }
            let pivot = x[prow_j];
            ucol.push((j, pivot));
            let mut lcol: Vec<(usize, f64)> = Vec::new();
            for &r in &topo {
                if pinv[r] == UNSET && r != prow_j {
                    if x[r] != 0.0 {
                        lcol.push((r, x[r] / pivot));
                    }
                }
                x[r] = 0.0;
            }
            x[prow_j] = 0.0;
            pinv[prow_j] = j;
            l_cols.push(lcol);
            ucol.sort_unstable_by_key(|e| e.0);
            u_cols.push(ucol);
        }
        let mut prow = vec![0usize; n];
        for (r, &k) in pinv.iter().enumerate() {
            prow[k] = r;
        }
        Ok(SparseLu { n, l_cols, u_cols, prow, pinv })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.n;
        // forward: L y = P rhs, processing pivot order; L entries live in original row space
        let mut w = rhs.to_vec();
        let mut y = vec![0.0; n];
        for k in 0..n {
            let r = self.prow[k];
            let yk = w[r];
            y[k] = yk;
            if yk != 0.0 {
                for &(rr, lv) in &self.l_cols[k] {
                    w[rr] -= lv * yk;
                }
            }
        }
        // backward: U x = y
        let mut xx = vec![0.0; n];
        for k in (0..n).rev() {
            let col = &self.u_cols[k];
            let (_, dk) = *col.last().unwrap();
            let mut s = y[k];
            // subtract contributions of x[j] for j > k handled by iterating columns j > k
            // instead we accumulate: do a column sweep
            s /= dk;
            xx[k] = s;
            for &(i, uv) in &col[..col.len() - 1] {
                y[i] -= uv * s;
            }
        }
        xx
    }

    pub fn solve_transpose(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.n;
        // A^T x = rhs with P A = L U  =>  A^T = U^T L^T P.
        // First U^T y = rhs (forward, columns of U are rows of U^T):
        let mut y = vec![0.0; n];
        for k in 0..n {
            let col = &self.u_cols[k];
            let (_, dk) = *col.last().unwrap();
            let mut s = rhs[k];
            for &(i, uv) in &col[..col.len() - 1] {
                s -= uv * y[i];
            }
            y[k] = s / dk;
        }
        // Then L^T z = y (backward):
        let mut z = y;
        for k in (0..n).rev() {
            let mut s = z[k];
            for &(rr, lv) in &self.l_cols[k] {
                s -= lv * z[self.pinv[rr]];
            }
            z[k] = s;
        }
        // x = P^T z
        let mut x = vec![0.0; n];
        for k in 0..n {
            x[self.prow[k]] = z[k];
        }
        x
    }
}

/// 2-norm condition number estimated by 64 power iterations on `A^T A`
/// (largest singular value) and on the factorized inverse (smallest).
pub fn condition_estimate(system: &SparseSystem) -> Result<f64> {
    let n = system.dim;
    if n == 0 {
        return Err(Error::InvalidInput("empty system".into()));
    }
    let f = factorize(system)?;
    let start: Vec<f64> = (0..n).map(|i| (i as f64 + 1.0).sin() + 0.5).collect();
    let iters = 64;

    let normalize = |v: &mut Vec<f64>| -> f64 {
        let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nrm > 0.0 {
            for x in v.iter_mut() {
                *x /= nrm;
            }
        }
        nrm
    };

    // sigma_max via A^T A
    let mut v = start.clone();
    normalize(&mut v);
    let mut smax2 = 0.0;
    for _ in 0..iters {
        let av = system.matvec(&v);
        let mut w = system.matvec_t(&av);
        smax2 = normalize(&mut w);
        v = w;
    }
    // sigma_min via (A^T A)^{-1} = A^{-1} A^{-T}
    let mut u = start;
    normalize(&mut u);
    let mut inv2 = 0.0;
    for _ in 0..iters {
        let y = f.solve_transpose(&u);
        let mut w = f.solve(&y);
        inv2 = normalize(&mut w);
        u = w;
    }
    if smax2 <= 0.0 || inv2 <= 0.0 {
        return Err(Error::Singular("condition estimate degenerate".into()));
    }
    Ok((smax2 * inv2).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn residual_tri(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64], x: &[f64], periodic: bool) -> f64 {
        let n = diag.len();
        let mut worst = 0.0f64;
        for k in 0..n {
            let xm = if k == 0 {
                if periodic { x[n - 1] } else { 0.0 }
            } else {
                x[k - 1]
            };
            let xp = if k == n - 1 {
                if periodic { x[0] } else { 0.0 }
            } else {
                x[k + 1]
            };
            let lm = if k == 0 && !periodic { 0.0 } else { lower[k] };
            let up = if k == n - 1 && !periodic { 0.0 } else { upper[k] };
            worst = worst.max((lm * xm + diag[k] * x[k] + up * xp - rhs[k]).abs());
        }
        worst
    }

    #[test]
    fn identity_diag_returns_rhs() {
        let n = 5;
        let x = solve_tridiagonal(&vec![0.0; n], &vec![1.0; n], &vec![0.0; n], &[3.0, -1.0, 2.0, 0.5, 7.0], false, Gauge::None).unwrap();
        assert_eq!(x, vec![3.0, -1.0, 2.0, 0.5, 7.0]);
    }

    #[test]
    fn periodic_laplacian_sine_mode_matches_eigenvalue() {
        // -(x_{k+1} - 2 x_k + x_{k-1})/h^2 with sine rhs: solution is
        // rhs / eigenvalue with eigenvalue 2(1-cos(2 pi m /N))/h^2.
        let n = 16;
        let h = 1.0 / n as f64;
        let m = 3usize;
        let rhs: Vec<f64> = (0..n).map(|k| (2.0 * std::f64::consts::PI * m as f64 * k as f64 / n as f64).sin()).collect();
        let lam = 2.0 * (1.0 - (2.0 * std::f64::consts::PI * m as f64 / n as f64).cos()) / (h * h);
        let lower = vec![-1.0 / (h * h); n];
        let upper = vec![-1.0 / (h * h); n];
        let diag = vec![2.0 / (h * h); n];
        let x = solve_tridiagonal(&lower, &diag, &upper, &rhs, true, Gauge::ZeroMean).unwrap();
        for k in 0..n {
            assert!((x[k] - rhs[k] / lam).abs() < 1e-12, "k={k}");
        }
    }

    #[test]
    fn periodic_laplacian_nonzero_mean_rhs_rejected() {
        let n = 8;
        let lower = vec![-1.0; n];
        let upper = vec![-1.0; n];
        let diag = vec![2.0; n];
        let rhs = vec![1.0; n]; // mean 1, not in the range
        let r = solve_tridiagonal(&lower, &diag, &upper, &rhs, true, Gauge::None);
        assert!(r.is_err());
        let r2 = solve_tridiagonal(&lower, &diag, &upper, &rhs, true, Gauge::ZeroMean);
        assert!(r2.is_err());
    }

    #[test]
    fn cyclic_nonsingular_random() {
        let n = 12;
        let mut lower = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut upper = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        for k in 0..n {
            // diagonally dominant
            lower[k] = -0.3 - 0.1 * ((k * 7 % 5) as f64);
            upper[k] = -0.2 - 0.05 * ((k * 3 % 7) as f64);
            diag[k] = 2.0 + 0.1 * k as f64;
            rhs[k] = (k as f64 * 0.77).sin();
        }
        let x = solve_tridiagonal(&lower, &diag, &upper, &rhs, true, Gauge::None).unwrap();
        assert!(residual_tri(&lower, &diag, &upper, &rhs, &x, true) < 1e-12);
    }

    #[test]
    fn dense_and_sparse_agree_on_random_system() {
        let n = 60;
        let mut sys = SparseSystem::new(n);
        let mut state = 12345u64;
        let mut rnd = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        for i in 0..n {
            sys.add(i, i, 4.0 + rnd());
            if i + 1 < n {
                sys.add(i, i + 1, rnd());
                sys.add(i + 1, i, rnd());
            }
            if i + 7 < n {
                sys.add(i, i + 7, rnd());
            }
            sys.rhs[i] = rnd();
        }
        let xd = DenseLu::factor(n, sys.to_dense()).unwrap().solve(&sys.rhs);
        let xs = SparseLu::factor(&sys.to_csc()).unwrap().solve(&sys.rhs);
        for i in 0..n {
            assert!((xd[i] - xs[i]).abs() < 1e-11, "i={i}: {} vs {}", xd[i], xs[i]);
        }
        // residual check
        let ax = sys.matvec(&xs);
        let worst = ax.iter().zip(&sys.rhs).map(|(a, b)| (a - b).abs()).fold(0.0f64, f64::max);
        let rnorm = sys.rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(worst <= 1e-10 * rnorm.max(1.0));
    }

    #[test]
    fn sparse_transpose_solve_matches_dense() {
        let n = 25;
        let mut sys = SparseSystem::new(n);
        for i in 0..n {
            sys.add(i, i, 3.0 + (i as f64 * 0.3).cos());
            sys.add(i, (i + 1) % n, -1.0 + 0.1 * (i as f64).sin());
            sys.add((i + 2) % n, i, 0.4);
        }
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64 * 1.3).sin()).collect();
        let xd = DenseLu::factor(n, sys.to_dense()).unwrap().solve_transpose(&rhs);
        let xs = SparseLu::factor(&sys.to_csc()).unwrap().solve_transpose(&rhs);
        for i in 0..n {
            assert!((xd[i] - xs[i]).abs() < 1e-12);
        }
        let atx = sys.matvec_t(&xs);
        for i in 0..n {
            assert!((atx[i] - rhs[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn diagonal_system_componentwise_division() {
        let mut sys = SparseSystem::new(4);
        for (i, d) in [2.0, 4.0, 8.0, 0.5].iter().enumerate() {
            sys.add(i, i, *d);
            sys.rhs[i] = 1.0;
        }
        let x = solve_sparse(&sys).unwrap();
        assert_eq!(x, vec![0.5, 0.25, 0.125, 2.0]);
    }

    #[test]
    fn random_spd_50x50_residual() {
        // A = M^T M + I is SPD
        let n = 50;
        let mut state = 999u64;
        let mut rnd = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let m: Vec<f64> = (0..n * n).map(|_| rnd()).collect();
        let mut sys = SparseSystem::new(n);
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += m[k * n + i] * m[k * n + j];
                }
                if i == j {
                    s += 1.0;
                }
                sys.add(i, j, s);
            }
            sys.rhs[i] = rnd();
        }
        let x = solve_sparse(&sys).unwrap();
        let ax = sys.matvec(&x);
        let rnorm = sys.rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        let worst = ax.iter().zip(&sys.rhs).map(|(a, b)| (a - b).abs()).fold(0.0f64, f64::max);
        assert!(worst <= 1e-10 * rnorm);
    }

    #[test]
    fn singular_matrix_reported() {
        let mut sys = SparseSystem::new(3);
        sys.add(0, 0, 1.0);
        sys.add(1, 1, 1.0);
        // row/col 2 empty -> structurally singular
        assert!(solve_sparse(&sys).is_err());
    }

    #[test]
    fn condition_of_identity_is_one() {
        let mut sys = SparseSystem::new(10);
        for i in 0..10 {
            sys.add(i, i, 1.0);
        }
        let c = condition_estimate(&sys).unwrap();
        assert!((c - 1.0).abs() < 1e-6, "c={c}");
    }

    #[test]
    fn condition_of_scaled_diagonal() {
        let mut sys = SparseSystem::new(6);
        sys.add(0, 0, 1.0);
        for i in 1..6 {
            sys.add(i, i, 1e-6);
        }
        let c = condition_estimate(&sys).unwrap();
        assert!((c - 1e6).abs() < 0.1e6, "c={c}");
    }

    #[test]
    fn large_sparse_banded_with_dense_tail_columns() {
        // arrowhead structure of the bordered micro-macro systems
        let n = 2600; // beyond the dense fallback
        let mut sys = SparseSystem::new(n);
        for i in 0..n {
            sys.add(i, i, 4.0 + (i % 3) as f64);
            if i + 1 < n {
                sys.add(i, i + 1, -1.0);
                sys.add(i + 1, i, -1.2);
            }
            if i + 2 < n {
                sys.add(i, i + 2, 0.3);
            }
            sys.add(i, n - 1, 0.01 + (i as f64 * 0.1).sin() * 0.001);
            sys.add(i, n - 2, 0.02);
            sys.rhs[i] = (i as f64 * 0.01).cos();
        }
        let x = solve_sparse(&sys).unwrap();
        let ax = sys.matvec(&x);
        let rnorm = sys.rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        let worst = ax.iter().zip(&sys.rhs).map(|(a, b)| (a - b).abs()).fold(0.0f64, f64::max);
        assert!(worst <= 1e-10 * rnorm, "residual {worst:.3e}");
    }
}
