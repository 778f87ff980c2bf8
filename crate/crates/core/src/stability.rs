//! Linearized stability analyzer for the time discretizations of the viscous
//! fluid/Poisson system about the uniform rest state.
//!
//! Each Fourier mode `xi` obeys a two-term recursion whose characteristic
//! quadratic depends on the scheme. The classical discretization gives
//!
//! `q^2 - 2 q (1 - beta xi^2 delta - delta^2/(2 lambda^2))
//!      + (1 - beta xi^2 delta)^2 + T xi^2 delta^2 = 0`,
//!
//! and the uniformly stable one
//!
//! `(1 + delta^2/lambda^2) q^2 - 2 q (1 - beta xi^2 delta - T xi^2 delta^2/2)
//!      + (1 - beta xi^2 delta)^2 = 0`,
//!
//! with `beta = c h` mimicking the decentering viscosity of a spatial
//! discretization of step `h`. A scheme is stable when both roots satisfy
//! `|q| <= 1` for every admissible mode `|xi| < pi/h`.

use num_complex::Complex64;

use crate::{Error, Result};

/// Tolerance absorbing floating-point noise on the unit circle.
pub const UNIT_CIRCLE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeKind {
    Classical,
    Ap,
}

impl std::fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SchemeKind::Classical => write!(f, "classical"),
            SchemeKind::Ap => write!(f, "ap"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityQuery {
    pub scheme: SchemeKind,
    pub delta: f64,
    pub lambda: f64,
    pub h: f64,
    /// Viscosity constant `c` in `beta = c h`.
    pub c: f64,
    /// `p'(1)`.
    pub t: f64,
    pub xi_samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityVerdict {
    pub max_modulus: f64,
    pub argmax_xi: f64,
    pub stable: bool,
}

/// Roots of `a q^2 + b q + c` with real coefficients, cancellation-safe:
/// the larger-magnitude root comes from the quadratic formula, the other
/// from the product identity.
fn quadratic_roots(a: f64, b: f64, c: f64) -> (Complex64, Complex64) {
    debug_assert!(a != 0.0);
    let disc = Complex64::new(b * b - 4.0 * a * c, 0.0);
    let s = disc.sqrt();
    let cand1 = -b + s.re;
    let cand2 = -b - s.re;
    let big = if cand1.abs() >= cand2.abs() {
        Complex64::new(-b, 0.0) + s
    } else {
        Complex64::new(-b, 0.0) - s
    };
    if big.norm() == 0.0 {
        return (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
    }
    let q1 = big / (2.0 * a);
    let q2 = Complex64::new(c, 0.0) / (a * q1);
    (q1, q2)
}

/// Amplification roots of the classical scheme at mode `xi`. Needs
/// `lambda > 0`.
pub fn char_roots_classical(delta: f64, lambda: f64, xi: f64, beta: f64, t: f64) -> Result<(Complex64, Complex64)> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidInput("classical characteristic equation needs lambda > 0".into()));
    }
    let v = 1.0 - beta * xi * xi * delta;
    let lin = v - 0.5 * delta * delta / (lambda * lambda);
    let cst = v * v + t * xi * xi * delta * delta;
    Ok(quadratic_roots(1.0, -2.0 * lin, cst))
}

/// Amplification roots of the uniformly stable scheme at mode `xi`.
/// `lambda = 0` is handled by the rescaled quadratic
/// `(lambda^2 + delta^2) q^2 - 2 lambda^2 (..) q + lambda^2 (..) = 0`.
pub fn char_roots_ap(delta: f64, lambda: f64, xi: f64, beta: f64, t: f64) -> (Complex64, Complex64) {
    let v = 1.0 - beta * xi * xi * delta;
    let lam2 = lambda * lambda;
    let a = lam2 + delta * delta;
    let b = -2.0 * lam2 * (v - 0.5 * t * xi * xi * delta * delta);
    let c = lam2 * v * v;
    quadratic_roots(a, b, c)
}

/// Continuous dispersion pair `s = +/- i (T xi^2 + lambda^{-2})` of the
/// linearized model.
pub fn continuous_dispersion(xi: f64, lambda: f64, t: f64) -> Result<(Complex64, Complex64)> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidInput("dispersion needs lambda > 0".into()));
    }
    let w = t * xi * xi + 1.0 / (lambda * lambda);
    Ok((Complex64::new(0.0, w), Complex64::new(0.0, -w)))
}

/// Maximal root modulus over the admissible modes: `xi_samples` uniform
/// points on `(0, pi/h]`, endpoint included (the viscosity bound binds
/// there).
pub fn verdict(query: &StabilityQuery) -> Result<StabilityVerdict> {
    if query.xi_samples < 64 {
        return Err(Error::InvalidInput("need at least 64 xi samples".into()));
    }
    if !(query.delta > 0.0 && query.h > 0.0 && query.t > 0.0 && query.c >= 0.0) {
        return Err(Error::InvalidInput("stability query parameters out of range".into()));
    }
    if query.scheme == SchemeKind::Classical && !(query.lambda > 0.0) {
        return Err(Error::InvalidInput("classical scheme verdict needs lambda > 0".into()));
    }
    let beta = query.c * query.h;
    let xi_max = std::f64::consts::PI / query.h;
    let mut max_modulus = 0.0f64;
    let mut argmax_xi = 0.0f64;
    for i in 1..=query.xi_samples {
        let xi = xi_max * i as f64 / query.xi_samples as f64;
        let (r1, r2) = match query.scheme {
            SchemeKind::Classical => char_roots_classical(query.delta, query.lambda, xi, beta, query.t)?,
            SchemeKind::Ap => char_roots_ap(query.delta, query.lambda, xi, beta, query.t),
        };
        let m = r1.norm().max(r2.norm());
        if m > max_modulus {
            max_modulus = m;
            argmax_xi = xi;
        }
    }
    Ok(StabilityVerdict { max_modulus, argmax_xi, stable: max_modulus <= 1.0 + UNIT_CIRCLE_TOL })
}

/// One row of a stability map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapPoint {
    pub scheme: SchemeKind,
    pub delta: f64,
    pub lambda: f64,
    pub h: f64,
    pub c: f64,
    pub t: f64,
    pub verdict: StabilityVerdict,
}

/// Verdict per `(delta, lambda)` pair, row-major over the delta grid first.
pub fn stability_map(
    scheme: SchemeKind,
    delta_grid: &[f64],
    lambda_grid: &[f64],
    h: f64,
    c: f64,
    t: f64,
) -> Result<Vec<MapPoint>> {
    if delta_grid.is_empty() || lambda_grid.is_empty() {
        return Err(Error::InvalidInput("empty sweep grid".into()));
    }
    let mut out = Vec::with_capacity(delta_grid.len() * lambda_grid.len());
    for &lambda in lambda_grid {
        for &delta in delta_grid {
            let q = StabilityQuery { scheme, delta, lambda, h, c, t, xi_samples: 512 };
            out.push(MapPoint { scheme, delta, lambda, h, c, t, verdict: verdict(&q)? });
        }
    }
    Ok(out)
}

/// CSV rendering of a stability map (schema: scheme, delta, lambda, h, c, T,
/// max_modulus, stable).
pub fn map_to_csv(points: &[MapPoint]) -> String {
    let mut s = String::from("scheme,delta,lambda,h,c,T,max_modulus,stable\n");
    for p in points {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            p.scheme, p.delta, p.lambda, p.h, p.c, p.t, p.verdict.max_modulus, p.verdict.stable
        ));
    }
    s
}

/// Largest stable `delta` on a geometric ladder between `lo` and `cap`,
/// refined by bisection. Returns `cap` when stable everywhere up to the cap
/// and `None` when already unstable at `lo`.
pub fn stability_boundary(
    scheme: SchemeKind,
    lambda: f64,
    h: f64,
    c: f64,
    t: f64,
    lo: f64,
    cap: f64,
) -> Result<Option<f64>> {
    let stable = |delta: f64| -> Result<bool> {
        Ok(verdict(&StabilityQuery { scheme, delta, lambda, h, c, t, xi_samples: 512 })?.stable)
    };
    if !stable(lo)? {
        return Ok(None);
    }
    if stable(cap)? {
        return Ok(Some(cap));
    }
    let (mut a, mut b) = (lo, cap);
    for _ in 0..60 {
        let mid = (a * b).sqrt();
        if stable(mid)? {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(Some((a * b).sqrt()))
}
