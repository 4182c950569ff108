//! Bracketed root finding.
//!
//! Bisection only: unconditionally convergent on a sign-changing bracket,
//! which is what the transcendental equations here provide analytically.

use crate::{Error, Result};

/// Bisect `f` on `[lo, hi]` down to an interval width of `tol`.
///
/// `f(lo)` and `f(hi)` must have opposite signs (zero counts as a root).
pub(crate) fn bisect(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    if !(lo < hi) {
        return Err(Error::numerical(format!(
            "bisect: invalid bracket [{lo}, {hi}]"
        )));
    }
    let mut a = lo;
    let mut b = hi;
    let mut fa = f(a);
    let fb = f(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.is_nan() || fb.is_nan() || fa.signum() == fb.signum() {
        return Err(Error::numerical(format!(
            "bisect: no sign change on [{lo}, {hi}] (f = {fa:.6e}, {fb:.6e})"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if b - a <= tol || mid <= a || mid >= b {
            return Ok(mid);
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == fa.signum() {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}

/// Scan `[lo, hi]` in `n` uniform steps and bisect the first sign-changing
/// sub-interval. Fallback for residuals that are not known to be monotone.
pub(crate) fn scan_then_bisect(
    f: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    n: usize,
    tol: f64,
) -> Result<f64> {
    let mut a = lo;
    let mut fa = f(a);
    if fa == 0.0 {
        return Ok(a);
    }
    for i in 1..=n {
        let b = lo + (hi - lo) * i as f64 / n as f64;
        let fb = f(b);
        if fb == 0.0 {
            return Ok(b);
        }
        if fa.signum() != fb.signum() {
            return bisect(&f, a, b, tol);
        }
        a = b;
        fa = fb;
    }
    Err(Error::numerical(format!(
        "scan_then_bisect: no sign change found on [{lo}, {hi}]"
    )))
}
