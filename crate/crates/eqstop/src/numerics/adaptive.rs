//! Adaptive Simpson integration of `e^{-s} f(s)` over `[0, truncation]`.
//!
//! Standard interval-halving Simpson with the Richardson error estimate
//! `|S_fine - S_coarse| <= 15 tol`; accepted panels contribute the
//! extrapolated value. The recursion depth cap keeps pathological integrands
//! from looping forever; running into it is reported as a tolerance failure,
//! not silently absorbed.

use super::NumericsError;

// Panels at depth 44 are ~3e-12 wide for truncation 50: far finer than any
// integrand structure this crate meets, while still orders of magnitude above
// the float spacing where midpoint subdivision would degenerate.
const MAX_DEPTH: u32 = 44;

pub(crate) fn integrate(
    f: &mut dyn FnMut(f64) -> f64,
    truncation: f64,
    abs_tol: f64,
) -> Result<f64, NumericsError> {
    let mut weighted = |s: f64| -> Result<f64, NumericsError> {
        let v = (-s).exp() * f(s);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(NumericsError::NonFinite { at: s })
        }
    };
    let (a, b) = (0.0, truncation);
    let m = 0.5 * (a + b);
    let fa = weighted(a)?;
    let fm = weighted(m)?;
    let fb = weighted(b)?;
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    // The per-panel acceptance below guarantees ~tol total error only
    // asymptotically; running with a 16x tighter working tolerance keeps the
    // realized error safely inside the advertised abs_tol.
    panel(&mut weighted, a, b, fa, fm, fb, whole, abs_tol / 16.0, MAX_DEPTH, abs_tol)
}

#[allow(clippy::too_many_arguments)]
fn panel(
    weighted: &mut dyn FnMut(f64) -> Result<f64, NumericsError>,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    reported_tol: f64,
) -> Result<f64, NumericsError> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = weighted(lm)?;
    let frm = weighted(rm)?;
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(NumericsError::ToleranceNotMet {
            tol: reported_tol,
            err: delta.abs() / 15.0,
        });
    }
    let half_tol = 0.5 * tol;
    let l = panel(weighted, a, m, fa, flm, fm, left, half_tol, depth - 1, reported_tol)?;
    let r = panel(weighted, m, b, fm, frm, fb, right, half_tol, depth - 1, reported_tol)?;
    Ok(l + r)
}
