//! Scalar quadrature against the weight `e^{-s}` on `[0, inf)` and bracketed
//! root finding.
//!
//! Every threshold and constant downstream reduces to integrals of the form
//! `int_0^inf e^{-s} f(s) ds` and to roots of monotone scalar equations, so
//! these two entry points are the numerical core of the crate. Both are
//! driven by plain spec structs that callers and config files can pin down
//! explicitly.

mod adaptive;
mod brent;
mod laguerre;

use serde::{Deserialize, Serialize};

/// Evaluation strategy for [`integrate_exp_weight`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadMethod {
    /// Gauss-Laguerre rule with `node_count` nodes. Exact for polynomials of
    /// degree `2 * node_count - 1`; excellent for integrands analytic near
    /// the positive axis, useless for sub-grid boundary layers.
    GaussLaguerre,
    /// Adaptive Simpson on `[0, truncation]` with the weight folded into the
    /// integrand. Slower, but resolves local structure the fixed rule
    /// cannot; the tail beyond `truncation = 50` is below `e^{-50}`.
    AdaptiveTruncated,
}

/// Specification for [`integrate_exp_weight`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub method: QuadMethod,
    /// Gauss-Laguerre node count; at least 8.
    pub node_count: usize,
    /// Upper limit substituted for infinity by the adaptive method.
    pub truncation: f64,
    /// Absolute tolerance target of the adaptive method.
    pub abs_tol: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            method: QuadMethod::GaussLaguerre,
            node_count: 64,
            truncation: 50.0,
            abs_tol: 1e-10,
        }
    }
}

impl QuadratureSpec {
    pub fn gauss_laguerre(node_count: usize) -> Self {
        QuadratureSpec {
            node_count,
            ..QuadratureSpec::default()
        }
    }

    pub fn adaptive(truncation: f64, abs_tol: f64) -> Self {
        QuadratureSpec {
            method: QuadMethod::AdaptiveTruncated,
            truncation,
            abs_tol,
            ..QuadratureSpec::default()
        }
    }

    fn validate(&self) -> Result<(), NumericsError> {
        if self.method == QuadMethod::GaussLaguerre && self.node_count < 8 {
            return Err(NumericsError::InvalidSpec {
                reason: format!("node_count {} below minimum 8", self.node_count),
            });
        }
        if !(self.truncation > 0.0 && self.truncation.is_finite()) {
            return Err(NumericsError::InvalidSpec {
                reason: format!("truncation {} must be positive and finite", self.truncation),
            });
        }
        if !(self.abs_tol > 0.0) {
            return Err(NumericsError::InvalidSpec {
                reason: format!("abs_tol {} must be positive", self.abs_tol),
            });
        }
        Ok(())
    }
}

/// Specification for [`find_root`]: a bracket known to straddle the root plus
/// stopping tolerances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootSpec {
    pub bracket_lo: f64,
    pub bracket_hi: f64,
    /// Stop when the bracket around the root is this tight.
    pub x_tol: f64,
    /// Stop early when `|g|` falls below this.
    pub f_tol: f64,
    pub max_iter: usize,
}

impl RootSpec {
    /// Spec with default tolerances (`x_tol = 1e-10`, `f_tol = 1e-12`,
    /// `max_iter = 200`) on the given bracket.
    pub fn bracket(lo: f64, hi: f64) -> Self {
        RootSpec {
            bracket_lo: lo,
            bracket_hi: hi,
            x_tol: 1e-10,
            f_tol: 1e-12,
            max_iter: 200,
        }
    }

    /// Same tolerances, different bracket.
    pub fn rebracket(&self, lo: f64, hi: f64) -> Self {
        RootSpec {
            bracket_lo: lo,
            bracket_hi: hi,
            ..self.clone()
        }
    }

    fn validate(&self) -> Result<(), NumericsError> {
        if !(self.bracket_lo.is_finite() && self.bracket_hi.is_finite())
            || self.bracket_lo >= self.bracket_hi
        {
            return Err(NumericsError::InvalidSpec {
                reason: format!(
                    "bracket [{}, {}] must be finite with lo < hi",
                    self.bracket_lo, self.bracket_hi
                ),
            });
        }
        if !(self.x_tol > 0.0) || !(self.f_tol >= 0.0) || self.max_iter == 0 {
            return Err(NumericsError::InvalidSpec {
                reason: "x_tol must be positive, f_tol nonnegative, max_iter nonzero".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("integrand returned a non-finite value at s = {at}")]
    NonFinite { at: f64 },
    #[error("adaptive quadrature could not meet abs_tol {tol:e} (residual error ~{err:e})")]
    ToleranceNotMet { tol: f64, err: f64 },
    #[error("no sign change over bracket: g({lo}) = {flo:e}, g({hi}) = {fhi:e}")]
    NoSignChange { lo: f64, hi: f64, flo: f64, fhi: f64 },
    #[error("root not bracketed to tolerance within {max_iter} iterations (last estimate {last})")]
    MaxIterExceeded { max_iter: usize, last: f64 },
    #[error("invalid spec: {reason}")]
    InvalidSpec { reason: String },
}

/// `int_0^inf e^{-s} f(s) ds`.
///
/// `f` is the integrand *without* the exponential weight. Deterministic for a
/// fixed spec. Fails with [`NumericsError::NonFinite`] if `f` returns NaN or
/// an infinity at an evaluation point, and (adaptive method only) with
/// [`NumericsError::ToleranceNotMet`] if recursion depth runs out before the
/// local error estimates reach `abs_tol`.
pub fn integrate_exp_weight(
    mut f: impl FnMut(f64) -> f64,
    spec: &QuadratureSpec,
) -> Result<f64, NumericsError> {
    spec.validate()?;
    match spec.method {
        QuadMethod::GaussLaguerre => {
            let rule = laguerre::nodes_and_weights(spec.node_count);
            let mut acc = 0.0;
            for &(node, weight) in rule.iter() {
                let v = f(node);
                if !v.is_finite() {
                    return Err(NumericsError::NonFinite { at: node });
                }
                acc += weight * v;
            }
            Ok(acc)
        }
        QuadMethod::AdaptiveTruncated => {
            adaptive::integrate(&mut f, spec.truncation, spec.abs_tol)
        }
    }
}

/// Root of `g` inside `[bracket_lo, bracket_hi]` by Brent's method.
///
/// Requires a sign change over the bracket. The returned point never leaves
/// the bracket; iteration stops when the bracket width reaches `x_tol` or
/// `|g|` falls below `f_tol`.
pub fn find_root(
    mut g: impl FnMut(f64) -> f64,
    spec: &RootSpec,
) -> Result<f64, NumericsError> {
    spec.validate()?;
    brent::solve(&mut g, spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn gl() -> QuadratureSpec {
        QuadratureSpec::default()
    }

    fn ad() -> QuadratureSpec {
        QuadratureSpec::adaptive(50.0, 1e-10)
    }

    #[test]
    fn unit_integrand_gives_one() {
        assert_abs_diff_eq!(integrate_exp_weight(|_| 1.0, &gl()).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(integrate_exp_weight(|_| 1.0, &ad()).unwrap(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn first_moment_is_one() {
        assert_abs_diff_eq!(integrate_exp_weight(|s| s, &gl()).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(integrate_exp_weight(|s| s, &ad()).unwrap(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn moments_match_factorials() {
        // int e^-s s^k = k!
        let mut expected = 1.0;
        for k in 1..=8 {
            expected *= k as f64;
            for spec in [gl(), ad()] {
                let got = integrate_exp_weight(|s| s.powi(k), &spec).unwrap();
                assert!(
                    ((got - expected) / expected).abs() < 1e-10,
                    "k = {k}, method {:?}: got {got}, want {expected}",
                    spec.method
                );
            }
        }
    }

    #[test]
    fn tanh_kernel_integral() {
        // int e^-s sqrt(2s) tanh(sqrt(2s)) ds, frozen from an mpmath run at 40
        // digits.
        let expected = 1.074_606_246_370_425_4;
        let f = |s: f64| (2.0 * s).sqrt() * (2.0 * s).sqrt().tanh();
        assert_abs_diff_eq!(integrate_exp_weight(f, &gl()).unwrap(), expected, epsilon = 1e-9);
        assert_abs_diff_eq!(integrate_exp_weight(f, &ad()).unwrap(), expected, epsilon = 1e-8);
    }

    #[test]
    fn doubling_nodes_is_self_consistent() {
        // 64 -> 128 nodes moves the reported values by less than abs_tol.
        let cases: [fn(f64) -> f64; 3] = [
            |_| 1.0,
            |s| s,
            |s| (2.0 * s).sqrt() * (2.0 * s).sqrt().tanh(),
        ];
        for f in cases {
            let coarse = integrate_exp_weight(f, &QuadratureSpec::gauss_laguerre(64)).unwrap();
            let fine = integrate_exp_weight(f, &QuadratureSpec::gauss_laguerre(128)).unwrap();
            assert!(
                (coarse - fine).abs() < 1e-10,
                "64 vs 128 nodes differ by {:e}",
                (coarse - fine).abs()
            );
        }
    }

    #[test]
    fn adaptive_resolves_boundary_layer() {
        // int e^-s sech(100 sqrt(2s)) ds concentrates its mass below s ~ 1e-3;
        // the fixed rule cannot see it, the adaptive rule must. Frozen from
        // mpmath.
        let expected = 1.831_338_121_019_180_3e-4;
        let f = |s: f64| 1.0 / (100.0 * (2.0 * s).sqrt()).cosh();
        let got = integrate_exp_weight(f, &ad()).unwrap();
        assert_abs_diff_eq!(got, expected, epsilon = 1e-9);
    }

    #[test]
    fn non_finite_integrand_is_reported() {
        let f = |s: f64| if s > 30.0 { f64::NAN } else { 1.0 };
        match integrate_exp_weight(f, &gl()) {
            Err(NumericsError::NonFinite { at }) => assert!(at > 30.0),
            other => panic!("expected NonFinite, got {other:?}"),
        }
        match integrate_exp_weight(f, &ad()) {
            Err(NumericsError::NonFinite { at }) => assert!(at > 30.0),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn unresolvable_singularity_reports_tolerance() {
        // Integrable but non-smooth spike off the dyadic grid, placed where
        // the weight is order one: with exponent -0.9 the panels hugging the
        // cusp hold non-negligible mass at any recursion depth, so Simpson's
        // estimates keep disagreeing until the depth cap.
        let c = 1.0 / 3.0;
        let f = move |s: f64| (s - c).abs().powf(-0.9);
        match integrate_exp_weight(f, &ad()) {
            Err(NumericsError::ToleranceNotMet { tol, err }) => {
                assert_eq!(tol, 1e-10);
                assert!(err > 0.0);
            }
            other => panic!("expected ToleranceNotMet, got {other:?}"),
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(matches!(
            integrate_exp_weight(|_| 1.0, &QuadratureSpec::gauss_laguerre(4)),
            Err(NumericsError::InvalidSpec { .. })
        ));
        assert!(matches!(
            integrate_exp_weight(|_| 1.0, &QuadratureSpec::adaptive(-1.0, 1e-10)),
            Err(NumericsError::InvalidSpec { .. })
        ));
        assert!(matches!(
            find_root(|x| x, &RootSpec::bracket(1.0, 1.0)),
            Err(NumericsError::InvalidSpec { .. })
        ));
    }

    #[test]
    fn root_of_exponential_crossing() {
        // e^{s/2} = 1 + s has its positive root at 2.512862417252339 (mpmath).
        let g = |s: f64| (0.5 * s).exp() - (1.0 + s);
        let root = find_root(g, &RootSpec::bracket(1.0, 5.0)).unwrap();
        assert_abs_diff_eq!(root, 2.512_862_417_252_339, epsilon = 1e-9);
    }

    #[test]
    fn root_stays_in_bracket_and_hits_sqrt2() {
        let spec = RootSpec::bracket(0.0, 2.0);
        let root = find_root(|x| x * x - 2.0, &spec).unwrap();
        assert!((spec.bracket_lo..=spec.bracket_hi).contains(&root));
        assert_abs_diff_eq!(root, std::f64::consts::SQRT_2, epsilon = 1e-9);
    }

    #[test]
    fn no_sign_change_is_detected() {
        let g = |s: f64| (0.5 * s).exp() - (1.0 + s);
        match find_root(g, &RootSpec::bracket(3.0, 5.0)) {
            Err(NumericsError::NoSignChange { flo, fhi, .. }) => {
                assert!(flo > 0.0 && fhi > 0.0);
            }
            other => panic!("expected NoSignChange, got {other:?}"),
        }
    }

    #[test]
    fn iteration_cap_is_enforced() {
        let mut spec = RootSpec::bracket(1.0, 5.0);
        spec.max_iter = 3;
        spec.x_tol = 1e-15;
        spec.f_tol = 0.0;
        let g = |s: f64| (0.5 * s).exp() - (1.0 + s);
        match find_root(g, &spec) {
            Err(NumericsError::MaxIterExceeded { max_iter, last }) => {
                assert_eq!(max_iter, 3);
                assert!((1.0..=5.0).contains(&last));
            }
            Ok(_) => panic!("3 iterations should not reach 1e-15"),
            other => panic!("expected MaxIterExceeded, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_objective_is_reported() {
        let g = |x: f64| if x > 1.4 { f64::NAN } else { x - 2.0 };
        assert!(matches!(
            find_root(g, &RootSpec::bracket(0.0, 2.0)),
            Err(NumericsError::NonFinite { .. })
        ));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn brent_result_stays_bracketed(
                r in -5.0f64..5.0,
                scale in 0.1f64..10.0,
                pad_lo in 0.01f64..4.0,
                pad_hi in 0.01f64..4.0,
            ) {
                // Single real root at r, arbitrary scale.
                let g = move |x: f64| scale * (x - r) * (x * x + 1.0);
                let spec = RootSpec::bracket(r - pad_lo, r + pad_hi);
                let root = find_root(g, &spec).unwrap();
                prop_assert!(root >= spec.bracket_lo && root <= spec.bracket_hi);
                prop_assert!((root - r).abs() < 1e-8);
            }

            #[test]
            fn quadrature_linear_in_integrand(c in -10.0f64..10.0) {
                let spec = QuadratureSpec::default();
                let base = integrate_exp_weight(|s| s, &spec).unwrap();
                let scaled = integrate_exp_weight(|s| c * s, &spec).unwrap();
                prop_assert!((scaled - c * base).abs() < 1e-9);
            }
        }
    }
}
