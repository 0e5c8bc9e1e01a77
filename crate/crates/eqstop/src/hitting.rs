//! First-passage functionals of standard Brownian motion through the
//! two-sided barrier `{-a, a}`.
//!
//! Let `T_a^x` be the first time a standard Brownian motion started at
//! `x in [-a, a]` leaves `(-a, a)`. Its Laplace transform is
//! `E[e^{-(lambda^2/2) T_a^x}] = cosh(x lambda) / cosh(a lambda)`, and the
//! hyperbolically discounted value of stopping at the barrier,
//!
//! `eta(x, a) = E[a / (1 + beta T_a^x)]`,
//!
//! follows by writing `1 / (1 + beta T) = int_0^inf e^{-s} e^{-beta s T} ds`
//! and swapping expectation and integral:
//!
//! `eta(x, a) = a int_0^inf e^{-s} cosh(x sqrt(2 beta s)) sech(a sqrt(2 beta s)) ds`.
//!
//! `eta` is the continuation value of a threshold rule seen from inside the
//! barrier; its slope at the barrier, `k(a) = eta_x(a, a)`, decides whether
//! the rule survives policy improvement. All ratios are evaluated in the
//! exponential-difference form, so nothing overflows for large arguments.

use serde::{Deserialize, Serialize};

use crate::numerics::{integrate_exp_weight, NumericsError, QuadratureSpec};

/// Parameters shared by the `eta` family: the hyperbolic discount slope and
/// the quadrature used for the `e^{-s}` integrals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaContext {
    pub beta: f64,
    pub quad: QuadratureSpec,
}

impl EtaContext {
    pub fn new(beta: f64) -> Result<Self, HittingError> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(HittingError::InvalidParameter {
                reason: format!("beta = {beta} must be finite and > 0"),
            });
        }
        Ok(EtaContext {
            beta,
            quad: QuadratureSpec::default(),
        })
    }

    pub fn with_quadrature(mut self, quad: QuadratureSpec) -> Self {
        self.quad = quad;
        self
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HittingError {
    #[error("state outside the barrier: need 0 <= x <= a, got x = {x}, a = {a}")]
    DomainError { x: f64, a: f64 },
    #[error("invalid parameter: {reason}")]
    InvalidParameter { reason: String },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// `cosh(x lambda) / cosh(a lambda)` for `0 <= x <= a`, `lambda >= 0`,
/// evaluated as `e^{-(a-x) lambda} (1 + e^{-2 x lambda}) / (1 + e^{-2 a lambda})`
/// so that large arguments decay instead of overflowing.
///
/// This is the Laplace transform `E[e^{-(lambda^2/2) T_a^x}]` of the
/// two-sided exit time.
pub fn laplace_hitting(x: f64, a: f64, lambda: f64) -> Result<f64, HittingError> {
    check_state(x, a)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(HittingError::InvalidParameter {
            reason: format!("lambda = {lambda} must be finite and >= 0"),
        });
    }
    Ok(cosh_ratio(x, a, lambda))
}

fn check_state(x: f64, a: f64) -> Result<(), HittingError> {
    if !(a >= 0.0 && a.is_finite()) || !(x >= 0.0) || x > a {
        return Err(HittingError::DomainError { x, a });
    }
    Ok(())
}

fn cosh_ratio(x: f64, a: f64, y: f64) -> f64 {
    // x = a (and the a = 0 degenerate case) give exactly 1 for every y.
    ((x - a) * y).exp() * (1.0 + (-2.0 * x * y).exp()) / (1.0 + (-2.0 * a * y).exp())
}

fn sinh_over_cosh(x: f64, a: f64, y: f64) -> f64 {
    // sinh(xy) / cosh(ay), same exponential-difference trick; requires x <= a.
    ((x - a) * y).exp() * (1.0 - (-2.0 * x * y).exp()) / (1.0 + (-2.0 * a * y).exp())
}

/// Discounted barrier value `eta(x, a) = E[a / (1 + beta T_a^x)]` for
/// `0 <= x <= a`.
///
/// `eta(a, a) = a` (stopping is immediate) and `eta(x, a) -> 0` as the
/// barrier recedes. Scaling: `eta_beta(x, a) = eta_1(x sqrt(beta), a sqrt(beta)) / sqrt(beta)`.
pub fn eta(ctx: &EtaContext, x: f64, a: f64) -> Result<f64, HittingError> {
    check_state(x, a)?;
    if a == 0.0 {
        return Ok(0.0);
    }
    let beta = ctx.beta;
    let value = integrate_exp_weight(
        |s| {
            let y = (2.0 * beta * s).sqrt();
            cosh_ratio(x, a, y)
        },
        &ctx.quad,
    )?;
    Ok(a * value)
}

/// Partial derivative `eta_x(x, a)`, by differentiating under the integral:
/// `a int_0^inf e^{-s} sqrt(2 beta s) sinh(x sqrt(2 beta s)) sech(a sqrt(2 beta s)) ds`.
pub fn eta_x(ctx: &EtaContext, x: f64, a: f64) -> Result<f64, HittingError> {
    check_state(x, a)?;
    if a == 0.0 {
        return Ok(0.0);
    }
    let beta = ctx.beta;
    let value = integrate_exp_weight(
        |s| {
            let y = (2.0 * beta * s).sqrt();
            y * sinh_over_cosh(x, a, y)
        },
        &ctx.quad,
    )?;
    Ok(a * value)
}

/// Barrier slope `k(a) = eta_x(a, a) = a int_0^inf e^{-s} sqrt(2 beta s)
/// tanh(a sqrt(2 beta s)) ds`.
///
/// `k(0) = 0`, `k` is strictly increasing, and `k(a) = 1` defines the widest
/// threshold `a*` that survives policy improvement. Scaling:
/// `k_beta(a) = k_1(a sqrt(beta))`, so `k` evaluated at the naive threshold
/// `1/sqrt(beta)` is a beta-independent constant (~1.0746).
pub fn k(ctx: &EtaContext, a: f64) -> Result<f64, HittingError> {
    if !(a >= 0.0 && a.is_finite()) {
        return Err(HittingError::DomainError { x: a, a });
    }
    if a == 0.0 {
        return Ok(0.0);
    }
    let beta = ctx.beta;
    let value = integrate_exp_weight(
        |s| {
            let y = (2.0 * beta * s).sqrt();
            y * (a * y).tanh()
        },
        &ctx.quad,
    )?;
    Ok(a * value)
}
