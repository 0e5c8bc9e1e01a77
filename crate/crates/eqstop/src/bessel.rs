//! Worked case study: stop |Brownian motion| under hyperbolic discounting
//! `1 / (1 + beta s)`.
//!
//! A sophisticated agent who anticipates future preference reversals looks
//! for stopping rules that survive policy improvement: stop at `x` only if
//! the payoff `|x|` beats the discounted value of running the rule from `x`.
//! For symmetric threshold rules "stop once `|X| >= a`" this reduces to
//! one-dimensional calculus on the barrier functional `eta` from
//! [`crate::hitting`]:
//!
//! * the rule survives iff `eta(x, a) >= x` on `[0, a]`, which holds iff the
//!   barrier slope `k(a) = eta_x(a, a)` is at most 1;
//! * `k` is increasing with `k(0) = 0`, so survivors form the band
//!   `(0, a_star]` with `k(a_star) = 1`;
//! * a too-greedy threshold `a > a_star` is cut down in a single improvement
//!   step to the interior crossing `x_star(a)` of `eta(., a)` with the
//!   diagonal, which lands inside the band, and a second step confirms the
//!   fixed point.
//!
//! The naive agent (who re-optimizes each instant and never notices the
//! reversal) uses the widening boundary `sqrt(1/beta + (s - t))`; its
//! time-`t` threshold `1/sqrt(beta)` has `k = 1.0746... > 1` for every
//! `beta`, so naive behavior is never an equilibrium.

use serde::{Deserialize, Serialize};

use crate::hitting::{eta, k, EtaContext, HittingError};
use crate::numerics::{find_root, NumericsError, QuadratureSpec, RootSpec};

/// The case-study configuration: discount slope plus numerics settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BesselProblem {
    pub beta: f64,
    pub quad: QuadratureSpec,
    pub roots: RootSpec,
}

/// Trace of repeated policy improvement applied to a threshold rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub beta: f64,
    /// Widest equilibrium threshold, the root of `k(a) = 1`.
    pub a_star: f64,
    /// Time-`t` threshold of the naive widening boundary, `1/sqrt(beta)`.
    pub naive_threshold: f64,
    /// Where one improvement step sends the naive threshold.
    pub x_star_of_naive: f64,
    pub start_threshold: f64,
    pub final_threshold: f64,
    /// Distinct thresholds visited, starting value first.
    pub threshold_sequence: Vec<f64>,
    /// Number of times the threshold actually moved.
    pub iterations_to_equilibrium: usize,
    /// Improvement steps applied, including the one that confirms the fixed
    /// point. At most 2 from any starting threshold.
    pub formal_theta_applications: usize,
    /// Endpoints of the band of equilibrium thresholds; every `a` in
    /// `(lo, hi]` is a fixed point of improvement.
    pub equilibrium_set: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BesselError {
    #[error("invalid parameter: {reason}")]
    InvalidParameter { reason: String },
    #[error("time order violated: need s >= t, got t = {t}, s = {s}")]
    TimeOrder { t: f64, s: f64 },
    #[error(
        "eta(., {a}) stays above the diagonal (a <= a_star = {a_star}); \
         no interior crossing to solve for"
    )]
    NoInteriorCrossing { a: f64, a_star: f64 },
    #[error("threshold iteration still moving after {applications} steps from {start}")]
    NonConvergence { start: f64, applications: usize },
    #[error(transparent)]
    Hitting(#[from] HittingError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Improvement from any threshold reaches a fixed point in one move; this
/// cap only guards against numerics gone wrong.
const MAX_THETA_APPLICATIONS: usize = 10;

impl BesselProblem {
    pub fn new(beta: f64) -> Result<Self, BesselError> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(BesselError::InvalidParameter {
                reason: format!("beta = {beta} must be finite and > 0"),
            });
        }
        Ok(BesselProblem {
            beta,
            quad: QuadratureSpec::default(),
            // Placeholder bracket; every solve rebrackets to its own
            // interval, only the tolerances carry over.
            roots: RootSpec::bracket(0.0, 1.0),
        })
    }

    pub fn with_quadrature(mut self, quad: QuadratureSpec) -> Self {
        self.quad = quad;
        self
    }

    pub fn with_root_spec(mut self, roots: RootSpec) -> Self {
        self.roots = roots;
        self
    }

    fn eta_ctx(&self) -> EtaContext {
        EtaContext {
            beta: self.beta,
            quad: self.quad.clone(),
        }
    }

    /// Threshold the naive agent commits to right now: `1/sqrt(beta)`.
    pub fn naive_threshold(&self) -> f64 {
        1.0 / self.beta.sqrt()
    }

    /// The naive agent's planned boundary at future time `s`, seen from `t`:
    /// `sqrt(1/beta + (s - t))`. It widens because the agent discounts the
    /// near future more steeply than the far future.
    pub fn naive_boundary(&self, t: f64, s: f64) -> Result<f64, BesselError> {
        if !(s >= t) {
            return Err(BesselError::TimeOrder { t, s });
        }
        Ok((1.0 / self.beta + (s - t)).sqrt())
    }

    /// Widest equilibrium threshold: unique root of `k(a) = 1` in
    /// `(0, 1/sqrt(beta))`. Scales as `a_star(beta) = a_star(1) / sqrt(beta)`.
    pub fn a_star(&self) -> Result<f64, BesselError> {
        let ctx = self.eta_ctx();
        // k(0) - 1 = -1 and k at the naive threshold is ~1.0746 > 1 for
        // every beta, so this bracket always straddles the root.
        let spec = self.roots.rebracket(0.0, self.naive_threshold());
        let mut inner_err = None;
        let root = find_root(
            |a| match k(&ctx, a) {
                Ok(v) => v - 1.0,
                Err(e) => {
                    inner_err = Some(e);
                    f64::NAN
                }
            },
            &spec,
        );
        match (root, inner_err) {
            (_, Some(e)) => Err(e.into()),
            (Ok(a), None) => Ok(a),
            (Err(e), None) => Err(e.into()),
        }
    }

    /// Interior crossing of `eta(., a)` with the diagonal, defined only for
    /// `a > a_star`. One improvement step sends the rule "stop at `a`" to
    /// "stop at `x_star(a)`".
    pub fn x_star(&self, a: f64) -> Result<f64, BesselError> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(BesselError::InvalidParameter {
                reason: format!("threshold a = {a} must be finite and > 0"),
            });
        }
        let a_star = self.a_star()?;
        if a <= a_star + self.roots.x_tol {
            return Err(BesselError::NoInteriorCrossing { a, a_star });
        }
        let ctx = self.eta_ctx();
        // eta(x, a) - x is ~eta(0, a) > 0 at the left end; at a - 1e-8 it is
        // -(k(a) - 1) * 1e-8 + O(1e-16) < 0 once k(a) > 1.
        let spec = self.roots.rebracket(1e-8, a - 1e-8);
        let mut inner_err = None;
        let root = find_root(
            |x| match eta(&ctx, x, a) {
                Ok(v) => v - x,
                Err(e) => {
                    inner_err = Some(e);
                    f64::NAN
                }
            },
            &spec,
        );
        match (root, inner_err) {
            (_, Some(e)) => Err(e.into()),
            (Ok(x), None) => Ok(x),
            (Err(e), None) => Err(e.into()),
        }
    }

    /// One policy-improvement step on the threshold family: fixed below
    /// `a_star`, cut to `x_star(a)` above it.
    pub fn apply_theta_to_threshold(&self, a: f64) -> Result<f64, BesselError> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(BesselError::InvalidParameter {
                reason: format!("threshold a = {a} must be finite and > 0"),
            });
        }
        let a_star = self.a_star()?;
        if a <= a_star + self.roots.x_tol {
            // eta(., a) >= diagonal everywhere: no state prefers deviating,
            // the rule is its own improvement.
            return Ok(a);
        }
        self.x_star(a)
    }

    /// Apply improvement steps until the threshold stops moving. Converges
    /// after at most one move: thresholds at or below `a_star` stay put, and
    /// `x_star(a) < a_star` for `a > a_star`.
    pub fn iterate_to_equilibrium(&self, start: f64) -> Result<EquilibriumReport, BesselError> {
        let a_star = self.a_star()?;
        let naive = self.naive_threshold();
        let x_star_of_naive = self.x_star(naive)?;

        let mut sequence = vec![start];
        let mut current = start;
        let mut applications = 0;
        let converged = loop {
            if applications >= MAX_THETA_APPLICATIONS {
                break false;
            }
            let next = self.apply_theta_to_threshold(current)?;
            applications += 1;
            if (next - current).abs() <= self.roots.x_tol {
                break true;
            }
            sequence.push(next);
            current = next;
        };
        if !converged {
            return Err(BesselError::NonConvergence {
                start,
                applications,
            });
        }

        Ok(EquilibriumReport {
            beta: self.beta,
            a_star,
            naive_threshold: naive,
            x_star_of_naive,
            start_threshold: start,
            final_threshold: current,
            iterations_to_equilibrium: sequence.len() - 1,
            formal_theta_applications: applications,
            threshold_sequence: sequence,
            equilibrium_set: (0.0, a_star),
        })
    }

    /// The equilibrium the agent should actually pick: `a_star`. Within the
    /// band `(0, a_star]` the barrier value `eta(x, a)` increases with `a`
    /// for every state `x`, so the widest survivor dominates pointwise.
    pub fn optimal_equilibrium(&self) -> Result<f64, BesselError> {
        self.a_star()
    }

    /// The naive agent's perceived value at future time `s` and state `x`,
    /// discounted back to the commitment time `t`. With `u = 1 + beta (s - t)`:
    ///
    /// * stopped region `beta x^2 >= u`: `|x| / u`;
    /// * continuation region: `exp((beta x^2 / u - 1) / 2) / sqrt(beta u)`.
    ///
    /// The pieces meet at the naive boundary `sqrt(u / beta)` with matching
    /// value and slope, the continuation piece solves `w_s + w_xx / 2 = 0`,
    /// and `w` strictly exceeds the discounted payoff `|x| / u` inside.
    pub fn value_function_w(&self, t: f64, s: f64, x: f64) -> Result<f64, BesselError> {
        if !(s >= t) {
            return Err(BesselError::TimeOrder { t, s });
        }
        let u = 1.0 + self.beta * (s - t);
        let ax = x.abs();
        if self.beta * ax * ax >= u {
            Ok(ax / u)
        } else {
            Ok(((self.beta * ax * ax / u - 1.0) / 2.0).exp() / (self.beta * u).sqrt())
        }
    }
}
