//! Discount functions and the structural checks the equilibrium theory
//! leans on.
//!
//! A discount function `delta` maps elapsed time to a factor in `(0, 1]` with
//! `delta(0) = 1`, nonincreasing. Two properties matter downstream:
//!
//! * *log-subadditivity*: `delta(s) delta(t) <= delta(s + t)`. This is what
//!   makes the improvement map produce earlier stopping, and exponential
//!   discounting is exactly the equality case.
//! * *decreasing impatience*: `t -> delta(t + s) / delta(t)` strictly
//!   increasing for each fixed `s > 0`. Strictly decreasing impatience
//!   implies log-subadditivity; the converse fails.
//!
//! Both checks here are grid evaluations that report the worst witness found
//! rather than a bare boolean, so a failure is directly inspectable.

use std::fmt;
use std::sync::Arc;

use serde::de::Error as _;
use serde::ser::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Violation tolerance: products may exceed `delta(s + t)` by at most this
/// before log-subadditivity is declared broken.
pub const LOG_SUBADDITIVITY_TOL: f64 = 1e-12;
/// Successive impatience ratios must increase by more than this to count as
/// strictly increasing.
pub const IMPATIENCE_STRICTNESS_TOL: f64 = 1e-12;
/// Default evaluation grid for both checks: `grid_n` points on `[0, grid_max]`.
pub const DEFAULT_GRID_MAX: f64 = 100.0;
pub const DEFAULT_GRID_N: usize = 500;

#[derive(Clone)]
pub enum DiscountFunction {
    /// `delta(s) = e^{-rho s}`, `rho >= 0`. The time-consistent benchmark.
    Exponential { rho: f64 },
    /// `delta(s) = 1 / (1 + beta s)`, `beta > 0`.
    Hyperbolic { beta: f64 },
    /// `delta(0) = 1`, `delta(s) = delta0 e^{-rho s}` for `s > 0`, with
    /// `delta0` in `(0, 1]` and `rho >= 0`. Discontinuous at zero unless
    /// `delta0 = 1`; the jump is flagged in check reports rather than
    /// rejected.
    QuasiHyperbolic { delta0: f64, rho: f64 },
    /// User-supplied map. The caller is responsible for `delta(0) = 1` and
    /// monotonicity; the checks will happily expose a bad one.
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for DiscountFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiscountFunction::Exponential { rho } => {
                write!(f, "Exponential {{ rho: {rho} }}")
            }
            DiscountFunction::Hyperbolic { beta } => {
                write!(f, "Hyperbolic {{ beta: {beta} }}")
            }
            DiscountFunction::QuasiHyperbolic { delta0, rho } => {
                write!(f, "QuasiHyperbolic {{ delta0: {delta0}, rho: {rho} }}")
            }
            DiscountFunction::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiscountError {
    #[error("discount functions are defined for nonnegative times, got s = {s}")]
    NegativeTime { s: f64 },
    #[error("impatience ratio undefined: delta({t}) = 0")]
    DivisionByZero { t: f64 },
    #[error("invalid parameter: {reason}")]
    InvalidParameter { reason: String },
}

/// Outcome of the log-subadditivity scan. `worst_violation` is the grid
/// maximum of `delta(s) delta(t) - delta(s + t)`; positive means the products
/// overshoot, and `holds` is true iff it stays within
/// [`LOG_SUBADDITIVITY_TOL`]. `witness` is where the maximum was attained.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogSubadditivityReport {
    pub holds: bool,
    pub worst_violation: f64,
    pub witness: (f64, f64),
    /// True when the function jumps at zero (quasi-hyperbolic with
    /// `delta0 < 1`); grid checks straddling 0 should be read with that in
    /// mind.
    pub jump_at_zero: bool,
}

/// Outcome of the decreasing-impatience scan for a fixed lag `s`: the ratio
/// `delta(t + s) / delta(t)` must increase strictly along the grid.
/// `worst_increment` is the smallest successive difference observed and
/// `witness` the left endpoint where it occurred.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImpatienceReport {
    pub holds: bool,
    pub worst_increment: f64,
    pub witness: f64,
    pub jump_at_zero: bool,
}

impl DiscountFunction {
    pub fn exponential(rho: f64) -> Result<Self, DiscountError> {
        if !(rho >= 0.0 && rho.is_finite()) {
            return Err(DiscountError::InvalidParameter {
                reason: format!("exponential rate rho = {rho} must be finite and >= 0"),
            });
        }
        Ok(DiscountFunction::Exponential { rho })
    }

    pub fn hyperbolic(beta: f64) -> Result<Self, DiscountError> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(DiscountError::InvalidParameter {
                reason: format!("hyperbolic slope beta = {beta} must be finite and > 0"),
            });
        }
        Ok(DiscountFunction::Hyperbolic { beta })
    }

    pub fn quasi_hyperbolic(delta0: f64, rho: f64) -> Result<Self, DiscountError> {
        if !(delta0 > 0.0 && delta0 <= 1.0) {
            return Err(DiscountError::InvalidParameter {
                reason: format!("quasi-hyperbolic delta0 = {delta0} must lie in (0, 1]"),
            });
        }
        if !(rho >= 0.0 && rho.is_finite()) {
            return Err(DiscountError::InvalidParameter {
                reason: format!("quasi-hyperbolic rate rho = {rho} must be finite and >= 0"),
            });
        }
        Ok(DiscountFunction::QuasiHyperbolic { delta0, rho })
    }

    pub fn custom(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        DiscountFunction::Custom(Arc::new(f))
    }

    /// `delta(s)`. Only nonnegative times are meaningful.
    pub fn evaluate(&self, s: f64) -> Result<f64, DiscountError> {
        if !(s >= 0.0) {
            return Err(DiscountError::NegativeTime { s });
        }
        Ok(match self {
            DiscountFunction::Exponential { rho } => (-rho * s).exp(),
            DiscountFunction::Hyperbolic { beta } => 1.0 / (1.0 + beta * s),
            DiscountFunction::QuasiHyperbolic { delta0, rho } => {
                if s == 0.0 {
                    1.0
                } else {
                    delta0 * (-rho * s).exp()
                }
            }
            DiscountFunction::Custom(f) => f(s),
        })
    }

    /// True unless the function jumps at zero.
    pub fn continuous_at_zero(&self) -> bool {
        !matches!(
            self,
            DiscountFunction::QuasiHyperbolic { delta0, .. } if *delta0 < 1.0
        )
    }

    /// Scan `delta(s) delta(t) <= delta(s + t)` over the square grid of
    /// `grid_n` points per axis on `[0, grid_max]`.
    pub fn check_log_subadditive(
        &self,
        grid_max: f64,
        grid_n: usize,
    ) -> Result<LogSubadditivityReport, DiscountError> {
        if !(grid_max > 0.0 && grid_max.is_finite()) || grid_n < 2 {
            return Err(DiscountError::InvalidParameter {
                reason: format!("grid ({grid_max}, {grid_n}) must have grid_max > 0, grid_n >= 2"),
            });
        }
        let grid: Vec<f64> = (0..grid_n)
            .map(|i| grid_max * i as f64 / (grid_n - 1) as f64)
            .collect();
        let values: Vec<f64> = grid
            .iter()
            .map(|&s| self.evaluate(s))
            .collect::<Result<_, _>>()?;
        let mut worst = f64::NEG_INFINITY;
        let mut witness = (0.0, 0.0);
        for (i, &s) in grid.iter().enumerate() {
            for (j, &t) in grid.iter().enumerate() {
                let violation = values[i] * values[j] - self.evaluate(s + t)?;
                if violation > worst {
                    worst = violation;
                    witness = (s, t);
                }
            }
        }
        Ok(LogSubadditivityReport {
            holds: worst <= LOG_SUBADDITIVITY_TOL,
            worst_violation: worst,
            witness,
            jump_at_zero: !self.continuous_at_zero(),
        })
    }

    /// Scan the impatience ratio `delta(t + s) / delta(t)` for strict
    /// increase in `t` over `grid_n` points on `[0, grid_max]`, for a fixed
    /// lag `s > 0`.
    pub fn check_decreasing_impatience(
        &self,
        s: f64,
        grid_max: f64,
        grid_n: usize,
    ) -> Result<ImpatienceReport, DiscountError> {
        if !(s > 0.0 && s.is_finite()) {
            return Err(DiscountError::InvalidParameter {
                reason: format!("impatience lag s = {s} must be finite and > 0"),
            });
        }
        if !(grid_max > 0.0 && grid_max.is_finite()) || grid_n < 3 {
            return Err(DiscountError::InvalidParameter {
                reason: format!("grid ({grid_max}, {grid_n}) must have grid_max > 0, grid_n >= 3"),
            });
        }
        let mut ratios = Vec::with_capacity(grid_n);
        for i in 0..grid_n {
            let t = grid_max * i as f64 / (grid_n - 1) as f64;
            let denom = self.evaluate(t)?;
            if denom == 0.0 {
                return Err(DiscountError::DivisionByZero { t });
            }
            ratios.push((t, self.evaluate(t + s)? / denom));
        }
        let mut worst = f64::INFINITY;
        let mut witness = 0.0;
        for pair in ratios.windows(2) {
            let increment = pair[1].1 - pair[0].1;
            if increment < worst {
                worst = increment;
                witness = pair[0].0;
            }
        }
        Ok(ImpatienceReport {
            holds: worst > IMPATIENCE_STRICTNESS_TOL,
            worst_increment: worst,
            witness,
            jump_at_zero: !self.continuous_at_zero(),
        })
    }
}

/// Serde facade: the named families serialize as
/// `{"family": "...", "params": {...}}`; custom closures do not serialize.
#[derive(Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
enum DiscountRepr {
    Exponential { rho: f64 },
    Hyperbolic { beta: f64 },
    QuasiHyperbolic { delta0: f64, rho: f64 },
}

impl Serialize for DiscountFunction {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let repr = match self {
            DiscountFunction::Exponential { rho } => DiscountRepr::Exponential { rho: *rho },
            DiscountFunction::Hyperbolic { beta } => DiscountRepr::Hyperbolic { beta: *beta },
            DiscountFunction::QuasiHyperbolic { delta0, rho } => DiscountRepr::QuasiHyperbolic {
                delta0: *delta0,
                rho: *rho,
            },
            DiscountFunction::Custom(_) => {
                return Err(S::Error::custom(
                    "custom discount functions cannot be serialized",
                ))
            }
        };
        repr.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DiscountFunction {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = DiscountRepr::deserialize(deserializer)?;
        let built = match repr {
            DiscountRepr::Exponential { rho } => DiscountFunction::exponential(rho),
            DiscountRepr::Hyperbolic { beta } => DiscountFunction::hyperbolic(beta),
            DiscountRepr::QuasiHyperbolic { delta0, rho } => {
                DiscountFunction::quasi_hyperbolic(delta0, rho)
            }
        };
        built.map_err(D::Error::custom)
    }
}
