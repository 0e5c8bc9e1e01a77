//! A deterministic quitting problem with procrastination.
//!
//! Consumption grows as `X_s = x exp(s/2)`, quitting at `s` costs `X_s`,
//! costs are discounted hyperbolically (`1/(1 + u)` over a delay `u`), and
//! the horizon `T` forces a stop. Smaller is better here, so the
//! improvement comparison flips: a state joins the stop set when stopping
//! now is strictly *cheaper* than the restarted rule.
//!
//! The naive rule always plans to quit one unit ahead, so it never stops
//! before the horizon and a strict restart runs all the way to `T`.
//! Deferring a cost `x` by `u` trades `x` now for `x exp(u/2) / (1 + u)`
//! later; the factor crosses 1 at the root `s*` of `exp(u/2) = 1 + u`, so
//! one improvement step quits immediately with more than `s*` left and
//! procrastinates to the horizon otherwise. A second step reproduces the
//! same rule: the improvement is idempotent and the improved rule is the
//! equilibrium.

use crate::numerics::{find_root, RootSpec};
use crate::policy::PolicyError;
use serde::{Deserialize, Serialize};

/// Comparisons of the deferral factor closer to 1 than this count as
/// indifference; covers roundoff at the boundary state itself.
const TIE_TOL: f64 = 1e-9;

/// The deferral delay at which `exp(u/2) = 1 + u`, about 2.5129. With more
/// than this much time left, quitting now beats procrastinating to the
/// horizon.
pub fn s_star() -> Result<f64, PolicyError> {
    let spec = RootSpec::bracket(1.0, 5.0);
    Ok(find_root(|u| (u / 2.0).exp() - (1.0 + u), &spec)?)
}

fn check_domain(t_max: f64, t: f64) -> Result<(), PolicyError> {
    if !(t_max.is_finite() && t_max > 0.0) {
        return Err(PolicyError::DomainError {
            reason: format!("horizon {t_max} must be finite and positive"),
        });
    }
    if !(t.is_finite() && (0.0..=t_max).contains(&t)) {
        return Err(PolicyError::DomainError {
            reason: format!("time {t} must lie in [0, {t_max}]"),
        });
    }
    Ok(())
}

/// The naive plan: quit one unit from now, capped at the horizon.
pub fn smoking_naive(t_max: f64, t: f64) -> Result<f64, PolicyError> {
    check_domain(t_max, t)?;
    Ok((t + 1.0).min(t_max))
}

/// One improvement step on the naive plan. The naive rule stops only at the
/// horizon, so the restarted cost is `x exp(u/2) / (1 + u)` with `u` the
/// full remaining time; quit now when that exceeds the current cost.
pub fn smoking_theta(t_max: f64, t: f64) -> Result<f64, PolicyError> {
    check_domain(t_max, t)?;
    let u = t_max - t;
    let deferred_over_now = (u / 2.0).exp() - (1.0 + u);
    if deferred_over_now > TIE_TOL {
        Ok(t)
    } else {
        // Waiting is cheaper (or a tie): defer to the naive rule's only
        // actual stop, the horizon.
        Ok(t_max)
    }
}

/// The improvement step applied to its own output. The improved rule stops
/// everywhere before `T - s*`, so a strict restart there is instantaneous
/// and the comparison is a tie resolved by the rule's own next stop; past
/// the boundary the restart jumps to the horizon as before. Equals
/// [`smoking_theta`] state for state, exhibiting the idempotence.
pub fn smoking_theta_squared(t_max: f64, t: f64) -> Result<f64, PolicyError> {
    check_domain(t_max, t)?;
    let boundary = t_max - s_star()?;
    let restart = if t < boundary { t } else { t_max };
    let u = restart - t;
    let deferred_over_now = (u / 2.0).exp() - (1.0 + u);
    if deferred_over_now > TIE_TOL {
        Ok(t)
    } else if deferred_over_now < -TIE_TOL {
        Ok(t_max)
    } else {
        // Indifferent: keep the rule's own (non-strict) next stop.
        Ok(if t < boundary { t } else { t_max })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmokingRow {
    pub t: f64,
    pub naive: f64,
    pub theta: f64,
    pub theta_squared: f64,
}

/// The three rules tabulated on a time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmokingTrace {
    pub t_max: f64,
    pub s_star: f64,
    pub rows: Vec<SmokingRow>,
    /// Did the second improvement step reproduce the first everywhere?
    pub theta_fixed: bool,
}

/// Tabulate naive, improved, and twice-improved plans on `grid_n` evenly
/// spaced times in `[0, t_max]`.
pub fn smoking_iterate(t_max: f64, grid_n: usize) -> Result<SmokingTrace, PolicyError> {
    if grid_n < 2 {
        return Err(PolicyError::DomainError {
            reason: format!("grid_n = {grid_n} but at least 2 time points are required"),
        });
    }
    check_domain(t_max, 0.0)?;
    let mut rows = Vec::with_capacity(grid_n);
    for i in 0..grid_n {
        let t = t_max * i as f64 / (grid_n - 1) as f64;
        rows.push(SmokingRow {
            t,
            naive: smoking_naive(t_max, t)?,
            theta: smoking_theta(t_max, t)?,
            theta_squared: smoking_theta_squared(t_max, t)?,
        });
    }
    let theta_fixed = rows.iter().all(|r| r.theta == r.theta_squared);
    Ok(SmokingTrace {
        t_max,
        s_star: s_star()?,
        rows,
        theta_fixed,
    })
}
