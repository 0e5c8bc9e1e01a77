//! Stopping policies and the policy-improvement step.
//!
//! A policy prescribes where to stop; one improvement step reclassifies
//! every state by comparing the immediate payoff `g(x)` against the value
//! `J(x)` of letting the current policy take over strictly after the
//! present instant. States where stopping wins join the stop set, states
//! where waiting wins leave it, and indifferent states keep their current
//! role. A policy this step does not change is an equilibrium: no momentary
//! self has an incentive to deviate from it.
//!
//! States are classified at time zero; the problems treated here are
//! time-homogeneous, so the label depends on the spatial state alone.
//! Payoffs act on `|x|` for the symmetric cases, and the stop sets are
//! finite unions of closed intervals in `|x|`.

pub mod smoking;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

use crate::discounting::{DiscountError, DiscountFunction};
use crate::hitting::{eta, laplace_hitting, EtaContext, HittingError};
use crate::montecarlo::{estimate_j, step_entry, MonteCarloError, MonteCarloSpec, Path};
use crate::numerics::NumericsError;

/// Classification gaps below this are indifference regardless of the
/// statistical error, so zero-variance estimates cannot manufacture strict
/// preferences out of rounding noise.
pub const MARGIN_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyError {
    #[error("invalid stop interval: {reason}")]
    InvalidInterval { reason: String },
    #[error("invalid parameter: {reason}")]
    InvalidParameter { reason: String },
    #[error("argument outside the problem's domain: {reason}")]
    DomainError { reason: String },
    #[error("invalid classification grid: {reason}")]
    InvalidGrid { reason: String },
    #[error("path has no values")]
    EmptyPath,
    #[error("time {t} lies outside the path's span [0, {horizon}]")]
    TimeOutsidePath { t: f64, horizon: f64 },
    #[error("stop boundary near x = {x} cannot be localized to better than the grid step")]
    GridTooCoarse { x: f64 },
    #[error("policy iteration did not reach a fixed point within {steps} improvement steps")]
    NonConvergence { steps: usize },
    #[error("{truncated_fraction:.4} of paths never stopped before the horizon; grow the horizon")]
    HorizonTruncation { truncated_fraction: f64 },
    #[error(transparent)]
    MonteCarlo(#[from] MonteCarloError),
    #[error(transparent)]
    Hitting(#[from] HittingError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Discount(#[from] DiscountError),
}

/// Where a state sits relative to the stop set (in signed coordinates, so
/// `x = 0` inside `[0, h]` counts as interior of `[-h, h]`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Membership {
    Outside,
    Edge,
    Interior,
}

/// A stop set: a finite union of closed intervals of `R+` in `|x|`, kept
/// canonical (sorted, pairwise disjoint, touching intervals merged). The
/// upper end may be infinite, as in the threshold rule `{|x| >= a}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolicyRepr", into = "PolicyRepr")]
pub struct ThresholdPolicy {
    intervals: Vec<(f64, f64)>,
}

#[derive(Serialize, Deserialize)]
struct IntervalRepr {
    lo: f64,
    /// `None` encodes an unbounded interval.
    hi: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct PolicyRepr {
    stop_set: Vec<IntervalRepr>,
}

impl From<ThresholdPolicy> for PolicyRepr {
    fn from(policy: ThresholdPolicy) -> Self {
        PolicyRepr {
            stop_set: policy
                .intervals
                .into_iter()
                .map(|(lo, hi)| IntervalRepr {
                    lo,
                    hi: hi.is_finite().then_some(hi),
                })
                .collect(),
        }
    }
}

impl TryFrom<PolicyRepr> for ThresholdPolicy {
    type Error = PolicyError;

    fn try_from(repr: PolicyRepr) -> Result<Self, PolicyError> {
        ThresholdPolicy::from_intervals(
            repr.stop_set
                .into_iter()
                .map(|iv| (iv.lo, iv.hi.unwrap_or(f64::INFINITY))),
        )
    }
}

impl ThresholdPolicy {
    /// The rule "stop once `|x| >= a`".
    pub fn threshold(a: f64) -> Result<Self, PolicyError> {
        Self::from_intervals([(a, f64::INFINITY)])
    }

    /// The rule that stops immediately everywhere.
    pub fn stop_everywhere() -> Self {
        ThresholdPolicy {
            intervals: vec![(0.0, f64::INFINITY)],
        }
    }

    /// Build from closed `|x|` intervals; overlapping or touching intervals
    /// merge, so the result is canonical. The set may be empty.
    pub fn from_intervals(
        intervals: impl IntoIterator<Item = (f64, f64)>,
    ) -> Result<Self, PolicyError> {
        let mut ivs: Vec<(f64, f64)> = Vec::new();
        for (lo, hi) in intervals {
            if !lo.is_finite() || lo < 0.0 {
                return Err(PolicyError::InvalidInterval {
                    reason: format!("lower end {lo} must be finite and nonnegative"),
                });
            }
            if hi.is_nan() || hi < lo {
                return Err(PolicyError::InvalidInterval {
                    reason: format!("upper end {hi} must be at least the lower end {lo}"),
                });
            }
            ivs.push((lo, hi));
        }
        ivs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for (lo, hi) in ivs {
            match merged.last_mut() {
                Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
                _ => merged.push((lo, hi)),
            }
        }
        Ok(ThresholdPolicy { intervals: merged })
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    /// Smallest stopped `|x|`, if the set is nonempty.
    pub fn lower_boundary(&self) -> Option<f64> {
        self.intervals.first().map(|&(lo, _)| lo)
    }

    /// `Some(a)` when the set is exactly `{|x| >= a}`.
    pub fn as_upper_threshold(&self) -> Option<f64> {
        match self.intervals.as_slice() {
            &[(lo, hi)] if hi == f64::INFINITY => Some(lo),
            _ => None,
        }
    }

    /// Endpoints belong to the set.
    pub fn contains(&self, x: f64) -> bool {
        let r = x.abs();
        self.intervals.iter().any(|&(lo, hi)| r >= lo && r <= hi)
    }

    pub fn membership(&self, x: f64) -> Membership {
        let r = x.abs();
        for &(lo, hi) in &self.intervals {
            if r < lo || r > hi {
                continue;
            }
            // In signed coordinates an interval starting at 0 has no lower
            // edge: [-h, h] is one piece and 0 sits inside it.
            if r == hi || (r == lo && lo > 0.0) {
                return Membership::Edge;
            }
            return Membership::Interior;
        }
        Membership::Outside
    }

    /// Set containment (both canonical, so per-interval cover suffices).
    pub fn subset_of(&self, other: &ThresholdPolicy) -> bool {
        self.intervals
            .iter()
            .all(|&(lo, hi)| other.intervals.iter().any(|&(l, h)| l <= lo && hi <= h))
    }

    /// The set in signed coordinates, sorted: `[lo, hi]` expands to
    /// `[-hi, -lo]` and `[lo, hi]`, collapsing to one piece when `lo = 0`.
    pub fn signed_intervals(&self) -> Vec<(f64, f64)> {
        let mut signed = Vec::with_capacity(2 * self.intervals.len());
        for &(lo, hi) in self.intervals.iter().rev() {
            if lo == 0.0 {
                signed.push((-hi, hi));
            } else {
                signed.push((-hi, -lo));
            }
        }
        for &(lo, hi) in &self.intervals {
            if lo > 0.0 {
                signed.push((lo, hi));
            }
        }
        signed
    }
}

/// The driving dynamics.
#[derive(Clone)]
pub enum DiffusionModel {
    /// `dX = dW`.
    StandardBrownian,
    /// `dX = drift(X) dt + vol(X) dW`, simulated by the Euler scheme.
    Sde {
        drift: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        vol: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    },
    /// `X_s = x exp(rate * s)`, truncated at `horizon`. Deterministic, so
    /// classification is exact.
    DeterministicExponential { rate: f64, horizon: f64 },
}

impl fmt::Debug for DiffusionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiffusionModel::StandardBrownian => f.write_str("StandardBrownian"),
            DiffusionModel::Sde { .. } => f.write_str("Sde { drift: <fn>, vol: <fn> }"),
            DiffusionModel::DeterministicExponential { rate, horizon } => f
                .debug_struct("DeterministicExponential")
                .field("rate", rate)
                .field("horizon", horizon)
                .finish(),
        }
    }
}

impl DiffusionModel {
    pub fn drift(&self, x: f64) -> f64 {
        match self {
            DiffusionModel::StandardBrownian => 0.0,
            DiffusionModel::Sde { drift, .. } => drift(x),
            DiffusionModel::DeterministicExponential { rate, .. } => rate * x,
        }
    }

    pub fn vol(&self, x: f64) -> f64 {
        match self {
            DiffusionModel::StandardBrownian => 1.0,
            DiffusionModel::Sde { vol, .. } => vol(x),
            DiffusionModel::DeterministicExponential { .. } => 0.0,
        }
    }

    /// Spot-check a claimed Lipschitz constant on random pairs from
    /// `[lo, hi]` for both coefficients. A `false` is a proof of failure; a
    /// `true` is only as strong as the sample.
    pub fn lipschitz_spot_check(&self, k: f64, lo: f64, hi: f64, pairs: usize, seed: u64) -> bool {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..pairs {
            let u = rng.gen_range(lo..=hi);
            let v = rng.gen_range(lo..=hi);
            let slack = k * (u - v).abs() + 1e-12;
            if (self.drift(u) - self.drift(v)).abs() > slack
                || (self.vol(u) - self.vol(v)).abs() > slack
            {
                return false;
            }
        }
        true
    }
}

/// Reward collected on stopping.
#[derive(Clone)]
pub enum Payoff {
    /// `g(x) = |x|`.
    AbsValue,
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for Payoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Payoff::AbsValue => f.write_str("AbsValue"),
            Payoff::Custom(_) => f.write_str("Custom(<fn>)"),
        }
    }
}

impl Payoff {
    pub fn evaluate(&self, x: f64) -> f64 {
        match self {
            Payoff::AbsValue => x.abs(),
            Payoff::Custom(g) => g(x),
        }
    }
}

/// Verdict of the improvement comparison at one state: stopping strictly
/// better (`S`), continuation strictly better (`C`), or indifferent within
/// the margin (`I`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegionLabel {
    S,
    C,
    I,
}

impl fmt::Display for RegionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegionLabel::S => "S",
            RegionLabel::C => "C",
            RegionLabel::I => "I",
        })
    }
}

/// One state's comparison of stopping now against deferring to the policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionClassification {
    pub x: f64,
    pub label: RegionLabel,
    pub immediate_payoff: f64,
    /// Value of letting the policy act strictly after the present instant.
    pub continuation_value: f64,
    /// Zero when the value came from a closed form or a degenerate sample.
    pub std_error: f64,
}

impl RegionClassification {
    /// Indifference half-width: three standard errors, floored so exact
    /// values still get a band.
    pub fn margin(&self) -> f64 {
        (3.0 * self.std_error).max(MARGIN_FLOOR)
    }
}

/// Record of repeated improvement steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    /// Visited policies, starting with the initial one. When converged, the
    /// last two entries are equal as sets.
    pub policies: Vec<ThresholdPolicy>,
    /// Per transition: did the stop set grow weakly? The first transition
    /// from an arbitrary starting guess may legitimately shrink.
    pub monotone_ok: Vec<bool>,
    pub converged: bool,
    /// Improvement steps taken, `policies.len() - 1`.
    pub steps: usize,
}

/// First time in `[t, horizon]` at which the path's state lies in the stop
/// set, `+inf` if it never does. `strict` asks for entry strictly after `t`
/// as seen from the set's boundary: interior states still return `t` (the
/// set is entered again instantly there), while boundary states are scanned
/// from the next step on. Detection between grid points uses the path's
/// bridge stream when it carries one (unit volatility), reporting the
/// midpoint of the detecting step; without one this is plain grid
/// monitoring reporting the grid instant. Bridge draws are consumed from
/// the step containing `t` onward, so a scan from `t = 0` reproduces the
/// generating run's crossing decisions.
pub fn first_entry(
    policy: &ThresholdPolicy,
    path: &Path,
    t: f64,
    strict: bool,
) -> Result<f64, PolicyError> {
    if path.values.is_empty() {
        return Err(PolicyError::EmptyPath);
    }
    let horizon = path.horizon();
    if !t.is_finite() || t < 0.0 || t > horizon * (1.0 + 1e-12) + f64::MIN_POSITIVE {
        return Err(PolicyError::TimeOutsidePath { t, horizon });
    }
    // First grid index at or after t (tolerating rounding in t itself).
    let j0 = (((t / path.dt) - 1e-9).ceil().max(0.0) as usize).min(path.values.len() - 1);
    let x_t = path.values[j0];

    match (strict, policy.membership(x_t)) {
        (false, Membership::Edge | Membership::Interior) => return Ok(t),
        (true, Membership::Interior) => return Ok(t),
        _ => {}
    }

    let signed = policy.signed_intervals();
    let mut bridge = path.bridge_seed.map(|(seed, stream)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        rng
    });
    for j in j0..path.values.len() - 1 {
        let hit = step_entry(
            &signed,
            path.values[j],
            path.values[j + 1],
            path.dt,
            bridge.as_mut(),
        );
        if hit.is_some() {
            // Midpoint of the detecting step under bridged detection, the
            // monitoring instant itself under plain grid monitoring.
            return Ok(if bridge.is_some() {
                path.time(j) + 0.5 * path.dt
            } else {
                path.time(j + 1)
            });
        }
    }
    Ok(f64::INFINITY)
}

/// Classify one state against a policy by the improvement comparison,
/// in the convention that larger values are better.
///
/// The continuation value is exact where a closed form or a deterministic
/// path gives one: states inside the set (instant re-entry), standard
/// Brownian motion with the absolute-value payoff, a pure threshold rule
/// and a hyperbolic or exponential discount, and the deterministic
/// exponential model with any payoff. Boundary states and everything else
/// are estimated by simulation under `mc`; more than 0.1% truncated paths
/// is an error rather than a silently biased label.
pub fn classify_state(
    model: &DiffusionModel,
    discount: &DiscountFunction,
    payoff: &Payoff,
    policy: &ThresholdPolicy,
    x: f64,
    mc: &MonteCarloSpec,
) -> Result<RegionClassification, PolicyError> {
    if !x.is_finite() {
        return Err(PolicyError::InvalidParameter {
            reason: format!("state {x} must be finite"),
        });
    }
    let g = payoff.evaluate(x);
    if !g.is_finite() {
        return Err(PolicyError::InvalidParameter {
            reason: format!("payoff at {x} is not finite"),
        });
    }

    let (j, std_error) = match policy.membership(x) {
        Membership::Interior => (g, 0.0),
        Membership::Outside => continuation_value(model, discount, payoff, policy, x, mc)?,
        // The boundary has no closed form under strict restart; simulate.
        Membership::Edge => simulated_value(model, discount, payoff, policy, x, mc)?,
    };

    let margin = (3.0 * std_error).max(MARGIN_FLOOR);
    let gap = g - j;
    let label = if gap > margin {
        RegionLabel::S
    } else if gap < -margin {
        RegionLabel::C
    } else {
        RegionLabel::I
    };
    Ok(RegionClassification {
        x,
        label,
        immediate_payoff: g,
        continuation_value: j,
        std_error,
    })
}

fn simulated_value(
    model: &DiffusionModel,
    discount: &DiscountFunction,
    payoff: &Payoff,
    policy: &ThresholdPolicy,
    x: f64,
    mc: &MonteCarloSpec,
) -> Result<(f64, f64), PolicyError> {
    let est = estimate_j(model, discount, payoff, policy, x, true, mc)?;
    if est.horizon_truncation_warning() {
        return Err(PolicyError::HorizonTruncation {
            truncated_fraction: est.truncated_fraction,
        });
    }
    Ok((est.mean, est.std_error))
}

/// Continuation value for a state outside the set.
fn continuation_value(
    model: &DiffusionModel,
    discount: &DiscountFunction,
    payoff: &Payoff,
    policy: &ThresholdPolicy,
    x: f64,
    mc: &MonteCarloSpec,
) -> Result<(f64, f64), PolicyError> {
    if let DiffusionModel::DeterministicExponential { rate, horizon } = model {
        return deterministic_value(*rate, *horizon, discount, payoff, policy, x);
    }
    if matches!(model, DiffusionModel::StandardBrownian) && matches!(payoff, Payoff::AbsValue) {
        if let Some(a) = policy.as_upper_threshold() {
            if a > 0.0 {
                match discount {
                    DiscountFunction::Hyperbolic { beta } => {
                        let ctx = EtaContext::new(*beta)?;
                        return Ok((eta(&ctx, x.abs(), a)?, 0.0));
                    }
                    DiscountFunction::Exponential { rho } => {
                        let lambda = (2.0 * rho).sqrt();
                        return Ok((a * laplace_hitting(x.abs(), a, lambda)?, 0.0));
                    }
                    _ => {}
                }
            }
        }
    }
    simulated_value(model, discount, payoff, policy, x, mc)
}

/// Exact continuation value under `X_s = x exp(rate s)`: `|X|` is monotone,
/// so the entry time onto the nearest approaching edge is explicit, and a
/// miss pays the discounted terminal value at the model's horizon.
fn deterministic_value(
    rate: f64,
    horizon: f64,
    discount: &DiscountFunction,
    payoff: &Payoff,
    policy: &ThresholdPolicy,
    x: f64,
) -> Result<(f64, f64), PolicyError> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(PolicyError::InvalidParameter {
            reason: format!("deterministic model horizon {horizon} must be finite and positive"),
        });
    }
    let r = x.abs();
    let target = if rate > 0.0 && r > 0.0 {
        // |X| grows: first lower edge at or above r.
        policy
            .intervals()
            .iter()
            .map(|&(lo, _)| lo)
            .find(|&lo| lo >= r)
    } else if rate < 0.0 && r > 0.0 {
        // |X| decays toward 0 without reaching it: last positive upper edge
        // at or below r.
        policy
            .intervals()
            .iter()
            .rev()
            .map(|&(_, hi)| hi)
            .find(|&hi| hi <= r && hi > 0.0)
    } else {
        None
    };
    let entry_time = target.map(|edge| (edge / r).ln() / rate);
    let value = match (entry_time, target) {
        (Some(s), Some(edge)) if s <= horizon => {
            discount.evaluate(s)? * payoff.evaluate(x.signum() * edge)
        }
        _ => discount.evaluate(horizon)? * payoff.evaluate(x * (rate * horizon).exp()),
    };
    Ok((value, 0.0))
}

/// SplitMix-style mix of the master seed and a state index, so grid states
/// get decorrelated, thread-count-independent streams.
fn state_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn check_grid(grid: &[f64]) -> Result<(), PolicyError> {
    if grid.is_empty() {
        return Err(PolicyError::InvalidGrid {
            reason: "grid is empty".into(),
        });
    }
    if grid.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(PolicyError::InvalidGrid {
            reason: "grid states must be finite and nonnegative".into(),
        });
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(PolicyError::InvalidGrid {
            reason: "grid must be strictly increasing".into(),
        });
    }
    Ok(())
}

/// Classify every grid state. Each state draws from its own seed derived
/// from the master seed and its index, so results do not depend on thread
/// count or evaluation order.
pub fn classify_grid(
    model: &DiffusionModel,
    discount: &DiscountFunction,
    payoff: &Payoff,
    policy: &ThresholdPolicy,
    grid: &[f64],
    mc: &MonteCarloSpec,
) -> Result<Vec<RegionClassification>, PolicyError> {
    use rayon::prelude::*;
    check_grid(grid)?;
    grid.par_iter()
        .enumerate()
        .map(|(i, &x)| {
            let state_mc = MonteCarloSpec {
                master_seed: state_seed(mc.master_seed, i as u64),
                ..mc.clone()
            };
            classify_state(model, discount, payoff, policy, x, &state_mc)
        })
        .collect()
}

/// One policy-improvement step on a grid: the new stop set collects the
/// states labeled `S` plus the indifferent states that already stopped, and
/// consecutive runs become closed intervals. A run touching the top of the
/// grid extends to infinity (the grid is assumed to cover every boundary
/// feature, and the tails here are threshold-like). An isolated single-state
/// run away from the grid ends, of either polarity, means the boundary
/// moved inside one grid cell and the grid is too coarse to represent it.
pub fn theta_step(
    model: &DiffusionModel,
    discount: &DiscountFunction,
    payoff: &Payoff,
    policy: &ThresholdPolicy,
    grid: &[f64],
    mc: &MonteCarloSpec,
) -> Result<ThresholdPolicy, PolicyError> {
    let labels = classify_grid(model, discount, payoff, policy, grid, mc)?;
    let stopped: Vec<bool> = labels
        .iter()
        .map(|c| c.label == RegionLabel::S || (c.label == RegionLabel::I && policy.contains(c.x)))
        .collect();

    let n = stopped.len();
    for i in 1..n.saturating_sub(1) {
        if stopped[i] != stopped[i - 1] && stopped[i] != stopped[i + 1] {
            return Err(PolicyError::GridTooCoarse { x: grid[i] });
        }
    }

    let mut intervals = Vec::new();
    let mut run_start: Option<usize> = None;
    for i in 0..=n {
        match (run_start, i < n && stopped[i]) {
            (None, true) => run_start = Some(i),
            (Some(s), false) => {
                let hi = if i == n { f64::INFINITY } else { grid[i - 1] };
                intervals.push((grid[s], hi));
                run_start = None;
            }
            _ => {}
        }
    }
    ThresholdPolicy::from_intervals(intervals)
}

/// Iterate the improvement step until the policy repeats, recording every
/// visited policy. Convergence is set equality of consecutive policies; the
/// final fixed point is an equilibrium at the grid's resolution.
pub fn iterate(
    model: &DiffusionModel,
    discount: &DiscountFunction,
    payoff: &Payoff,
    policy0: &ThresholdPolicy,
    grid: &[f64],
    mc: &MonteCarloSpec,
    max_steps: usize,
) -> Result<IterationTrace, PolicyError> {
    let mut policies = vec![policy0.clone()];
    let mut monotone_ok = Vec::new();
    for step in 0..max_steps {
        let current = policies.last().unwrap();
        let next = theta_step(model, discount, payoff, current, grid, mc)?;
        monotone_ok.push(current.subset_of(&next));
        let fixed = next == *policies.last().unwrap();
        policies.push(next);
        if fixed {
            return Ok(IterationTrace {
                policies,
                monotone_ok,
                converged: true,
                steps: step + 1,
            });
        }
    }
    Err(PolicyError::NonConvergence { steps: max_steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bessel::BesselProblem;
    use crate::montecarlo::simulate_paths;
    use approx::assert_abs_diff_eq;

    fn hyperbolic() -> DiscountFunction {
        DiscountFunction::hyperbolic(1.0).unwrap()
    }

    fn mc(n_paths: usize, dt: f64, horizon: f64) -> MonteCarloSpec {
        MonteCarloSpec {
            n_paths,
            dt,
            horizon,
            master_seed: 1729,
            bridge_correction: true,
        }
    }

    fn default_grid() -> Vec<f64> {
        (0..=2000).map(|i| i as f64 * (4.0 / 2000.0)).collect()
    }

    mod stop_sets {
        use super::*;

        #[test]
        fn canonicalization_sorts_and_merges() {
            let p = ThresholdPolicy::from_intervals([(2.0, 3.0), (0.5, 1.0), (1.0, 1.5)]).unwrap();
            assert_eq!(p.intervals(), &[(0.5, 1.5), (2.0, 3.0)]);
            let q = ThresholdPolicy::from_intervals([(0.0, 1.0), (0.5, f64::INFINITY)]).unwrap();
            assert_eq!(q.intervals(), &[(0.0, f64::INFINITY)]);
            assert_eq!(q, ThresholdPolicy::stop_everywhere());
            assert_eq!(
                ThresholdPolicy::from_intervals([]).unwrap().intervals(),
                &[]
            );
        }

        #[test]
        fn invalid_intervals_are_rejected() {
            assert!(ThresholdPolicy::from_intervals([(-0.1, 1.0)]).is_err());
            assert!(ThresholdPolicy::from_intervals([(1.0, 0.5)]).is_err());
            assert!(ThresholdPolicy::from_intervals([(f64::NAN, 1.0)]).is_err());
            assert!(ThresholdPolicy::from_intervals([(0.0, f64::NAN)]).is_err());
            assert!(ThresholdPolicy::threshold(f64::INFINITY).is_err());
        }

        #[test]
        fn membership_honors_closed_endpoints() {
            let p = ThresholdPolicy::from_intervals([(1.0, 2.0)]).unwrap();
            for x in [1.0, -1.0, 2.0, -2.0] {
                assert!(p.contains(x));
                assert_eq!(p.membership(x), Membership::Edge);
            }
            assert_eq!(p.membership(1.5), Membership::Interior);
            assert_eq!(p.membership(-1.5), Membership::Interior);
            assert_eq!(p.membership(0.999), Membership::Outside);
            assert_eq!(p.membership(2.001), Membership::Outside);
            assert!(!p.contains(f64::NAN));

            // An interval reaching 0 has no inner edge in signed space.
            let q = ThresholdPolicy::from_intervals([(0.0, 1.0)]).unwrap();
            assert_eq!(q.membership(0.0), Membership::Interior);
            assert_eq!(q.membership(1.0), Membership::Edge);

            let point = ThresholdPolicy::from_intervals([(1.0, 1.0)]).unwrap();
            assert_eq!(point.membership(1.0), Membership::Edge);
            assert_eq!(point.membership(-1.0), Membership::Edge);
        }

        #[test]
        fn signed_expansion_mirrors_the_set() {
            let p = ThresholdPolicy::from_intervals([(0.5, 1.0), (2.0, f64::INFINITY)]).unwrap();
            assert_eq!(
                p.signed_intervals(),
                vec![
                    (f64::NEG_INFINITY, -2.0),
                    (-1.0, -0.5),
                    (0.5, 1.0),
                    (2.0, f64::INFINITY)
                ]
            );
            let q = ThresholdPolicy::from_intervals([(0.0, 1.0)]).unwrap();
            assert_eq!(q.signed_intervals(), vec![(-1.0, 1.0)]);
            assert_eq!(
                ThresholdPolicy::stop_everywhere().signed_intervals(),
                vec![(f64::NEG_INFINITY, f64::INFINITY)]
            );
        }

        #[test]
        fn subset_and_threshold_views() {
            let narrow = ThresholdPolicy::threshold(1.0).unwrap();
            let wide = ThresholdPolicy::threshold(0.5).unwrap();
            assert!(narrow.subset_of(&wide));
            assert!(!wide.subset_of(&narrow));
            assert!(narrow.subset_of(&narrow));
            let split = ThresholdPolicy::from_intervals([(0.2, 0.4), (1.0, 2.0)]).unwrap();
            assert!(!split.subset_of(&narrow));
            assert!(split.subset_of(&ThresholdPolicy::stop_everywhere()));

            assert_eq!(narrow.as_upper_threshold(), Some(1.0));
            assert_eq!(ThresholdPolicy::stop_everywhere().as_upper_threshold(), Some(0.0));
            assert_eq!(split.as_upper_threshold(), None);
            assert_eq!(split.lower_boundary(), Some(0.2));
        }

        #[test]
        fn serde_uses_null_for_unbounded_tails() {
            let p = ThresholdPolicy::from_intervals([(0.5, 1.0), (2.0, f64::INFINITY)]).unwrap();
            let json = serde_json::to_string(&p).unwrap();
            assert_eq!(
                json,
                r#"{"stop_set":[{"lo":0.5,"hi":1.0},{"lo":2.0,"hi":null}]}"#
            );
            let back: ThresholdPolicy = serde_json::from_str(&json).unwrap();
            assert_eq!(back, p);
            // Deserialization canonicalizes and validates.
            let merged: ThresholdPolicy =
                serde_json::from_str(r#"{"stop_set":[{"lo":1.0,"hi":2.0},{"lo":0.5,"hi":1.2}]}"#)
                    .unwrap();
            assert_eq!(merged.intervals(), &[(0.5, 2.0)]);
            assert!(serde_json::from_str::<ThresholdPolicy>(
                r#"{"stop_set":[{"lo":-1.0,"hi":null}]}"#
            )
            .is_err());
        }
    }

    mod models {
        use super::*;

        #[test]
        fn lipschitz_spot_check_separates_constants() {
            assert!(DiffusionModel::StandardBrownian.lipschitz_spot_check(0.0, -5.0, 5.0, 64, 7));
            let affine = DiffusionModel::Sde {
                drift: Arc::new(|x| 2.0 * x),
                vol: Arc::new(|_| 1.0),
            };
            assert!(affine.lipschitz_spot_check(2.0, -5.0, 5.0, 256, 7));
            assert!(!affine.lipschitz_spot_check(1.9, -5.0, 5.0, 256, 7));
            let det = DiffusionModel::DeterministicExponential {
                rate: -0.5,
                horizon: 10.0,
            };
            assert!(det.lipschitz_spot_check(0.5, -5.0, 5.0, 256, 7));
            assert_eq!(det.vol(3.0), 0.0);
            assert_eq!(det.drift(3.0), -1.5);
        }
    }

    mod entries {
        use super::*;

        fn plain_path(dt: f64, values: Vec<f64>) -> Path {
            Path {
                dt,
                values,
                bridge_seed: None,
            }
        }

        #[test]
        fn immediate_and_grid_entries() {
            let policy = ThresholdPolicy::threshold(1.0).unwrap();
            let path = plain_path(0.5, vec![0.0, 0.5, 1.2, 0.3]);
            // Crosses during the second step, reported at its end.
            assert_eq!(first_entry(&policy, &path, 0.0, false).unwrap(), 1.0);
            assert_eq!(first_entry(&policy, &path, 0.0, true).unwrap(), 1.0);
            // Starting inside the set stops at once, strict or not: the
            // state is interior, so the set is re-entered instantly.
            assert_eq!(first_entry(&policy, &path, 1.0, false).unwrap(), 1.0);
            assert_eq!(first_entry(&policy, &path, 1.0, true).unwrap(), 1.0);
            // Stop-everywhere stops at the asked time.
            let everywhere = ThresholdPolicy::stop_everywhere();
            assert_eq!(first_entry(&everywhere, &path, 0.7, false).unwrap(), 0.7);
            assert_eq!(first_entry(&everywhere, &path, 0.7, true).unwrap(), 0.7);
            // Never entering yields the +inf sentinel.
            let far = ThresholdPolicy::threshold(50.0).unwrap();
            assert_eq!(first_entry(&far, &path, 0.0, false).unwrap(), f64::INFINITY);
        }

        #[test]
        fn strict_from_the_boundary_scans_the_next_step() {
            let policy = ThresholdPolicy::threshold(1.0).unwrap();
            // With a bridge stream the touching segment is a sure hit,
            // timed at the midpoint of the detecting step.
            let bridged = Path {
                dt: 0.25,
                values: vec![1.0, 0.6, 0.2],
                bridge_seed: Some((7, 1)),
            };
            assert_eq!(first_entry(&policy, &bridged, 0.0, true).unwrap(), 0.125);
            assert_eq!(first_entry(&policy, &bridged, 0.0, false).unwrap(), 0.0);
            // Without one, plain monitoring sees only grid states.
            let plain = plain_path(0.25, vec![1.0, 0.6, 0.2]);
            assert_eq!(
                first_entry(&policy, &plain, 0.0, true).unwrap(),
                f64::INFINITY
            );
        }

        #[test]
        fn bad_inputs_are_rejected() {
            let policy = ThresholdPolicy::threshold(1.0).unwrap();
            let empty = plain_path(0.5, vec![]);
            assert_eq!(
                first_entry(&policy, &empty, 0.0, false),
                Err(PolicyError::EmptyPath)
            );
            let path = plain_path(0.5, vec![0.0, 0.1]);
            assert!(matches!(
                first_entry(&policy, &path, 2.0, false),
                Err(PolicyError::TimeOutsidePath { .. })
            ));
            assert!(matches!(
                first_entry(&policy, &path, -0.5, false),
                Err(PolicyError::TimeOutsidePath { .. })
            ));
        }

        #[test]
        fn entry_times_reproduce_the_passage_time_law() {
            // E[exp(-T/2)] for the two-sided unit barrier from 0 is
            // sech(1); estimate it from stored paths via first_entry.
            let expected = crate::hitting::laplace_hitting(0.0, 1.0, 1.0).unwrap();
            let policy = ThresholdPolicy::threshold(1.0).unwrap();
            let mut sum = 0.0;
            let mut sq = 0.0;
            let batches = 10;
            let per_batch = 200;
            for batch in 0..batches {
                let spec = MonteCarloSpec {
                    n_paths: per_batch,
                    dt: 1e-3,
                    horizon: 10.0,
                    master_seed: 1729 + batch,
                    bridge_correction: true,
                };
                let paths = simulate_paths(&DiffusionModel::StandardBrownian, 0.0, &spec).unwrap();
                for path in &paths {
                    let t = first_entry(&policy, &path, 0.0, false).unwrap();
                    let v = (-t / 2.0).exp(); // exp(-inf) = 0 for truncated paths
                    sum += v;
                    sq += v * v;
                }
            }
            let n = (batches as usize * per_batch) as f64;
            let mean = sum / n;
            let se = ((sq / n - mean * mean) / n).sqrt();
            assert!(
                (mean - expected).abs() < 3.0 * se,
                "mean {mean} vs sech(1) = {expected} (se {se})"
            );
        }
    }

    mod classification {
        use super::*;

        #[test]
        fn threshold_states_split_by_the_crossing() {
            // Under the unit threshold rule, the comparison flips exactly
            // where the continuation value crosses the payoff.
            let model = DiffusionModel::StandardBrownian;
            let spec = mc(500, 1e-3, 1.0);
            let tau1 = ThresholdPolicy::threshold(1.0).unwrap();

            let edge = classify_state(&model, &hyperbolic(), &Payoff::AbsValue, &tau1, 1.0, &spec)
                .unwrap();
            assert_eq!(edge.label, RegionLabel::S);
            assert_eq!(edge.std_error, 0.0);
            assert_abs_diff_eq!(edge.continuation_value, 1.0 / (1.0 + 5e-4), epsilon = 1e-15);

            for (x, want) in [
                (0.5, RegionLabel::C),
                (0.95, RegionLabel::S),
                (0.922, RegionLabel::S),
                (1.5, RegionLabel::I),
                (-0.5, RegionLabel::C),
            ] {
                let c = classify_state(&model, &hyperbolic(), &Payoff::AbsValue, &tau1, x, &spec)
                    .unwrap();
                assert_eq!(c.label, want, "x = {x}");
                if c.label == RegionLabel::I {
                    assert_eq!(c.continuation_value, c.immediate_payoff);
                }
            }

            // Narrow rules below the fixed-point band leave waiting strictly
            // better everywhere outside.
            let tau05 = ThresholdPolicy::threshold(0.5).unwrap();
            let c = classify_state(&model, &hyperbolic(), &Payoff::AbsValue, &tau05, 0.2, &spec)
                .unwrap();
            assert_eq!(c.label, RegionLabel::C);
            assert!(c.continuation_value > 0.4);
        }

        #[test]
        fn closed_forms_match_quadrature_and_transform() {
            let model = DiffusionModel::StandardBrownian;
            let spec = mc(500, 1e-3, 1.0);
            let tau1 = ThresholdPolicy::threshold(1.0).unwrap();
            let c = classify_state(&model, &hyperbolic(), &Payoff::AbsValue, &tau1, 0.5, &spec)
                .unwrap();
            let ctx = EtaContext::new(1.0).unwrap();
            assert_abs_diff_eq!(c.continuation_value, eta(&ctx, 0.5, 1.0).unwrap(), epsilon = 0.0);
            assert_eq!(c.std_error, 0.0);

            let expo = DiscountFunction::exponential(0.5).unwrap();
            let theta_star = 1.1996786402577338; // root of theta tanh(theta) = 1
            let policy = ThresholdPolicy::threshold(theta_star).unwrap();
            let below =
                classify_state(&model, &expo, &Payoff::AbsValue, &policy, 0.9, &spec).unwrap();
            assert_eq!(below.label, RegionLabel::C);
            assert_abs_diff_eq!(
                below.continuation_value,
                theta_star * laplace_hitting(0.9, theta_star, 1.0).unwrap(),
                epsilon = 0.0
            );
            let inside =
                classify_state(&model, &expo, &Payoff::AbsValue, &policy, 1.3, &spec).unwrap();
            assert_eq!(inside.label, RegionLabel::I);
        }

        #[test]
        fn sampled_route_agrees_with_the_passage_law() {
            // Quasi-hyperbolic discounting has no closed form here, so the
            // label comes from simulation: J = 0.8 E[exp(-0.3 T)].
            let model = DiffusionModel::StandardBrownian;
            let discount = DiscountFunction::quasi_hyperbolic(0.8, 0.3).unwrap();
            let tau1 = ThresholdPolicy::threshold(1.0).unwrap();
            let expected = 0.8 * laplace_hitting(0.5, 1.0, 0.6f64.sqrt()).unwrap();
            let c = classify_state(
                &model,
                &discount,
                &Payoff::AbsValue,
                &tau1,
                0.5,
                &mc(4_000, 2e-3, 30.0),
            )
            .unwrap();
            assert!(c.std_error > 0.0);
            assert!(
                (c.continuation_value - expected).abs() < 4.0 * c.std_error,
                "J = {} vs {expected} (se {})",
                c.continuation_value,
                c.std_error
            );
            assert_eq!(c.label, RegionLabel::C);

            // A clear gap keeps its label as the sample grows.
            let finer = classify_state(
                &model,
                &discount,
                &Payoff::AbsValue,
                &tau1,
                0.5,
                &mc(8_000, 2e-3, 30.0),
            )
            .unwrap();
            assert_eq!(finer.label, RegionLabel::C);
            assert!(finer.std_error < c.std_error);
        }

        #[test]
        fn deterministic_models_classify_exactly() {
            let tau05 = ThresholdPolicy::threshold(0.5).unwrap();
            let g = Payoff::AbsValue;
            let spec = mc(100, 1e-3, 1.0);

            // Decay from above a bounded piece: entry at s = ln(2) / 0.5.
            let band = ThresholdPolicy::from_intervals([(0.2, 0.5)]).unwrap();
            let decay = DiffusionModel::DeterministicExponential {
                rate: -0.5,
                horizon: 10.0,
            };
            let c = classify_state(&decay, &hyperbolic(), &g, &band, 1.0, &spec).unwrap();
            let s = 2.0f64.ln() / 0.5;
            assert_abs_diff_eq!(c.continuation_value, 0.5 / (1.0 + s), epsilon = 1e-15);
            assert_eq!(c.std_error, 0.0);
            assert_eq!(c.label, RegionLabel::S);

            // Growth from below reaches the barrier but pays discounted.
            let growth = DiffusionModel::DeterministicExponential {
                rate: 0.3,
                horizon: 10.0,
            };
            let c = classify_state(&growth, &hyperbolic(), &g, &tau05, -0.4, &spec).unwrap();
            let s = (0.5f64 / 0.4).ln() / 0.3;
            assert_abs_diff_eq!(c.continuation_value, 0.5 / (1.0 + s), epsilon = 1e-15);
            assert_eq!(c.label, RegionLabel::S);

            // Decay from below never enters; the horizon value is paid.
            let c = classify_state(&decay, &hyperbolic(), &g, &tau05, 0.3, &spec).unwrap();
            let terminal = 0.3 * (-5.0f64).exp();
            assert_abs_diff_eq!(c.continuation_value, terminal / 11.0, epsilon = 1e-15);
            assert_eq!(c.label, RegionLabel::S);
        }

        #[test]
        fn unresolvable_horizons_error_instead_of_mislabeling() {
            // Quasi-hyperbolic discounting forces the sampled route, where a
            // barrier far beyond the horizon leaves almost no path stopped.
            let policy = ThresholdPolicy::threshold(3.0).unwrap();
            let err = classify_state(
                &DiffusionModel::StandardBrownian,
                &DiscountFunction::quasi_hyperbolic(0.8, 0.3).unwrap(),
                &Payoff::AbsValue,
                &policy,
                0.0,
                &mc(200, 1e-3, 0.05),
            )
            .unwrap_err();
            assert!(matches!(err, PolicyError::HorizonTruncation { .. }));
            assert!(classify_state(
                &DiffusionModel::StandardBrownian,
                &hyperbolic(),
                &Payoff::AbsValue,
                &policy,
                f64::NAN,
                &mc(200, 1e-3, 1.0),
            )
            .is_err());
        }

        #[test]
        fn grid_classification_is_reproducible() {
            let model = DiffusionModel::StandardBrownian;
            let tau1 = ThresholdPolicy::threshold(1.0).unwrap();
            let grid: Vec<f64> = (0..=40).map(|i| i as f64 * 0.05).collect();
            let spec = mc(500, 1e-3, 1.0);
            let a = classify_grid(&model, &hyperbolic(), &Payoff::AbsValue, &tau1, &grid, &spec)
                .unwrap();
            let b = classify_grid(&model, &hyperbolic(), &Payoff::AbsValue, &tau1, &grid, &spec)
                .unwrap();
            assert_eq!(a, b);
            assert_eq!(a.len(), grid.len());
            assert!(check_grid(&[]).is_err());
            assert!(check_grid(&[0.0, 0.0]).is_err());
            assert!(check_grid(&[-1.0, 0.0]).is_err());
            assert!(check_grid(&[0.0, f64::NAN]).is_err());
        }
    }

    mod improvement {
        use super::*;

        #[test]
        fn step_cuts_the_naive_threshold_to_the_crossing() {
            let problem = BesselProblem::new(1.0).unwrap();
            let x_star = problem.x_star(1.0).unwrap();
            let next = theta_step(
                &DiffusionModel::StandardBrownian,
                &hyperbolic(),
                &Payoff::AbsValue,
                &ThresholdPolicy::threshold(1.0).unwrap(),
                &default_grid(),
                &mc(500, 1e-3, 1.0),
            )
            .unwrap();
            let a = next.as_upper_threshold().expect("threshold-type result");
            assert!(
                (a - x_star).abs() <= 4.0 / 2000.0 + 1e-12,
                "boundary {a} vs crossing {x_star}"
            );
        }

        #[test]
        fn fixed_points_stay_fixed() {
            let grid = default_grid();
            let spec = mc(500, 1e-3, 1.0);
            // Threshold inside the fixed-point band, placed exactly on a
            // grid state so reconstruction is bitwise.
            let a = grid[250];
            let tau = ThresholdPolicy::threshold(a).unwrap();
            let next = theta_step(
                &DiffusionModel::StandardBrownian,
                &hyperbolic(),
                &Payoff::AbsValue,
                &tau,
                &grid,
                &spec,
            )
            .unwrap();
            assert_eq!(next, tau);

            let everywhere = ThresholdPolicy::stop_everywhere();
            let next = theta_step(
                &DiffusionModel::StandardBrownian,
                &hyperbolic(),
                &Payoff::AbsValue,
                &everywhere,
                &grid,
                &spec,
            )
            .unwrap();
            assert_eq!(next, everywhere);
        }

        #[test]
        fn isolated_labels_mean_the_grid_is_too_coarse() {
            // A deterministic model and a bump payoff produce stop/continue
            // flips inside one cell of a 3-state grid.
            let model = DiffusionModel::DeterministicExponential {
                rate: 1.0,
                horizon: 5.0,
            };
            let bump = Payoff::Custom(Arc::new(|x: f64| {
                10.0 * (1.0 - 5.0 * (x.abs() - 1.0).powi(2)).max(0.0)
            }));
            let point = ThresholdPolicy::from_intervals([(1.0, 1.0)]).unwrap();
            let err = theta_step(
                &model,
                &hyperbolic(),
                &bump,
                &point,
                &[0.5, 1.0, 1.5],
                &mc(100, 1e-3, 1.0),
            )
            .unwrap_err();
            assert!(matches!(err, PolicyError::GridTooCoarse { x } if x == 1.0));
        }

        #[test]
        fn iteration_from_the_naive_rule_converges_in_two_steps() {
            let problem = BesselProblem::new(1.0).unwrap();
            let x_star = problem.x_star(1.0).unwrap();
            let trace = iterate(
                &DiffusionModel::StandardBrownian,
                &hyperbolic(),
                &Payoff::AbsValue,
                &ThresholdPolicy::threshold(1.0).unwrap(),
                &default_grid(),
                &mc(500, 1e-3, 1.0),
                10,
            )
            .unwrap();
            assert!(trace.converged);
            assert_eq!(trace.steps, 2);
            assert_eq!(trace.policies.len(), 3);
            assert_eq!(trace.policies[1], trace.policies[2]);
            // The cut grows the stop set, and the confirmation is trivially
            // monotone.
            assert_eq!(trace.monotone_ok, vec![true, true]);
            let a = trace.policies[2].as_upper_threshold().unwrap();
            assert!((a - x_star).abs() <= 4.0 / 2000.0 + 1e-12);

            // A run capped before confirmation reports non-convergence.
            let err = iterate(
                &DiffusionModel::StandardBrownian,
                &hyperbolic(),
                &Payoff::AbsValue,
                &ThresholdPolicy::threshold(1.0).unwrap(),
                &default_grid(),
                &mc(500, 1e-3, 1.0),
                1,
            )
            .unwrap_err();
            assert_eq!(err, PolicyError::NonConvergence { steps: 1 });
        }

        #[test]
        fn exponential_discounting_fixes_its_optimal_threshold() {
            // With exponential discounting the improvement step pins the
            // classical optimal threshold theta*/sqrt(2 rho); the grid can
            // shift it by at most one cell.
            let expo = DiscountFunction::exponential(0.5).unwrap();
            let theta_star = 1.1996786402577338;
            let trace = iterate(
                &DiffusionModel::StandardBrownian,
                &expo,
                &Payoff::AbsValue,
                &ThresholdPolicy::threshold(theta_star).unwrap(),
                &default_grid(),
                &mc(500, 1e-3, 1.0),
                10,
            )
            .unwrap();
            assert!(trace.converged);
            assert!(trace.steps <= 3);
            let a = trace.policies.last().unwrap().as_upper_threshold().unwrap();
            assert!(
                (a - theta_star).abs() <= 4.0 / 2000.0 + 1e-12,
                "fixed threshold {a} vs {theta_star}"
            );
            // Off-grid starts may snap outward once; afterwards growth holds.
            assert!(trace.monotone_ok[1..].iter().all(|&ok| ok));
        }
    }
}
