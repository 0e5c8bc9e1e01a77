//! Path simulation and discounted-payoff estimation.
//!
//! Euler-Maruyama paths, first-entry detection against a stopping policy
//! with a Brownian-bridge correction for crossings the step grid would miss,
//! and the estimator for `J(x) = E[delta(T) g(X_T)]` where `T` is the
//! policy's entry time. Everything is deterministic given the master seed:
//! path `i` draws its increments from stream `2i` and its bridge uniforms
//! from stream `2i + 1` of a counter-based generator, and reductions run in
//! path order, so thread count and scheduling cannot change a result.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

use crate::discounting::{DiscountError, DiscountFunction};
use crate::policy::{DiffusionModel, Payoff, ThresholdPolicy};

/// Simulation parameters. `horizon` is realized as `round(horizon / dt)`
/// Euler steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSpec {
    pub n_paths: usize,
    pub dt: f64,
    pub horizon: f64,
    pub master_seed: u64,
    pub bridge_correction: bool,
}

impl Default for MonteCarloSpec {
    fn default() -> Self {
        Self::for_beta(1.0)
    }
}

impl MonteCarloSpec {
    /// Defaults scaled to the discount slope: the Bessel problem at slope
    /// `beta` is the unit problem viewed at scale `1/sqrt(beta)` in space
    /// and `1/beta` in time, so step and horizon scale with `1/beta`.
    /// Discounting leaves tail mass O(1/(beta * horizon)) ~ 0.5% at these
    /// defaults, and the truncated paths still contribute their discounted
    /// terminal value.
    pub fn for_beta(beta: f64) -> Self {
        MonteCarloSpec {
            n_paths: 100_000,
            dt: 1e-3 / beta,
            horizon: 200.0 / beta,
            master_seed: 1729,
            bridge_correction: true,
        }
    }

    pub fn validate(&self) -> Result<(), MonteCarloError> {
        if self.n_paths < 100 {
            return Err(MonteCarloError::InvalidSpec {
                reason: format!("n_paths = {} but at least 100 are required", self.n_paths),
            });
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(MonteCarloError::InvalidSpec {
                reason: format!("dt = {} must be finite and > 0", self.dt),
            });
        }
        if !(self.horizon >= self.dt && self.horizon.is_finite()) {
            return Err(MonteCarloError::InvalidSpec {
                reason: format!(
                    "horizon = {} must be finite and at least dt = {}",
                    self.horizon, self.dt
                ),
            });
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.horizon / self.dt).round().max(1.0) as usize
    }
}

/// Monte Carlo estimate of a discounted payoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JEstimate {
    pub mean: f64,
    /// Sample standard deviation over sqrt(n_effective).
    pub std_error: f64,
    /// Contributions entering the average. Horizon-truncated paths still
    /// contribute (their discounted terminal value), so this equals n_paths.
    pub n_effective: usize,
    /// Share of paths that never entered the stop set before the horizon.
    pub truncated_fraction: f64,
}

impl JEstimate {
    /// More than 0.1% of paths hit the horizon without stopping; the mean
    /// leans on the truncation convention and the horizon should grow.
    pub fn horizon_truncation_warning(&self) -> bool {
        self.truncated_fraction > 1e-3
    }

    fn exact(value: f64, n: usize) -> Self {
        JEstimate {
            mean: value,
            std_error: 0.0,
            n_effective: n,
            truncated_fraction: 0.0,
        }
    }
}

/// One simulated path on the uniform time grid `0, dt, 2 dt, ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub dt: f64,
    pub values: Vec<f64>,
    /// `(master_seed, stream)` of the bridge-uniform generator reserved for
    /// this path, kept so entry detection on the stored path can replay the
    /// same crossing decisions. `None` when the correction is off or the
    /// model is not standard Brownian motion.
    pub bridge_seed: Option<(u64, u64)>,
}

impl Path {
    pub fn time(&self, index: usize) -> f64 {
        index as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.values.len().saturating_sub(1))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MonteCarloError {
    #[error("invalid Monte Carlo spec: {reason}")]
    InvalidSpec { reason: String },
    #[error("path {path_index} became non-finite at step {step}")]
    NonFinitePath { path_index: usize, step: usize },
    #[error(transparent)]
    Discount(#[from] DiscountError),
    #[error("i/o failure: {message}")]
    Io { message: String },
}

fn incr_rng(seed: u64, path_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * path_index as u64);
    rng
}

fn bridge_rng(seed: u64, path_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * path_index as u64 + 1);
    rng
}

#[inline]
fn euler_step(model: &DiffusionModel, x: f64, dt: f64, sqrt_dt: f64, z: f64) -> f64 {
    match model {
        DiffusionModel::StandardBrownian => x + sqrt_dt * z,
        DiffusionModel::Sde { drift, vol } => x + drift(x) * dt + vol(x) * sqrt_dt * z,
        DiffusionModel::DeterministicExponential { rate, .. } => x + rate * x * dt,
    }
}

/// Crossing probability of a barrier by a Brownian bridge between two
/// same-side endpoints at distances `d0`, `d1`, with step variance `var`.
#[inline]
fn crossing_prob(d0: f64, d1: f64, var: f64) -> f64 {
    (-2.0 * d0 * d1 / var).exp()
}

/// Did the path cross `barrier` between two sub-barrier endpoints? The
/// crossing probability is `exp(-2 (barrier - x_lo)(barrier - x_hi) / dt)`
/// for unit volatility; fold `sigma^2` into `dt` otherwise. `x_lo` at the
/// barrier gives probability one.
pub fn bridge_crossing_adjust(
    x_lo: f64,
    x_hi: f64,
    barrier: f64,
    dt: f64,
    uniform_draw: f64,
) -> bool {
    uniform_draw < crossing_prob(barrier - x_lo, barrier - x_hi, dt)
}

/// Crossing chances below this are treated as zero without consuming a
/// uniform, so draw consumption is a deterministic function of the path.
const BRIDGE_MIN_PROB: f64 = 1e-16;

/// Entry detection for one Euler step against the signed stop intervals.
///
/// With a bridge generator: any interval the segment `[x0, x1]` touches is a
/// sure hit (continuous paths cannot jump over it; exact geometry, no draw),
/// and for a positive-variance segment lying strictly inside a gap the two
/// facing edges are tested with bridge draws, lower edge first. The returned
/// entry state is snapped to the crossed edge, which removes the O(sqrt(dt))
/// overshoot in the payoff. Without a bridge generator this is plain grid
/// monitoring: entry iff `x1` lies in the set, reported at `x1`.
pub(crate) fn step_entry(
    signed: &[(f64, f64)],
    x0: f64,
    x1: f64,
    step_var: f64,
    bridge: Option<&mut ChaCha8Rng>,
) -> Option<f64> {
    let Some(bridge) = bridge else {
        // Plain discrete monitoring.
        return signed
            .iter()
            .any(|&(lo, hi)| x1 >= lo && x1 <= hi)
            .then_some(x1);
    };

    let seg_lo = x0.min(x1);
    let seg_hi = x0.max(x1);

    // Sure hits: intervals overlapping (or touching) the segment. Nearest
    // edge to x0 decides the entry state.
    let mut best: Option<(f64, f64)> = None; // (distance, state)
    for &(lo, hi) in signed {
        if lo <= seg_hi && hi >= seg_lo {
            let state = x0.clamp(lo, hi);
            let dist = (state - x0).abs();
            if best.map_or(true, |(d, _)| dist < d) {
                best = Some((dist, state));
            }
        }
    }
    if let Some((_, state)) = best {
        return Some(state);
    }

    // Both endpoints in one gap: bridge-test the facing edges, lower first.
    // A zero-variance step moves on a straight line and cannot leave the
    // gap, so there is nothing to test (and no draw to consume).
    if step_var <= 0.0 {
        return None;
    }
    let below = signed
        .iter()
        .rev()
        .find(|&&(_, hi)| hi < seg_lo)
        .map(|&(_, hi)| hi)
        .filter(|b| b.is_finite());
    if let Some(b) = below {
        let p = crossing_prob(x0 - b, x1 - b, step_var);
        if p >= BRIDGE_MIN_PROB && bridge.gen::<f64>() < p {
            return Some(b);
        }
    }
    let above = signed
        .iter()
        .find(|&&(lo, _)| lo > seg_hi)
        .map(|&(lo, _)| lo)
        .filter(|b| b.is_finite());
    if let Some(b) = above {
        let p = crossing_prob(b - x0, b - x1, step_var);
        if p >= BRIDGE_MIN_PROB && bridge.gen::<f64>() < p {
            return Some(b);
        }
    }
    None
}

/// Simulate `n_paths` Euler paths from `x0` over `[0, horizon]`. Memory is
/// `n_paths * (n_steps + 1)` doubles; keep ensembles modest and prefer
/// [`estimate_j`], which streams, for expectation work.
pub fn simulate_paths(
    model: &DiffusionModel,
    x0: f64,
    spec: &MonteCarloSpec,
) -> Result<Vec<Path>, MonteCarloError> {
    spec.validate()?;
    if !x0.is_finite() {
        return Err(MonteCarloError::InvalidSpec {
            reason: format!("x0 = {x0} must be finite"),
        });
    }
    let n_steps = spec.n_steps();
    let sqrt_dt = spec.dt.sqrt();
    let keep_bridge_seed =
        spec.bridge_correction && matches!(model, DiffusionModel::StandardBrownian);

    (0..spec.n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = incr_rng(spec.master_seed, i);
            let mut values = Vec::with_capacity(n_steps + 1);
            values.push(x0);
            let mut x = x0;
            for step in 0..n_steps {
                let z: f64 = rng.sample(StandardNormal);
                x = euler_step(model, x, spec.dt, sqrt_dt, z);
                if !x.is_finite() {
                    return Err(MonteCarloError::NonFinitePath {
                        path_index: i,
                        step,
                    });
                }
                values.push(x);
            }
            Ok(Path {
                dt: spec.dt,
                values,
                bridge_seed: keep_bridge_seed.then_some((spec.master_seed, 2 * i as u64 + 1)),
            })
        })
        .collect()
}

/// Estimate `J(x0) = E[delta(T) g(X_T)]` where `T` is the first entry of
/// `|X|` into the policy's stop set (`strict` demands entry after time 0).
///
/// If `x0` already lies in the set the estimate is exact: `g(x0)` when the
/// entry is non-strict or `x0` is interior (re-entry is instantaneous
/// there). From a boundary state with `strict`, re-entry is simulated from
/// the first step on; a continuous path touches the set again within one
/// step, so the estimate lands on `delta(dt/2) g(x0)` with zero variance.
/// Paths that reach the horizon without entering contribute their
/// discounted terminal value and are counted in `truncated_fraction`.
pub fn estimate_j(
    model: &DiffusionModel,
    discount: &DiscountFunction,
    payoff: &Payoff,
    policy: &ThresholdPolicy,
    x0: f64,
    strict: bool,
    spec: &MonteCarloSpec,
) -> Result<JEstimate, MonteCarloError> {
    spec.validate()?;
    if !x0.is_finite() {
        return Err(MonteCarloError::InvalidSpec {
            reason: format!("x0 = {x0} must be finite"),
        });
    }

    let signed = policy.signed_intervals();
    let immediate = if strict {
        policy.membership(x0) == crate::policy::Membership::Interior
    } else {
        policy.contains(x0)
    };
    if immediate {
        return Ok(JEstimate::exact(payoff.evaluate(x0), spec.n_paths));
    }

    let n_steps = spec.n_steps();
    let sqrt_dt = spec.dt.sqrt();

    let contributions: Result<Vec<(f64, bool)>, MonteCarloError> = (0..spec.n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = incr_rng(spec.master_seed, i);
            let mut bridge = spec
                .bridge_correction
                .then(|| bridge_rng(spec.master_seed, i));
            let mut x = x0;
            let mut entry: Option<(f64, f64)> = None; // (time, state)
            for step in 0..n_steps {
                let z: f64 = rng.sample(StandardNormal);
                let vol = model.vol(x);
                let x_next = euler_step(model, x, spec.dt, sqrt_dt, z);
                if !x_next.is_finite() {
                    return Err(MonteCarloError::NonFinitePath {
                        path_index: i,
                        step,
                    });
                }
                let hit = step_entry(&signed, x, x_next, vol * vol * spec.dt, bridge.as_mut());
                if let Some(state) = hit {
                    // Bridged detection resolves a crossing somewhere inside
                    // the step; the midpoint is first-order unbiased for the
                    // crossing time. Plain monitoring only ever observes the
                    // grid instant itself.
                    let time = if bridge.is_some() {
                        (step as f64 + 0.5) * spec.dt
                    } else {
                        (step + 1) as f64 * spec.dt
                    };
                    entry = Some((time, state));
                    break;
                }
                x = x_next;
            }
            let (weight, state, truncated) = match entry {
                Some((time, state)) => (discount.evaluate(time)?, state, false),
                None => (discount.evaluate(n_steps as f64 * spec.dt)?, x, true),
            };
            let contribution = weight * payoff.evaluate(state);
            if !contribution.is_finite() {
                return Err(MonteCarloError::NonFinitePath {
                    path_index: i,
                    step: n_steps,
                });
            }
            Ok((contribution, truncated))
        })
        .collect();
    let contributions = contributions?;

    let n = contributions.len();
    let first = contributions[0].0;
    // A degenerate ensemble (boundary restarts, deterministic dynamics) is
    // exact; averaging would only add rounding noise to mean and spread.
    let (mean, std_error) = if contributions.iter().all(|&(c, _)| c == first) {
        (first, 0.0)
    } else {
        let mean = contributions.iter().map(|&(c, _)| c).sum::<f64>() / n as f64;
        let var = contributions
            .iter()
            .map(|&(c, _)| (c - mean) * (c - mean))
            .sum::<f64>()
            / (n - 1) as f64;
        (mean, (var / n as f64).sqrt())
    };
    let truncated = contributions.iter().filter(|&&(_, t)| t).count();

    Ok(JEstimate {
        mean,
        std_error,
        n_effective: n,
        truncated_fraction: truncated as f64 / n as f64,
    })
}

/// Columnar binary dump: header `n_paths: u64 LE`, `n_steps: u64 LE` (Euler
/// steps, i.e. values per path minus one), `dt: f64 LE`, then each path's
/// values as consecutive doubles. Bridge-stream bookkeeping is not stored.
pub fn write_paths<W: Write>(writer: &mut W, paths: &[Path]) -> Result<(), MonteCarloError> {
    let first = paths.first().ok_or(MonteCarloError::InvalidSpec {
        reason: "cannot dump an empty ensemble".into(),
    })?;
    let n_values = first.values.len();
    if paths
        .iter()
        .any(|p| p.values.len() != n_values || p.dt != first.dt)
    {
        return Err(MonteCarloError::InvalidSpec {
            reason: "ensemble paths differ in length or step".into(),
        });
    }
    let io = |e: std::io::Error| MonteCarloError::Io {
        message: e.to_string(),
    };
    writer.write_all(&(paths.len() as u64).to_le_bytes()).map_err(io)?;
    writer
        .write_all(&((n_values - 1) as u64).to_le_bytes())
        .map_err(io)?;
    writer.write_all(&first.dt.to_le_bytes()).map_err(io)?;
    for path in paths {
        for v in &path.values {
            writer.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    Ok(())
}

/// Read an ensemble written by [`write_paths`].
pub fn read_paths<R: Read>(reader: &mut R) -> Result<Vec<Path>, MonteCarloError> {
    let io = |e: std::io::Error| MonteCarloError::Io {
        message: e.to_string(),
    };
    let mut u64_buf = [0u8; 8];
    reader.read_exact(&mut u64_buf).map_err(io)?;
    let n_paths = u64::from_le_bytes(u64_buf) as usize;
    reader.read_exact(&mut u64_buf).map_err(io)?;
    let n_steps = u64::from_le_bytes(u64_buf) as usize;
    reader.read_exact(&mut u64_buf).map_err(io)?;
    let dt = f64::from_le_bytes(u64_buf);
    let mut paths = Vec::with_capacity(n_paths);
    for _ in 0..n_paths {
        let mut values = Vec::with_capacity(n_steps + 1);
        for _ in 0..=n_steps {
            reader.read_exact(&mut u64_buf).map_err(io)?;
            values.push(f64::from_le_bytes(u64_buf));
        }
        paths.push(Path {
            dt,
            values,
            bridge_seed: None,
        });
    }
    Ok(paths)
}
