//! Equilibrium stopping rules for diffusions whose rewards are discounted
//! non-exponentially.
//!
//! Under exponential discounting an optimal stopping plan made today still
//! looks optimal tomorrow. Other discount curves break that: the plan a
//! decision maker commits to now is one their future self would abandon.
//! This crate treats the stopping rule as a game between those selves and
//! looks for rules no momentary self wants to deviate from. The central
//! device is a policy-improvement step: classify every state by comparing
//! the immediate payoff against the value of letting the current rule take
//! over strictly after the present instant, stop where stopping wins, and
//! repeat until the rule reproduces itself.
//!
//! The worked case is Brownian motion paid `|x|` on stopping under the
//! hyperbolic curve `1/(1 + beta s)`, where everything is computable:
//! threshold rules have closed-form values ([`hitting`]), the improvement
//! step cuts any too-greedy threshold to an explicit crossing ([`bessel`]),
//! and the band of fixed-point thresholds ends at the root of a
//! slope condition. Simulation ([`montecarlo`]) cross-checks the closed
//! forms, and [`policy`] runs the improvement loop for general stop sets,
//! with a deterministic procrastination example in [`policy::smoking`].

pub mod bessel;
pub mod discounting;
pub mod hitting;
pub mod montecarlo;
pub mod numerics;
pub mod policy;

pub use bessel::{BesselProblem, EquilibriumReport};
pub use discounting::DiscountFunction;
pub use hitting::EtaContext;
pub use montecarlo::{JEstimate, MonteCarloSpec};
pub use numerics::{QuadratureSpec, RootSpec};
pub use policy::{
    DiffusionModel, IterationTrace, Payoff, RegionClassification, RegionLabel, ThresholdPolicy,
};
