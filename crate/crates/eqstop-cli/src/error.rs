//! Error-to-exit-code mapping: 1 for usage and configuration problems,
//! 2 when the numerics themselves fail to converge.

use std::fmt;

use eqstop::bessel::BesselError;
use eqstop::discounting::DiscountError;
use eqstop::hitting::HittingError;
use eqstop::montecarlo::MonteCarloError;
use eqstop::numerics::NumericsError;
use eqstop::policy::PolicyError;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numeric(String),
}

impl CliError {
    pub fn usage(message: String) -> Self {
        CliError::Usage(message)
    }

    pub fn numeric(message: String) -> Self {
        CliError::Numeric(message)
    }

    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Numeric(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<NumericsError> for CliError {
    fn from(e: NumericsError) -> Self {
        match e {
            NumericsError::MaxIterExceeded { .. } | NumericsError::ToleranceNotMet { .. } => {
                CliError::Numeric(e.to_string())
            }
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<BesselError> for CliError {
    fn from(e: BesselError) -> Self {
        match e {
            BesselError::NonConvergence { .. } => CliError::Numeric(e.to_string()),
            BesselError::Numerics(inner) => inner.into(),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        match e {
            PolicyError::NonConvergence { .. } => CliError::Numeric(e.to_string()),
            PolicyError::Numerics(inner) => inner.into(),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<HittingError> for CliError {
    fn from(e: HittingError) -> Self {
        match e {
            HittingError::Numerics(inner) => inner.into(),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<MonteCarloError> for CliError {
    fn from(e: MonteCarloError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<DiscountError> for CliError {
    fn from(e: DiscountError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(format!("i/o failure: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Usage(format!("serialization failure: {e}"))
    }
}
