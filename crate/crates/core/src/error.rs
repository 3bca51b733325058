use alloc::string::String;

use crate::grid::Period;

/// Errors raised by the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid {field}: {reason}")]
    Validation { field: &'static str, reason: String },

    #[error("negative slack of {slack_hours} h; earliest admissible deadline is {min_deadline_hours} h")]
    NegativeSlack { slack_hours: f64, min_deadline_hours: f64 },

    #[error("profiles misaligned: [{a_start}, +{a_len}) vs [{b_start}, +{b_len})")]
    Misaligned {
        a_start: Period,
        a_len: usize,
        b_start: Period,
        b_len: usize,
    },

    #[error("profile starting at {start} with {len} periods does not cover [{want_start}, +{want_len})")]
    Coverage {
        start: Period,
        len: usize,
        want_start: Period,
        want_len: usize,
    },

    #[error("EV {index} is infeasible: {energy_kwh} kWh requested but only {deliverable_kwh} kWh deliverable")]
    Infeasible {
        index: usize,
        energy_kwh: f64,
        deliverable_kwh: f64,
    },

    #[error("precondition violated: {0}")]
    Precondition(&'static str),

    #[error("unknown {kind} `{id}`")]
    NotFound { kind: &'static str, id: String },

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("stale telemetry for period {got}; current period is {current}")]
    StalePeriod { got: Period, current: Period },
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Validation {
            field,
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
