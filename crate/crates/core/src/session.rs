//! Live per-session bookkeeping.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::request::ChargingRequest;

/// Residual energy at or below this is treated as delivered.
pub const COMPLETION_EPS_KWH: f64 = 1e-6;

/// Absolute slack allowed when testing `E <= d * Δ * R`, so that a request
/// sitting exactly on the boundary is not flagged by float rounding.
pub const FEASIBILITY_EPS_KWH: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(transparent))]
pub struct SessionId(pub String);

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SessionId {
    fn from(s: &str) -> Self {
        SessionId(s.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum SessionStatus {
    Active,
    Completed,
    Expired,
    /// No longer managed. The EV keeps charging at full rate until its
    /// residual energy is exhausted or it unplugs.
    OptedOut,
}

/// A residual-energy reduction applied because the request became infeasible.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RepairEvent {
    /// Number of measurements ingested before the repair.
    pub at_step: usize,
    pub remaining_periods: u64,
    pub before_kwh: f64,
    pub after_kwh: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SessionState {
    pub id: SessionId,
    pub request: ChargingRequest,
    pub residual_energy_kwh: f64,
    pub remaining_periods: u64,
    pub measured_power_kw: Vec<f64>,
    pub status: SessionStatus,
    /// Sticky once any repair has been applied.
    pub repaired: bool,
    pub repairs: Vec<RepairEvent>,
}

impl SessionState {
    /// Opens a session; the deadline is floored to whole periods.
    pub fn new(id: SessionId, request: ChargingRequest, grid: &TimeGrid) -> Result<Self> {
        request.validate()?;
        let remaining_periods = grid.hours_to_periods(request.deadline_hours)?;
        let mut s = SessionState {
            id,
            request,
            residual_energy_kwh: request.energy_kwh,
            remaining_periods,
            measured_power_kw: Vec::new(),
            status: SessionStatus::Active,
            repaired: false,
            repairs: Vec::new(),
        };
        if s.residual_energy_kwh <= COMPLETION_EPS_KWH {
            s.residual_energy_kwh = 0.0;
            s.status = SessionStatus::Completed;
        }
        Ok(s)
    }

    pub fn max_rate_kw(&self) -> f64 {
        self.request.max_rate_kw
    }

    /// Active and opted in: the scheduler owns this session's rate.
    pub fn is_managed(&self) -> bool {
        self.request.opt_in && self.status == SessionStatus::Active
    }

    /// Whether the EV is still expected to draw power.
    pub fn is_drawing(&self) -> bool {
        match self.status {
            SessionStatus::Active => true,
            SessionStatus::OptedOut => {
                self.residual_energy_kwh > COMPLETION_EPS_KWH && self.remaining_periods > 0
            }
            _ => false,
        }
    }

    pub fn is_terminal(&self) -> bool {
        !self.is_drawing()
    }

    pub fn delivered_kwh(&self, period_hours: f64) -> f64 {
        self.measured_power_kw.iter().fold(0.0, |a, p| a + p) * period_hours
    }

    /// Most energy that can still be delivered before the deadline.
    pub fn max_deliverable_kwh(&self, period_hours: f64) -> f64 {
        self.remaining_periods as f64 * period_hours * self.request.max_rate_kw
    }

    /// `d - E / (R Δ) >= 0`, evaluated in energy units.
    pub fn is_feasible(&self, period_hours: f64) -> bool {
        self.residual_energy_kwh <= self.max_deliverable_kwh(period_hours) + FEASIBILITY_EPS_KWH
    }

    /// Clamps the residual to the deliverable maximum. Fails on feasible
    /// sessions and on sessions that are neither active nor expired.
    pub fn repair(&mut self, period_hours: f64) -> Result<RepairEvent> {
        if !matches!(self.status, SessionStatus::Active | SessionStatus::Expired) {
            return Err(Error::Precondition("repair needs an active or expired session"));
        }
        if self.is_feasible(period_hours) {
            return Err(Error::Precondition("repair called on a feasible session"));
        }
        let after = self.max_deliverable_kwh(period_hours);
        let event = RepairEvent {
            at_step: self.measured_power_kw.len(),
            remaining_periods: self.remaining_periods,
            before_kwh: self.residual_energy_kwh,
            after_kwh: after,
        };
        self.residual_energy_kwh = after;
        self.repaired = true;
        if self.remaining_periods == 0 {
            self.status = SessionStatus::Expired;
        }
        self.repairs.push(event);
        Ok(event)
    }

    /// Records one period's measured draw and advances the session clock.
    pub fn ingest(&mut self, measured_kw: f64, period_hours: f64) -> Result<()> {
        if !measured_kw.is_finite() || measured_kw < 0.0 {
            return Err(Error::invalid("measured_kw", "must be finite and non-negative"));
        }
        if !self.is_drawing() {
            return Err(Error::Precondition("measurement for a session that is not drawing"));
        }
        self.measured_power_kw.push(measured_kw);
        self.residual_energy_kwh = step_residual(self.residual_energy_kwh, measured_kw, period_hours);
        self.remaining_periods = self.remaining_periods.saturating_sub(1);
        if self.status == SessionStatus::Active {
            if self.residual_energy_kwh == 0.0 {
                self.status = SessionStatus::Completed;
            } else if self.remaining_periods == 0 {
                self.status = SessionStatus::Expired;
            }
        }
        Ok(())
    }

    pub fn opt_out(&mut self) -> Result<()> {
        match self.status {
            SessionStatus::Active if self.request.opt_in => {
                self.status = SessionStatus::OptedOut;
                Ok(())
            }
            SessionStatus::OptedOut => Ok(()),
            SessionStatus::Active => Err(Error::Conflict("session is not managed".into())),
            _ => Err(Error::Conflict("session already finished".into())),
        }
    }

    /// Recomputes the residual from the initial request, the measurement
    /// history and the repair log.
    pub fn replay_residual(&self, period_hours: f64) -> f64 {
        let mut residual = self.request.energy_kwh;
        if residual <= COMPLETION_EPS_KWH {
            residual = 0.0;
        }
        let mut repairs = self.repairs.iter().peekable();
        for (step, kw) in self.measured_power_kw.iter().enumerate() {
            while let Some(r) = repairs.next_if(|r| r.at_step == step) {
                residual = r.after_kwh;
            }
            residual = step_residual(residual, *kw, period_hours);
        }
        for r in repairs {
            residual = r.after_kwh;
        }
        residual
    }
}

fn step_residual(residual: f64, measured_kw: f64, period_hours: f64) -> f64 {
    let next = (residual - measured_kw * period_hours).max(0.0);
    if next <= COMPLETION_EPS_KWH {
        0.0
    } else {
        next
    }
}

/// Whether the session's remaining slack is non-negative.
pub fn check_feasibility(session: &SessionState, grid: &TimeGrid) -> bool {
    session.is_feasible(grid.period_hours())
}

/// Returns a copy of `session` with its residual clamped to the deliverable maximum.
pub fn repair_request(session: &SessionState, grid: &TimeGrid) -> Result<SessionState> {
    let mut s = session.clone();
    s.repair(grid.period_hours())?;
    Ok(s)
}

/// Returns a copy of `session` after ingesting one period's measurement.
pub fn ingest_measurement(session: &SessionState, measured_kw: f64, grid: &TimeGrid) -> Result<SessionState> {
    let mut s = session.clone();
    s.ingest(measured_kw, grid.period_hours())?;
    Ok(s)
}

/// Current realised slack in periods: `d - E / (R Δ)`.
pub fn slack_periods(session: &SessionState, period_hours: f64) -> f64 {
    session.remaining_periods as f64 - session.residual_energy_kwh / (session.request.max_rate_kw * period_hours)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const DT: f64 = 1.0 / 60.0;

    fn session(energy: f64, rate: f64, periods: u64) -> SessionState {
        let grid = TimeGrid::minutely();
        let req = ChargingRequest::new(energy, periods as f64 / 60.0, rate, true);
        SessionState::new("s".into(), req, &grid).unwrap()
    }

    #[test]
    fn feasibility_boundary() {
        let grid = TimeGrid::minutely();
        assert!(check_feasibility(&session(5.0, 5.0, 60), &grid));
        assert!(!check_feasibility(&session(5.1, 5.0, 60), &grid));
        assert!(check_feasibility(&session(0.0, 5.0, 0), &grid));
    }

    #[test]
    fn repair_clamps_to_deliverable() {
        let grid = TimeGrid::minutely();
        let s = repair_request(&session(5.1, 5.0, 60), &grid).unwrap();
        assert_relative_eq!(s.residual_energy_kwh, 5.0, epsilon = 1e-12);
        assert!(s.repaired);
        assert_eq!(s.status, SessionStatus::Active);
        assert!(check_feasibility(&s, &grid));
        assert_eq!(s.repairs[0].before_kwh, 5.1);

        let s = repair_request(&session(10.0, 5.0, 0), &grid).unwrap();
        assert_eq!(s.residual_energy_kwh, 0.0);
        assert_eq!(s.status, SessionStatus::Expired);

        let err = repair_request(&session(5.0, 5.0, 60), &grid).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    #[test]
    fn ingest_updates_residual() {
        let grid = TimeGrid::minutely();
        let s = ingest_measurement(&session(2.0, 7.0, 30), 6.0, &grid).unwrap();
        assert_relative_eq!(s.residual_energy_kwh, 1.9, epsilon = 1e-12);
        assert_eq!(s.remaining_periods, 29);

        let s = ingest_measurement(&session(2.0, 7.0, 30), 0.0, &grid).unwrap();
        assert_eq!(s.residual_energy_kwh, 2.0);
        assert_eq!(s.remaining_periods, 29);

        let s = ingest_measurement(&session(0.05, 7.0, 30), 6.0, &grid).unwrap();
        assert_eq!(s.residual_energy_kwh, 0.0);
        assert_eq!(s.status, SessionStatus::Completed);

        assert!(ingest_measurement(&session(2.0, 7.0, 30), -1.0, &grid).is_err());
    }

    #[test]
    fn expires_at_deadline_with_residual() {
        let mut s = session(1.0, 5.0, 2);
        s.ingest(1.0, DT).unwrap();
        s.ingest(1.0, DT).unwrap();
        assert_eq!(s.status, SessionStatus::Expired);
        assert!(s.residual_energy_kwh > 0.0);
        assert!(s.ingest(1.0, DT).is_err());
    }

    #[test]
    fn replay_matches_with_repairs() {
        let mut s = session(3.0, 6.0, 40);
        for kw in [6.0, 5.5, 1.0, 0.0, 6.0] {
            s.ingest(kw, DT).unwrap();
        }
        // Shorten the deadline so the residual no longer fits, then repair.
        s.remaining_periods = 20;
        s.repair(DT).unwrap();
        for kw in [6.0, 6.0] {
            s.ingest(kw, DT).unwrap();
        }
        assert_eq!(s.replay_residual(DT), s.residual_energy_kwh);
    }

    #[test]
    fn opt_out_transitions() {
        let mut s = session(3.0, 6.0, 40);
        s.opt_out().unwrap();
        assert_eq!(s.status, SessionStatus::OptedOut);
        assert!(s.is_drawing());
        s.opt_out().unwrap();
        s.ingest(6.0, DT).unwrap();
        assert_eq!(s.status, SessionStatus::OptedOut);

        let mut done = session(0.0, 6.0, 40);
        assert_eq!(done.status, SessionStatus::Completed);
        assert!(done.opt_out().is_err());
    }
}
