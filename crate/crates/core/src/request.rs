use crate::error::{Error, Result};
use crate::grid::Period;

/// A customer's charging request: energy, deadline and maximum rate.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ChargingRequest {
    pub energy_kwh: f64,
    /// Hours from submission by which the energy must be delivered.
    pub deadline_hours: f64,
    pub max_rate_kw: f64,
    /// `true` for a managed session, `false` for immediate full-rate charging.
    pub opt_in: bool,
    pub submitted_at: Period,
}

impl ChargingRequest {
    pub fn new(energy_kwh: f64, deadline_hours: f64, max_rate_kw: f64, opt_in: bool) -> Self {
        ChargingRequest {
            energy_kwh,
            deadline_hours,
            max_rate_kw,
            opt_in,
            submitted_at: 0,
        }
    }

    pub fn submitted_at(mut self, period: Period) -> Self {
        self.submitted_at = period;
        self
    }

    /// Checks the field-level invariants. Does not check slack.
    pub fn validate(&self) -> Result<()> {
        if !self.energy_kwh.is_finite() || self.energy_kwh < 0.0 {
            return Err(Error::invalid("energy_kwh", "must be finite and non-negative"));
        }
        if !self.deadline_hours.is_finite() || self.deadline_hours < 0.0 {
            return Err(Error::invalid("deadline_hours", "must be finite and non-negative"));
        }
        if !self.max_rate_kw.is_finite() || self.max_rate_kw <= 0.0 {
            return Err(Error::invalid("max_rate_kw", "must be finite and positive"));
        }
        Ok(())
    }

    /// Hours needed to deliver the energy at the maximum rate.
    pub fn min_charging_hours(&self) -> f64 {
        self.energy_kwh / self.max_rate_kw
    }
}

/// Present and desired state of charge of a battery.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SocPair {
    pub present_soc: f64,
    pub desired_soc: f64,
    pub battery_capacity_kwh: f64,
}

impl SocPair {
    pub fn new(present_soc: f64, desired_soc: f64, battery_capacity_kwh: f64) -> Self {
        SocPair {
            present_soc,
            desired_soc,
            battery_capacity_kwh,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| x.is_finite() && (0.0..=1.0).contains(&x);
        if !unit(self.present_soc) {
            return Err(Error::invalid("present_soc", "must lie in [0, 1]"));
        }
        if !unit(self.desired_soc) {
            return Err(Error::invalid("desired_soc", "must lie in [0, 1]"));
        }
        if !self.battery_capacity_kwh.is_finite() || self.battery_capacity_kwh <= 0.0 {
            return Err(Error::invalid("battery_capacity_kwh", "must be positive"));
        }
        if self.desired_soc < self.present_soc {
            return Err(Error::invalid("desired_soc", "must not be below present_soc"));
        }
        Ok(())
    }
}

/// Energy needed to move the battery from its present to its desired state of charge.
pub fn energy_from_soc(soc: &SocPair) -> Result<f64> {
    soc.validate()?;
    Ok((soc.desired_soc - soc.present_soc) * soc.battery_capacity_kwh)
}
