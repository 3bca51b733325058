//! Discrete time grid.
//!
//! All scheduling happens on integer period indices. A [`TimeGrid`] fixes the
//! period length, the optimisation horizon and the wall-clock minute that
//! period 0 corresponds to.

use crate::error::{Error, Result};

/// Index of a scheduling period, counted from the grid epoch.
pub type Period = u64;

pub const MINUTES_PER_DAY: u32 = 1440;

/// Slack added before flooring hour-valued inputs so that values such as
/// `10.0 h * 60` that land a hair under an integer are not lost to rounding.
const FLOOR_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TimeGrid {
    /// Whole minutes per period.
    pub period_minutes: u32,
    /// Number of periods the optimiser looks ahead.
    pub horizon_periods: usize,
    /// Minute of day (0..1440) at which period 0 starts.
    pub epoch_minute_of_day: u32,
}

impl Default for TimeGrid {
    fn default() -> Self {
        TimeGrid {
            period_minutes: 1,
            horizon_periods: 1440,
            epoch_minute_of_day: 0,
        }
    }
}

impl TimeGrid {
    pub fn new(period_minutes: u32, horizon_periods: usize, epoch_minute_of_day: u32) -> Result<Self> {
        if period_minutes == 0 {
            return Err(Error::invalid("period_minutes", "must be positive"));
        }
        if horizon_periods == 0 {
            return Err(Error::invalid("horizon_periods", "must be at least 1"));
        }
        if epoch_minute_of_day >= MINUTES_PER_DAY {
            return Err(Error::invalid("epoch_minute_of_day", "must be below 1440"));
        }
        Ok(TimeGrid {
            period_minutes,
            horizon_periods,
            epoch_minute_of_day,
        })
    }

    /// One-minute periods with a 24 h horizon, anchored at midnight.
    pub fn minutely() -> Self {
        Self::default()
    }

    pub fn with_horizon(mut self, horizon_periods: usize) -> Self {
        self.horizon_periods = horizon_periods.max(1);
        self
    }

    /// Period length in hours (the Δ of the energy balance).
    pub fn period_hours(&self) -> f64 {
        self.period_minutes as f64 / 60.0
    }

    pub fn periods_per_day(&self) -> u64 {
        (MINUTES_PER_DAY / self.period_minutes).max(1) as u64
    }

    /// Minutes elapsed since the epoch's midnight at the start of `period`.
    pub fn absolute_minute(&self, period: Period) -> u64 {
        self.epoch_minute_of_day as u64 + period * self.period_minutes as u64
    }

    pub fn minute_of_day(&self, period: Period) -> u32 {
        (self.absolute_minute(period) % MINUTES_PER_DAY as u64) as u32
    }

    /// Inverse of [`absolute_minute`](Self::absolute_minute); `None` if the
    /// minute precedes the epoch or falls inside a period.
    pub fn period_at_minute(&self, absolute_minute: u64) -> Option<Period> {
        let rel = absolute_minute.checked_sub(self.epoch_minute_of_day as u64)?;
        if rel % self.period_minutes as u64 != 0 {
            return None;
        }
        Some(rel / self.period_minutes as u64)
    }

    /// Converts a non-negative duration in hours to whole periods, rounding down.
    pub fn hours_to_periods(&self, hours: f64) -> Result<u64> {
        if !hours.is_finite() || hours < 0.0 {
            return Err(Error::invalid("hours", "must be finite and non-negative"));
        }
        let periods = hours * 60.0 / self.period_minutes as f64;
        Ok((periods + FLOOR_EPS) as u64)
    }

    pub fn periods_to_hours(&self, periods: u64) -> f64 {
        periods as f64 * self.period_minutes as f64 / 60.0
    }

    /// Number of periods from `now` until the next time the wall clock reads
    /// `minute_of_day` (0 if it reads that right now).
    pub fn periods_until_clock(&self, now: Period, minute_of_day: u32) -> Result<u64> {
        if minute_of_day >= MINUTES_PER_DAY {
            return Err(Error::invalid("minute_of_day", "must be below 1440"));
        }
        let current = self.minute_of_day(now);
        let wait = (minute_of_day + MINUTES_PER_DAY - current) % MINUTES_PER_DAY;
        Ok((wait / self.period_minutes) as u64)
    }
}
