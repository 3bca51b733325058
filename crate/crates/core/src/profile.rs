use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::Period;

/// A kW time series on the period grid.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LoadProfile {
    pub start_period: Period,
    pub values_kw: Vec<f64>,
}

impl LoadProfile {
    /// Builds a profile, rejecting negative or non-finite readings.
    pub fn new(start_period: Period, values_kw: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values_kw.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::invalid(
                "values_kw",
                alloc::format!("reading {bad} is negative or not finite"),
            ));
        }
        Ok(LoadProfile {
            start_period,
            values_kw,
        })
    }

    pub fn zeros(start_period: Period, len: usize) -> Self {
        LoadProfile {
            start_period,
            values_kw: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.values_kw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values_kw.is_empty()
    }

    /// One past the last covered period.
    pub fn end_period(&self) -> Period {
        self.start_period + self.values_kw.len() as Period
    }

    pub fn covers(&self, start: Period, len: usize) -> bool {
        start >= self.start_period && start + len as Period <= self.end_period()
    }

    /// Reading at an absolute period, if covered.
    pub fn at(&self, period: Period) -> Option<f64> {
        let idx = period.checked_sub(self.start_period)?;
        self.values_kw.get(idx as usize).copied()
    }

    pub fn window(&self, start: Period, len: usize) -> Result<&[f64]> {
        if !self.covers(start, len) {
            return Err(Error::Coverage {
                start: self.start_period,
                len: self.len(),
                want_start: start,
                want_len: len,
            });
        }
        let off = (start - self.start_period) as usize;
        Ok(&self.values_kw[off..off + len])
    }

    pub fn slice(&self, start: Period, len: usize) -> Result<LoadProfile> {
        Ok(LoadProfile {
            start_period: start,
            values_kw: self.window(start, len)?.to_vec(),
        })
    }

    /// Elementwise sum of two profiles with identical coverage.
    pub fn checked_add(&self, other: &LoadProfile) -> Result<LoadProfile> {
        if self.start_period != other.start_period || self.len() != other.len() {
            return Err(Error::Misaligned {
                a_start: self.start_period,
                a_len: self.len(),
                b_start: other.start_period,
                b_len: other.len(),
            });
        }
        Ok(LoadProfile {
            start_period: self.start_period,
            values_kw: self
                .values_kw
                .iter()
                .zip(&other.values_kw)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    /// Adds `other` into the overlapping part of `self`; `other` must lie
    /// entirely inside `self`.
    pub fn accumulate(&mut self, other: &LoadProfile) -> Result<()> {
        if !self.covers(other.start_period, other.len()) {
            return Err(Error::Coverage {
                start: self.start_period,
                len: self.len(),
                want_start: other.start_period,
                want_len: other.len(),
            });
        }
        let off = (other.start_period - self.start_period) as usize;
        for (dst, v) in self.values_kw[off..].iter_mut().zip(&other.values_kw) {
            *dst += v;
        }
        Ok(())
    }

    pub fn peak(&self) -> Option<f64> {
        self.values_kw.iter().copied().reduce(f64::max)
    }

    /// Energy under the profile in kWh.
    pub fn energy_kwh(&self, period_hours: f64) -> f64 {
        self.values_kw.iter().fold(0.0, |a, v| a + v) * period_hours
    }

    /// Repeats the profile until it spans `len` periods.
    pub fn tiled(&self, start_period: Period, len: usize) -> Result<LoadProfile> {
        if self.is_empty() {
            return Err(Error::invalid("values_kw", "cannot tile an empty profile"));
        }
        let values_kw = self.values_kw.iter().copied().cycle().take(len).collect();
        Ok(LoadProfile {
            start_period,
            values_kw,
        })
    }
}

/// Elementwise sum of two aligned profiles.
pub fn add_profiles(a: &LoadProfile, b: &LoadProfile) -> Result<LoadProfile> {
    a.checked_add(b)
}

/// Power drawn by an EV charging at `max_rate_kw` from `start` until
/// `energy_kwh` is delivered or `len` periods elapse. The final period carries
/// the partial remainder.
pub fn full_rate_profile(
    start: Period,
    len: usize,
    energy_kwh: f64,
    max_rate_kw: f64,
    period_hours: f64,
) -> LoadProfile {
    let mut values_kw = vec![0.0; len];
    let per_period = max_rate_kw * period_hours;
    let mut remaining = energy_kwh.max(0.0);
    for v in values_kw.iter_mut() {
        if remaining <= 1e-12 {
            break;
        }
        if remaining >= per_period - 1e-12 {
            *v = max_rate_kw;
            remaining = (remaining - per_period).max(0.0);
        } else {
            *v = remaining / period_hours;
            remaining = 0.0;
        }
    }
    LoadProfile {
        start_period: start,
        values_kw,
    }
}
