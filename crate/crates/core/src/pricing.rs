//! Slack time and the slack-differentiated discount.
//!
//! The discount per kWh grows linearly from zero at zero slack to
//! `max_discount_per_kwh` at `max_rewarded_slack_hours`, and stays flat
//! beyond. Money is held as integer micro-dollars so that totals summed over
//! many sessions do not drift.

use alloc::vec::Vec;
use core::fmt;
use core::ops::{Add, AddAssign};

use crate::error::{Error, Result};
use crate::request::ChargingRequest;

const MICROS_PER_DOLLAR: f64 = 1_000_000.0;

fn round_half_up(x: f64) -> i64 {
    if x >= 0.0 {
        (x + 0.5) as i64
    } else {
        -((-x + 0.5) as i64)
    }
}

/// An amount of money in micro-dollars.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Usd(pub i64);

/// A price per kWh in micro-dollars.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct UsdPerKwh(pub i64);

impl Usd {
    pub const ZERO: Usd = Usd(0);

    pub fn from_dollars(dollars: f64) -> Self {
        Usd(round_half_up(dollars * MICROS_PER_DOLLAR))
    }

    pub fn dollars(self) -> f64 {
        self.0 as f64 / MICROS_PER_DOLLAR
    }
}

impl UsdPerKwh {
    pub fn from_dollars(dollars: f64) -> Self {
        UsdPerKwh(round_half_up(dollars * MICROS_PER_DOLLAR))
    }

    pub fn dollars(self) -> f64 {
        self.0 as f64 / MICROS_PER_DOLLAR
    }

    /// Total for `energy_kwh`, rounded to the nearest micro-dollar.
    pub fn times_kwh(self, energy_kwh: f64) -> Usd {
        Usd(round_half_up(self.0 as f64 * energy_kwh))
    }
}

impl Add for Usd {
    type Output = Usd;
    fn add(self, rhs: Usd) -> Usd {
        Usd(self.0 + rhs.0)
    }
}

impl AddAssign for Usd {
    fn add_assign(&mut self, rhs: Usd) {
        self.0 += rhs.0;
    }
}

impl fmt::Display for Usd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}${}.{:06}", abs / 1_000_000, abs % 1_000_000)
    }
}

impl fmt::Display for UsdPerKwh {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/kWh", Usd(self.0))
    }
}

#[cfg(feature = "serde")]
mod serde_impls {
    use super::{Usd, UsdPerKwh};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    // Both serialise as plain dollar amounts.
    impl Serialize for Usd {
        fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
            s.serialize_f64(self.dollars())
        }
    }
    impl<'de> Deserialize<'de> for Usd {
        fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
            f64::deserialize(d).map(Usd::from_dollars)
        }
    }
    impl Serialize for UsdPerKwh {
        fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
            s.serialize_f64(self.dollars())
        }
    }
    impl<'de> Deserialize<'de> for UsdPerKwh {
        fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
            f64::deserialize(d).map(UsdPerKwh::from_dollars)
        }
    }
}

/// Piecewise-linear discount schedule `p(s)`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DiscountSchedule {
    /// `p_max`, dollars per kWh.
    pub max_discount_per_kwh: f64,
    /// `s_max`, hours.
    pub max_rewarded_slack_hours: f64,
}

impl Default for DiscountSchedule {
    fn default() -> Self {
        DiscountSchedule {
            max_discount_per_kwh: 0.043,
            max_rewarded_slack_hours: 10.0,
        }
    }
}

impl DiscountSchedule {
    pub fn new(max_discount_per_kwh: f64, max_rewarded_slack_hours: f64) -> Result<Self> {
        let s = DiscountSchedule {
            max_discount_per_kwh,
            max_rewarded_slack_hours,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.max_discount_per_kwh.is_finite() || self.max_discount_per_kwh < 0.0 {
            return Err(Error::invalid("max_discount_per_kwh", "must be finite and non-negative"));
        }
        if !self.max_rewarded_slack_hours.is_finite() || self.max_rewarded_slack_hours <= 0.0 {
            return Err(Error::invalid("max_rewarded_slack_hours", "must be finite and positive"));
        }
        Ok(())
    }

    pub fn max_rate(&self) -> UsdPerKwh {
        UsdPerKwh::from_dollars(self.max_discount_per_kwh)
    }
}

/// Slack time in hours: `d - E / R`. May be negative.
pub fn compute_slack(request: &ChargingRequest) -> Result<f64> {
    request.validate()?;
    Ok(request.deadline_hours - request.min_charging_hours())
}

/// Discount per kWh for a non-negative slack.
pub fn discount_rate(slack_hours: f64, schedule: &DiscountSchedule) -> Result<UsdPerKwh> {
    schedule.validate()?;
    if !(slack_hours >= 0.0) {
        return Err(Error::invalid("slack_hours", "must be non-negative"));
    }
    let pmax = schedule.max_rate().0;
    if slack_hours >= schedule.max_rewarded_slack_hours {
        return Ok(UsdPerKwh(pmax));
    }
    let frac = slack_hours / schedule.max_rewarded_slack_hours;
    Ok(UsdPerKwh(round_half_up(pmax as f64 * frac)))
}

/// Total discount `p(s) * E` for an admissible request.
pub fn session_discount(request: &ChargingRequest, schedule: &DiscountSchedule) -> Result<Usd> {
    let slack = compute_slack(request)?;
    if slack < 0.0 {
        return Err(Error::NegativeSlack {
            slack_hours: slack,
            min_deadline_hours: request.min_charging_hours(),
        });
    }
    Ok(discount_rate(slack, schedule)?.times_kwh(request.energy_kwh))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Quote {
    pub discount_per_kwh: UsdPerKwh,
    pub total_discount: Usd,
}

/// One deadline option of the menu shown to a customer.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MenuRow {
    pub deadline_hours: f64,
    pub slack_hours: f64,
    /// Earliest admissible deadline, `E / R`.
    pub min_deadline_hours: f64,
    /// `None` when the deadline leaves negative slack.
    pub quote: Option<Quote>,
}

impl MenuRow {
    pub fn available(&self) -> bool {
        self.quote.is_some()
    }
}

/// Quotes each candidate deadline; infeasible deadlines are kept and marked unavailable.
pub fn price_menu(
    energy_kwh: f64,
    max_rate_kw: f64,
    candidate_deadlines: &[f64],
    schedule: &DiscountSchedule,
) -> Result<Vec<MenuRow>> {
    if candidate_deadlines.is_empty() {
        return Err(Error::invalid("candidate_deadlines", "must not be empty"));
    }
    schedule.validate()?;
    candidate_deadlines
        .iter()
        .map(|&deadline_hours| {
            let request = ChargingRequest::new(energy_kwh, deadline_hours, max_rate_kw, true);
            let slack_hours = compute_slack(&request)?;
            let quote = if slack_hours >= 0.0 {
                let rate = discount_rate(slack_hours, schedule)?;
                Some(Quote {
                    discount_per_kwh: rate,
                    total_discount: rate.times_kwh(energy_kwh),
                })
            } else {
                None
            };
            Ok(MenuRow {
                deadline_hours,
                slack_hours,
                min_deadline_hours: request.min_charging_hours(),
                quote,
            })
        })
        .collect()
}

/// What happens to the quoted discount when a customer opts out mid-session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum OptOutRule {
    #[default]
    Forfeit,
    /// Keep the quoted per-kWh rate on the energy delivered before opting out.
    Prorate,
}

/// Discount owed at settlement.
pub fn settle_discount(quote: &Quote, opted_out: bool, managed_energy_kwh: f64, rule: OptOutRule) -> Usd {
    match (opted_out, rule) {
        (false, _) => quote.total_discount,
        (true, OptOutRule::Forfeit) => Usd::ZERO,
        (true, OptOutRule::Prorate) => {
            let prorated = quote.discount_per_kwh.times_kwh(managed_energy_kwh.max(0.0));
            prorated.min(quote.total_discount)
        }
    }
}
