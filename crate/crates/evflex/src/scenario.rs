//! Synthetic fleet behaviour and session streams.
//!
//! A day is simulated per vehicle: it plugs in with some probability, at a
//! time drawn from a Gaussian mixture over the hour of day, stays for a
//! lognormal sojourn, and asks for the energy of a lognormal number of
//! full-rate charging hours. Energy is truncated so the request can always
//! be met before unplugging. Opt-in is drawn from a model of the realised
//! slack.

use evflex_core::grid::MINUTES_PER_DAY;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleSpec {
    pub vehicle_id: String,
    pub max_rate_kw: f64,
    pub battery_capacity_kwh: f64,
}

/// One component of the plug-in time mixture, in hours of the day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrivalComponent {
    pub weight: f64,
    pub mean_hour: f64,
    pub sd_hours: f64,
}

/// Lognormal in hours with the given mean, clipped to `[min_hours, max_hours]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalHours {
    pub mean_hours: f64,
    /// Standard deviation of the underlying normal.
    pub sigma: f64,
    pub min_hours: f64,
    pub max_hours: f64,
}

impl LogNormalHours {
    fn distribution(&self) -> Result<LogNormal<f64>> {
        let mu = self.mean_hours.ln() - self.sigma * self.sigma / 2.0;
        LogNormal::new(mu, self.sigma).map_err(|e| Error::Scenario(e.to_string()))
    }

    fn validate(&self, name: &str) -> Result<()> {
        let ok = self.mean_hours > 0.0
            && self.sigma >= 0.0
            && self.min_hours >= 0.0
            && self.min_hours <= self.max_hours
            && [self.mean_hours, self.sigma, self.min_hours, self.max_hours]
                .iter()
                .all(|v| v.is_finite());
        if !ok {
            return Err(Error::Scenario(format!("{name}: bad lognormal parameters {self:?}")));
        }
        Ok(())
    }
}

/// Probability of opting in as a function of realised slack in hours.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptInModel {
    /// `clamp(intercept + slope * slack, min, max)`.
    Linear {
        intercept: f64,
        slope: f64,
        min: f64,
        max: f64,
    },
    /// Piecewise-linear through `(slack_hours, probability)` points, flat
    /// outside them.
    Table { points: Vec<(f64, f64)> },
    Always,
    Never,
}

impl Default for OptInModel {
    fn default() -> Self {
        OptInModel::Linear {
            intercept: 0.1,
            slope: 0.1,
            min: 0.1,
            max: 0.8,
        }
    }
}

impl OptInModel {
    pub fn probability(&self, slack_hours: f64) -> f64 {
        match self {
            OptInModel::Linear {
                intercept,
                slope,
                min,
                max,
            } => (intercept + slope * slack_hours).clamp(*min, *max),
            OptInModel::Table { points } => {
                let Some(first) = points.first() else { return 0.0 };
                if slack_hours <= first.0 {
                    return first.1;
                }
                for w in points.windows(2) {
                    let ((x0, y0), (x1, y1)) = (w[0], w[1]);
                    if slack_hours <= x1 {
                        return y0 + (y1 - y0) * (slack_hours - x0) / (x1 - x0);
                    }
                }
                points[points.len() - 1].1
            }
            OptInModel::Always => 1.0,
            OptInModel::Never => 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Scenario(format!("opt_in: {m}")));
        match self {
            OptInModel::Linear { min, max, .. } if !(0.0 <= *min && min <= max && *max <= 1.0) => {
                bad("need 0 <= min <= max <= 1")
            }
            OptInModel::Table { points } if points.windows(2).any(|w| w[1].0 <= w[0].0) => {
                bad("table slack values must increase")
            }
            OptInModel::Table { points } if points.iter().any(|p| !(0.0..=1.0).contains(&p.1)) => {
                bad("table probabilities must lie in [0, 1]")
            }
            _ => Ok(()),
        }
    }
}

/// One charging session in the stream shared by all policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSpec {
    pub index: usize,
    pub vehicle_id: String,
    /// First period the EV is connected.
    pub plug_in: u64,
    /// First period the EV is gone.
    pub unplug: u64,
    pub energy_kwh: f64,
    pub max_rate_kw: f64,
    pub battery_capacity_kwh: f64,
    pub arrival_soc: f64,
    pub opt_in: bool,
}

impl SessionSpec {
    pub fn sojourn_periods(&self) -> u64 {
        self.unplug - self.plug_in
    }

    /// Slack in hours at a one-minute resolution.
    pub fn slack_hours(&self) -> f64 {
        self.sojourn_periods() as f64 / 60.0 - self.energy_kwh / self.max_rate_kw
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FleetScenario {
    pub n_vehicles: usize,
    pub duration_days: u32,
    pub seed: u64,
    /// Rates assigned round-robin when `vehicles` is empty.
    pub rate_choices_kw: Vec<f64>,
    pub battery_choices_kwh: Vec<f64>,
    /// Explicit vehicle table; overrides `n_vehicles` and the choice lists.
    pub vehicles: Vec<VehicleSpec>,
    /// Chance that a vehicle plugs in on a given day.
    pub connect_probability: f64,
    pub arrival: Vec<ArrivalComponent>,
    pub sojourn: LogNormalHours,
    /// Charging time at full rate; energy is this times the vehicle's rate.
    pub charge_hours: LogNormalHours,
    /// Cap on energy as a fraction of what the sojourn can deliver at full rate.
    pub max_energy_fraction: f64,
    pub desired_soc: f64,
    pub opt_in: OptInModel,
    /// Explicit session list; when non-empty, no sessions are sampled.
    pub sessions: Vec<SessionSpec>,
}

impl Default for FleetScenario {
    fn default() -> Self {
        FleetScenario {
            n_vehicles: 34,
            duration_days: 7,
            seed: 42,
            rate_choices_kw: vec![6.6, 7.2, 3.3, 6.6, 7.2],
            battery_choices_kwh: vec![60.0, 75.0, 40.0, 64.0, 82.0],
            vehicles: Vec::new(),
            connect_probability: 0.4,
            arrival: vec![
                ArrivalComponent {
                    weight: 0.85,
                    mean_hour: 18.0,
                    sd_hours: 1.5,
                },
                ArrivalComponent {
                    weight: 0.15,
                    mean_hour: 12.0,
                    sd_hours: 3.0,
                },
            ],
            sojourn: LogNormalHours {
                mean_hours: 11.0,
                sigma: 0.3,
                min_hours: 1.0,
                max_hours: 22.0,
            },
            charge_hours: LogNormalHours {
                mean_hours: 2.0,
                sigma: 0.6,
                min_hours: 0.1,
                max_hours: 10.0,
            },
            max_energy_fraction: 1.0,
            desired_soc: 0.95,
            opt_in: OptInModel::default(),
            sessions: Vec::new(),
        }
    }
}

impl FleetScenario {
    /// The vehicle table, explicit or generated.
    pub fn fleet(&self) -> Vec<VehicleSpec> {
        if !self.vehicles.is_empty() {
            return self.vehicles.clone();
        }
        (0..self.n_vehicles)
            .map(|i| VehicleSpec {
                vehicle_id: format!("ev{:03}", i + 1),
                max_rate_kw: self.rate_choices_kw[i % self.rate_choices_kw.len()],
                battery_capacity_kwh: self.battery_choices_kwh[i % self.battery_choices_kwh.len()],
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Scenario(m));
        let generated = self.sessions.is_empty() && self.vehicles.is_empty() && self.n_vehicles > 0;
        if generated && (self.rate_choices_kw.is_empty() || self.battery_choices_kwh.is_empty()) {
            return err("rate_choices_kw and battery_choices_kwh must not be empty".into());
        }
        for v in self.fleet() {
            if !(v.max_rate_kw.is_finite() && v.max_rate_kw > 0.0) {
                return err(format!("vehicle {}: max_rate_kw must be positive", v.vehicle_id));
            }
            if !(v.battery_capacity_kwh.is_finite() && v.battery_capacity_kwh > 0.0) {
                return err(format!("vehicle {}: battery_capacity_kwh must be positive", v.vehicle_id));
            }
        }
        if !(0.0..=1.0).contains(&self.connect_probability) {
            return err("connect_probability must lie in [0, 1]".into());
        }
        if self.sessions.is_empty() && self.n_vehicles > 0 {
            if self.arrival.is_empty() {
                return err("arrival mixture is empty".into());
            }
            if self.arrival.iter().any(|c| !(c.weight >= 0.0 && c.sd_hours > 0.0 && c.mean_hour.is_finite()))
                || self.arrival.iter().map(|c| c.weight).sum::<f64>() <= 0.0
            {
                return err("arrival components need non-negative weights and positive spread".into());
            }
        }
        self.sojourn.validate("sojourn")?;
        self.charge_hours.validate("charge_hours")?;
        if !(self.max_energy_fraction > 0.0 && self.max_energy_fraction <= 1.0) {
            return err("max_energy_fraction must lie in (0, 1]".into());
        }
        if self.sojourn.min_hours < 1.0 / 60.0 {
            return err("sojourn.min_hours must be at least one minute".into());
        }
        if self.charge_hours.min_hours > self.sojourn.max_hours * self.max_energy_fraction {
            return err("charge_hours.min_hours exceeds what any sojourn can deliver".into());
        }
        if !(0.0..=1.0).contains(&self.desired_soc) || self.desired_soc == 0.0 {
            return err("desired_soc must lie in (0, 1]".into());
        }
        self.opt_in.validate()?;
        for s in &self.sessions {
            if s.unplug <= s.plug_in || !(s.energy_kwh >= 0.0) || !(s.max_rate_kw > 0.0) {
                return err(format!("session {}: inconsistent times or energy", s.index));
            }
            if s.energy_kwh > s.max_rate_kw * s.sojourn_periods() as f64 / 60.0 + 1e-9 {
                return err(format!("session {}: energy exceeds what the sojourn can deliver", s.index));
            }
        }
        Ok(())
    }
}

/// Draws the session stream. Identical scenarios give identical streams.
pub fn generate_scenario(scenario: &FleetScenario) -> Result<Vec<SessionSpec>> {
    scenario.validate()?;
    if !scenario.sessions.is_empty() {
        let mut s = scenario.sessions.clone();
        s.sort_by_key(|x| (x.plug_in, x.index));
        return Ok(s);
    }
    let fleet = scenario.fleet();
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let sojourn = scenario.sojourn.distribution()?;
    let charge = scenario.charge_hours.distribution()?;
    let weights: f64 = scenario.arrival.iter().map(|c| c.weight).sum();
    let day = MINUTES_PER_DAY as u64;

    // Period at which each vehicle becomes free again.
    let mut free_at = vec![0u64; fleet.len()];
    let mut out = Vec::new();
    for d in 0..scenario.duration_days as u64 {
        for (v, veh) in fleet.iter().enumerate() {
            // Every draw happens whether or not the session is kept, so one
            // vehicle's outcome never shifts another's random stream.
            let connect: f64 = rng.random();
            let pick: f64 = rng.random::<f64>() * weights;
            let z: f64 = Normal::new(0.0, 1.0).unwrap().sample(&mut rng);
            let stay = sojourn.sample(&mut rng).clamp(scenario.sojourn.min_hours, scenario.sojourn.max_hours);
            let hours = charge
                .sample(&mut rng)
                .clamp(scenario.charge_hours.min_hours, scenario.charge_hours.max_hours);
            let u_opt: f64 = rng.random();
            if connect >= scenario.connect_probability {
                continue;
            }
            let mut acc = 0.0;
            let comp = scenario
                .arrival
                .iter()
                .find(|c| {
                    acc += c.weight;
                    pick < acc
                })
                .unwrap_or(&scenario.arrival[scenario.arrival.len() - 1]);
            let hour = (comp.mean_hour + comp.sd_hours * z).rem_euclid(24.0);
            let plug_in = d * day + ((hour * 60.0) as u64).min(day - 1);
            let sojourn_periods = ((stay * 60.0).round() as u64).max(1);
            let unplug = plug_in + sojourn_periods;
            if plug_in < free_at[v] {
                continue;
            }
            let deliverable = veh.max_rate_kw * sojourn_periods as f64 / 60.0;
            let energy_kwh = (veh.max_rate_kw * hours)
                .min(deliverable * scenario.max_energy_fraction)
                .min(veh.battery_capacity_kwh * scenario.desired_soc);
            let arrival_soc = scenario.desired_soc - energy_kwh / veh.battery_capacity_kwh;
            let slack = sojourn_periods as f64 / 60.0 - energy_kwh / veh.max_rate_kw;
            free_at[v] = unplug + 1;
            out.push(SessionSpec {
                index: 0,
                vehicle_id: veh.vehicle_id.clone(),
                plug_in,
                unplug,
                energy_kwh,
                max_rate_kw: veh.max_rate_kw,
                battery_capacity_kwh: veh.battery_capacity_kwh,
                arrival_soc,
                opt_in: u_opt < scenario.opt_in.probability(slack),
            });
        }
    }
    out.sort_by(|a, b| a.plug_in.cmp(&b.plug_in).then_with(|| a.vehicle_id.cmp(&b.vehicle_id)));
    for (i, s) in out.iter_mut().enumerate() {
        s.index = i;
    }
    Ok(out)
}

/// Number of connected EVs in each period of `[0, len)`.
pub fn connection_counts(sessions: &[SessionSpec], len: usize) -> Vec<u32> {
    let mut delta = vec![0i64; len + 1];
    for s in sessions {
        let a = (s.plug_in as usize).min(len);
        let b = (s.unplug as usize).min(len);
        delta[a] += 1;
        delta[b] -= 1;
    }
    let mut out = Vec::with_capacity(len);
    let mut run = 0i64;
    for d in &delta[..len] {
        run += d;
        out.push(run as u32);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_hit_target_means() {
        let scenario = FleetScenario {
            duration_days: 90,
            ..FleetScenario::default()
        };
        let s = generate_scenario(&scenario).unwrap();
        assert!(s.len() >= 1000, "{} sessions", s.len());
        let n = s.len() as f64;
        let slack = s.iter().map(|x| x.slack_hours()).sum::<f64>() / n;
        let sojourn = s.iter().map(|x| x.sojourn_periods() as f64 / 60.0).sum::<f64>() / n;
        let charging = s.iter().map(|x| x.energy_kwh / x.max_rate_kw).sum::<f64>() / n;
        assert!((slack - 9.0).abs() <= 1.0, "mean slack {slack}");
        assert!((sojourn - 11.0).abs() <= 1.0, "mean sojourn {sojourn}");
        assert!((charging - 2.0).abs() <= 0.5, "mean charging {charging}");
    }

    #[test]
    fn stream_invariants() {
        let s = generate_scenario(&FleetScenario::default()).unwrap();
        let mut last_unplug = std::collections::HashMap::new();
        for x in &s {
            assert!(x.unplug > x.plug_in);
            assert!(x.slack_hours() >= -1e-12);
            assert!(x.arrival_soc >= -1e-12);
            if let Some(prev) = last_unplug.insert(x.vehicle_id.clone(), x.unplug) {
                assert!(x.plug_in > prev);
            }
        }
    }

    #[test]
    fn deterministic_and_empty() {
        let a = generate_scenario(&FleetScenario::default()).unwrap();
        let b = generate_scenario(&FleetScenario::default()).unwrap();
        assert_eq!(a, b);
        let other = generate_scenario(&FleetScenario {
            seed: 7,
            ..FleetScenario::default()
        })
        .unwrap();
        assert_ne!(a, other);
        let none = FleetScenario {
            n_vehicles: 0,
            ..FleetScenario::default()
        };
        assert!(generate_scenario(&none).unwrap().is_empty());
    }

    #[test]
    fn inconsistent_parameters_rejected() {
        let mut s = FleetScenario::default();
        s.charge_hours.min_hours = 30.0;
        s.charge_hours.max_hours = 40.0;
        assert!(generate_scenario(&s).is_err());
        let s = FleetScenario {
            connect_probability: 1.5,
            ..FleetScenario::default()
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn opt_in_models() {
        let m = OptInModel::default();
        assert_eq!(m.probability(0.0), 0.1);
        assert!((m.probability(3.0) - 0.4).abs() < 1e-12);
        assert_eq!(m.probability(7.0), 0.8);
        assert_eq!(m.probability(20.0), 0.8);
        let t = OptInModel::Table {
            points: vec![(0.0, 0.2), (10.0, 0.6)],
        };
        assert!((t.probability(5.0) - 0.4).abs() < 1e-12);
        assert_eq!(t.probability(-1.0), 0.2);
        assert_eq!(t.probability(11.0), 0.6);
    }

    #[test]
    fn connection_counts_track_sessions() {
        let mk = |p, u| SessionSpec {
            index: 0,
            vehicle_id: "a".into(),
            plug_in: p,
            unplug: u,
            energy_kwh: 0.0,
            max_rate_kw: 1.0,
            battery_capacity_kwh: 1.0,
            arrival_soc: 0.0,
            opt_in: true,
        };
        assert_eq!(connection_counts(&[mk(1, 3), mk(2, 5)], 6), vec![0, 1, 2, 1, 1, 0]);
    }
}
