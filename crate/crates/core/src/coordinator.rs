//! Session lifecycle state machine behind the coordination service.
//!
//! A [`Coordinator`] is the single writer of all session state. Requests,
//! opt-outs and telemetry are validated on arrival but only take effect at
//! the next tick boundary; [`Coordinator::advance`] closes the open period
//! (ingesting its measurements), opens the next one and runs the scheduler.
//!
//! Every mutation is appended to an event log. Replaying the log into a fresh
//! coordinator with the same configuration reproduces the run exactly.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{Period, TimeGrid};
use crate::pricing::{compute_slack, discount_rate, settle_discount, DiscountSchedule, OptOutRule, Quote, Usd};
use crate::profile::LoadProfile;
use crate::qp::Tolerances;
use crate::request::{energy_from_soc, ChargingRequest, SocPair};
use crate::scheduler::{unmanaged_forecast, RateLimits, Scheduler};
use crate::session::{RepairEvent, SessionId, SessionState, SessionStatus};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CoordinatorConfig {
    pub grid: TimeGrid,
    pub limits: RateLimits,
    pub tolerances: Tolerances,
    pub schedule: DiscountSchedule,
    pub opt_out_rule: OptOutRule,
}

/// Stored charging preferences for a vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Preferences {
    pub desired_soc: Option<f64>,
    pub deadline: Option<DeadlineSpec>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VehicleProfile {
    pub vehicle_id: String,
    pub max_rate_kw: f64,
    pub battery_capacity_kwh: f64,
    #[cfg_attr(feature = "serde", serde(default))]
    pub defaults: Preferences,
}

impl VehicleProfile {
    pub fn validate(&self, limits: &RateLimits) -> Result<()> {
        if self.vehicle_id.is_empty() {
            return Err(Error::invalid("vehicle_id", "must not be empty"));
        }
        if !(self.max_rate_kw.is_finite() && self.max_rate_kw >= limits.min_nonzero_rate_kw) {
            return Err(Error::invalid("max_rate_kw", "must be at least the minimum non-zero rate"));
        }
        if !(self.battery_capacity_kwh.is_finite() && self.battery_capacity_kwh > 0.0) {
            return Err(Error::invalid("battery_capacity_kwh", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum EnergySpec {
    Kwh(f64),
    /// Present and desired state of charge; the pack size comes from the vehicle.
    Soc { present: f64, desired: f64 },
    /// Present state of charge; the desired one comes from the stored defaults.
    PresentSoc(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum DeadlineSpec {
    /// Hours from submission.
    Hours(f64),
    /// Next occurrence of this wall-clock minute of day.
    ClockMinute(u32),
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SubmitRequest {
    pub vehicle_id: String,
    pub energy: EnergySpec,
    /// Falls back to the vehicle's stored deadline when absent.
    #[cfg_attr(feature = "serde", serde(default))]
    pub deadline: Option<DeadlineSpec>,
    pub opt_in: bool,
}

/// Read-only view of a session served to clients.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ApiSessionRecord {
    pub session_id: SessionId,
    pub vehicle_id: String,
    pub request: ChargingRequest,
    pub quote: Option<Quote>,
    pub settled_discount: Usd,
    pub status: SessionStatus,
    pub repaired: bool,
    pub disconnected: bool,
    pub energy_delivered_kwh: f64,
    pub residual_energy_kwh: f64,
    pub elapsed_periods: u64,
    pub elapsed_hours: f64,
    pub remaining_periods: u64,
    /// Scheduler command for the open period; managed sessions only.
    pub current_command_kw: Option<f64>,
    /// Whether the session takes part in the open period. Unmanaged sessions
    /// draw at their maximum rate.
    pub charging: bool,
    /// Opt-out requested and waiting for the next tick.
    pub opt_out_pending: bool,
}

/// Audit record of one tick.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TickRecord {
    pub period: Period,
    pub instance_hash: u64,
    pub objective: f64,
    pub relaxed_objective: f64,
    pub solver_iterations: usize,
    pub fallback: bool,
    pub commands_kw: BTreeMap<SessionId, f64>,
    pub repairs: Vec<(SessionId, RepairEvent)>,
}

/// One entry of the append-only event log.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "event", rename_all = "snake_case"))]
pub enum Event {
    VehicleUpserted { vehicle: VehicleProfile },
    VehicleRemoved { vehicle_id: String },
    Submitted {
        session_id: SessionId,
        vehicle_id: String,
        request: ChargingRequest,
    },
    OptOutRequested { session_id: SessionId },
    DisconnectRequested { session_id: SessionId },
    Telemetry {
        session_id: SessionId,
        period: Period,
        measured_kw: f64,
    },
    Tick { record: TickRecord },
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    state: SessionState,
    vehicle_id: String,
    quote: Option<Quote>,
    /// Delivered energy at the moment the opt-out took effect.
    managed_energy_kwh: Option<f64>,
    opt_out_pending: bool,
    disconnect_pending: bool,
    disconnected: bool,
    command_kw: Option<f64>,
    /// First period the session takes part in.
    starts_at: Period,
}

/// Closed-period aggregate history.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AggregateView {
    /// Baseline plus all measured EV load.
    pub total: LoadProfile,
    pub baseline: LoadProfile,
    pub managed: LoadProfile,
    pub unmanaged: LoadProfile,
}

#[derive(Debug, Clone)]
pub struct Coordinator {
    config: CoordinatorConfig,
    /// Baseline for one day, indexed by period-of-day from midnight.
    baseline_day: Vec<f64>,
    scheduler: Scheduler,
    vehicles: BTreeMap<String, VehicleProfile>,
    sessions: BTreeMap<SessionId, Entry>,
    telemetry: BTreeMap<SessionId, f64>,
    /// Next period to be opened. `next - 1` is open once the first tick ran.
    next: Period,
    next_session: u64,
    history_total: Vec<f64>,
    history_managed: Vec<f64>,
    history_unmanaged: Vec<f64>,
    history_baseline: Vec<f64>,
    events: Vec<Event>,
}

impl Coordinator {
    /// `baseline_day` holds one day of baseline readings starting at midnight.
    pub fn new(config: CoordinatorConfig, baseline_day: Vec<f64>) -> Result<Self> {
        let ppd = config.grid.periods_per_day() as usize;
        if baseline_day.len() != ppd {
            return Err(Error::invalid(
                "baseline_day",
                format!("expected {ppd} readings, got {}", baseline_day.len()),
            ));
        }
        LoadProfile::new(0, baseline_day.clone())?;
        config.schedule.validate()?;
        let scheduler = Scheduler::new(config.grid, config.limits, config.tolerances)?;
        Ok(Coordinator {
            config,
            baseline_day,
            scheduler,
            vehicles: BTreeMap::new(),
            sessions: BTreeMap::new(),
            telemetry: BTreeMap::new(),
            next: 0,
            next_session: 0,
            history_total: Vec::new(),
            history_managed: Vec::new(),
            history_unmanaged: Vec::new(),
            history_baseline: Vec::new(),
            events: Vec::new(),
        })
    }

    pub fn config(&self) -> &CoordinatorConfig {
        &self.config
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    /// The period whose commands are currently in force, if any.
    pub fn open_period(&self) -> Option<Period> {
        self.next.checked_sub(1)
    }

    /// Number of ticks executed so far.
    pub fn ticks(&self) -> u64 {
        self.next
    }

    pub fn baseline_at(&self, period: Period) -> f64 {
        let grid = &self.config.grid;
        let idx = grid.minute_of_day(period) / grid.period_minutes;
        self.baseline_day[idx as usize]
    }

    pub fn baseline_window(&self, start: Period, len: usize) -> LoadProfile {
        LoadProfile {
            start_period: start,
            values_kw: (0..len as Period).map(|k| self.baseline_at(start + k)).collect(),
        }
    }

    // Vehicle registry.

    pub fn upsert_vehicle(&mut self, vehicle: VehicleProfile) -> Result<VehicleProfile> {
        vehicle.validate(&self.config.limits)?;
        self.vehicles.insert(vehicle.vehicle_id.clone(), vehicle.clone());
        self.events.push(Event::VehicleUpserted {
            vehicle: vehicle.clone(),
        });
        Ok(vehicle)
    }

    pub fn remove_vehicle(&mut self, vehicle_id: &str) -> Result<()> {
        if self.active_session_of(vehicle_id).is_some() {
            return Err(Error::Conflict(format!("vehicle `{vehicle_id}` has an active session")));
        }
        self.vehicles
            .remove(vehicle_id)
            .ok_or_else(|| not_found("vehicle", vehicle_id))?;
        self.events.push(Event::VehicleRemoved {
            vehicle_id: vehicle_id.into(),
        });
        Ok(())
    }

    pub fn vehicle(&self, vehicle_id: &str) -> Result<&VehicleProfile> {
        self.vehicles.get(vehicle_id).ok_or_else(|| not_found("vehicle", vehicle_id))
    }

    pub fn vehicles(&self) -> impl Iterator<Item = &VehicleProfile> {
        self.vehicles.values()
    }

    fn active_session_of(&self, vehicle_id: &str) -> Option<&SessionId> {
        self.sessions
            .iter()
            .find(|(_, e)| e.vehicle_id == vehicle_id && e.state.is_drawing() && !e.disconnect_pending)
            .map(|(id, _)| id)
    }

    /// Turns a submission into a concrete request without admitting it.
    pub fn resolve_request(&self, submit: &SubmitRequest) -> Result<ChargingRequest> {
        let vehicle = self.vehicle(&submit.vehicle_id)?;
        let energy_kwh = match submit.energy {
            EnergySpec::Kwh(e) => e,
            EnergySpec::Soc { present, desired } => {
                energy_from_soc(&SocPair::new(present, desired, vehicle.battery_capacity_kwh))?
            }
            EnergySpec::PresentSoc(present) => {
                let desired = vehicle
                    .defaults
                    .desired_soc
                    .ok_or_else(|| Error::invalid("energy", "no stored desired state of charge"))?;
                energy_from_soc(&SocPair::new(present, desired, vehicle.battery_capacity_kwh))?
            }
        };
        let deadline = submit
            .deadline
            .or(vehicle.defaults.deadline)
            .ok_or_else(|| Error::invalid("deadline", "no deadline given and none stored"))?;
        let grid = &self.config.grid;
        let deadline_hours = match deadline {
            DeadlineSpec::Hours(h) => h,
            DeadlineSpec::ClockMinute(m) => {
                let mut periods = grid.periods_until_clock(self.next, m)?;
                if periods == 0 {
                    periods = grid.periods_per_day();
                }
                grid.periods_to_hours(periods)
            }
        };
        let request = ChargingRequest {
            energy_kwh,
            deadline_hours,
            max_rate_kw: vehicle.max_rate_kw,
            opt_in: submit.opt_in,
            submitted_at: self.next,
        };
        request.validate()?;
        Ok(request)
    }

    /// Validates and admits a charging request. The session is scheduled
    /// from the next tick on.
    pub fn submit(&mut self, submit: &SubmitRequest) -> Result<ApiSessionRecord> {
        let request = self.resolve_request(submit)?;
        self.admit(&submit.vehicle_id, request)
    }

    fn admit(&mut self, vehicle_id: &str, request: ChargingRequest) -> Result<ApiSessionRecord> {
        self.vehicle(vehicle_id)?;
        if let Some(id) = self.active_session_of(vehicle_id) {
            return Err(Error::Conflict(format!("vehicle `{vehicle_id}` already has session `{id}`")));
        }
        let quote = if request.opt_in {
            let slack = compute_slack(&request)?;
            if slack < 0.0 {
                return Err(Error::NegativeSlack {
                    slack_hours: slack,
                    min_deadline_hours: request.min_charging_hours(),
                });
            }
            let rate = discount_rate(slack, &self.config.schedule)?;
            Some(Quote {
                discount_per_kwh: rate,
                total_discount: rate.times_kwh(request.energy_kwh),
            })
        } else {
            None
        };
        let id = SessionId(format!("s{:06}", self.next_session));
        let state = SessionState::new(id.clone(), request, &self.config.grid)?;
        self.next_session += 1;
        self.sessions.insert(
            id.clone(),
            Entry {
                state,
                vehicle_id: vehicle_id.into(),
                quote,
                managed_energy_kwh: None,
                opt_out_pending: false,
                disconnect_pending: false,
                disconnected: false,
                command_kw: None,
                starts_at: self.next,
            },
        );
        self.events.push(Event::Submitted {
            session_id: id.clone(),
            vehicle_id: vehicle_id.into(),
            request,
        });
        self.status(&id)
    }

    /// Requests that a managed session be released to full-rate charging at
    /// the next tick. Repeating the call is a no-op.
    pub fn opt_out(&mut self, id: &SessionId) -> Result<ApiSessionRecord> {
        let entry = self.sessions.get_mut(id).ok_or_else(|| not_found("session", &id.0))?;
        if entry.opt_out_pending || entry.state.status == SessionStatus::OptedOut {
            return self.status(id);
        }
        if !entry.state.request.opt_in {
            return Err(Error::Conflict(format!("session `{id}` is not managed")));
        }
        if entry.state.status != SessionStatus::Active {
            return Err(Error::Conflict(format!("session `{id}` has already finished")));
        }
        entry.opt_out_pending = true;
        self.events.push(Event::OptOutRequested { session_id: id.clone() });
        self.status(id)
    }

    /// Marks the EV as unplugged; the session ends at the next tick.
    pub fn disconnect(&mut self, id: &SessionId) -> Result<ApiSessionRecord> {
        let entry = self.sessions.get_mut(id).ok_or_else(|| not_found("session", &id.0))?;
        if !entry.state.is_drawing() {
            return Err(Error::Conflict(format!("session `{id}` has already finished")));
        }
        if !entry.disconnect_pending {
            entry.disconnect_pending = true;
            self.events.push(Event::DisconnectRequested { session_id: id.clone() });
        }
        self.status(id)
    }

    /// Queues the measured draw of a session for the open period.
    pub fn post_telemetry(&mut self, id: &SessionId, period: Period, measured_kw: f64) -> Result<()> {
        let current = self.open_period().ok_or(Error::Precondition("no period is open yet"))?;
        if period != current {
            return Err(Error::StalePeriod { got: period, current });
        }
        if !(measured_kw.is_finite() && measured_kw >= 0.0) {
            return Err(Error::invalid("measured_kw", "must be finite and non-negative"));
        }
        let entry = self.sessions.get(id).ok_or_else(|| not_found("session", &id.0))?;
        if entry.command_kw.is_none() {
            return Err(Error::Conflict(format!("session `{id}` is not charging in period {period}")));
        }
        self.telemetry.insert(id.clone(), measured_kw);
        self.events.push(Event::Telemetry {
            session_id: id.clone(),
            period,
            measured_kw,
        });
        Ok(())
    }

    /// Sessions drawing in the open period with no measurement posted yet,
    /// paired with the command in force.
    pub fn awaiting_telemetry(&self) -> Vec<(SessionId, f64)> {
        self.sessions
            .iter()
            .filter(|(id, _)| !self.telemetry.contains_key(*id))
            .filter_map(|(id, e)| e.command_kw.map(|c| (id.clone(), c)))
            .collect()
    }

    /// Closes the open period and opens the next one.
    pub fn advance(&mut self) -> Result<TickRecord> {
        let dt = self.config.grid.period_hours();
        if let Some(open) = self.open_period() {
            self.close_period(open, dt)?;
        }
        let now = self.next;

        let mut settle = Vec::new();
        for (id, e) in self.sessions.iter_mut() {
            if e.starts_at > now || e.state.is_terminal() {
                continue;
            }
            if e.disconnect_pending {
                e.disconnect_pending = false;
                e.disconnected = true;
                if e.state.status == SessionStatus::Active {
                    e.state.status = SessionStatus::Expired;
                }
                e.state.remaining_periods = 0;
                continue;
            }
            if e.opt_out_pending {
                e.opt_out_pending = false;
                e.managed_energy_kwh = Some(e.state.delivered_kwh(dt));
                e.state.opt_out()?;
                settle.push(id.clone());
            }
        }

        let horizon = self.config.grid.horizon_periods;
        let baseline = self.baseline_window(now, horizon);
        let unmanaged = unmanaged_forecast(
            self.sessions.values().filter(|e| e.starts_at <= now).map(|e| &e.state),
            now,
            horizon,
            dt,
        );
        // Sessions that start later are kept out of the scheduler's view.
        let mut ids: Vec<SessionId> = Vec::new();
        let mut states: Vec<SessionState> = Vec::new();
        for (id, e) in &self.sessions {
            if e.starts_at <= now && !e.disconnected && e.state.request.opt_in && matches!(e.state.status, SessionStatus::Active | SessionStatus::Expired) {
                ids.push(id.clone());
                states.push(e.state.clone());
            }
        }
        let result = self.scheduler.tick(&mut states, &baseline, &unmanaged, now)?;
        for (id, st) in ids.into_iter().zip(states) {
            if let Some(e) = self.sessions.get_mut(&id) {
                e.state = st;
            }
        }

        for (id, e) in self.sessions.iter_mut() {
            e.command_kw = if e.starts_at > now || !e.state.is_drawing() {
                None
            } else if e.state.is_managed() {
                Some(result.commands_kw.get(id).copied().unwrap_or(0.0))
            } else {
                Some(e.state.max_rate_kw())
            };
        }
        self.next = now + 1;

        let record = TickRecord {
            period: now,
            instance_hash: result.instance_hash,
            objective: result.plan.objective,
            relaxed_objective: result.relaxed_objective,
            solver_iterations: result.solver_iterations,
            fallback: result.fallback,
            commands_kw: result.commands_kw,
            repairs: result.repairs,
        };
        self.events.push(Event::Tick { record: record.clone() });
        Ok(record)
    }

    fn close_period(&mut self, open: Period, dt: f64) -> Result<()> {
        let mut managed = 0.0;
        let mut unmanaged = 0.0;
        for (id, e) in self.sessions.iter_mut() {
            if e.command_kw.is_none() {
                continue;
            }
            // Missing telemetry is booked as zero draw.
            let kw = self.telemetry.get(id).copied().unwrap_or(0.0);
            if e.state.is_managed() {
                managed += kw;
            } else {
                unmanaged += kw;
            }
            if e.state.is_drawing() {
                e.state.ingest(kw, dt)?;
            }
            e.command_kw = None;
        }
        self.telemetry.clear();
        let base = self.baseline_at(open);
        self.history_baseline.push(base);
        self.history_managed.push(managed);
        self.history_unmanaged.push(unmanaged);
        self.history_total.push(base + managed + unmanaged);
        Ok(())
    }

    // Queries.

    pub fn status(&self, id: &SessionId) -> Result<ApiSessionRecord> {
        let e = self.sessions.get(id).ok_or_else(|| not_found("session", &id.0))?;
        Ok(self.record(id, e))
    }

    fn record(&self, id: &SessionId, e: &Entry) -> ApiSessionRecord {
        let grid = &self.config.grid;
        let dt = grid.period_hours();
        let elapsed = e.state.measured_power_kw.len() as u64;
        let opted_out = e.state.status == SessionStatus::OptedOut;
        let settled_discount = e
            .quote
            .map(|q| settle_discount(&q, opted_out, e.managed_energy_kwh.unwrap_or(0.0), self.config.opt_out_rule))
            .unwrap_or(Usd::ZERO);
        ApiSessionRecord {
            session_id: id.clone(),
            vehicle_id: e.vehicle_id.clone(),
            request: e.state.request,
            quote: e.quote,
            settled_discount,
            status: e.state.status,
            repaired: e.state.repaired,
            disconnected: e.disconnected,
            energy_delivered_kwh: e.state.delivered_kwh(dt),
            residual_energy_kwh: e.state.residual_energy_kwh,
            elapsed_periods: elapsed,
            elapsed_hours: grid.periods_to_hours(elapsed),
            remaining_periods: e.state.remaining_periods,
            current_command_kw: e.command_kw.filter(|_| e.state.is_managed()),
            charging: e.command_kw.is_some(),
            opt_out_pending: e.opt_out_pending,
        }
    }

    pub fn list_sessions(&self, status: Option<SessionStatus>) -> Vec<ApiSessionRecord> {
        self.sessions
            .iter()
            .filter(|(_, e)| status.is_none_or(|s| e.state.status == s))
            .map(|(id, e)| self.record(id, e))
            .collect()
    }

    pub fn session_state(&self, id: &SessionId) -> Option<&SessionState> {
        self.sessions.get(id).map(|e| &e.state)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &SessionState> {
        self.sessions.values().map(|e| &e.state)
    }

    /// Measured aggregate over closed periods in `[start, start + len)`,
    /// clipped to what has been recorded.
    pub fn aggregate(&self, start: Period, len: usize) -> AggregateView {
        let recorded = self.history_total.len() as Period;
        let from = start.min(recorded);
        let to = start.saturating_add(len as Period).min(recorded);
        let pick = |v: &[f64]| LoadProfile {
            start_period: from,
            values_kw: v[from as usize..to as usize].to_vec(),
        };
        AggregateView {
            total: pick(&self.history_total),
            baseline: pick(&self.history_baseline),
            managed: pick(&self.history_managed),
            unmanaged: pick(&self.history_unmanaged),
        }
    }

    /// Rebuilds a coordinator by re-applying a recorded event log.
    pub fn replay(config: CoordinatorConfig, baseline_day: Vec<f64>, events: &[Event]) -> Result<Self> {
        let mut c = Coordinator::new(config, baseline_day)?;
        for ev in events {
            match ev {
                Event::VehicleUpserted { vehicle } => {
                    c.upsert_vehicle(vehicle.clone())?;
                }
                Event::VehicleRemoved { vehicle_id } => c.remove_vehicle(vehicle_id)?,
                Event::Submitted {
                    session_id,
                    vehicle_id,
                    request,
                } => {
                    let rec = c.admit(vehicle_id, *request)?;
                    if &rec.session_id != session_id {
                        return Err(Error::Conflict(format!(
                            "replay diverged: expected session `{session_id}`, got `{}`",
                            rec.session_id
                        )));
                    }
                }
                Event::OptOutRequested { session_id } => {
                    c.opt_out(session_id)?;
                }
                Event::DisconnectRequested { session_id } => {
                    c.disconnect(session_id)?;
                }
                Event::Telemetry {
                    session_id,
                    period,
                    measured_kw,
                } => c.post_telemetry(session_id, *period, *measured_kw)?,
                Event::Tick { record } => {
                    let got = c.advance()?;
                    if &got != record {
                        return Err(Error::Conflict(format!("replay diverged at tick {}", record.period)));
                    }
                }
            }
        }
        Ok(c)
    }
}

fn not_found(kind: &'static str, id: &str) -> Error {
    Error::NotFound { kind, id: id.into() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn coordinator() -> Coordinator {
        let config = CoordinatorConfig {
            grid: TimeGrid::new(1, 120, 18 * 60).unwrap(),
            ..CoordinatorConfig::default()
        };
        let mut c = Coordinator::new(config, vec![60.0; 1440]).unwrap();
        c.upsert_vehicle(VehicleProfile {
            vehicle_id: "ev1".into(),
            max_rate_kw: 5.0,
            battery_capacity_kwh: 40.0,
            defaults: Preferences::default(),
        })
        .unwrap();
        c
    }

    fn submit(energy: f64, hours: f64, opt_in: bool) -> SubmitRequest {
        SubmitRequest {
            vehicle_id: "ev1".into(),
            energy: EnergySpec::Kwh(energy),
            deadline: Some(DeadlineSpec::Hours(hours)),
            opt_in,
        }
    }

    #[test]
    fn admission_quotes_and_rejections() {
        let mut c = coordinator();
        let rec = c.submit(&submit(20.0, 10.0, true)).unwrap();
        assert_eq!(rec.quote.unwrap().total_discount, Usd(516_000));
        assert!(matches!(c.submit(&submit(1.0, 10.0, true)), Err(Error::Conflict(_))));

        let mut c = coordinator();
        match c.submit(&submit(20.0, 3.0, true)) {
            Err(Error::NegativeSlack { min_deadline_hours, .. }) => assert_eq!(min_deadline_hours, 4.0),
            other => panic!("unexpected {other:?}"),
        }
        let rec = c.submit(&submit(20.0, 3.0, false)).unwrap();
        assert!(rec.quote.is_none());
        assert_eq!(rec.settled_discount, Usd::ZERO);
    }

    #[test]
    fn soc_and_clock_deadline() {
        let mut c = coordinator();
        let rec = c
            .submit(&SubmitRequest {
                vehicle_id: "ev1".into(),
                energy: EnergySpec::Soc {
                    present: 0.4,
                    desired: 0.9,
                },
                deadline: Some(DeadlineSpec::ClockMinute(4 * 60)),
                opt_in: true,
            })
            .unwrap();
        assert!((rec.request.energy_kwh - 20.0).abs() < 1e-12);
        assert_eq!(rec.request.deadline_hours, 10.0);
        assert_eq!(rec.remaining_periods, 600);
    }

    #[test]
    fn unknown_vehicle() {
        let mut c = coordinator();
        let mut s = submit(1.0, 1.0, true);
        s.vehicle_id = "nope".into();
        assert!(matches!(c.submit(&s), Err(Error::NotFound { .. })));
    }

    #[test]
    fn first_command_next_tick_and_telemetry_rules() {
        let mut c = coordinator();
        let rec = c.submit(&submit(1.0, 2.0, true)).unwrap();
        assert_eq!(rec.current_command_kw, None);
        let id = rec.session_id;
        assert!(c.post_telemetry(&id, 0, 1.0).is_err());
        c.advance().unwrap();
        assert!(c.status(&id).unwrap().current_command_kw.is_some());
        assert!(matches!(
            c.post_telemetry(&id, 5, 1.0),
            Err(Error::StalePeriod { got: 5, current: 0 })
        ));
        assert!(c.post_telemetry(&id, 0, -1.0).is_err());
        c.post_telemetry(&id, 0, 3.0).unwrap();
        c.advance().unwrap();
        let rec = c.status(&id).unwrap();
        assert!((rec.energy_delivered_kwh - 3.0 / 60.0).abs() < 1e-12);
        assert_eq!(rec.elapsed_periods, 1);
    }

    #[test]
    fn opt_out_is_idempotent_and_forfeits() {
        let mut c = coordinator();
        let id = c.submit(&submit(2.0, 5.0, true)).unwrap().session_id;
        c.advance().unwrap();
        let first = c.opt_out(&id).unwrap();
        assert!(first.opt_out_pending);
        assert_eq!(first.status, SessionStatus::Active);
        let again = c.opt_out(&id).unwrap();
        assert_eq!(first, again);
        c.advance().unwrap();
        let rec = c.status(&id).unwrap();
        assert_eq!(rec.status, SessionStatus::OptedOut);
        assert_eq!(rec.current_command_kw, None);
        assert!(rec.charging);
        assert_eq!(rec.settled_discount, Usd::ZERO);
        assert_eq!(c.opt_out(&id).unwrap().status, SessionStatus::OptedOut);
        assert!(matches!(
            c.opt_out(&SessionId::from("missing")),
            Err(Error::NotFound { .. })
        ));
    }

    #[test]
    fn opt_out_after_completion_conflicts() {
        let mut c = coordinator();
        let id = c.submit(&submit(0.05, 5.0, true)).unwrap().session_id;
        c.advance().unwrap();
        c.post_telemetry(&id, 0, 5.0).unwrap();
        c.advance().unwrap();
        assert_eq!(c.status(&id).unwrap().status, SessionStatus::Completed);
        assert!(matches!(c.opt_out(&id), Err(Error::Conflict(_))));
    }

    #[test]
    fn disconnect_expires_session() {
        let mut c = coordinator();
        let id = c.submit(&submit(5.0, 5.0, true)).unwrap().session_id;
        c.advance().unwrap();
        c.disconnect(&id).unwrap();
        c.advance().unwrap();
        let rec = c.status(&id).unwrap();
        assert_eq!(rec.status, SessionStatus::Expired);
        assert!(rec.disconnected);
        // The vehicle is free for a new session.
        c.submit(&submit(1.0, 5.0, true)).unwrap();
    }

    #[test]
    fn list_filter_and_aggregate_window() {
        let mut c = coordinator();
        c.submit(&submit(1.0, 5.0, true)).unwrap();
        assert_eq!(c.list_sessions(Some(SessionStatus::Active)).len(), 1);
        assert!(c.list_sessions(Some(SessionStatus::Completed)).is_empty());
        assert!(c.aggregate(0, 0).total.is_empty());
        c.advance().unwrap();
        c.advance().unwrap();
        let agg = c.aggregate(0, 10);
        assert_eq!(agg.total.len(), 1);
        assert_eq!(agg.baseline.values_kw, vec![60.0]);
    }

    #[test]
    fn replay_reproduces_state() {
        let mut c = coordinator();
        let id = c.submit(&submit(1.0, 1.0, true)).unwrap().session_id;
        for _ in 0..30 {
            let rec = c.advance().unwrap();
            if let Some(kw) = rec.commands_kw.get(&id) {
                c.post_telemetry(&id, rec.period, *kw).unwrap();
            }
        }
        let r = Coordinator::replay(*c.config(), c.baseline_day.clone(), c.events()).unwrap();
        assert_eq!(r.list_sessions(None), c.list_sessions(None));
        assert_eq!(r.aggregate(0, 100), c.aggregate(0, 100));
    }
}
