//! Replays one session stream under the unmanaged, time-of-use and
//! optimised policies.
//!
//! Unmanaged and time-of-use runs are open-loop profiles. The optimised run
//! drives a [`Coordinator`] one period at a time, with the plant model
//! answering every command with a measured draw, exactly as a live
//! deployment would.

use std::collections::BTreeMap;

use evflex_core::coordinator::{Coordinator, CoordinatorConfig, DeadlineSpec, EnergySpec, SubmitRequest, VehicleProfile};
use evflex_core::grid::MINUTES_PER_DAY;
use evflex_core::profile::full_rate_profile;
use evflex_core::session::{SessionId, SessionStatus, COMPLETION_EPS_KWH};
use evflex_core::{LoadProfile, Period, TimeGrid};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::EvPlantModel;
use crate::scenario::{generate_scenario, FleetScenario, SessionSpec, VehicleSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    Unmanaged,
    Tou,
    OptimizEv,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::Unmanaged, Policy::Tou, Policy::OptimizEv];

    pub fn label(self) -> &'static str {
        match self {
            Policy::Unmanaged => "unmanaged",
            Policy::Tou => "tou",
            Policy::OptimizEv => "optimizev",
        }
    }
}

impl std::str::FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Policy::ALL
            .into_iter()
            .find(|p| p.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown policy `{s}`"))
    }
}

/// Daily off-peak window of a time-of-use tariff, in minutes of day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TouWindow {
    pub start_minute: u32,
    pub end_minute: u32,
}

impl Default for TouWindow {
    fn default() -> Self {
        TouWindow {
            start_minute: 0,
            end_minute: 7 * 60,
        }
    }
}

impl TouWindow {
    fn contains(&self, minute_of_day: u32) -> bool {
        if self.start_minute <= self.end_minute {
            (self.start_minute..self.end_minute).contains(&minute_of_day)
        } else {
            minute_of_day >= self.start_minute || minute_of_day < self.end_minute
        }
    }

    /// First period at or after `p` inside the window.
    fn next_start(&self, grid: &TimeGrid, p: Period) -> Period {
        if self.contains(grid.minute_of_day(p)) {
            return p;
        }
        p + grid
            .periods_until_clock(p, self.start_minute)
            .expect("window start is a valid minute of day")
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimConfig {
    pub coordinator: CoordinatorConfig,
    pub plant: EvPlantModel,
    pub plant_seed: u64,
    pub tou: TouWindow,
}

/// What happened to one session under one policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionOutcome {
    pub index: usize,
    pub vehicle_id: String,
    pub plug_in: Period,
    pub unplug: Period,
    pub requested_kwh: f64,
    pub delivered_kwh: f64,
    pub max_rate_kw: f64,
    pub opt_in: bool,
    /// Final status under the optimised policy; `None` for open-loop runs.
    pub status: Option<SessionStatus>,
    pub repaired: bool,
    /// Sojourn minus the time needed to deliver the delivered energy.
    pub realized_slack_hours: f64,
    /// Settled discount in dollars, optimised policy only.
    pub discount_usd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyRun {
    pub policy: Policy,
    pub baseline: LoadProfile,
    /// All EV load.
    pub ev_load: LoadProfile,
    /// Baseline plus EV load.
    pub aggregate: LoadProfile,
    /// EV load per vehicle, keyed by vehicle id.
    pub per_vehicle: BTreeMap<String, LoadProfile>,
    pub outcomes: Vec<SessionOutcome>,
}

/// Periods needed to cover every session, rounded up to whole days.
pub fn span_periods(sessions: &[SessionSpec], min_days: u32) -> usize {
    let day = MINUTES_PER_DAY as u64;
    let last = sessions.iter().map(|s| s.unplug).max().unwrap_or(0);
    let days = last.div_ceil(day).max(min_days as u64).max(1);
    (days * day) as usize
}

/// Full rate from plug-in until the energy is delivered.
pub fn unmanaged_profile(session: &SessionSpec, period_hours: f64) -> LoadProfile {
    full_rate_profile(
        session.plug_in,
        session.sojourn_periods() as usize,
        session.energy_kwh,
        session.max_rate_kw,
        period_hours,
    )
}

/// Full rate from the next off-peak start when that still meets the
/// deadline, otherwise the unmanaged profile. Opted-out sessions are never
/// delayed. The profile spans the whole sojourn.
pub fn tou_profile(session: &SessionSpec, grid: &TimeGrid, window: &TouWindow) -> LoadProfile {
    let dt = grid.period_hours();
    if !session.opt_in {
        return unmanaged_profile(session, dt);
    }
    let start = window.next_start(grid, session.plug_in);
    let available = session.unplug.saturating_sub(start);
    if available as f64 * dt * session.max_rate_kw + 1e-9 < session.energy_kwh {
        return unmanaged_profile(session, dt);
    }
    let delay = (start - session.plug_in) as usize;
    let tail = full_rate_profile(start, available as usize, session.energy_kwh, session.max_rate_kw, dt);
    let mut values_kw = vec![0.0; delay];
    values_kw.extend(tail.values_kw);
    LoadProfile {
        start_period: session.plug_in,
        values_kw,
    }
}

fn open_loop_outcome(s: &SessionSpec, delivered_kwh: f64) -> SessionOutcome {
    SessionOutcome {
        index: s.index,
        vehicle_id: s.vehicle_id.clone(),
        plug_in: s.plug_in,
        unplug: s.unplug,
        requested_kwh: s.energy_kwh,
        delivered_kwh,
        max_rate_kw: s.max_rate_kw,
        opt_in: s.opt_in,
        status: None,
        repaired: false,
        realized_slack_hours: s.sojourn_periods() as f64 / 60.0 - delivered_kwh / s.max_rate_kw,
        discount_usd: None,
    }
}

/// Runs `sessions` under `policy` over `len` periods from period 0.
pub fn run_policy(
    sessions: &[SessionSpec],
    vehicles: &[VehicleSpec],
    policy: Policy,
    baseline_day: &[f64],
    len: usize,
    config: &SimConfig,
) -> Result<PolicyRun> {
    let grid = config.coordinator.grid;
    if grid.epoch_minute_of_day != 0 {
        return Err(Error::Scenario("simulations start at midnight".into()));
    }
    if baseline_day.len() != grid.periods_per_day() as usize {
        return Err(Error::Scenario("baseline must cover one day".into()));
    }
    if sessions.iter().any(|s| s.unplug as usize > len) {
        return Err(Error::Scenario("a session outlasts the simulated span".into()));
    }
    let baseline = LoadProfile::new(0, baseline_day.to_vec())?.tiled(0, len)?;
    let mut per_vehicle: BTreeMap<String, LoadProfile> = vehicles
        .iter()
        .map(|v| (v.vehicle_id.clone(), LoadProfile::zeros(0, len)))
        .collect();
    for s in sessions {
        per_vehicle
            .entry(s.vehicle_id.clone())
            .or_insert_with(|| LoadProfile::zeros(0, len));
    }

    let outcomes = match policy {
        Policy::Unmanaged | Policy::Tou => {
            let dt = grid.period_hours();
            let mut outcomes = Vec::with_capacity(sessions.len());
            for s in sessions {
                let p = if policy == Policy::Unmanaged {
                    unmanaged_profile(s, dt)
                } else {
                    tou_profile(s, &grid, &config.tou)
                };
                outcomes.push(open_loop_outcome(s, p.energy_kwh(dt)));
                per_vehicle.get_mut(&s.vehicle_id).expect("vehicle registered").accumulate(&p)?;
            }
            outcomes
        }
        Policy::OptimizEv => run_closed_loop(sessions, vehicles, baseline_day, len, config, &mut per_vehicle)?,
    };

    let mut ev_load = LoadProfile::zeros(0, len);
    for p in per_vehicle.values() {
        ev_load.accumulate(p)?;
    }
    let aggregate = baseline.checked_add(&ev_load)?;
    Ok(PolicyRun {
        policy,
        baseline,
        ev_load,
        aggregate,
        per_vehicle,
        outcomes,
    })
}

/// Sessions of a scenario and their runs under each requested policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRun {
    pub sessions: Vec<SessionSpec>,
    pub len: usize,
    pub runs: Vec<PolicyRun>,
}

/// Generates the scenario's session stream once and replays it under every
/// policy in `policies`.
pub fn run_scenario(
    scenario: &FleetScenario,
    policies: &[Policy],
    baseline_day: &[f64],
    config: &SimConfig,
) -> Result<ScenarioRun> {
    let sessions = generate_scenario(scenario)?;
    let vehicles = scenario.fleet();
    let len = span_periods(&sessions, scenario.duration_days);
    let runs = policies
        .iter()
        .map(|&p| run_policy(&sessions, &vehicles, p, baseline_day, len, config))
        .collect::<Result<_>>()?;
    Ok(ScenarioRun { sessions, len, runs })
}

fn run_closed_loop(
    sessions: &[SessionSpec],
    vehicles: &[VehicleSpec],
    baseline_day: &[f64],
    len: usize,
    config: &SimConfig,
    per_vehicle: &mut BTreeMap<String, LoadProfile>,
) -> Result<Vec<SessionOutcome>> {
    let dt = config.coordinator.grid.period_hours();
    let limits = config.coordinator.limits;
    let mut coord = Coordinator::new(config.coordinator, baseline_day.to_vec())?;
    let mut registered: Vec<&str> = Vec::new();
    let fail = |period: u64| move |source| Error::Simulation { period, source };
    for v in vehicles
        .iter()
        .map(|v| (v.vehicle_id.as_str(), v.max_rate_kw, v.battery_capacity_kwh))
        .chain(sessions.iter().map(|s| (s.vehicle_id.as_str(), s.max_rate_kw, s.battery_capacity_kwh)))
    {
        if registered.contains(&v.0) {
            continue;
        }
        registered.push(v.0);
        coord
            .upsert_vehicle(VehicleProfile {
                vehicle_id: v.0.into(),
                max_rate_kw: v.1,
                battery_capacity_kwh: v.2,
                defaults: Default::default(),
            })
            .map_err(fail(0))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.plant_seed);
    let mut ids: Vec<Option<SessionId>> = vec![None; sessions.len()];
    let mut by_id: BTreeMap<SessionId, usize> = BTreeMap::new();
    let mut next = 0;
    for p in 0..len as Period {
        while next < sessions.len() && sessions[next].plug_in == p {
            let s = &sessions[next];
            let rec = coord
                .submit(&SubmitRequest {
                    vehicle_id: s.vehicle_id.clone(),
                    energy: EnergySpec::Kwh(s.energy_kwh),
                    deadline: Some(DeadlineSpec::Hours(s.sojourn_periods() as f64 * dt)),
                    opt_in: s.opt_in,
                })
                .map_err(fail(p))?;
            by_id.insert(rec.session_id.clone(), next);
            ids[next] = Some(rec.session_id);
            next += 1;
        }
        let tick = coord.advance().map_err(fail(p))?;
        for (id, c) in &tick.commands_kw {
            let max = sessions[by_id[id]].max_rate_kw;
            if !limits.is_legal(*c, max) {
                return Err(Error::Simulation {
                    period: p,
                    source: evflex_core::Error::Conflict(format!("illegal command {c} kW for `{id}`")),
                });
            }
        }
        for (id, &i) in &by_id {
            let Some(state) = coord.session_state(id) else { continue };
            if !state.is_drawing() || p < sessions[i].plug_in {
                continue;
            }
            let s = &sessions[i];
            let command = if state.is_managed() {
                tick.commands_kw.get(id).copied().unwrap_or(0.0)
            } else {
                s.max_rate_kw
            };
            let delivered = state.delivered_kwh(dt);
            let soc = s.arrival_soc + delivered / s.battery_capacity_kwh;
            let kw = config
                .plant
                .draw(command, s.max_rate_kw, soc, state.residual_energy_kwh / dt, &mut rng);
            coord.post_telemetry(id, p, kw).map_err(fail(p))?;
            per_vehicle.get_mut(&s.vehicle_id).expect("vehicle registered").values_kw[p as usize] += kw;
        }
        by_id.retain(|id, _| coord.session_state(id).is_some_and(|st| st.is_drawing()));
    }
    // Close the last period; the tick that follows repairs anything that
    // expired in it.
    coord.advance().map_err(fail(len as u64))?;

    let mut outcomes = Vec::with_capacity(sessions.len());
    for (s, id) in sessions.iter().zip(&ids) {
        let id = id.as_ref().expect("every session was submitted");
        let rec = coord.status(id).map_err(fail(len as u64))?;
        let managed = s.opt_in && rec.status != SessionStatus::OptedOut;
        if managed && rec.status == SessionStatus::Expired && !(rec.repaired && rec.residual_energy_kwh <= COMPLETION_EPS_KWH) {
            return Err(Error::Simulation {
                period: s.unplug,
                source: evflex_core::Error::Conflict(format!("managed session `{id}` missed its deadline")),
            });
        }
        let mut o = open_loop_outcome(s, rec.energy_delivered_kwh);
        o.status = Some(rec.status);
        o.repaired = rec.repaired;
        o.discount_usd = Some(rec.settled_discount.dollars());
        outcomes.push(o);
    }
    Ok(outcomes)
}
