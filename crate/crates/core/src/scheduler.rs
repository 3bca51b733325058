//! Receding-horizon charging scheduler.
//!
//! Each tick repairs sessions whose residual no longer fits before their
//! deadline, assembles the valley-filling program from the live sessions,
//! solves its convex relaxation, rounds the result onto the legal rate set
//! `{0} ∪ [R_min, R_i]`, and emits the first period of every session's plan.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{Period, TimeGrid};
use crate::profile::{full_rate_profile, LoadProfile};
use crate::qp::{solve_relaxed_warm, EvRecord, QpInstance, QpSolution, Tolerances};
use crate::session::{RepairEvent, SessionId, SessionState, COMPLETION_EPS_KWH, FEASIBILITY_EPS_KWH};

/// Loads closer than this are treated as the same level when rounding picks
/// periods, so ties resolve to the earliest period.
const LEVEL_RESOLUTION_KW: f64 = 1e-3;

/// Relaxed rates whose total energy is below this are dropped instead of
/// being rounded up to a full `R_min` period.
const ROUNDING_DROP_KWH: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RateLimits {
    /// Smallest non-zero command a charger accepts, kW.
    pub min_nonzero_rate_kw: f64,
}

impl Default for RateLimits {
    fn default() -> Self {
        RateLimits {
            min_nonzero_rate_kw: 1.4,
        }
    }
}

impl RateLimits {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_nonzero_rate_kw.is_finite() && self.min_nonzero_rate_kw > 0.0) {
            return Err(Error::invalid("min_nonzero_rate_kw", "must be positive"));
        }
        Ok(())
    }

    /// Whether `rate_kw` is 0 or inside `[R_min, max_rate_kw]`.
    pub fn is_legal(&self, rate_kw: f64, max_rate_kw: f64) -> bool {
        rate_kw == 0.0 || (rate_kw >= self.min_nonzero_rate_kw.min(max_rate_kw) && rate_kw <= max_rate_kw)
    }
}

/// Rate sequences for every managed session over the horizon.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SchedulePlan {
    pub created_at: Period,
    pub session_ids: Vec<SessionId>,
    pub rates_kw: Vec<Vec<f64>>,
    pub objective: f64,
}

impl SchedulePlan {
    pub fn rates_for(&self, id: &SessionId) -> Option<&[f64]> {
        let i = self.session_ids.iter().position(|s| s == id)?;
        Some(&self.rates_kw[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TickResult {
    pub period: Period,
    pub commands_kw: BTreeMap<SessionId, f64>,
    pub plan: SchedulePlan,
    pub repairs: Vec<(SessionId, RepairEvent)>,
    pub projected_aggregate: LoadProfile,
    pub instance_hash: u64,
    pub relaxed_objective: f64,
    pub solver_iterations: usize,
    /// The solver did not converge and the fallback plan was used.
    pub fallback: bool,
}

/// Assembles the program for the given managed sessions at period `now`.
///
/// The non-controllable load is `baseline + unmanaged` over `[now, now + T)`.
/// Sessions whose deadline lies beyond the horizon are truncated to it, with
/// their energy capped at what the horizon can deliver.
pub fn build_instance(
    sessions: &[&SessionState],
    baseline: &LoadProfile,
    unmanaged: &LoadProfile,
    now: Period,
    grid: &TimeGrid,
) -> Result<QpInstance> {
    let horizon = grid.horizon_periods;
    let dt = grid.period_hours();
    let base = baseline.window(now, horizon)?;
    let extra = unmanaged.window(now, horizon)?;
    let base_load_kw = base.iter().zip(extra).map(|(a, b)| a + b).collect();
    let evs = sessions
        .iter()
        .map(|s| {
            let d = (s.remaining_periods as usize).min(horizon);
            let mut energy = s.residual_energy_kwh;
            if s.remaining_periods as usize > horizon {
                energy = energy.min(d as f64 * dt * s.max_rate_kw());
            }
            EvRecord {
                max_rate_kw: s.max_rate_kw(),
                energy_kwh: energy,
                deadline_periods: d,
            }
        })
        .collect();
    Ok(QpInstance {
        period_hours: dt,
        base_load_kw,
        evs,
    })
}

/// Maps a relaxed solution onto `{0} ∪ [R_min, R_i]`.
///
/// Per EV, rates below `R_min` are cleared and their energy is re-placed on
/// the fewest idle periods before the deadline, at `max(R_min, total / n)`,
/// choosing periods in ascending order of the relaxed total load. Delivered
/// energy moves by less than `R_min Δ`, and never past the deadline.
pub fn round_plan(relaxed: &QpSolution, limits: &RateLimits, instance: &QpInstance) -> Vec<Vec<f64>> {
    let load = relaxed.aggregate_kw(instance);
    instance
        .evs
        .iter()
        .zip(&relaxed.rates_kw)
        .map(|(ev, rates)| round_ev(rates, ev, limits, &load, instance.period_hours))
        .collect()
}

fn round_ev(rates: &[f64], ev: &EvRecord, limits: &RateLimits, load: &[f64], period_hours: f64) -> Vec<f64> {
    let cap = ev.max_rate_kw;
    let rmin = limits.min_nonzero_rate_kw.min(cap);
    let d = ev.deadline_periods.min(rates.len());
    let mut out = vec![0.0; rates.len()];
    let mut pending = 0.0;
    for k in 0..d {
        let r = rates[k].clamp(0.0, cap);
        if r > 0.0 && r < rmin {
            pending += r;
        } else {
            out[k] = r;
        }
    }
    if pending * period_hours <= ROUNDING_DROP_KWH {
        return out;
    }

    let mut idle: Vec<usize> = (0..d).filter(|&k| out[k] == 0.0).collect();
    idle.sort_by(|&a, &b| {
        let la = (load[a] / LEVEL_RESOLUTION_KW) as i64;
        let lb = (load[b] / LEVEL_RESOLUTION_KW) as i64;
        la.cmp(&lb).then(a.cmp(&b))
    });

    let mut fills: Vec<f64> = Vec::new();
    if pending < rmin {
        fills.push(rmin);
    } else {
        let n = (pending / rmin) as usize;
        let even = pending / n as f64;
        if even <= cap {
            fills.resize(n, even);
        } else {
            let full = (pending / cap) as usize;
            fills.resize(full, cap);
            let rem = pending - full as f64 * cap;
            if rem > 1e-12 {
                fills.push(rem.max(rmin));
            }
        }
    }
    let placed = idle.len().min(fills.len());
    for (slot, rate) in idle.iter().zip(&fills) {
        out[*slot] = *rate;
    }
    // Not enough idle periods: top up the busy ones, lowest load first.
    let mut leftover: f64 = fills[placed..].iter().sum();
    if leftover > 0.0 {
        let mut busy: Vec<usize> = (0..d).filter(|&k| out[k] > 0.0 && out[k] < cap).collect();
        busy.sort_by(|&a, &b| load[a].total_cmp(&load[b]).then(a.cmp(&b)));
        for k in busy {
            let add = (cap - out[k]).min(leftover);
            out[k] += add;
            leftover -= add;
            if leftover <= 0.0 {
                break;
            }
        }
    }
    out
}

/// Load forecast of sessions charging outside the scheduler: each draws its
/// full rate from `now` until its residual energy is exhausted or it unplugs.
pub fn unmanaged_forecast<'a>(
    sessions: impl IntoIterator<Item = &'a SessionState>,
    now: Period,
    len: usize,
    period_hours: f64,
) -> LoadProfile {
    let mut total = LoadProfile::zeros(now, len);
    for s in sessions {
        if s.is_managed() || !s.is_drawing() {
            continue;
        }
        let window = (s.remaining_periods as usize).min(len);
        let p = full_rate_profile(now, window, s.residual_energy_kwh, s.max_rate_kw(), period_hours);
        // `p` starts at `now` and is no longer than `total`.
        total.accumulate(&p).expect("forecast window lies inside the horizon");
    }
    total
}

#[derive(Debug, Clone)]
struct PreviousPlan {
    created_at: Period,
    ids: Vec<SessionId>,
    relaxed: Vec<Vec<f64>>,
    rounded: Vec<Vec<f64>>,
}

/// Stateful driver of the per-period loop. Keeps the last plan for warm
/// starts and for the solver-failure fallback.
#[derive(Debug, Clone)]
pub struct Scheduler {
    pub grid: TimeGrid,
    pub limits: RateLimits,
    pub tolerances: Tolerances,
    previous: Option<PreviousPlan>,
}

impl Scheduler {
    pub fn new(grid: TimeGrid, limits: RateLimits, tolerances: Tolerances) -> Result<Self> {
        limits.validate()?;
        Ok(Scheduler {
            grid,
            limits,
            tolerances,
            previous: None,
        })
    }

    /// Runs one tick at period `now`. Managed sessions in `sessions` may be
    /// repaired in place; nothing else is mutated.
    pub fn tick(
        &mut self,
        sessions: &mut [SessionState],
        baseline: &LoadProfile,
        unmanaged: &LoadProfile,
        now: Period,
    ) -> Result<TickResult> {
        let dt = self.grid.period_hours();
        let horizon = self.grid.horizon_periods;

        let mut repairs = Vec::new();
        for s in sessions.iter_mut() {
            let needs_repair = s.request.opt_in
                && match s.status {
                    crate::session::SessionStatus::Active => !s.is_feasible(dt),
                    crate::session::SessionStatus::Expired => s.residual_energy_kwh > COMPLETION_EPS_KWH,
                    _ => false,
                };
            if needs_repair {
                let ev = s.repair(dt)?;
                repairs.push((s.id.clone(), ev));
            }
        }

        let managed: Vec<&SessionState> = sessions.iter().filter(|s| s.is_managed()).collect();
        let ids: Vec<SessionId> = managed.iter().map(|s| s.id.clone()).collect();
        let instance = build_instance(&managed, baseline, unmanaged, now, &self.grid)?;
        let warm = self.warm_start(&ids, now);
        let relaxed = solve_relaxed_warm(&instance, &self.tolerances, Some(&warm))?;

        let fallback = !relaxed.converged;
        let rounded = if fallback {
            self.fallback_plan(&managed, &ids, now)
        } else {
            round_plan(&relaxed, &self.limits, &instance)
        };

        let mut projected = LoadProfile {
            start_period: now,
            values_kw: instance.base_load_kw.clone(),
        };
        for r in &rounded {
            for (p, v) in projected.values_kw.iter_mut().zip(r) {
                *p += v;
            }
        }
        let objective = projected.values_kw.iter().map(|l| l * l).sum();
        let commands_kw = ids
            .iter()
            .zip(&rounded)
            .map(|(id, r)| (id.clone(), r.first().copied().unwrap_or(0.0)))
            .collect();

        self.previous = Some(PreviousPlan {
            created_at: now,
            ids: ids.clone(),
            relaxed: if fallback { rounded.clone() } else { relaxed.rates_kw.clone() },
            rounded: rounded.clone(),
        });
        debug_assert_eq!(projected.len(), horizon);

        Ok(TickResult {
            period: now,
            commands_kw,
            plan: SchedulePlan {
                created_at: now,
                session_ids: ids,
                rates_kw: rounded,
                objective,
            },
            repairs,
            projected_aggregate: projected,
            instance_hash: instance.fingerprint(),
            relaxed_objective: relaxed.objective,
            solver_iterations: relaxed.iterations,
            fallback,
        })
    }

    fn shifted_previous(&self, id: &SessionId, now: Period, rounded: bool) -> Option<Vec<f64>> {
        let prev = self.previous.as_ref()?;
        let shift = now.checked_sub(prev.created_at)? as usize;
        let i = prev.ids.iter().position(|p| p == id)?;
        let src = if rounded { &prev.rounded[i] } else { &prev.relaxed[i] };
        let mut out = vec![0.0; self.grid.horizon_periods];
        for (dst, v) in out.iter_mut().zip(src.iter().skip(shift)) {
            *dst = *v;
        }
        Some(out)
    }

    fn warm_start(&self, ids: &[SessionId], now: Period) -> Vec<Vec<f64>> {
        ids.iter()
            .map(|id| {
                self.shifted_previous(id, now, false)
                    .unwrap_or_else(|| vec![0.0; self.grid.horizon_periods])
            })
            .collect()
    }

    /// Previous plan shifted forward; sessions without one get their full
    /// rate if they have no slack left, otherwise nothing.
    fn fallback_plan(&self, managed: &[&SessionState], ids: &[SessionId], now: Period) -> Vec<Vec<f64>> {
        let horizon = self.grid.horizon_periods;
        let dt = self.grid.period_hours();
        managed
            .iter()
            .zip(ids)
            .map(|(s, id)| {
                self.shifted_previous(id, now, true).unwrap_or_else(|| {
                    let mut r = vec![0.0; horizon];
                    let zero_slack = s.residual_energy_kwh + FEASIBILITY_EPS_KWH >= s.max_deliverable_kwh(dt);
                    if zero_slack {
                        let d = (s.remaining_periods as usize).min(horizon);
                        r[..d].fill(s.max_rate_kw());
                    }
                    r
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qp::solve_relaxed;
    use crate::request::ChargingRequest;

    const DT: f64 = 1.0 / 60.0;

    fn solution(rates: Vec<Vec<f64>>) -> QpSolution {
        QpSolution {
            rates_kw: rates,
            objective: 0.0,
            kkt_residual: 0.0,
            energy_residual_kwh: 0.0,
            iterations: 1,
            converged: true,
        }
    }

    #[test]
    fn rounding_consolidates_sub_threshold_rates() {
        let mut r = vec![0.0; 20];
        r[..10].fill(0.3);
        let inst = QpInstance {
            period_hours: DT,
            base_load_kw: vec![50.0; 20],
            evs: vec![EvRecord {
                max_rate_kw: 7.0,
                energy_kwh: 3.0 * DT,
                deadline_periods: 20,
            }],
        };
        let out = round_plan(&solution(vec![r.clone()]), &RateLimits::default(), &inst);
        let nonzero: Vec<f64> = out[0].iter().copied().filter(|x| *x > 0.0).collect();
        assert_eq!(nonzero.len(), 2);
        assert!(nonzero.iter().all(|x| (1.4..=1.5).contains(x)));
        let before: f64 = r.iter().sum::<f64>() * DT;
        let after: f64 = out[0].iter().sum::<f64>() * DT;
        assert!((before - after).abs() <= 1.4 * DT);
    }

    #[test]
    fn rounding_fixed_point() {
        let r = vec![0.0, 1.4, 3.0, 7.0, 0.0, 2.2];
        let inst = QpInstance {
            period_hours: DT,
            base_load_kw: vec![1.0; 6],
            evs: vec![EvRecord {
                max_rate_kw: 7.0,
                energy_kwh: r.iter().sum::<f64>() * DT,
                deadline_periods: 6,
            }],
        };
        let out = round_plan(&solution(vec![r.clone()]), &RateLimits::default(), &inst);
        assert_eq!(out[0], r);
    }

    #[test]
    fn rounding_prefers_low_load_periods_before_deadline() {
        let r = vec![0.5, 0.5, 0.4, 0.0, 0.0];
        let inst = QpInstance {
            period_hours: DT,
            base_load_kw: vec![10.0, 5.0, 8.0, 0.0, 0.0],
            evs: vec![EvRecord {
                max_rate_kw: 7.0,
                energy_kwh: 1.4 * DT,
                deadline_periods: 3,
            }],
        };
        let out = round_plan(&solution(vec![r]), &RateLimits::default(), &inst);
        assert_eq!(out[0], vec![0.0, 1.4, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn rounding_with_narrow_rate_band() {
        // R barely above R_min: equal splitting would exceed R.
        let r = vec![0.8; 4];
        let inst = QpInstance {
            period_hours: DT,
            base_load_kw: vec![0.0; 4],
            evs: vec![EvRecord {
                max_rate_kw: 1.5,
                energy_kwh: 3.2 * DT,
                deadline_periods: 4,
            }],
        };
        let limits = RateLimits::default();
        let out = round_plan(&solution(vec![r]), &limits, &inst);
        assert!(out[0].iter().all(|x| limits.is_legal(*x, 1.5)));
        let after: f64 = out[0].iter().sum::<f64>();
        assert!((after - 3.2).abs() < 1.4);
    }

    #[test]
    fn zero_slack_untouched_by_rounding() {
        let inst = QpInstance {
            period_hours: DT,
            base_load_kw: vec![3.0; 30],
            evs: vec![EvRecord {
                max_rate_kw: 6.6,
                energy_kwh: 6.6 * 25.0 * DT,
                deadline_periods: 25,
            }],
        };
        let relaxed = solve_relaxed(&inst, &Tolerances::default()).unwrap();
        let out = round_plan(&relaxed, &RateLimits::default(), &inst);
        assert!(out[0][..25].iter().all(|x| *x == 6.6));
        assert!(out[0][25..].iter().all(|x| *x == 0.0));
    }

    fn grid(h: usize) -> TimeGrid {
        TimeGrid::minutely().with_horizon(h)
    }

    fn managed(id: &str, e: f64, r: f64, periods: u64) -> SessionState {
        let req = ChargingRequest::new(e, periods as f64 / 60.0, r, true);
        SessionState::new(id.into(), req, &TimeGrid::minutely()).unwrap()
    }

    #[test]
    fn build_instance_adds_unmanaged_load() {
        let g = grid(120);
        let baseline = LoadProfile::new(0, (0..200).map(|k| 50.0 + k as f64 * 0.1).collect()).unwrap();
        let a = managed("a", 2.0, 6.0, 100);
        let b = managed("b", 1.0, 6.0, 60);
        let mut opt_out = managed("c", 3.5, 7.0, 300);
        opt_out.opt_out().unwrap();
        let unmanaged = unmanaged_forecast([&opt_out], 10, 120, DT);
        // 3.5 kWh at 7 kW is exactly 30 periods.
        assert!(unmanaged.values_kw[..30].iter().all(|v| *v == 7.0));
        assert!(unmanaged.values_kw[30..].iter().all(|v| *v == 0.0));
        let inst = build_instance(&[&a, &b], &baseline, &unmanaged, 10, &g).unwrap();
        for k in 0..120 {
            let expected = baseline.at(10 + k as u64).unwrap() + if k < 30 { 7.0 } else { 0.0 };
            assert_eq!(inst.base_load_kw[k], expected);
        }
        assert_eq!(inst.evs.len(), 2);
        assert_eq!(inst.evs[1].deadline_periods, 60);

        let none = build_instance(&[], &baseline, &LoadProfile::zeros(10, 120), 10, &g).unwrap();
        assert!(none.evs.is_empty());
        assert_eq!(none.base_load_kw, baseline.window(10, 120).unwrap());

        assert!(build_instance(&[&a], &baseline, &LoadProfile::zeros(100, 120), 100, &g).is_err());
    }

    #[test]
    fn long_deadline_is_truncated_to_horizon() {
        let g = grid(60);
        let s = managed("a", 20.0, 6.0, 600);
        let baseline = LoadProfile::zeros(0, 60);
        let inst = build_instance(&[&s], &baseline, &LoadProfile::zeros(0, 60), 0, &g).unwrap();
        assert_eq!(inst.evs[0].deadline_periods, 60);
        assert!((inst.evs[0].energy_kwh - 6.0).abs() < 1e-12);
    }

    #[test]
    fn empty_tick() {
        let g = grid(30);
        let mut sched = Scheduler::new(g, RateLimits::default(), Tolerances::default()).unwrap();
        let baseline = LoadProfile::new(0, vec![42.0; 30]).unwrap();
        let res = sched.tick(&mut [], &baseline, &LoadProfile::zeros(0, 30), 0).unwrap();
        assert!(res.commands_kw.is_empty());
        assert_eq!(res.projected_aggregate.values_kw, baseline.values_kw);
    }

    #[test]
    fn fallback_uses_previous_plan() {
        let g = grid(60);
        let baseline = LoadProfile::new(0, vec![10.0; 200]).unwrap();
        let zeros = LoadProfile::zeros(0, 200);
        let mut sessions = vec![managed("a", 1.0, 6.0, 50), managed("z", 6.0 * 40.0 * DT, 6.0, 40)];
        let mut sched = Scheduler::new(g, RateLimits::default(), Tolerances::default()).unwrap();
        let first = sched.tick(&mut sessions, &baseline, &zeros, 0).unwrap();
        assert!(!first.fallback);

        sched.tolerances.max_iterations = 0;
        let second = sched.tick(&mut sessions, &baseline, &zeros, 1).unwrap();
        assert!(second.fallback);
        let id_a: SessionId = "a".into();
        assert_eq!(second.plan.rates_for(&id_a).unwrap()[0], first.plan.rates_for(&id_a).unwrap()[1]);

        // No previous plan: zero-slack sessions run flat out, others wait.
        let mut fresh = Scheduler::new(g, RateLimits::default(), Tolerances {
            max_iterations: 0,
            ..Tolerances::default()
        })
        .unwrap();
        let res = fresh.tick(&mut sessions, &baseline, &zeros, 0).unwrap();
        assert!(res.fallback);
        assert_eq!(res.commands_kw[&id_a], 0.0);
        assert_eq!(res.commands_kw[&SessionId::from("z")], 6.0);
    }
}
