//! Exhaustive search over discretised charging profiles.
//!
//! Every rate is a multiple of `step_kw`. The first EV's profiles are
//! enumerated outright; the second EV's best response to each is found by
//! dynamic programming over (period, energy units used), which is exact
//! because the objective is separable across periods once the first EV is
//! fixed.

#![allow(dead_code)]

use evflex_core::qp::QpInstance;

pub struct OracleResult {
    pub objective: f64,
    pub rates_kw: Vec<Vec<f64>>,
}

fn units(x: f64, step: f64) -> Option<usize> {
    let u = (x / step).round();
    ((x - u * step).abs() < 1e-9).then_some(u as usize)
}

/// All profiles with `total` units spread over the first `d` of `t` periods,
/// at most `cap` units per period.
fn compositions(total: usize, d: usize, cap: usize, t: usize) -> Vec<Vec<usize>> {
    fn rec(left: usize, k: usize, d: usize, cap: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k == d {
            if left == 0 {
                out.push(cur.clone());
            }
            return;
        }
        let room = (d - k - 1) * cap;
        let lo = left.saturating_sub(room);
        for u in lo..=cap.min(left) {
            cur[k] = u;
            rec(left - u, k + 1, d, cap, cur, out);
        }
        cur[k] = 0;
    }
    let mut out = Vec::new();
    let mut cur = vec![0; t];
    rec(total, 0, d, cap, &mut cur, &mut out);
    out
}

/// Cheapest placement of `total` units over the first `d` periods on top of `load`.
fn best_response(load: &[f64], total: usize, d: usize, cap: usize, step: f64) -> Option<(f64, Vec<usize>)> {
    let inf = f64::INFINITY;
    // cost[k][u]: best cost of periods k.. using exactly u more units.
    let t = load.len();
    let mut cost = vec![vec![inf; total + 1]; t + 1];
    let mut choice = vec![vec![0usize; total + 1]; t];
    cost[t][0] = 0.0;
    for k in (0..t).rev() {
        let max_here = if k < d { cap } else { 0 };
        for u in 0..=total {
            for a in 0..=max_here.min(u) {
                let next = cost[k + 1][u - a];
                if next == inf {
                    continue;
                }
                let l = load[k] + a as f64 * step;
                let c = l * l + next;
                if c < cost[k][u] {
                    cost[k][u] = c;
                    choice[k][u] = a;
                }
            }
        }
    }
    if cost[0][total] == inf {
        return None;
    }
    let mut prof = vec![0; t];
    let mut u = total;
    for k in 0..t {
        prof[k] = choice[k][u];
        u -= prof[k];
    }
    Some((cost[0][total], prof))
}

/// Optimum over profiles on the `step_kw` grid. Requires one or two EVs whose
/// rates and energies are representable on the grid; `None` if no grid
/// profile is feasible.
pub fn brute_force(inst: &QpInstance, step_kw: f64) -> Option<OracleResult> {
    let t = inst.horizon();
    let step_kwh = step_kw * inst.period_hours;
    let spec: Vec<(usize, usize, usize)> = inst
        .evs
        .iter()
        .map(|ev| {
            let total = units(ev.energy_kwh, step_kwh).expect("energy not on the grid");
            let cap = (ev.max_rate_kw / step_kw + 1e-9).floor() as usize;
            (total, ev.deadline_periods, cap)
        })
        .collect();
    let base = &inst.base_load_kw;
    match spec.as_slice() {
        [] => Some(OracleResult {
            objective: base.iter().map(|l| l * l).sum(),
            rates_kw: vec![],
        }),
        [(e, d, c)] => {
            let (obj, p) = best_response(base, *e, *d, *c, step_kw)?;
            Some(OracleResult {
                objective: obj,
                rates_kw: vec![p.iter().map(|u| *u as f64 * step_kw).collect()],
            })
        }
        [(e1, d1, c1), (e2, d2, c2)] => {
            let mut best: Option<OracleResult> = None;
            let mut load = vec![0.0; t];
            for p1 in compositions(*e1, *d1, *c1, t) {
                for k in 0..t {
                    load[k] = base[k] + p1[k] as f64 * step_kw;
                }
                if let Some((obj, p2)) = best_response(&load, *e2, *d2, *c2, step_kw) {
                    if best.as_ref().is_none_or(|b| obj < b.objective) {
                        best = Some(OracleResult {
                            objective: obj,
                            rates_kw: vec![
                                p1.iter().map(|u| *u as f64 * step_kw).collect(),
                                p2.iter().map(|u| *u as f64 * step_kw).collect(),
                            ],
                        });
                    }
                }
            }
            best
        }
        _ => panic!("oracle handles at most two EVs"),
    }
}
