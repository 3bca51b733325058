//! Relaxed valley-filling quadratic program.
//!
//! ```text
//!   minimize    sum_k ( base(k) + sum_i r_i(k) )^2
//!   subject to  sum_{k < d_i} r_i(k) Δ = E_i
//!               0 <= r_i(k) <= R_i          for k < d_i
//!               r_i(k) = 0                  for k >= d_i
//! ```
//!
//! Solved by cyclic block-coordinate descent: each block is one EV, and the
//! block subproblem (the others held fixed) is an exact water-filling over the
//! EV's window. Blocks are visited in a canonical order derived from the EV
//! data, so the result does not depend on the order EVs are listed in.
//!
//! Optimality is certified with the water-filling KKT conditions: within
//! each EV's window, periods where it charges strictly between its bounds
//! share one total-load level, idle periods sit at or above it, and
//! full-rate periods at or below it.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::session::FEASIBILITY_EPS_KWH;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvRecord {
    pub max_rate_kw: f64,
    pub energy_kwh: f64,
    /// Periods (from the start of the horizon) in which the EV may charge.
    pub deadline_periods: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QpInstance {
    pub period_hours: f64,
    /// Non-controllable load over the horizon; its length is the horizon.
    pub base_load_kw: Vec<f64>,
    pub evs: Vec<EvRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Tolerances {
    /// Allowed spread of the water level, kW.
    pub kkt_tol_kw: f64,
    pub energy_tol_kwh: f64,
    /// Budget of full sweeps over all EVs.
    pub max_iterations: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            kkt_tol_kw: 1e-3,
            energy_tol_kwh: 1e-4,
            max_iterations: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QpSolution {
    /// One rate sequence per EV, each `horizon` long, in instance order.
    pub rates_kw: Vec<Vec<f64>>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub energy_residual_kwh: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl QpSolution {
    pub fn aggregate_kw(&self, instance: &QpInstance) -> Vec<f64> {
        total_load(&instance.base_load_kw, &self.rates_kw, &instance.canonical_order())
    }
}

/// Largest KKT and energy violations of a candidate point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certificate {
    /// Largest water-level violation over all EVs, kW.
    pub kkt_residual: f64,
    /// Largest `|sum_k r_i(k) Δ - E_i|` over all EVs, kWh.
    pub energy_residual_kwh: f64,
    /// Largest bound violation (`r < 0`, `r > R`, or charging past the deadline), kW.
    pub bound_residual_kw: f64,
}

impl Certificate {
    pub fn passes(&self, tol: &Tolerances) -> bool {
        self.kkt_residual <= tol.kkt_tol_kw
            && self.energy_residual_kwh <= tol.energy_tol_kwh
            && self.bound_residual_kw <= tol.kkt_tol_kw
    }
}

impl QpInstance {
    pub fn horizon(&self) -> usize {
        self.base_load_kw.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.period_hours.is_finite() && self.period_hours > 0.0) {
            return Err(Error::invalid("period_hours", "must be positive"));
        }
        if self.base_load_kw.is_empty() {
            return Err(Error::invalid("base_load_kw", "horizon must be at least one period"));
        }
        if self.base_load_kw.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("base_load_kw", "must be finite"));
        }
        let horizon = self.horizon();
        for (index, ev) in self.evs.iter().enumerate() {
            if !(ev.max_rate_kw.is_finite() && ev.max_rate_kw > 0.0) {
                return Err(Error::invalid("max_rate_kw", alloc::format!("EV {index}: must be positive")));
            }
            if !(ev.energy_kwh.is_finite() && ev.energy_kwh >= 0.0) {
                return Err(Error::invalid("energy_kwh", alloc::format!("EV {index}: must be non-negative")));
            }
            if ev.deadline_periods > horizon {
                return Err(Error::invalid(
                    "deadline_periods",
                    alloc::format!("EV {index}: {} exceeds horizon {horizon}", ev.deadline_periods),
                ));
            }
            let deliverable_kwh = ev.deadline_periods as f64 * self.period_hours * ev.max_rate_kw;
            if ev.energy_kwh > deliverable_kwh + FEASIBILITY_EPS_KWH {
                return Err(Error::Infeasible {
                    index,
                    energy_kwh: ev.energy_kwh,
                    deliverable_kwh,
                });
            }
        }
        Ok(())
    }

    /// FNV-1a digest of the instance data, for audit logs.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv64::new();
        h.write_u64(self.period_hours.to_bits());
        h.write_u64(self.base_load_kw.len() as u64);
        for v in &self.base_load_kw {
            h.write_u64(v.to_bits());
        }
        for ev in &self.evs {
            h.write_u64(ev.max_rate_kw.to_bits());
            h.write_u64(ev.energy_kwh.to_bits());
            h.write_u64(ev.deadline_periods as u64);
        }
        h.finish()
    }

    /// Order in which blocks are swept: by deadline, rate, energy, then position.
    fn canonical_order(&self) -> Vec<usize> {
        let mut order = identity(self.evs.len());
        order.sort_by(|&a, &b| {
            let (x, y) = (&self.evs[a], &self.evs[b]);
            x.deadline_periods
                .cmp(&y.deadline_periods)
                .then(x.max_rate_kw.total_cmp(&y.max_rate_kw))
                .then(x.energy_kwh.total_cmp(&y.energy_kwh))
        });
        order
    }
}

struct Fnv64(u64);

impl Fnv64 {
    fn new() -> Self {
        Fnv64(0xcbf2_9ce4_8422_2325)
    }

    fn write_u64(&mut self, x: u64) {
        for b in x.to_le_bytes() {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    fn finish(&self) -> u64 {
        self.0
    }
}

fn identity(n: usize) -> Vec<usize> {
    (0..n).collect()
}

fn total_load(base: &[f64], rates: &[Vec<f64>], order: &[usize]) -> Vec<f64> {
    let mut load = base.to_vec();
    for &i in order {
        for (l, r) in load.iter_mut().zip(&rates[i]) {
            *l += r;
        }
    }
    load
}

fn objective(load: &[f64]) -> f64 {
    load.iter().map(|l| l * l).sum()
}

/// Solves the relaxation from a cold start.
pub fn solve_relaxed(instance: &QpInstance, tol: &Tolerances) -> Result<QpSolution> {
    solve_relaxed_warm(instance, tol, None)
}

/// Solves the relaxation, optionally starting from `warm` (one sequence per
/// EV in instance order). Warm values are clipped to the EV bounds first.
pub fn solve_relaxed_warm(instance: &QpInstance, tol: &Tolerances, warm: Option<&[Vec<f64>]>) -> Result<QpSolution> {
    instance.validate()?;
    let horizon = instance.horizon();
    let dt = instance.period_hours;
    let order = instance.canonical_order();

    let mut rates: Vec<Vec<f64>> = instance
        .evs
        .iter()
        .enumerate()
        .map(|(i, ev)| {
            let mut r = vec![0.0; horizon];
            if let Some(w) = warm.and_then(|w| w.get(i)) {
                for (dst, src) in r.iter_mut().zip(w).take(ev.deadline_periods) {
                    *dst = if src.is_finite() { src.clamp(0.0, ev.max_rate_kw) } else { 0.0 };
                }
            }
            r
        })
        .collect();

    let internal_tol = Tolerances {
        kkt_tol_kw: tol.kkt_tol_kw * 0.1,
        energy_tol_kwh: tol.energy_tol_kwh * 0.1,
        ..*tol
    };

    let mut scratch = Vec::with_capacity(2 * horizon);
    let mut others = vec![0.0; horizon];
    let mut iterations = 0;
    let mut converged = false;
    let mut load = total_load(&instance.base_load_kw, &rates, &order);
    let mut cert = certify_with_load(instance, &rates, &load);

    if instance.evs.is_empty() || (warm.is_some() && cert.passes(&internal_tol)) {
        converged = true;
    }

    while !converged && iterations < tol.max_iterations {
        for &i in &order {
            let ev = &instance.evs[i];
            let d = ev.deadline_periods;
            let r = &mut rates[i];
            for k in 0..d {
                others[k] = load[k] - r[k];
            }
            let target = ev.energy_kwh / dt;
            water_fill(&others[..d], ev.max_rate_kw, target, &mut r[..d], &mut scratch);
            for k in 0..d {
                load[k] = others[k] + r[k];
            }
        }
        iterations += 1;
        // Rebuild from scratch so rounding in the incremental updates never accumulates.
        load = total_load(&instance.base_load_kw, &rates, &order);
        cert = certify_with_load(instance, &rates, &load);
        converged = cert.passes(&internal_tol);
    }

    Ok(QpSolution {
        objective: objective(&load),
        kkt_residual: cert.kkt_residual,
        energy_residual_kwh: cert.energy_residual_kwh,
        rates_kw: rates,
        iterations,
        converged,
    })
}

/// Exact minimiser of `sum_k (base_k + r_k)^2` subject to `sum_k r_k = target`
/// and `0 <= r_k <= cap`: `r_k = clamp(level - base_k, 0, cap)` with the level
/// found by walking the sorted breakpoints of the piecewise-linear fill curve.
fn water_fill(base: &[f64], cap: f64, target: f64, out: &mut [f64], events: &mut Vec<(f64, f64)>) {
    let n = base.len();
    if n == 0 || target <= 0.0 {
        out.fill(0.0);
        return;
    }
    let full = cap * n as f64;
    if target >= full * (1.0 - 1e-12) {
        out.fill(cap);
        return;
    }
    events.clear();
    for &b in base {
        events.push((b, 1.0));
        events.push((b + cap, -1.0));
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));

    let mut level = events[events.len() - 1].0;
    let mut filled = 0.0;
    let mut slope = 0.0;
    let mut prev = events[0].0;
    for &(x, delta) in events.iter() {
        let next = filled + slope * (x - prev);
        if next >= target && slope > 0.0 {
            level = prev + (target - filled) / slope;
            break;
        }
        filled = next;
        slope += delta;
        prev = x;
    }
    for (r, &b) in out.iter_mut().zip(base) {
        *r = (level - b).clamp(0.0, cap);
    }
}

/// Checks a candidate point against the bounds, the energy equalities and the
/// water-filling optimality conditions.
pub fn certify(instance: &QpInstance, rates: &[Vec<f64>]) -> Certificate {
    let load = total_load(&instance.base_load_kw, rates, &instance.canonical_order());
    certify_with_load(instance, rates, &load)
}

fn certify_with_load(instance: &QpInstance, rates: &[Vec<f64>], load: &[f64]) -> Certificate {
    let mut cert = Certificate {
        kkt_residual: 0.0,
        energy_residual_kwh: 0.0,
        bound_residual_kw: 0.0,
    };
    for (ev, r) in instance.evs.iter().zip(rates) {
        let d = ev.deadline_periods.min(r.len());
        let cap = ev.max_rate_kw;
        let eps = 1e-12 * cap.max(1.0);

        let delivered: f64 = r[..d].iter().sum::<f64>() * instance.period_hours;
        cert.energy_residual_kwh = cert.energy_residual_kwh.max((delivered - ev.energy_kwh).abs());
        for (k, &x) in r.iter().enumerate() {
            let v = if k >= d { x.abs() } else { (-x).max(x - cap).max(0.0) };
            cert.bound_residual_kw = cert.bound_residual_kw.max(v);
        }

        let (mut int_lo, mut int_hi) = (f64::INFINITY, f64::NEG_INFINITY);
        let mut idle_lo = f64::INFINITY;
        let mut full_hi = f64::NEG_INFINITY;
        for k in 0..d {
            let l = load[k];
            if r[k] <= eps {
                idle_lo = idle_lo.min(l);
            } else if r[k] >= cap - eps {
                full_hi = full_hi.max(l);
            } else {
                int_lo = int_lo.min(l);
                int_hi = int_hi.max(l);
            }
        }
        let residual = if int_lo <= int_hi {
            let level = 0.5 * (int_lo + int_hi);
            let spread = int_hi - int_lo;
            spread.max(level - idle_lo).max(full_hi - level)
        } else if idle_lo.is_finite() && full_hi.is_finite() {
            0.5 * (full_hi - idle_lo)
        } else {
            0.0
        };
        cert.kkt_residual = cert.kkt_residual.max(residual);
    }
    cert
}
