//! Run directories and the metrics computed from them.
//!
//! A run directory holds `run.json`, one `aggregate_<policy>.csv` and one
//! `sessions_<policy>.json` per policy, and `connections.csv`. The metrics
//! step reads nothing else, so runs can be produced elsewhere.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use evflex_core::metrics::{
    band_summary, duration_curve, opt_in_curve, peak_increase, threshold_grid, BandSummary, LoadDurationCurve,
    OptInCurve, PeakIncrease,
};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::io::{read_json, write_json, write_table};
use crate::sim::{Policy, PolicyRun, SessionOutcome};

/// Description of a run, stored as `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub period_minutes: u32,
    pub periods: usize,
    /// Days on which sessions may arrive; peak statistics use only these.
    pub arrival_days: u32,
    pub baseline_peak_kw: f64,
    pub seed: u64,
    pub sessions: usize,
    pub policies: Vec<Policy>,
}

impl RunMeta {
    pub fn periods_per_day(&self) -> usize {
        (1440 / self.period_minutes) as usize
    }
}

/// Minute-resolution load of one policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySeries {
    pub policy: Policy,
    pub baseline_kw: Vec<f64>,
    pub ev_kw: Vec<f64>,
    pub total_kw: Vec<f64>,
}

impl From<&PolicyRun> for PolicySeries {
    fn from(run: &PolicyRun) -> Self {
        PolicySeries {
            policy: run.policy,
            baseline_kw: run.baseline.values_kw.clone(),
            ev_kw: run.ev_load.values_kw.clone(),
            total_kw: run.aggregate.values_kw.clone(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct AggregateRow {
    period: u64,
    minute_of_day: u32,
    baseline_kw: f64,
    ev_kw: f64,
    total_kw: f64,
}

fn aggregate_file(policy: Policy) -> String {
    format!("aggregate_{}.csv", policy.label())
}

fn sessions_file(policy: Policy) -> String {
    format!("sessions_{}.json", policy.label())
}

pub fn write_run(dir: &Path, meta: &RunMeta, runs: &[PolicyRun], connections: &[u32]) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_json(&dir.join("run.json"), meta)?;
    let ppd = meta.periods_per_day() as u64;
    for run in runs {
        let path = dir.join(aggregate_file(run.policy));
        let csv_err = |source| Error::Csv {
            path: path.clone(),
            source,
        };
        let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
        for (k, ((b, e), t)) in run
            .baseline
            .values_kw
            .iter()
            .zip(&run.ev_load.values_kw)
            .zip(&run.aggregate.values_kw)
            .enumerate()
        {
            let period = run.aggregate.start_period + k as u64;
            w.serialize(AggregateRow {
                period,
                minute_of_day: ((period % ppd) * meta.period_minutes as u64) as u32,
                baseline_kw: *b,
                ev_kw: *e,
                total_kw: *t,
            })
            .map_err(csv_err)?;
        }
        w.flush().map_err(io_err(&path))?;
        write_json(&dir.join(sessions_file(run.policy)), &run.outcomes)?;
    }
    write_table(
        &dir.join("connections.csv"),
        &["period", "connected"],
        connections.iter().enumerate().map(|(k, c)| vec![k.to_string(), c.to_string()]),
    )
}

pub type RunOutcomes = BTreeMap<Policy, Vec<SessionOutcome>>;

pub fn read_run(dir: &Path) -> Result<(RunMeta, Vec<PolicySeries>, RunOutcomes)> {
    let meta: RunMeta = read_json(&dir.join("run.json"))?;
    let mut series = Vec::new();
    let mut outcomes = BTreeMap::new();
    for &policy in &meta.policies {
        let path = dir.join(aggregate_file(policy));
        let csv_err = |source| Error::Csv {
            path: path.clone(),
            source,
        };
        let mut r = csv::Reader::from_path(&path).map_err(csv_err)?;
        let mut s = PolicySeries {
            policy,
            baseline_kw: Vec::new(),
            ev_kw: Vec::new(),
            total_kw: Vec::new(),
        };
        for (k, row) in r.deserialize::<AggregateRow>().enumerate() {
            let row = row.map_err(csv_err)?;
            if row.period != k as u64 {
                return Err(Error::Format {
                    path,
                    reason: format!("row {k} holds period {}", row.period),
                });
            }
            s.baseline_kw.push(row.baseline_kw);
            s.ev_kw.push(row.ev_kw);
            s.total_kw.push(row.total_kw);
        }
        if s.total_kw.len() != meta.periods {
            return Err(Error::Format {
                path,
                reason: format!("expected {} periods, found {}", meta.periods, s.total_kw.len()),
            });
        }
        series.push(s);
        outcomes.insert(policy, read_json(&dir.join(sessions_file(policy)))?);
    }
    Ok((meta, series, outcomes))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyMetrics {
    pub policy: Policy,
    pub peak_kw: f64,
    pub peak_increase: PeakIncrease,
    pub duration: LoadDurationCurve,
    /// EV load across days, per period of day.
    pub ev_bands: BandSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub baseline_peak_kw: f64,
    pub days: usize,
    pub policies: Vec<PolicyMetrics>,
    pub opt_in: OptInCurve,
}

impl Report {
    pub fn policy(&self, policy: Policy) -> Option<&PolicyMetrics> {
        self.policies.iter().find(|m| m.policy == policy)
    }
}

/// Threshold step of the load-duration curves, in kW.
pub const DURATION_STEP_KW: f64 = 1.0;

pub fn summarize(meta: &RunMeta, series: &[PolicySeries], outcomes: &RunOutcomes) -> Result<Report> {
    let ppd = meta.periods_per_day();
    let whole_days = meta.periods / ppd;
    let days = (meta.arrival_days as usize).clamp(1, whole_days.max(1));
    let span = days * ppd;
    if meta.periods < span {
        return Err(Error::Scenario("run is shorter than one day".into()));
    }
    let top = series
        .iter()
        .flat_map(|s| s.total_kw.iter().copied())
        .fold(0.0, f64::max)
        .ceil();
    let thresholds = threshold_grid(0.0, top, DURATION_STEP_KW);

    let mut policies = Vec::new();
    for s in series {
        let window = &s.total_kw[..span];
        let ev_days: Vec<&[f64]> = s.ev_kw[..span].chunks(ppd).collect();
        policies.push(PolicyMetrics {
            policy: s.policy,
            peak_kw: window.iter().copied().fold(0.0, f64::max),
            peak_increase: peak_increase(window, ppd, meta.baseline_peak_kw)?,
            duration: duration_curve(&s.total_kw, &thresholds, meta.period_minutes, s.policy.label()),
            ev_bands: band_summary(&ev_days)?,
        });
    }

    // Opt-in choices are shared by all policies; prefer the closed-loop
    // outcomes for realised slack.
    let source = [Policy::OptimizEv, Policy::Unmanaged, Policy::Tou]
        .iter()
        .find_map(|p| outcomes.get(p))
        .map(Vec::as_slice)
        .unwrap_or(&[]);
    let pairs: Vec<(f64, bool)> = source.iter().map(|o| (o.realized_slack_hours, o.opt_in)).collect();
    Ok(Report {
        baseline_peak_kw: meta.baseline_peak_kw,
        days,
        policies,
        opt_in: opt_in_curve(&pairs, 1.0)?,
    })
}

pub fn write_report(dir: &Path, report: &Report) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let labels: Vec<&str> = report.policies.iter().map(|m| m.policy.label()).collect();

    let mut header = vec!["threshold_kw"];
    header.extend(&labels);
    let rows = report.policies.first().map(|m| m.duration.points.len()).unwrap_or(0);
    write_table(
        &dir.join("duration_curve.csv"),
        &header,
        (0..rows).map(|i| {
            let mut row = vec![report.policies[0].duration.points[i].0.to_string()];
            row.extend(report.policies.iter().map(|m| m.duration.points[i].1.to_string()));
            row
        }),
    )?;

    let mut bands = Vec::new();
    for m in &report.policies {
        let b = &m.ev_bands;
        for k in 0..b.len() {
            bands.push(vec![
                m.policy.label().to_string(),
                k.to_string(),
                b.min[k].to_string(),
                b.p10[k].to_string(),
                b.median[k].to_string(),
                b.p90[k].to_string(),
                b.max[k].to_string(),
            ]);
        }
    }
    write_table(
        &dir.join("bands.csv"),
        &["policy", "period_of_day", "min_kw", "p10_kw", "median_kw", "p90_kw", "max_kw"],
        bands,
    )?;

    let mut peaks = Vec::new();
    for m in &report.policies {
        for (d, v) in m.peak_increase.per_day_percent.iter().enumerate() {
            peaks.push(vec![m.policy.label().to_string(), d.to_string(), v.to_string()]);
        }
        peaks.push(vec![
            m.policy.label().to_string(),
            "median".into(),
            m.peak_increase.median_percent.to_string(),
        ]);
    }
    write_table(&dir.join("peaks.csv"), &["policy", "day", "peak_increase_percent"], peaks)?;

    let c = &report.opt_in;
    write_table(
        &dir.join("opt_in.csv"),
        &["lo_hours", "hi_hours", "sessions", "opted_in", "frequency"],
        c.bins.iter().chain(std::iter::once(&c.beyond)).map(|b| {
            vec![
                b.lo_hours.to_string(),
                b.hi_hours.to_string(),
                b.sessions.to_string(),
                b.opted_in.to_string(),
                b.frequency().map(|f| f.to_string()).unwrap_or_default(),
            ]
        }),
    )?;

    write_json(&dir.join("metrics.json"), report)
}
