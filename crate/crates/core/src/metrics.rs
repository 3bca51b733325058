//! Evaluation metrics over aggregate load series and session outcomes.
//!
//! Percentiles use linear interpolation between order statistics: for `n`
//! sorted samples and fraction `q`, the value at rank `q (n - 1)`.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Per-day peak increase over a reference peak, in percent.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PeakIncrease {
    pub per_day_percent: Vec<f64>,
    pub median_percent: f64,
}

/// Splits `values` into whole days and reports `(day_peak - reference) / reference`
/// for each, plus the median. Negative values mean the day stayed below the reference.
pub fn peak_increase(values_kw: &[f64], periods_per_day: usize, reference_peak_kw: f64) -> Result<PeakIncrease> {
    if values_kw.is_empty() {
        return Err(Error::invalid("aggregate", "profile is empty"));
    }
    if periods_per_day == 0 || !values_kw.len().is_multiple_of(periods_per_day) {
        return Err(Error::invalid("aggregate", "profile does not span whole days"));
    }
    if !(reference_peak_kw.is_finite() && reference_peak_kw > 0.0) {
        return Err(Error::invalid("reference_peak_kw", "must be positive"));
    }
    let per_day_percent: Vec<f64> = values_kw
        .chunks(periods_per_day)
        .map(|day| {
            let peak = day.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (peak - reference_peak_kw) / reference_peak_kw * 100.0
        })
        .collect();
    let median_percent = percentile(&per_day_percent, 0.5);
    Ok(PeakIncrease {
        per_day_percent,
        median_percent,
    })
}

/// Minutes at or above each threshold.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LoadDurationCurve {
    pub label: String,
    /// `(threshold_kw, minutes)` sorted by threshold.
    pub points: Vec<(f64, u64)>,
}

impl LoadDurationCurve {
    pub fn minutes_at(&self, threshold_kw: f64) -> Option<u64> {
        self.points.iter().find(|(t, _)| *t == threshold_kw).map(|(_, m)| *m)
    }
}

pub fn duration_curve(values_kw: &[f64], thresholds_kw: &[f64], period_minutes: u32, label: &str) -> LoadDurationCurve {
    let mut sorted: Vec<f64> = values_kw.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut thresholds = thresholds_kw.to_vec();
    thresholds.sort_by(f64::total_cmp);
    let points = thresholds
        .into_iter()
        .map(|t| {
            let below = sorted.partition_point(|v| *v < t);
            (t, (sorted.len() - below) as u64 * period_minutes as u64)
        })
        .collect();
    LoadDurationCurve {
        label: label.into(),
        points,
    }
}

/// Evenly spaced thresholds from `lo` to `hi` inclusive.
pub fn threshold_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    if !(step > 0.0) || hi < lo {
        return Vec::new();
    }
    let n = ((hi - lo) / step + 1e-9) as usize;
    (0..=n).map(|i| lo + i as f64 * step).collect()
}

/// Pointwise order statistics across days.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BandSummary {
    pub min: Vec<f64>,
    pub p10: Vec<f64>,
    pub median: Vec<f64>,
    pub p90: Vec<f64>,
    pub max: Vec<f64>,
}

impl BandSummary {
    pub fn len(&self) -> usize {
        self.median.len()
    }

    pub fn is_empty(&self) -> bool {
        self.median.is_empty()
    }
}

/// Order statistics per period-of-day over the given days. All days must
/// have equal length.
pub fn band_summary(days: &[&[f64]]) -> Result<BandSummary> {
    let first = days.first().ok_or_else(|| Error::invalid("days", "need at least one day"))?;
    let len = first.len();
    if days.iter().any(|d| d.len() != len) {
        return Err(Error::invalid("days", "days differ in length"));
    }
    let mut out = BandSummary {
        min: Vec::with_capacity(len),
        p10: Vec::with_capacity(len),
        median: Vec::with_capacity(len),
        p90: Vec::with_capacity(len),
        max: Vec::with_capacity(len),
    };
    let mut column = Vec::with_capacity(days.len());
    for k in 0..len {
        column.clear();
        column.extend(days.iter().map(|d| d[k]));
        column.sort_by(f64::total_cmp);
        out.min.push(column[0]);
        out.p10.push(sorted_percentile(&column, 0.1));
        out.median.push(sorted_percentile(&column, 0.5));
        out.p90.push(sorted_percentile(&column, 0.9));
        out.max.push(column[column.len() - 1]);
    }
    Ok(out)
}

/// Linear-interpolation percentile of an unsorted sample; NaN when empty.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    sorted_percentile(&v, q)
}

fn sorted_percentile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let rank = q.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = rank as usize;
            let hi = (lo + 1).min(n - 1);
            let frac = rank - lo as f64;
            sorted[lo] + (sorted[hi] - sorted[lo]) * frac
        }
    }
}

/// Opt-in statistics of one realised-slack bin.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OptInBin {
    pub lo_hours: f64,
    pub hi_hours: f64,
    pub sessions: usize,
    pub opted_in: usize,
}

impl OptInBin {
    /// `None` for an empty bin.
    pub fn frequency(&self) -> Option<f64> {
        (self.sessions > 0).then(|| self.opted_in as f64 / self.sessions as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OptInCurve {
    /// Bins covering realised slack in `[0, 24]` hours.
    pub bins: Vec<OptInBin>,
    /// Sessions with realised slack above 24 hours.
    pub beyond: OptInBin,
}

pub const OPT_IN_CURVE_LIMIT_HOURS: f64 = 24.0;

/// Opt-in frequency as a function of realised slack, from
/// `(realised_slack_hours, opted_in)` pairs.
pub fn opt_in_curve(outcomes: &[(f64, bool)], bin_width_hours: f64) -> Result<OptInCurve> {
    if !(bin_width_hours.is_finite() && bin_width_hours > 0.0) {
        return Err(Error::invalid("bin_width_hours", "must be positive"));
    }
    let limit = OPT_IN_CURVE_LIMIT_HOURS;
    let mut n_bins = (limit / bin_width_hours) as usize;
    if (n_bins as f64) * bin_width_hours < limit - 1e-9 {
        n_bins += 1;
    }
    let mut bins: Vec<OptInBin> = (0..n_bins)
        .map(|i| OptInBin {
            lo_hours: i as f64 * bin_width_hours,
            hi_hours: ((i + 1) as f64 * bin_width_hours).min(limit),
            sessions: 0,
            opted_in: 0,
        })
        .collect();
    let mut beyond = OptInBin {
        lo_hours: limit,
        hi_hours: f64::INFINITY,
        sessions: 0,
        opted_in: 0,
    };
    for &(slack, opted_in) in outcomes {
        let bin = if slack > limit {
            &mut beyond
        } else {
            let i = ((slack.max(0.0) / bin_width_hours) as usize).min(n_bins - 1);
            &mut bins[i]
        };
        bin.sessions += 1;
        bin.opted_in += opted_in as usize;
    }
    Ok(OptInCurve { bins, beyond })
}
