//! Service configuration: a TOML file with environment overrides.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use evflex_core::pricing::OptOutRule;
use evflex_core::{CoordinatorConfig, DiscountSchedule, RateLimits, TimeGrid};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

/// How the service clock advances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ClockMode {
    /// Only explicit step requests advance the clock.
    Step,
    /// One tick per period of wall time.
    Realtime,
    /// `factor` periods of simulated time per period of wall time.
    Accelerated(f64),
}

impl ClockMode {
    /// Wall time between ticks; `None` for manual stepping.
    pub fn interval(&self, period_minutes: u32) -> Option<Duration> {
        let period = Duration::from_secs(60 * period_minutes as u64);
        match *self {
            ClockMode::Step => None,
            ClockMode::Realtime => Some(period),
            ClockMode::Accelerated(f) => Some(period.div_f64(f)),
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        match *self {
            ClockMode::Accelerated(f) if !(f.is_finite() && f > 0.0) => {
                Err(format!("acceleration factor {f} must be positive"))
            }
            _ => Ok(()),
        }
    }
}

impl FromStr for ClockMode {
    type Err = String;

    /// `step`, `realtime` or `accelerated:<factor>`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let mode = match s.trim() {
            "step" => ClockMode::Step,
            "realtime" => ClockMode::Realtime,
            other => {
                let f = other
                    .strip_prefix("accelerated:")
                    .ok_or_else(|| format!("unknown clock mode `{other}`"))?;
                ClockMode::Accelerated(f.parse().map_err(|_| format!("bad acceleration factor `{f}`"))?)
            }
        };
        mode.validate()?;
        Ok(mode)
    }
}

impl TryFrom<String> for ClockMode {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl From<ClockMode> for String {
    fn from(m: ClockMode) -> String {
        match m {
            ClockMode::Step => "step".into(),
            ClockMode::Realtime => "realtime".into(),
            ClockMode::Accelerated(f) => format!("accelerated:{f}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    pub admin_token: String,
    /// Daily baseline CSV; rescaled to `baseline_peak_kw`.
    pub baseline: PathBuf,
    pub baseline_peak_kw: f64,
    /// Append-only JSON-lines log. An existing log is replayed at start-up.
    pub event_log: Option<PathBuf>,
    pub clock: ClockMode,
    /// Answer every command with an ideal measured draw when no telemetry
    /// arrives, instead of booking zero.
    pub simulated_plant: bool,
    pub min_nonzero_rate_kw: f64,
    pub max_discount_per_kwh: f64,
    pub max_rewarded_slack_hours: f64,
    pub horizon_periods: usize,
    pub epoch_minute_of_day: u32,
    pub opt_out_rule: OptOutRule,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        let limits = RateLimits::default();
        let schedule = DiscountSchedule::default();
        ServiceConfig {
            bind: "127.0.0.1:8080".into(),
            admin_token: "change-me".into(),
            baseline: PathBuf::from("data/baseline.csv"),
            baseline_peak_kw: 120.0,
            event_log: None,
            clock: ClockMode::Step,
            simulated_plant: false,
            min_nonzero_rate_kw: limits.min_nonzero_rate_kw,
            max_discount_per_kwh: schedule.max_discount_per_kwh,
            max_rewarded_slack_hours: schedule.max_rewarded_slack_hours,
            horizon_periods: TimeGrid::default().horizon_periods,
            epoch_minute_of_day: 0,
            opt_out_rule: OptOutRule::default(),
        }
    }
}

/// Environment variables that override file settings.
pub const ENV_OVERRIDES: [&str; 6] = [
    "EVFLEX_R_MIN",
    "EVFLEX_P_MAX",
    "EVFLEX_S_MAX",
    "EVFLEX_HORIZON",
    "EVFLEX_BASELINE",
    "EVFLEX_CLOCK",
];

impl ServiceConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(io_err(p))?;
                toml::from_str(&text).map_err(|e| Error::Format {
                    path: p.to_path_buf(),
                    reason: e.to_string(),
                })?
            }
            None => ServiceConfig::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::Scenario(format!("{key}: cannot parse `{v}`")))
        }
        if let Some(v) = get("EVFLEX_R_MIN") {
            self.min_nonzero_rate_kw = num("EVFLEX_R_MIN", &v)?;
        }
        if let Some(v) = get("EVFLEX_P_MAX") {
            self.max_discount_per_kwh = num("EVFLEX_P_MAX", &v)?;
        }
        if let Some(v) = get("EVFLEX_S_MAX") {
            self.max_rewarded_slack_hours = num("EVFLEX_S_MAX", &v)?;
        }
        if let Some(v) = get("EVFLEX_HORIZON") {
            self.horizon_periods = num("EVFLEX_HORIZON", &v)?;
        }
        if let Some(v) = get("EVFLEX_BASELINE") {
            self.baseline = PathBuf::from(v);
        }
        if let Some(v) = get("EVFLEX_CLOCK") {
            self.clock = v.parse().map_err(Error::Scenario)?;
        }
        Ok(())
    }

    pub fn coordinator(&self) -> Result<CoordinatorConfig> {
        let limits = RateLimits {
            min_nonzero_rate_kw: self.min_nonzero_rate_kw,
        };
        limits.validate()?;
        Ok(CoordinatorConfig {
            grid: TimeGrid::new(1, self.horizon_periods, self.epoch_minute_of_day)?,
            limits,
            schedule: DiscountSchedule::new(self.max_discount_per_kwh, self.max_rewarded_slack_hours)?,
            opt_out_rule: self.opt_out_rule,
            ..CoordinatorConfig::default()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clock_modes_parse() {
        assert_eq!("step".parse::<ClockMode>().unwrap(), ClockMode::Step);
        assert_eq!("accelerated:60".parse::<ClockMode>().unwrap(), ClockMode::Accelerated(60.0));
        assert!("accelerated:0".parse::<ClockMode>().is_err());
        assert!("accelerated:-2".parse::<ClockMode>().is_err());
        assert!("warp".parse::<ClockMode>().is_err());
        assert_eq!(ClockMode::Accelerated(60.0).interval(1), Some(Duration::from_secs(1)));
        assert_eq!(ClockMode::Realtime.interval(1), Some(Duration::from_secs(60)));
        assert_eq!(ClockMode::Step.interval(1), None);
    }

    #[test]
    fn file_then_environment() {
        let cfg: ServiceConfig = toml::from_str(
            r#"
            clock = "accelerated:10"
            min_nonzero_rate_kw = 1.2
            horizon_periods = 720
            "#,
        )
        .unwrap();
        assert_eq!(cfg.clock, ClockMode::Accelerated(10.0));
        assert_eq!(cfg.max_rewarded_slack_hours, 10.0);

        let mut cfg = cfg;
        cfg.apply_env(|k| match k {
            "EVFLEX_R_MIN" => Some("2.0".into()),
            "EVFLEX_CLOCK" => Some("realtime".into()),
            "EVFLEX_P_MAX" => Some("0.05".into()),
            _ => None,
        })
        .unwrap();
        assert_eq!(cfg.min_nonzero_rate_kw, 2.0);
        assert_eq!(cfg.clock, ClockMode::Realtime);
        let c = cfg.coordinator().unwrap();
        assert_eq!(c.grid.horizon_periods, 720);
        assert_eq!(c.schedule.max_rate().dollars(), 0.05);

        assert!(cfg.apply_env(|k| (k == "EVFLEX_HORIZON").then(|| "lots".into())).is_err());
        assert!(toml::from_str::<ServiceConfig>("bogus = 1").is_err());
    }
}
