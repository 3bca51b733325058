use std::io::IsTerminal;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use evflex::config::ServiceConfig;
use evflex::io::{read_daily_baseline, read_json, write_json};
use evflex::plant::{EvPlantModel, NoiseShape};
use evflex::report::{read_run, summarize, write_report, write_run, RunMeta};
use evflex::scenario::{connection_counts, FleetScenario};
use evflex::service::{self, ServiceOptions};
use evflex::sim::{run_scenario, Policy, SimConfig};
use evflex_core::pricing::price_menu;
use evflex_core::qp::{certify, solve_relaxed};
use evflex_core::{DiscountSchedule, QpInstance, Tolerances};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "evflex", version, about = "Slack-priced EV charging: pricing, scheduling, simulation and service")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Quote the discount for one or more deadlines.
    Price {
        #[arg(long)]
        energy_kwh: f64,
        #[arg(long)]
        max_rate_kw: f64,
        /// Deadline in hours; repeat or comma-separate for a menu.
        #[arg(long = "deadline-h", value_delimiter = ',', required = true)]
        deadlines: Vec<f64>,
        /// Largest discount, dollars per kWh.
        #[arg(long, default_value_t = 0.043)]
        pmax: f64,
        /// Slack in hours at which the discount saturates.
        #[arg(long, default_value_t = 10.0)]
        smax: f64,
    },
    /// Solve a relaxed valley-filling instance read from JSON.
    Solve {
        #[arg(long)]
        instance: PathBuf,
        /// Write the solution here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate a fleet scenario under one or all policies.
    Simulate {
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// `unmanaged`, `tou`, `optimizev` or `all`.
        #[arg(long, default_value = "all")]
        policy: String,
        #[arg(long, default_value = "data/baseline.csv")]
        baseline: PathBuf,
        #[arg(long, default_value_t = 120.0)]
        baseline_peak_kw: f64,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Tracking noise bound of the charger model, kW.
        #[arg(long, default_value_t = 0.0)]
        noise_kw: f64,
        /// Let measured power exceed the command as well as fall short.
        #[arg(long)]
        symmetric_noise: bool,
        /// State of charge above which power tapers.
        #[arg(long)]
        taper_soc: Option<f64>,
        #[arg(long, default_value_t = 0)]
        plant_seed: u64,
    },
    /// Compute peak, duration, band and opt-in tables from a run directory.
    Metrics {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, env = "EVFLEX_CONFIG")]
        config: Option<PathBuf>,
        /// Overrides the bind address from the config file.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Rebuild state from an event log and print every session.
    Replay {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, env = "EVFLEX_CONFIG")]
        config: Option<PathBuf>,
    },
}

fn parse_policies(s: &str) -> anyhow::Result<Vec<Policy>> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(Policy::ALL.to_vec());
    }
    s.split(',')
        .map(|p| p.trim().parse::<Policy>().map_err(anyhow::Error::msg))
        .collect()
}

fn print_json<T: serde::Serialize>(value: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .init();

    match Cli::parse().command {
        Cmd::Price {
            energy_kwh,
            max_rate_kw,
            deadlines,
            pmax,
            smax,
        } => {
            let schedule = DiscountSchedule::new(pmax, smax)?;
            let rows = price_menu(energy_kwh, max_rate_kw, &deadlines, &schedule)?;
            if let [row] = rows.as_slice() {
                print_json(row)
            } else {
                print_json(&rows)
            }
        }
        Cmd::Solve { instance, out } => {
            let inst: QpInstance = read_json(&instance)?;
            let tol = Tolerances::default();
            let sol = solve_relaxed(&inst, &tol)?;
            let cert = certify(&inst, &sol.rates_kw);
            tracing::info!(
                objective = sol.objective,
                iterations = sol.iterations,
                kkt_residual = cert.kkt_residual,
                certified = cert.passes(&tol),
                "solved"
            );
            match out {
                Some(p) => Ok(write_json(&p, &sol)?),
                None => print_json(&sol),
            }
        }
        Cmd::Simulate {
            scenario,
            policy,
            baseline,
            baseline_peak_kw,
            out,
            seed,
            noise_kw,
            symmetric_noise,
            taper_soc,
            plant_seed,
        } => {
            let mut sc: FleetScenario = match &scenario {
                Some(p) => read_json(p)?,
                None => FleetScenario::default(),
            };
            if let Some(s) = seed {
                sc.seed = s;
            }
            let policies = parse_policies(&policy)?;
            let base = read_daily_baseline(&baseline, baseline_peak_kw)?;
            let shape = if symmetric_noise {
                NoiseShape::Symmetric
            } else {
                NoiseShape::OneSided
            };
            let mut plant = EvPlantModel::ideal().with_noise(noise_kw, shape);
            plant.taper_soc = taper_soc;
            let config = SimConfig {
                plant,
                plant_seed,
                ..SimConfig::default()
            };
            let run = run_scenario(&sc, &policies, &base, &config).context("simulation failed")?;
            let meta = RunMeta {
                period_minutes: config.coordinator.grid.period_minutes,
                periods: run.len,
                arrival_days: sc.duration_days,
                baseline_peak_kw,
                seed: sc.seed,
                sessions: run.sessions.len(),
                policies,
            };
            write_run(&out, &meta, &run.runs, &connection_counts(&run.sessions, run.len))?;
            for r in &run.runs {
                let peak = r.aggregate.values_kw[..(sc.duration_days as usize * 1440).min(run.len)]
                    .iter()
                    .copied()
                    .fold(0.0, f64::max);
                tracing::info!(policy = r.policy.label(), peak_kw = peak, "done");
            }
            tracing::info!(sessions = run.sessions.len(), out = %out.display(), "run written");
            Ok(())
        }
        Cmd::Metrics { input, out } => {
            let (meta, series, outcomes) = read_run(&input)?;
            let report = summarize(&meta, &series, &outcomes)?;
            write_report(&out, &report)?;
            for m in &report.policies {
                println!(
                    "{:<10} median peak increase {:>6.2}%  peak {:.1} kW",
                    m.policy.label(),
                    m.peak_increase.median_percent,
                    m.peak_kw
                );
            }
            Ok(())
        }
        Cmd::Serve { config, bind } => {
            let cfg = ServiceConfig::load(config.as_deref())?;
            let bind = bind.unwrap_or_else(|| cfg.bind.clone());
            let baseline_day = read_daily_baseline(&cfg.baseline, cfg.baseline_peak_kw)?;
            let options = ServiceOptions {
                coordinator: cfg.coordinator()?,
                baseline_day,
                admin_token: cfg.admin_token.clone(),
                event_log: cfg.event_log.clone(),
                clock: cfg.clock,
                simulated_plant: cfg.simulated_plant,
            };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let (handle, _writer) = service::spawn(options)?;
                let listener = tokio::net::TcpListener::bind(&bind)
                    .await
                    .with_context(|| format!("binding {bind}"))?;
                tracing::info!(%bind, clock = ?cfg.clock, "listening");
                axum::serve(listener, service::router(handle))
                    .with_graceful_shutdown(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await?;
                anyhow::Ok(())
            })
        }
        Cmd::Replay { log, config } => {
            let cfg = ServiceConfig::load(config.as_deref())?;
            let baseline_day = read_daily_baseline(&cfg.baseline, cfg.baseline_peak_kw)?;
            let coord = service::replay_log(cfg.coordinator()?, baseline_day, &log)?;
            if coord.events().is_empty() {
                bail!("{} holds no events", log.display());
            }
            print_json(&coord.list_sessions(None))
        }
    }
}
