//! HTTP front end of the coordinator.
//!
//! One writer task owns the [`Coordinator`]. Handlers never touch it: they
//! send a command over a channel and wait for the reply, or read the
//! snapshot the writer publishes after every change. Every accepted change
//! is appended to the event log before the reply goes out.
//!
//! Routes:
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/health` | liveness |
//! | GET | `/price-menu?energy_kwh=&max_rate_kw=&deadlines=4,10` | discount menu |
//! | GET, POST | `/vehicles` | list, create or replace |
//! | GET, PUT, DELETE | `/vehicles/{id}` | registry entry |
//! | GET, POST | `/sessions[?status=active]` | list, submit |
//! | GET | `/sessions/{id}` | status |
//! | POST | `/sessions/{id}/opt-out` | stop managing |
//! | POST | `/sessions/{id}/disconnect` | unplugged early |
//! | POST | `/sessions/{id}/telemetry` | measured draw for the open period |
//! | GET | `/aggregate[?start=&len=]` | measured load with baseline |
//! | GET, POST | `/clock` | clock state; admin token required to change it |

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use evflex_core::coordinator::{AggregateView, ApiSessionRecord, SubmitRequest, VehicleProfile};
use evflex_core::pricing::{price_menu, MenuRow};
use evflex_core::{Coordinator, CoordinatorConfig, DiscountSchedule, Period, SessionId, SessionStatus};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::{mpsc, oneshot, watch};
use tokio::task::JoinHandle;
use tokio::time::{interval_at, Instant, MissedTickBehavior};

use crate::config::ClockMode;
use crate::error::{io_err, Result};
use crate::io::{append_events, read_event_log};

/// Largest number of ticks one step request may run.
pub const MAX_STEPS: u32 = 7 * 1440;

#[derive(Debug, Clone)]
pub struct ServiceOptions {
    pub coordinator: CoordinatorConfig,
    pub baseline_day: Vec<f64>,
    pub admin_token: String,
    pub event_log: Option<PathBuf>,
    pub clock: ClockMode,
    pub simulated_plant: bool,
}

/// State as of the last committed change.
#[derive(Debug, Clone, Serialize)]
pub struct Snapshot {
    pub clock: ClockStatus,
    pub vehicles: Vec<VehicleProfile>,
    pub sessions: BTreeMap<SessionId, ApiSessionRecord>,
    #[serde(skip)]
    pub aggregate: Arc<AggregateView>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClockStatus {
    pub mode: ClockMode,
    /// Period whose commands are in force.
    pub open_period: Option<Period>,
    pub ticks: u64,
    pub minute_of_day: Option<u32>,
}

/// Error returned by every route: an HTTP status and a JSON body.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: serde_json::Value,
}

impl ApiError {
    fn new(status: StatusCode, kind: &str, message: impl std::fmt::Display) -> Self {
        ApiError {
            status,
            body: json!({ "error": kind, "message": message.to_string() }),
        }
    }

    fn unavailable() -> Self {
        ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "unavailable", "coordinator stopped")
    }
}

impl From<evflex_core::Error> for ApiError {
    fn from(e: evflex_core::Error) -> Self {
        use evflex_core::Error as E;
        let message = e.to_string();
        match e {
            E::NotFound { .. } => ApiError::new(StatusCode::NOT_FOUND, "not_found", message),
            E::Conflict(_) | E::Precondition(_) => ApiError::new(StatusCode::CONFLICT, "conflict", message),
            E::NegativeSlack {
                slack_hours,
                min_deadline_hours,
            } => ApiError {
                status: StatusCode::UNPROCESSABLE_ENTITY,
                body: json!({
                    "error": "negative_slack",
                    "message": message,
                    "slack_hours": slack_hours,
                    "min_deadline_hours": min_deadline_hours,
                }),
            },
            E::StalePeriod { got, current } => ApiError {
                status: StatusCode::CONFLICT,
                body: json!({
                    "error": "stale_period",
                    "message": message,
                    "period": got,
                    "current_period": current,
                }),
            },
            _ => ApiError::new(StatusCode::BAD_REQUEST, "invalid", message),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type Reply<T> = oneshot::Sender<Result<T, ApiError>>;

enum Command {
    UpsertVehicle(VehicleProfile, Reply<VehicleProfile>),
    RemoveVehicle(String, Reply<()>),
    Submit(SubmitRequest, Reply<ApiSessionRecord>),
    OptOut(SessionId, Reply<ApiSessionRecord>),
    Disconnect(SessionId, Reply<ApiSessionRecord>),
    Telemetry(SessionId, Period, f64, Reply<()>),
    Step(u32, Reply<ClockStatus>),
    SetClock(ClockMode, Reply<ClockStatus>),
}

/// Cheap to clone; shared by all handlers.
#[derive(Clone)]
pub struct ServiceHandle {
    tx: mpsc::Sender<Command>,
    snapshot: watch::Receiver<Arc<Snapshot>>,
    admin_token: Arc<str>,
    schedule: DiscountSchedule,
}

impl ServiceHandle {
    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.borrow().clone()
    }

    async fn call<T>(&self, make: impl FnOnce(Reply<T>) -> Command) -> Result<T, ApiError> {
        let (tx, rx) = oneshot::channel();
        self.tx.send(make(tx)).await.map_err(|_| ApiError::unavailable())?;
        rx.await.map_err(|_| ApiError::unavailable())?
    }

    /// Runs `n` ticks and waits for them to commit.
    pub async fn step(&self, n: u32) -> Result<ClockStatus, ApiError> {
        self.call(|r| Command::Step(n, r)).await
    }
}

/// Event log path and its open append handle.
type LogSink = (PathBuf, BufWriter<File>);

struct Writer {
    coord: Coordinator,
    log: Option<LogSink>,
    logged: usize,
    clock: ClockMode,
    simulated_plant: bool,
    published_ticks: Option<u64>,
    aggregate: Arc<AggregateView>,
    snapshot: watch::Sender<Arc<Snapshot>>,
}

impl Writer {
    fn clock_status(&self) -> ClockStatus {
        let open = self.coord.open_period();
        ClockStatus {
            mode: self.clock,
            open_period: open,
            ticks: self.coord.ticks(),
            minute_of_day: open.map(|p| self.coord.config().grid.minute_of_day(p)),
        }
    }

    fn build_snapshot(&mut self) -> Arc<Snapshot> {
        if self.published_ticks != Some(self.coord.ticks()) {
            self.aggregate = Arc::new(self.coord.aggregate(0, usize::MAX));
            self.published_ticks = Some(self.coord.ticks());
        }
        Arc::new(Snapshot {
            clock: self.clock_status(),
            vehicles: self.coord.vehicles().cloned().collect(),
            sessions: self
                .coord
                .list_sessions(None)
                .into_iter()
                .map(|r| (r.session_id.clone(), r))
                .collect(),
            aggregate: self.aggregate.clone(),
        })
    }

    /// Logs new events and publishes a snapshot.
    fn commit(&mut self) {
        if let Some((path, w)) = &mut self.log {
            let fresh = &self.coord.events()[self.logged..];
            if let Err(e) = append_events(w, fresh) {
                tracing::error!(path = %path.display(), error = %e, "event log write failed");
            }
        }
        self.logged = self.coord.events().len();
        let snap = self.build_snapshot();
        self.snapshot.send_replace(snap);
    }

    fn tick(&mut self) -> Result<(), evflex_core::Error> {
        if self.simulated_plant {
            if let Some(open) = self.coord.open_period() {
                let dt = self.coord.config().grid.period_hours();
                for (id, command) in self.coord.awaiting_telemetry() {
                    let needed = self.coord.session_state(&id).map_or(0.0, |s| s.residual_energy_kwh / dt);
                    self.coord.post_telemetry(&id, open, command.min(needed))?;
                }
            }
        }
        let rec = self.coord.advance()?;
        tracing::debug!(period = rec.period, commands = rec.commands_kw.len(), fallback = rec.fallback, "tick");
        if rec.fallback {
            tracing::warn!(period = rec.period, "solver fell back to the previous plan");
        }
        Ok(())
    }

    fn handle(&mut self, cmd: Command) -> Option<ClockMode> {
        let mut new_clock = None;
        match cmd {
            Command::UpsertVehicle(v, r) => {
                let _ = r.send(self.coord.upsert_vehicle(v).map_err(Into::into));
            }
            Command::RemoveVehicle(id, r) => {
                let _ = r.send(self.coord.remove_vehicle(&id).map_err(Into::into));
            }
            Command::Submit(s, r) => {
                let _ = r.send(self.coord.submit(&s).map_err(Into::into));
            }
            Command::OptOut(id, r) => {
                let _ = r.send(self.coord.opt_out(&id).map_err(Into::into));
            }
            Command::Disconnect(id, r) => {
                let _ = r.send(self.coord.disconnect(&id).map_err(Into::into));
            }
            Command::Telemetry(id, p, kw, r) => {
                let _ = r.send(self.coord.post_telemetry(&id, p, kw).map_err(Into::into));
            }
            Command::Step(n, r) => {
                let out = if n == 0 || n > MAX_STEPS {
                    Err(ApiError::new(
                        StatusCode::BAD_REQUEST,
                        "invalid",
                        format!("steps must lie in 1..={MAX_STEPS}"),
                    ))
                } else {
                    (0..n)
                        .try_for_each(|_| self.tick())
                        .map(|_| self.clock_status())
                        .map_err(Into::into)
                };
                self.commit();
                let _ = r.send(out);
                return None;
            }
            Command::SetClock(mode, r) => {
                self.clock = mode;
                new_clock = Some(mode);
                let _ = r.send(Ok(self.clock_status()));
            }
        }
        self.commit();
        new_clock
    }

    async fn run(mut self, mut rx: mpsc::Receiver<Command>) {
        let period_minutes = self.coord.config().grid.period_minutes;
        let reset = |mode: ClockMode| {
            mode.interval(period_minutes).map(|every| {
                let mut t = interval_at(Instant::now() + every, every);
                t.set_missed_tick_behavior(MissedTickBehavior::Delay);
                t
            })
        };
        let mut ticker = reset(self.clock);
        loop {
            tokio::select! {
                cmd = rx.recv() => match cmd {
                    Some(cmd) => {
                        if let Some(mode) = self.handle(cmd) {
                            ticker = reset(mode);
                        }
                    }
                    None => break,
                },
                _ = async { ticker.as_mut().expect("guarded").tick().await }, if ticker.is_some() => {
                    if let Err(e) = self.tick() {
                        tracing::error!(error = %e, "tick failed");
                    }
                    self.commit();
                }
            }
        }
    }
}

/// Builds the coordinator (replaying an existing event log), then starts the
/// writer task.
pub fn spawn(options: ServiceOptions) -> Result<(ServiceHandle, JoinHandle<()>)> {
    let schedule = options.coordinator.schedule;
    let (coord, log) = open_state(&options)?;
    let logged = coord.events().len();
    let (snap_tx, snap_rx) = watch::channel(Arc::new(Snapshot {
        clock: ClockStatus {
            mode: options.clock,
            open_period: None,
            ticks: 0,
            minute_of_day: None,
        },
        vehicles: Vec::new(),
        sessions: BTreeMap::new(),
        aggregate: Arc::default(),
    }));
    let mut writer = Writer {
        coord,
        log,
        logged,
        clock: options.clock,
        simulated_plant: options.simulated_plant,
        published_ticks: None,
        aggregate: Arc::default(),
        snapshot: snap_tx,
    };
    writer.commit();
    let (tx, rx) = mpsc::channel(256);
    let task = tokio::spawn(writer.run(rx));
    Ok((
        ServiceHandle {
            tx,
            snapshot: snap_rx,
            admin_token: options.admin_token.into(),
            schedule,
        },
        task,
    ))
}

fn open_state(options: &ServiceOptions) -> Result<(Coordinator, Option<LogSink>)> {
    let fresh = || Coordinator::new(options.coordinator, options.baseline_day.clone());
    let Some(path) = &options.event_log else {
        return Ok((fresh()?, None));
    };
    let coord = if path.exists() {
        let events = read_event_log(path)?;
        tracing::info!(path = %path.display(), events = events.len(), "replaying event log");
        Coordinator::replay(options.coordinator, options.baseline_day.clone(), &events)?
    } else {
        fresh()?
    };
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    Ok((coord, Some((path.clone(), BufWriter::new(file)))))
}

/// Rebuilds the state recorded in an event log.
pub fn replay_log(config: CoordinatorConfig, baseline_day: Vec<f64>, path: &Path) -> Result<Coordinator> {
    let events = read_event_log(path)?;
    Ok(Coordinator::replay(config, baseline_day, &events)?)
}

pub fn router(handle: ServiceHandle) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/price-menu", get(menu))
        .route("/vehicles", get(list_vehicles).post(put_vehicle))
        .route("/vehicles/{id}", get(get_vehicle).put(put_vehicle_at).delete(delete_vehicle))
        .route("/sessions", get(list_sessions).post(submit))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/opt-out", post(opt_out))
        .route("/sessions/{id}/disconnect", post(disconnect))
        .route("/sessions/{id}/telemetry", post(telemetry))
        .route("/aggregate", get(aggregate))
        .route("/clock", get(clock).post(set_clock))
        .with_state(handle)
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn invalid(message: impl std::fmt::Display) -> ApiError {
    ApiError::new(StatusCode::BAD_REQUEST, "invalid", message)
}

#[derive(Debug, Deserialize)]
struct MenuQuery {
    energy_kwh: f64,
    max_rate_kw: f64,
    /// Comma-separated hours.
    deadlines: String,
}

async fn menu(State(h): State<ServiceHandle>, Query(q): Query<MenuQuery>) -> ApiResult<Vec<MenuRow>> {
    let deadlines = q
        .deadlines
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<f64>().map_err(|_| invalid(format!("bad deadline `{s}`"))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Json(price_menu(q.energy_kwh, q.max_rate_kw, &deadlines, &h.schedule)?))
}

async fn list_vehicles(State(h): State<ServiceHandle>) -> Json<Vec<VehicleProfile>> {
    Json(h.snapshot().vehicles.clone())
}

async fn get_vehicle(State(h): State<ServiceHandle>, UrlPath(id): UrlPath<String>) -> ApiResult<VehicleProfile> {
    h.snapshot()
        .vehicles
        .iter()
        .find(|v| v.vehicle_id == id)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("unknown vehicle `{id}`")))
}

async fn put_vehicle(State(h): State<ServiceHandle>, Json(v): Json<VehicleProfile>) -> ApiResult<VehicleProfile> {
    Ok(Json(h.call(|r| Command::UpsertVehicle(v, r)).await?))
}

async fn put_vehicle_at(
    State(h): State<ServiceHandle>,
    UrlPath(id): UrlPath<String>,
    Json(v): Json<VehicleProfile>,
) -> ApiResult<VehicleProfile> {
    if v.vehicle_id != id {
        return Err(invalid("vehicle_id in the body does not match the path"));
    }
    Ok(Json(h.call(|r| Command::UpsertVehicle(v, r)).await?))
}

async fn delete_vehicle(State(h): State<ServiceHandle>, UrlPath(id): UrlPath<String>) -> Result<StatusCode, ApiError> {
    h.call(|r| Command::RemoveVehicle(id, r)).await?;
    Ok(StatusCode::NO_CONTENT)
}

fn parse_status(s: &str) -> Result<SessionStatus, ApiError> {
    match s.to_ascii_lowercase().replace(['_', '-'], "").as_str() {
        "active" => Ok(SessionStatus::Active),
        "completed" => Ok(SessionStatus::Completed),
        "expired" => Ok(SessionStatus::Expired),
        "optedout" => Ok(SessionStatus::OptedOut),
        _ => Err(invalid(format!("unknown status `{s}`"))),
    }
}

#[derive(Debug, Deserialize)]
struct ListQuery {
    status: Option<String>,
}

async fn list_sessions(State(h): State<ServiceHandle>, Query(q): Query<ListQuery>) -> ApiResult<Vec<ApiSessionRecord>> {
    let status = q.status.as_deref().map(parse_status).transpose()?;
    Ok(Json(
        h.snapshot()
            .sessions
            .values()
            .filter(|r| status.is_none_or(|s| r.status == s))
            .cloned()
            .collect(),
    ))
}

async fn submit(
    State(h): State<ServiceHandle>,
    Json(s): Json<SubmitRequest>,
) -> Result<(StatusCode, Json<ApiSessionRecord>), ApiError> {
    let rec = h.call(|r| Command::Submit(s, r)).await?;
    Ok((StatusCode::CREATED, Json(rec)))
}

async fn get_session(State(h): State<ServiceHandle>, UrlPath(id): UrlPath<String>) -> ApiResult<ApiSessionRecord> {
    h.snapshot()
        .sessions
        .get(&SessionId(id.clone()))
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("unknown session `{id}`")))
}

async fn opt_out(State(h): State<ServiceHandle>, UrlPath(id): UrlPath<String>) -> ApiResult<ApiSessionRecord> {
    Ok(Json(h.call(|r| Command::OptOut(SessionId(id), r)).await?))
}

async fn disconnect(State(h): State<ServiceHandle>, UrlPath(id): UrlPath<String>) -> ApiResult<ApiSessionRecord> {
    Ok(Json(h.call(|r| Command::Disconnect(SessionId(id), r)).await?))
}

#[derive(Debug, Deserialize)]
struct TelemetryBody {
    period: Period,
    measured_kw: f64,
}

async fn telemetry(
    State(h): State<ServiceHandle>,
    UrlPath(id): UrlPath<String>,
    Json(b): Json<TelemetryBody>,
) -> Result<StatusCode, ApiError> {
    h.call(|r| Command::Telemetry(SessionId(id), b.period, b.measured_kw, r))
        .await?;
    Ok(StatusCode::ACCEPTED)
}

#[derive(Debug, Deserialize)]
struct AggregateQuery {
    #[serde(default)]
    start: Period,
    len: Option<usize>,
}

async fn aggregate(State(h): State<ServiceHandle>, Query(q): Query<AggregateQuery>) -> Json<AggregateView> {
    let snap = h.snapshot();
    let all = &snap.aggregate;
    let recorded = all.total.len() as Period;
    let from = q.start.min(recorded);
    let to = q.len.map_or(recorded, |l| q.start.saturating_add(l as Period).min(recorded));
    let cut = |p: &evflex_core::LoadProfile| evflex_core::LoadProfile {
        start_period: from,
        values_kw: p.values_kw[from as usize..to.max(from) as usize].to_vec(),
    };
    Json(AggregateView {
        total: cut(&all.total),
        baseline: cut(&all.baseline),
        managed: cut(&all.managed),
        unmanaged: cut(&all.unmanaged),
    })
}

async fn clock(State(h): State<ServiceHandle>) -> Json<ClockStatus> {
    Json(h.snapshot().clock)
}

/// Body of a clock change: `{"mode": "step", "steps": 3}`,
/// `{"mode": "accelerated", "factor": 60}` or `{"mode": "realtime"}`.
#[derive(Debug, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
enum ClockRequest {
    Step {
        #[serde(default = "one")]
        steps: u32,
    },
    Accelerated {
        factor: f64,
    },
    Realtime,
}

fn one() -> u32 {
    1
}

async fn set_clock(
    State(h): State<ServiceHandle>,
    headers: HeaderMap,
    Json(req): Json<ClockRequest>,
) -> ApiResult<ClockStatus> {
    let token = headers
        .get("authorization")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if token != Some(&*h.admin_token) {
        return Err(ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "admin token required"));
    }
    let status = match req {
        ClockRequest::Step { steps } => {
            // Stepping pauses any running clock first.
            h.call(|r| Command::SetClock(ClockMode::Step, r)).await?;
            h.step(steps).await?
        }
        ClockRequest::Accelerated { factor } => {
            let mode = ClockMode::Accelerated(factor);
            mode.validate().map_err(invalid)?;
            h.call(|r| Command::SetClock(mode, r)).await?
        }
        ClockRequest::Realtime => h.call(|r| Command::SetClock(ClockMode::Realtime, r)).await?,
    };
    Ok(Json(status))
}
