//! Slack-priced, valley-filling EV charging.
//!
//! Customers state how much energy they need, by when, and at what maximum
//! rate. The slack between that deadline and the fastest possible charge is
//! priced as a discount, and a receding-horizon scheduler spends the slack to
//! flatten the aggregate load.
//!
//! This crate is `no_std` (with `alloc`) and free of IO. File formats, the
//! simulator, the network service and the command line live in the `evflex`
//! crate.

#![no_std]

extern crate alloc;

pub mod coordinator;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod pricing;
pub mod profile;
pub mod qp;
pub mod request;
pub mod scheduler;
pub mod session;

pub use coordinator::{Coordinator, CoordinatorConfig, Event};
pub use error::{Error, Result};
pub use grid::{Period, TimeGrid};
pub use pricing::{DiscountSchedule, Usd, UsdPerKwh};
pub use profile::LoadProfile;
pub use qp::{QpInstance, QpSolution, Tolerances};
pub use request::{ChargingRequest, SocPair};
pub use scheduler::{RateLimits, Scheduler, TickResult};
pub use session::{SessionId, SessionState, SessionStatus};
