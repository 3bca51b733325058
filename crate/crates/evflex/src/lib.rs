//! Simulator, file formats, HTTP service and command line for slack-priced
//! EV charging. The mechanism itself lives in `evflex_core`.

pub mod config;
pub mod error;
pub mod io;
pub mod plant;
pub mod report;
pub mod scenario;
pub mod service;
pub mod sim;

pub use error::{Error, Result};
