//! Command-line and HTTP front ends for `cnndiff-core`.

pub mod commands;
pub mod service;
pub mod session;

pub use service::{router, serve, ApiError};
pub use session::{SessionConfig, SessionState, Snapshot};
