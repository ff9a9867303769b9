//! Batch reward scoring over HTTP and the command line.
//!
//! [`engine::Engine`] owns the executor and judges; [`api`] holds the wire
//! types and request handling; [`server`] is the axum front end.

pub mod api;
pub mod config;
pub mod engine;
pub mod server;

pub use config::{ConfigError, JudgeKind, ServiceConfig};
pub use engine::{Engine, ScoreOptions};
