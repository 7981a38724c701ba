//! Config-driven driver: builds a model or loads a bundle, runs one command
//! and writes its artifacts plus a `report.json` of check records.

pub mod config;
pub mod report;
pub mod run;

pub use config::{parse_config, serialize, ConfigError, RunConfig};
pub use report::{CheckRecord, RunReport};
pub use run::{run, RunError};
