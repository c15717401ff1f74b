//! Episode orchestration, run configuration, metrics, exports and the
//! `svo` command-line interface.

pub mod commands;
pub mod config;
pub mod error;
pub mod export;
pub mod log;
pub mod metrics;
pub mod run;

pub use config::{reference_config, RunConfig, CONFIG_VERSION, OUT_DIR_ENV};
pub use error::{HarnessError, Result};
pub use export::{metrics_table, parse_metrics_table, MetricsRow};
pub use log::{parse_log_line, EpisodeLog, Outcome};
pub use metrics::{EpisodeStats, Estimate, Metrics};
pub use run::{run_episode, run_episodes, Driver};
