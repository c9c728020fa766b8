//! Scenario plumbing: configuration, Monte Carlo acquisition sweeps,
//! end-to-end pass runs and metrics export.

pub mod acquisition;
pub mod config;
pub mod end_to_end;
pub mod metrics;

pub use acquisition::{run_acquisition_sweep, SweepRow, TrialRunner};
pub use config::ScenarioConfig;
pub use end_to_end::{run_end_to_end, simulate, EndToEndRun, Scenario};
pub use metrics::{export_metrics, import_metrics, Format, Metrics, MetricsRow};
