//! Declarative experiments: TOML configs, the check registry and the runner
//! behind the `kppfront` binary.

pub mod checks;
pub mod config;
pub mod runner;

pub use checks::{find_check, run_check, CheckOutcome, CheckSpec, Requirement, CHECKS};
pub use config::ExperimentConfig;
pub use runner::{
    bundled_config, emit_outputs, output_dir, run_experiment, verify, Experiment, Overrides,
    RunStatus, RunSummary, BUNDLED,
};
