//! Configuration, experiment orchestration, verification and the CLI.

pub mod cli;
pub mod config;
pub mod experiment;
pub mod plot;
pub mod verify;

pub use config::{load_config, parse_config, AlgorithmKind, ExperimentConfig};
pub use experiment::{run_experiment, ExperimentOutput, Setup};
pub use plot::{emit_plot, render_svg, PlotStyle};
pub use verify::{run_verify, CheckLine, VerifyOutcome};
