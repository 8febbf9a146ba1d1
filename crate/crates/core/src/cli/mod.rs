//! Configuration files, checkpoints, run manifests and subcommand bodies.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod manifest;

pub use checkpoint::Checkpoint;
pub use commands::{exit_code, EvalPolicy, Run, TrainSource};
pub use config::{load_config, parse_config, LoadedConfig};
pub use manifest::{manifest_path, Manifest};
