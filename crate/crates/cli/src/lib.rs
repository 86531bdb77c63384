//! Scenario files, run artifacts and the `kdv` command verbs.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod plot;

pub use commands::{
    batch, compare, kernels, run, run_scenario_to_dir, BatchEntry, BatchOutcome, Comparison,
    KernelResiduals, RunOutcome,
};
pub use config::{config_to_toml, load_config, parse_config};
pub use error::{CliError, Result};
pub use output::{RunManifest, Summary};
