//! The experiment runner: flat-file configs, binary checkpoints, and
//! the six commands behind the `seqmem` binary (`fit-laes`, `train`,
//! `probe-grad`, `probe-reco`, `reconstruct`, `eval`). Commands live
//! here as plain functions so tests can call them without spawning a
//! process; the binary is a thin argument-parsing shell.

pub mod checkpoint;
mod commands;
pub mod config;

pub use commands::{
    cmd_eval, cmd_fit_laes, cmd_probe_grad, cmd_probe_reco, cmd_reconstruct, cmd_train,
    head_accuracy_on, load_task, CliError, TaskData,
};
