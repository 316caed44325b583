//! Command-line pipeline: dataset generation, training, reconstruction,
//! evaluation, slice export and timing.

pub mod cli;
pub mod commands;
pub mod config;
pub mod slices;

pub use commands::{
    build_one_step, cmd_bench, cmd_evaluate, cmd_gen_dataset, cmd_reconstruct, cmd_train, history_path_for,
    load_network, read_frames_csv, write_history, BenchReport, GenSummary, LinearizationPoint, Method,
    ReconstructSummary, TrainSummary, HISTORY_HEADER,
};
pub use config::{Paths, ProtocolSource, RunConfig};
pub use slices::{cmd_export_slices, Axis};

/// Bad invocation: missing or conflicting inputs. Exits with status 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_FAILURE: u8 = 2;
