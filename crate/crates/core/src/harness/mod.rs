//! Command-line harness: configuration, serialisation and the grid oracle.

pub mod commands;
pub mod config;
pub mod envelope;
pub mod oracle;
pub mod output;

pub use commands::{execute, Command, Outcome, RunOptions};
pub use config::{GridSettings, IsolaSettings, ModelConfig, RunConfig, PRESETS};
pub use envelope::{compare_envelopes, fold_lambdas, Envelope, EnvelopeComparison};
pub use oracle::{grid_samples, grid_validate, GridReport, GridValidation};
