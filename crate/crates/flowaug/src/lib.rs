//! File formats, configuration, synthetic corpora and the experiment runner
//! around `flowaug-core`.

pub mod config;
pub mod corpus;
pub mod error;
pub mod experiment;
pub mod formats;

pub use config::RunConfig;
pub use error::{Error, ErrorKind, Result};
pub use experiment::{run_experiment, ExperimentOutput};
