//! Batch driver behind the `dpmreg` binary: config resolution, panel CSV
//! ingestion, the simulate/fit/sweep/summarize subcommands and their
//! output files.

pub mod config;
pub mod ingest;
pub mod output;
pub mod run;
