//! Batch front end: CSV ingestion, scans, network documents and the
//! synthetic benchmark harness.

pub mod bench;
pub mod error;
pub mod ingest;
pub mod run;
pub mod synth_csv;

pub use bench::{run_bench, BenchConfig, BenchReport, Link};
pub use error::CliError;
pub use ingest::{ingest_csv, Dataset};
pub use run::{run_scan, NetworkDocument, RunConfig, Selection};
pub use synth_csv::{panel_block_spec, panel_to_csv};
