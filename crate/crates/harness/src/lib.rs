//! Benchmark driver: experiment configuration, repetitions, summary
//! statistics, thread placement and result files.

mod config;
mod placement;
mod record;
mod runner;
pub mod stats;

pub use config::{parse_radix_bits, BenchConfig, Experiment, Placement, ScanOutput};
pub use placement::{pin_threads, PlacementReport, Topology};
pub use record::{
    emit_results, format_float, read_csv, read_json, Format, ResultRecord, RowKind, CSV_HEADER,
};
pub use runner::{run_experiment, write_fk_pair, write_tpch, Unit};
