//! Fixed query suite, data generators and the benchmark harness behind the
//! CLI.

mod bench;
mod suite;
mod synthetic;
mod worst;

use thiserror::Error;

use crate::engine::EngineError;

pub use bench::{bench_query, time_runs, BenchReport, BenchRow, DEFAULT_RUNS};
pub use suite::{fixture, suite, Fixture};
pub use synthetic::{gen_synthetic, RelationStats, SyntheticManifest, SyntheticSpec};
pub use worst::{expand_block_relation, gen_worst_case, PathQuery, WorstCaseSpec};

#[derive(Debug, Error)]
pub enum WorkbenchError {
    #[error("invalid generator parameters: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}
