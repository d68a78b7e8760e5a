//! Benchmark harness for the ITSA and MHSA interaction blocks: latency runs,
//! FLOPs reports, gradient checks and structural ablations.

pub mod ablate;
pub mod bench;
pub mod error;
pub mod report;
pub mod spec;

pub use ablate::{run_ablation_suite, AblationRow};
pub use bench::{run_bench, BenchResult, Timing};
pub use error::{BenchError, Result};
pub use report::{emit_report, render, Report, CSV_HEADER};
pub use spec::{parse_config, Format, MechanismSel, Overrides, RunMode, RunSpec};
