//! Command-line harness around `p2pl-core`: pair synthesis, ICP runs with
//! per-pair metrics, gradient checks and timing/memory benchmarks. Every
//! subcommand echoes its configuration as `run_config.json` next to its CSV
//! outputs.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alloc;
pub mod bench;
pub mod config;
pub mod gradcheck;
pub mod register;
pub mod synth;

pub use bench::{cmd_bench, BenchArgs, BenchRow};
pub use gradcheck::{cmd_gradcheck, GradcheckArgs, GradcheckOutcome};
pub use register::{cmd_register, RegisterArgs, RegisterOutcome};
pub use synth::{cmd_synth, SynthArgs};

#[global_allocator]
static GLOBAL: alloc::TrackingAllocator = alloc::TrackingAllocator;

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success = 0,
    HardError = 1,
    /// A `--strict` run whose results missed their threshold.
    ThresholdFailure = 2,
}
