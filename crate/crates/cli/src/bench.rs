//! `bench`: wall time and allocator-tracked peak memory of the forward
//! solve, the analytic backward pass and the finite-difference oracle.

use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::Args;
use p2pl_core::gradcheck::{fd_bundle, make_instance, FDConfig};
use p2pl_core::grad::backward;
use p2pl_core::solver::{register_p2pl, SolveOptions};
use serde::Serialize;

use crate::alloc;
use crate::config::write_run_config;

/// The benchmark fixture is fixed; timings are the only varying output.
const FIXTURE_SEED: u64 = 0;

#[derive(Debug, Clone, Args, Serialize)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 1024)]
    pub n_points: usize,
    /// Forward iteration counts to time.
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 5, 10, 20])]
    pub iters_list: Vec<usize>,
    /// Timed repetitions per phase, after one warm-up run.
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Forward,
    BackwardAnalytic,
    BackwardFd,
}

/// One `bench.csv` line. Memory is the peak of live heap bytes above the
/// level at phase start, as seen by the tracking allocator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub phase: Phase,
    pub n_iters: usize,
    pub n_points: usize,
    pub reps: usize,
    pub median_ms: f64,
    pub peak_alloc_bytes: usize,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// One untimed warm-up call, then `reps` timed calls.
fn time_phase<T>(reps: usize, mut f: impl FnMut() -> p2pl_core::Result<T>) -> Result<(f64, usize)> {
    drop(f()?);
    let mut times = Vec::with_capacity(reps);
    let mut peak = 0;
    for _ in 0..reps {
        let start = Instant::now();
        let (out, bytes) = alloc::measure_peak(&mut f);
        times.push(start.elapsed().as_secs_f64() * 1e3);
        drop(out?);
        peak = peak.max(bytes);
    }
    Ok((median(&mut times), peak))
}

/// The finite-difference oracle is timed once, at the smallest iteration
/// count, where it is cheapest.
pub fn run_bench(args: &BenchArgs) -> Result<Vec<BenchRow>> {
    if args.reps == 0 || args.iters_list.is_empty() {
        bail!("need --reps >= 1 and a nonempty --iters-list");
    }
    let inst = make_instance(FIXTURE_SEED, args.n_points)?;
    let row = |phase, n_iters, (median_ms, peak_alloc_bytes): (f64, usize)| BenchRow {
        phase,
        n_iters,
        n_points: args.n_points,
        reps: args.reps,
        median_ms,
        peak_alloc_bytes,
    };
    let mut rows = Vec::new();
    for &n_iters in &args.iters_list {
        let fwd = || register_p2pl(&inst.corr, &inst.source, n_iters, &SolveOptions::default());
        rows.push(row(Phase::Forward, n_iters, time_phase(args.reps, fwd)?));
        let g = fwd().with_context(|| format!("forward at {n_iters} iterations"))?.transform.to_g();
        let bwd = || backward(&inst.corr, &inst.source, &g);
        rows.push(row(Phase::BackwardAnalytic, n_iters, time_phase(args.reps, bwd)?));
    }
    let fd_iters = *args.iters_list.iter().min().expect("nonempty");
    let cfg = FDConfig { n_iters_forward: fd_iters, ..FDConfig::default() };
    let fd = || fd_bundle(&inst.corr, &inst.source, &cfg);
    rows.push(row(Phase::BackwardFd, fd_iters, time_phase(args.reps, fd)?));
    Ok(rows)
}

/// Writes `bench.csv` and the echoed run configuration.
pub fn cmd_bench(args: &BenchArgs) -> Result<Vec<BenchRow>> {
    write_run_config(&args.out, "bench", args)?;
    let rows = run_bench(args)?;
    let mut w = csv::Writer::from_path(args.out.join("bench.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(rows)
}
