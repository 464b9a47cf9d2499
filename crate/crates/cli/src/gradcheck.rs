//! `gradcheck`: analytic chained gradients against the central-difference
//! oracle, swept over forward iteration counts.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use p2pl_core::gradcheck::{check_instance, make_instance, richardson_ratio, FDConfig, GradErrorReport, GradInstance};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{derive_seed, write_run_config};

const TAG_INSTANCE: u64 = 0x5eed_0004;

#[derive(Debug, Clone, Args, Serialize)]
pub struct GradcheckArgs {
    /// Correspondences per instance.
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    /// Instances per iteration count.
    #[arg(long, default_value_t = 50)]
    pub cases: usize,
    /// Forward iteration counts to sweep.
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 5, 10])]
    pub iters: Vec<usize>,
    #[arg(long, default_value_t = 1e-5)]
    pub fd_step: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// One `gradcheck.csv` line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradRow {
    pub instance_id: usize,
    pub input_kind: String,
    pub mse: f64,
    pub rel_mse: f64,
    pub n_iters: usize,
}

/// Per iteration count, over all instances.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub n_iters: usize,
    pub cases: usize,
    pub mean_mse: f64,
    pub mean_rel_mse: f64,
    pub max_rel_mse: f64,
}

/// FD self-consistency on instance 0: `‖J(h) − J(h/2)‖ / ‖J(h/2) − J(h/4)‖`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RichardsonRow {
    pub n_iters: usize,
    pub step: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone)]
pub struct GradcheckOutcome {
    pub rows: Vec<GradRow>,
    pub summary: Vec<SweepSummary>,
    pub richardson: Vec<RichardsonRow>,
}

impl GradcheckOutcome {
    pub fn summary_for(&self, n_iters: usize) -> Option<&SweepSummary> {
        self.summary.iter().find(|s| s.n_iters == n_iters)
    }
}

fn rows_of(instance_id: usize, rep: &GradErrorReport) -> impl Iterator<Item = GradRow> + '_ {
    let per_kind = rep.per_kind.iter().map(move |k| GradRow {
        instance_id,
        input_kind: k.kind.to_string(),
        mse: k.mse,
        rel_mse: k.rel_mse,
        n_iters: rep.n_iters,
    });
    per_kind.chain(std::iter::once(GradRow {
        instance_id,
        input_kind: "all".into(),
        mse: rep.mse,
        rel_mse: rep.rel_mse,
        n_iters: rep.n_iters,
    }))
}

pub fn instances(args: &GradcheckArgs) -> Result<Vec<GradInstance>> {
    (0..args.cases)
        .into_par_iter()
        .map(|i| make_instance(derive_seed(args.seed, TAG_INSTANCE, i as u64), args.n).with_context(|| format!("instance {i}")))
        .collect()
}

pub fn run_gradcheck(args: &GradcheckArgs) -> Result<GradcheckOutcome> {
    let insts = instances(args)?;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    let mut richardson = Vec::new();
    for &n_iters in &args.iters {
        let cfg = FDConfig { step: args.fd_step, n_iters_forward: n_iters, ..FDConfig::default() };
        let reports: Vec<GradErrorReport> = insts
            .par_iter()
            .enumerate()
            .map(|(i, inst)| check_instance(inst, &cfg).with_context(|| format!("instance {i}, {n_iters} iterations")))
            .collect::<Result<_>>()?;
        let count = reports.len().max(1) as f64;
        summary.push(SweepSummary {
            n_iters,
            cases: reports.len(),
            mean_mse: reports.iter().map(|r| r.mse).sum::<f64>() / count,
            mean_rel_mse: reports.iter().map(|r| r.rel_mse).sum::<f64>() / count,
            max_rel_mse: reports.iter().map(|r| r.rel_mse).fold(0.0, f64::max),
        });
        rows.extend(reports.iter().enumerate().flat_map(|(i, r)| rows_of(i, r)));
        if let Some(first) = insts.first() {
            let ratio = richardson_ratio(&first.corr, &first.source, &cfg)
                .with_context(|| format!("instance 0, {n_iters} iterations"))?;
            richardson.push(RichardsonRow { n_iters, step: args.fd_step, ratio });
        }
    }
    Ok(GradcheckOutcome { rows, summary, richardson })
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `gradcheck.csv`, `summary.csv`, `richardson.csv` and the echoed
/// run configuration.
pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<GradcheckOutcome> {
    write_run_config(&args.out, "gradcheck", args)?;
    let outcome = run_gradcheck(args)?;
    fs::create_dir_all(&args.out)?;
    write_csv(&args.out.join("gradcheck.csv"), &outcome.rows)?;
    write_csv(&args.out.join("summary.csv"), &outcome.summary)?;
    write_csv(&args.out.join("richardson.csv"), &outcome.richardson)?;
    Ok(outcome)
}
