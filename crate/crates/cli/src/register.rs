//! `register`: ICP over every pair directory, one metric row per pair.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::Args;
use p2pl_core::cloud::{estimate_normals, load, NormalSign};
use p2pl_core::correspond::nn_correspond;
use p2pl_core::geom::apply;
use p2pl_core::grad::backward;
use p2pl_core::metrics::{chamfer, CaseRow, MetricReport, Stats};
use p2pl_core::solver::{icp, IcpOptions, Method};
use p2pl_core::{Error, RegistrationPair, RigidTransform};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{derive_seed, format_gt, parse_gt, write_run_config};

const TAG_NORMALS: u64 = 0x5eed_0003;
const CLOUD_EXTENSIONS: [&str; 2] = ["ply", "xyzn"];

#[derive(Debug, Clone, Args, Serialize)]
pub struct RegisterArgs {
    /// A pair directory, or a directory of pair directories.
    #[arg(long = "in", value_name = "DIR")]
    #[serde(rename = "in")]
    pub input: PathBuf,
    #[arg(long, default_value = "p2pl", value_parser = ["p2p", "p2pl"])]
    pub method: String,
    #[arg(long, default_value_t = 10)]
    pub inner_iters: usize,
    #[arg(long, default_value_t = 30)]
    pub outer_iters: usize,
    /// CSV of per-source-point weights, applied to every pair.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Replace both clouds' normals by PCA estimates over k neighbours,
    /// with random signs unless `--consistent-normals` is given.
    #[arg(long, value_name = "K")]
    pub estimate_normals: Option<usize>,
    /// Orient estimated normals away from the centroid instead of randomly.
    #[arg(long)]
    pub consistent_normals: bool,
    #[arg(long, default_value_t = 0.0)]
    pub damping: f64,
    /// Exit with status 2 when any pair fails.
    #[arg(long)]
    pub strict: bool,
    #[arg(long)]
    pub out: PathBuf,
}

fn find_cloud(dir: &Path, stem: &str) -> Option<PathBuf> {
    CLOUD_EXTENSIONS.iter().map(|ext| dir.join(format!("{stem}.{ext}"))).find(|p| p.is_file())
}

/// `root` itself when it holds a `source` cloud, else its subdirectories
/// that do, sorted by name.
pub fn discover_pairs(root: &Path) -> Result<Vec<PathBuf>> {
    if find_cloud(root, "source").is_some() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .with_context(|| format!("reading {}", root.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && find_cloud(p, "source").is_some())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        bail!("no pair directories under {}", root.display());
    }
    Ok(dirs)
}

pub fn read_weights(path: &Path) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for rec in reader.records() {
        for field in rec?.iter().filter(|f| !f.is_empty()) {
            out.push(field.parse().with_context(|| format!("bad weight {field:?}"))?);
        }
    }
    Ok(out)
}

fn load_gt(path: &Path) -> p2pl_core::Result<RigidTransform> {
    let text = fs::read_to_string(path)?;
    parse_gt(&text).map_err(|e| Error::Parse { line: 0, message: format!("{}: {e:#}", path.display()) })
}

pub fn load_pair(dir: &Path) -> p2pl_core::Result<RegistrationPair> {
    let required = |stem: &str| {
        find_cloud(dir, stem).ok_or_else(|| {
            Error::Io(std::io::Error::new(std::io::ErrorKind::NotFound, format!("{stem} cloud in {}", dir.display())))
        })
    };
    let optional = |stem: &str| find_cloud(dir, stem).map(load).transpose();
    Ok(RegistrationPair {
        source: load(required("source")?)?,
        target: load(required("target")?)?,
        gt: Some(load_gt(&dir.join("gt.txt"))?),
        clean_source: optional("clean_source")?,
        clean_target: optional("clean_target")?,
    })
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// One pair: estimate, time the forward and (for p2pl) the analytic
/// backward at the final correspondences, and score against `gt.txt`.
pub fn register_pair(
    dir: &Path,
    index: usize,
    args: &RegisterArgs,
    weights: Option<&[f64]>,
) -> p2pl_core::Result<(CaseRow, RigidTransform)> {
    let mut pair = load_pair(dir)?;
    if let Some(k) = args.estimate_normals {
        let seed = derive_seed(0, TAG_NORMALS, index as u64);
        let (src_sign, tgt_sign) = if args.consistent_normals {
            (NormalSign::Outward, NormalSign::Outward)
        } else {
            (NormalSign::Random(seed), NormalSign::Random(seed ^ 1))
        };
        pair.source = estimate_normals(&pair.source, k, src_sign)?.cloud;
        pair.target = estimate_normals(&pair.target, k, tgt_sign)?.cloud;
    }
    let method: Method = args.method.parse()?;
    let opts = IcpOptions {
        method,
        max_outer: args.outer_iters,
        inner_iters: args.inner_iters,
        weights: weights.map(<[f64]>::to_vec),
        damping: args.damping,
    };
    let t0 = Instant::now();
    let est = icp(&pair.source, &pair.target, &opts)?.transform;
    let fwd_ms = ms_since(t0);

    let bwd_ms = match method {
        Method::PointToPlane => {
            let mut corr = nn_correspond(&apply(&est, &pair.source), &pair.target)?;
            if let Some(w) = weights {
                corr.set_weights(w.to_vec())?;
            }
            let t1 = Instant::now();
            backward(&corr, &pair.source, &est.to_g()).map_or(f64::NAN, |_| ms_since(t1))
        }
        Method::PointToPoint => f64::NAN,
    };

    let gt = pair.gt.expect("loaded with gt");
    let mut row = CaseRow::new(case_id(dir), &est, &gt, chamfer(&est, &pair));
    row.fwd_ms = fwd_ms;
    row.bwd_ms = bwd_ms;
    Ok((row, est))
}

fn case_id(dir: &Path) -> String {
    dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned())
}

#[derive(Debug, Clone, Serialize)]
pub struct StatsSummary {
    pub mse: f64,
    pub rmse: f64,
    pub mae: f64,
    pub r2: Option<f64>,
}

impl From<&Stats> for StatsSummary {
    fn from(s: &Stats) -> Self {
        StatsSummary { mse: s.mse, rmse: s.rmse, mae: s.mae, r2: s.r2 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RegisterSummary {
    pub pairs: usize,
    pub failed: usize,
    pub rotation_deg: Option<StatsSummary>,
    pub translation: Option<StatsSummary>,
    pub chamfer: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RegisterOutcome {
    pub rows: Vec<CaseRow>,
    pub estimates: Vec<Option<RigidTransform>>,
    pub report: Option<MetricReport>,
    pub summary: RegisterSummary,
}

impl RegisterOutcome {
    pub fn failed(&self) -> usize {
        self.summary.failed
    }
}

pub fn run_register(args: &RegisterArgs) -> Result<RegisterOutcome> {
    let dirs = discover_pairs(&args.input)?;
    let weights = args.weights.as_deref().map(read_weights).transpose()?;
    let results: Vec<(CaseRow, Option<RigidTransform>)> = dirs
        .par_iter()
        .enumerate()
        .map(|(i, dir)| match register_pair(dir, i, args, weights.as_deref()) {
            Ok((row, est)) => (row, Some(est)),
            Err(e) => (CaseRow::failed(case_id(dir), &e), None),
        })
        .collect();
    let (rows, estimates): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    let report = MetricReport::from_rows(rows.clone()).ok();
    let summary = RegisterSummary {
        pairs: rows.len(),
        failed,
        rotation_deg: report.as_ref().map(|r| (&r.rotation).into()),
        translation: report.as_ref().map(|r| (&r.translation).into()),
        chamfer: report.as_ref().map(|r| r.chamfer),
    };
    Ok(RegisterOutcome { rows, estimates, report, summary })
}

pub fn write_metrics_csv(path: &Path, rows: &[CaseRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CaseRow::CSV_HEADER)?;
    for row in rows {
        w.write_record(row.csv_record())?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `metrics.csv`, `summary.json`, `transforms/<case>.txt` and the
/// echoed run configuration.
pub fn cmd_register(args: &RegisterArgs) -> Result<RegisterOutcome> {
    write_run_config(&args.out, "register", args)?;
    let outcome = run_register(args)?;
    write_metrics_csv(&args.out.join("metrics.csv"), &outcome.rows)?;
    let tdir = args.out.join("transforms");
    fs::create_dir_all(&tdir)?;
    for (row, est) in outcome.rows.iter().zip(&outcome.estimates) {
        if let Some(t) = est {
            fs::write(tdir.join(format!("{}.txt", row.case_id)), format_gt(t))?;
        }
    }
    let mut json = serde_json::to_string_pretty(&outcome.summary)?;
    json.push('\n');
    fs::write(args.out.join("summary.json"), json)?;
    Ok(outcome)
}
