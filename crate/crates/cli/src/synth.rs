//! `synth`: writes compose / partial / unduplicated pairs to disk.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use p2pl_core::cloud::{make_cpu_pair, save, synth_shape};
use p2pl_core::{RegistrationPair, ShapeKind, SynthConfig};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{derive_seed, write_gt, write_run_config};

const TAG_PAIR: u64 = 0x5eed_0001;
const TAG_SHAPE: u64 = 0x5eed_0002;

/// Shapes cycled through by `--shape mixed`.
const MIXED: [ShapeKind; 4] = [ShapeKind::Blob, ShapeKind::Torus, ShapeKind::Cube, ShapeKind::Sphere];

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    /// Number of pairs to write.
    #[arg(long, default_value_t = 10)]
    pub pairs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Base shape, or `mixed` to cycle through all of them.
    #[arg(long, default_value = "mixed", value_parser = ["mixed", "cube", "sphere", "torus", "blob"])]
    pub shape: String,
    /// Points sampled per shape and per side before the partial cut.
    #[arg(long, default_value_t = 1024)]
    pub n_points: usize,
    /// Points kept per side by the virtual sensor.
    #[arg(long, default_value_t = 768)]
    pub n_partial: usize,
    #[arg(long, default_value_t = 45.0)]
    pub rot_max_deg: f64,
    #[arg(long, default_value_t = 0.5)]
    pub trans_max: f64,
    /// Number of shapes merged into each scene.
    #[arg(long, default_value_t = 3)]
    pub compose: usize,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn pair_dir_name(index: usize) -> String {
    format!("pair_{index:04}")
}

fn shape_kinds(shape: &str, index: usize, count: usize) -> Result<Vec<ShapeKind>> {
    if shape == "mixed" {
        return Ok((0..count.min(MIXED.len())).map(|k| MIXED[(index + k) % MIXED.len()]).collect());
    }
    Ok(vec![shape.parse()?])
}

/// Builds pair `index` without touching the disk.
pub fn synth_pair(args: &SynthArgs, index: usize) -> Result<RegistrationPair> {
    let pair_seed = derive_seed(args.seed, TAG_PAIR, index as u64);
    let shapes = shape_kinds(&args.shape, index, args.compose)?
        .into_iter()
        .enumerate()
        .map(|(k, kind)| synth_shape(kind, args.n_points, derive_seed(pair_seed, TAG_SHAPE, k as u64)))
        .collect::<p2pl_core::Result<Vec<_>>>()?;
    let cfg = SynthConfig {
        seed: pair_seed,
        n_sample: args.n_points,
        n_partial: args.n_partial,
        rot_max_deg: args.rot_max_deg,
        trans_max: args.trans_max,
        compose_count: args.compose,
        shared_sampling: false,
    };
    Ok(make_cpu_pair(&shapes, &cfg)?)
}

pub fn write_pair(dir: &Path, pair: &RegistrationPair) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    save(dir.join("source.ply"), &pair.source)?;
    save(dir.join("target.ply"), &pair.target)?;
    if let Some(c) = &pair.clean_source {
        save(dir.join("clean_source.ply"), c)?;
    }
    if let Some(c) = &pair.clean_target {
        save(dir.join("clean_target.ply"), c)?;
    }
    if let Some(gt) = &pair.gt {
        write_gt(&dir.join("gt.txt"), gt)?;
    }
    Ok(())
}

/// Writes `out/pair_NNNN/{source,target,clean_source,clean_target}.ply`
/// and `gt.txt`, plus the echoed run configuration. Returns the pair
/// directories in index order.
pub fn cmd_synth(args: &SynthArgs) -> Result<Vec<PathBuf>> {
    write_run_config(&args.out, "synth", args)?;
    (0..args.pairs)
        .into_par_iter()
        .map(|i| {
            let dir = args.out.join(pair_dir_name(i));
            let pair = synth_pair(args, i).with_context(|| format!("pair {i}"))?;
            write_pair(&dir, &pair).with_context(|| format!("pair {i}"))?;
            Ok(dir)
        })
        .collect()
}
