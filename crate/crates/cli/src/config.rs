//! Run configuration echo, seed derivation, thread setup and the `gt.txt`
//! format.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use p2pl_core::rng;
use p2pl_core::RigidTransform;
use rand::Rng;
use serde::Serialize;

pub const RUN_CONFIG_FILE: &str = "run_config.json";
pub const THREADS_ENV: &str = "P2PL_THREADS";
/// Largest `‖RᵀR − I‖` accepted when reading a ground-truth file.
pub const GT_ORTHO_TOL: f64 = 1e-6;

/// What gets echoed into every output directory. The worker count is left
/// out on purpose: outputs must not depend on it.
#[derive(Debug, Serialize)]
pub struct RunConfig<'a, T: Serialize> {
    pub command: &'a str,
    pub params: &'a T,
}

pub fn write_run_config<T: Serialize>(out: &Path, command: &str, params: &T) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut text = serde_json::to_string_pretty(&RunConfig { command, params })?;
    text.push('\n');
    fs::write(out.join(RUN_CONFIG_FILE), text)?;
    Ok(())
}

/// Independent per-item seed, so results do not depend on scheduling.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    rng::substream(seed, tag, index).random()
}

/// Sizes the global rayon pool from `P2PL_THREADS` when set.
pub fn init_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value.trim().parse().with_context(|| format!("{THREADS_ENV}={value:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

/// Three lines of `R | t`, shortest round-trip float formatting with
/// signed zeros written as `0`.
pub fn format_gt(t: &RigidTransform) -> String {
    t.to_rows()
        .iter()
        .map(|row| {
            let [a, b, c, d] = row.map(|v| v + 0.0);
            format!("{a} {b} {c} {d}\n")
        })
        .collect()
}

pub fn parse_gt(text: &str) -> Result<RigidTransform> {
    let values: Vec<f64> = text
        .split_whitespace()
        .map(|w| w.parse::<f64>().with_context(|| format!("bad number {w:?}")))
        .collect::<Result<_>>()?;
    if values.len() != 12 {
        bail!("expected 12 numbers, found {}", values.len());
    }
    let mut rows = [[0.0; 4]; 3];
    for (k, v) in values.into_iter().enumerate() {
        rows[k / 4][k % 4] = v;
    }
    let t = RigidTransform::from_rows(&rows);
    if !(t.rotation.orthogonality_error() <= GT_ORTHO_TOL) || t.rotation.matrix().determinant() <= 0.0 {
        bail!("rotation block is not a proper rotation");
    }
    Ok(t)
}

pub fn write_gt(path: &Path, t: &RigidTransform) -> Result<()> {
    fs::write(path, format_gt(t)).with_context(|| format!("writing {}", path.display()))
}

pub fn read_gt(path: &Path) -> Result<RigidTransform> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_gt(&text).with_context(|| format!("parsing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use p2pl_core::geom::{rodrigues, AxisAngle};
    use nalgebra::Vector3;

    #[test]
    fn gt_text_round_trips_exactly() {
        let t = RigidTransform::new(
            rodrigues(&AxisAngle(Vector3::new(0.3, -1.1, 0.7))),
            Vector3::new(0.1, -1.0 / 3.0, 2e-17),
        );
        assert_eq!(parse_gt(&format_gt(&t)).unwrap(), t);
        assert_eq!(format_gt(&t).lines().count(), 3);
    }

    #[test]
    fn gt_rejects_malformed_files() {
        assert!(parse_gt("1 0 0 0\n0 1 0 0\n").is_err());
        assert!(parse_gt("-1 0 0 0\n0 1 0 0\n0 0 1 0\n").is_err());
        assert!(parse_gt("2 0 0 0\n0 1 0 0\n0 0 1 0\n").is_err());
        assert!(parse_gt("1 0 0 x\n0 1 0 0\n0 0 1 0\n").is_err());
    }

    #[test]
    fn derived_seeds_differ_per_item() {
        assert_ne!(derive_seed(1, 2, 0), derive_seed(1, 2, 1));
        assert_eq!(derive_seed(1, 2, 3), derive_seed(1, 2, 3));
    }
}
