//! Compose / partial / unduplicated pair generation.
//!
//! 1. Several shapes, each under its own random rigid motion, are merged
//!    into one source-frame cloud `X_all`.
//! 2. A pair transform `gt` (per-axis rotation in `[0, rot_max_deg]`,
//!    translation in `[−trans_max, trans_max]³`) gives `Y_all = gt(X_all)`.
//! 3. `n_sample` points are drawn from each, using disjoint index sets when
//!    the pool is large enough, so no source point lands exactly on a target
//!    point after alignment.
//! 4. Each side is cut to `n_partial` points by a virtual sensor.

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::Rng;

use super::synth::unit_direction;
use super::PointCloud;
use crate::error::{Error, Result};
use crate::geom::{apply, RigidTransform, RotationMatrix};
use crate::rng::{self, DetRng};

const TAG_COMPOSE: u64 = 1;
const TAG_PAIR: u64 = 2;
const TAG_SAMPLE: u64 = 3;
const TAG_PARTIAL: u64 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_sample: usize,
    pub n_partial: usize,
    pub rot_max_deg: f64,
    pub trans_max: f64,
    pub compose_count: usize,
    /// Draw the target sample and sensor with the source's randomness
    /// instead of independently.
    pub shared_sampling: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            n_sample: 1024,
            n_partial: 768,
            rot_max_deg: 45.0,
            trans_max: 0.5,
            compose_count: 3,
            shared_sampling: false,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_partial > self.n_sample || self.n_partial == 0 {
            return Err(Error::InvalidArgument("need 0 < n_partial <= n_sample".into()));
        }
        if !(0.0..=180.0).contains(&self.rot_max_deg) {
            return Err(Error::InvalidArgument("rot_max_deg must lie in [0, 180]".into()));
        }
        if !(self.trans_max >= 0.0) {
            return Err(Error::InvalidArgument("trans_max must be >= 0".into()));
        }
        if self.compose_count == 0 {
            return Err(Error::InvalidArgument("compose_count must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationPair {
    pub source: PointCloud,
    pub target: PointCloud,
    /// Maps the source frame onto the target frame.
    pub gt: Option<RigidTransform>,
    pub clean_source: Option<PointCloud>,
    pub clean_target: Option<PointCloud>,
}

impl RegistrationPair {
    pub fn new(source: PointCloud, target: PointCloud) -> Self {
        RegistrationPair { source, target, gt: None, clean_source: None, clean_target: None }
    }
}

/// Z–Y–X Euler angles each uniform in `[0, rot_max_deg]`, translation
/// uniform in the cube of half-width `trans_max`.
pub(crate) fn random_motion(rng: &mut DetRng, rot_max_deg: f64, trans_max: f64) -> RigidTransform {
    let max = rot_max_deg.to_radians();
    let yaw = rng.random::<f64>() * max;
    let pitch = rng.random::<f64>() * max;
    let roll = rng.random::<f64>() * max;
    let t = Vector3::from_fn(|_, _| (2.0 * rng.random::<f64>() - 1.0) * trans_max);
    RigidTransform::new(RotationMatrix::from_euler_zyx(yaw, pitch, roll), t)
}

/// Keeps the `n_keep` points nearest to a sensor placed at twice the
/// bounding radius from the centroid along `direction`; original order is
/// preserved.
pub fn partial_scan(cloud: &PointCloud, direction: &Vector3<f64>, n_keep: usize) -> PointCloud {
    let n_keep = n_keep.min(cloud.len());
    let sensor = cloud.centroid() + direction.normalize() * (2.0 * cloud.bounding_radius());
    let mut idx: Vec<usize> = (0..cloud.len()).collect();
    idx.sort_by(|&a, &b| {
        let da = (cloud.positions[a] - sensor).norm_squared();
        let db = (cloud.positions[b] - sensor).norm_squared();
        da.total_cmp(&db).then(a.cmp(&b))
    });
    idx.truncate(n_keep);
    idx.sort_unstable();
    cloud.select(&idx)
}

pub fn make_cpu_pair(shapes: &[PointCloud], cfg: &SynthConfig) -> Result<RegistrationPair> {
    cfg.validate()?;
    if shapes.is_empty() {
        return Err(Error::InvalidArgument("make_cpu_pair needs at least one shape".into()));
    }
    if let Some(s) = shapes.iter().find(|s| s.len() < cfg.n_sample) {
        return Err(Error::InsufficientPoints { needed: cfg.n_sample, available: s.len() });
    }

    let parts: Vec<PointCloud> = (0..cfg.compose_count)
        .map(|k| {
            let mut r = rng::substream(cfg.seed, TAG_COMPOSE, k as u64);
            apply(&random_motion(&mut r, cfg.rot_max_deg, cfg.trans_max), &shapes[k % shapes.len()])
        })
        .collect();
    let x_all = PointCloud::concat(&parts);

    let gt = random_motion(&mut rng::substream(cfg.seed, TAG_PAIR, 0), cfg.rot_max_deg, cfg.trans_max);
    let y_all = apply(&gt, &x_all);

    let pool = x_all.len();
    let n = cfg.n_sample;
    let mut perm: Vec<usize> = (0..pool).collect();
    perm.shuffle(&mut rng::substream(cfg.seed, TAG_SAMPLE, 0));
    let src_idx = perm[..n].to_vec();
    let tgt_idx = if cfg.shared_sampling {
        src_idx.clone()
    } else if pool >= 2 * n {
        perm[n..2 * n].to_vec()
    } else {
        let mut other: Vec<usize> = (0..pool).collect();
        other.shuffle(&mut rng::substream(cfg.seed, TAG_SAMPLE, 1));
        other.truncate(n);
        other
    };
    let clean_source = x_all.select(&src_idx);
    let clean_target = y_all.select(&tgt_idx);

    let src_dir = unit_direction(&mut rng::substream(cfg.seed, TAG_PARTIAL, 0));
    let tgt_dir = if cfg.shared_sampling {
        gt.apply_vector(&src_dir)
    } else {
        unit_direction(&mut rng::substream(cfg.seed, TAG_PARTIAL, 1))
    };
    let source = partial_scan(&clean_source, &src_dir, cfg.n_partial);
    let target = partial_scan(&clean_target, &tgt_dir, cfg.n_partial);

    Ok(RegistrationPair {
        source,
        target,
        gt: Some(gt),
        clean_source: Some(clean_source),
        clean_target: Some(clean_target),
    })
}
