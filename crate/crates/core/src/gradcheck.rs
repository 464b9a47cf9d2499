//! Finite-difference oracle for the full map from inputs to the solved
//! transform, and error reports on chained per-point loss gradients.

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::Rng;
use rayon::prelude::*;

use crate::cloud::{synth_shape, PointCloud, ShapeKind};
use crate::correspond::CorrespondenceSet;
use crate::error::{Error, Result};
use crate::geom::{apply, RigidTransform, RotationMatrix};
use crate::grad::{backward, chain_loss, rigid_motion_loss, GradientBundle, Matrix12x3, PointGradients, Vector12};
use crate::rng;
use crate::solver::{register_p2pl, SolveOptions};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FDConfig {
    pub step: f64,
    pub n_iters_forward: usize,
    /// Re-normalize perturbed normals. Off by default: the analytic
    /// derivative treats `n` as unconstrained.
    pub project_normals: bool,
}

impl Default for FDConfig {
    fn default() -> Self {
        FDConfig { step: 1e-5, n_iters_forward: 10, project_normals: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InputKind {
    X,
    Y,
    N,
    Zeta,
}

impl InputKind {
    pub const ALL: [InputKind; 4] = [InputKind::X, InputKind::Y, InputKind::N, InputKind::Zeta];

    pub fn dim(self) -> usize {
        if self == InputKind::Zeta {
            1
        } else {
            3
        }
    }
}

impl fmt::Display for InputKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InputKind::X => "x",
            InputKind::Y => "y",
            InputKind::N => "n",
            InputKind::Zeta => "zeta",
        })
    }
}

impl FromStr for InputKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" => Ok(InputKind::X),
            "y" => Ok(InputKind::Y),
            "n" => Ok(InputKind::N),
            "zeta" => Ok(InputKind::Zeta),
            other => Err(Error::InvalidArgument(format!("unknown input kind '{other}'"))),
        }
    }
}

fn solve_g(corr: &CorrespondenceSet, source: &PointCloud, n_iters: usize) -> Result<Vector12> {
    Ok(register_p2pl(corr, source, n_iters, &SolveOptions::default())?.transform.to_g().0)
}

fn perturbed(
    corr: &CorrespondenceSet,
    source: &PointCloud,
    which: InputKind,
    index: usize,
    coord: usize,
    h: f64,
    project: bool,
) -> (CorrespondenceSet, PointCloud) {
    let mut c = corr.clone();
    let mut s = source.clone();
    match which {
        InputKind::X => s.positions[index][coord] += h,
        InputKind::Y => c.targets[index][coord] += h,
        InputKind::N => {
            c.normals[index][coord] += h;
            if project {
                c.normals[index] = c.normals[index].normalize();
            }
        }
        InputKind::Zeta => c.weights[index] += h,
    }
    (c, s)
}

/// Central differences of `register_p2pl`'s output over each coordinate of
/// one input; one 12-vector column per coordinate.
pub fn fd_jacobian(
    corr: &CorrespondenceSet,
    source: &PointCloud,
    which: InputKind,
    index: usize,
    cfg: &FDConfig,
) -> Result<Vec<Vector12>> {
    if index >= corr.len() || !(cfg.step > 0.0) {
        return Err(Error::InvalidArgument("index out of range or non-positive step".into()));
    }
    (0..which.dim())
        .map(|coord| {
            let (cp, sp) = perturbed(corr, source, which, index, coord, cfg.step, cfg.project_normals);
            let (cm, sm) = perturbed(corr, source, which, index, coord, -cfg.step, cfg.project_normals);
            Ok((solve_g(&cp, &sp, cfg.n_iters_forward)? - solve_g(&cm, &sm, cfg.n_iters_forward)?) / (2.0 * cfg.step))
        })
        .collect()
}

/// Finite-difference Jacobians for every pair and input kind.
#[derive(Debug, Clone)]
pub struct FdBundle {
    pub x: Vec<Matrix12x3>,
    pub y: Vec<Matrix12x3>,
    pub n: Vec<Matrix12x3>,
    pub zeta: Vec<Vector12>,
}

pub fn fd_bundle(corr: &CorrespondenceSet, source: &PointCloud, cfg: &FDConfig) -> Result<FdBundle> {
    let jobs: Vec<(InputKind, usize)> =
        InputKind::ALL.iter().flat_map(|&k| (0..corr.len()).map(move |i| (k, i))).collect();
    let cols: Vec<Vec<Vector12>> =
        jobs.par_iter().map(|&(k, i)| fd_jacobian(corr, source, k, i, cfg)).collect::<Result<_>>()?;
    let n = corr.len();
    let block = |k: usize| -> Vec<Matrix12x3> {
        cols[k * n..(k + 1) * n].iter().map(|c| Matrix12x3::from_columns(&[c[0], c[1], c[2]])).collect()
    };
    Ok(FdBundle { x: block(0), y: block(1), n: block(2), zeta: cols[3 * n..].iter().map(|c| c[0]).collect() })
}

impl FdBundle {
    /// The same per-point chaining as [`chain_loss`].
    pub fn chain(&self, d_loss_d_g: &Vector12) -> PointGradients {
        let row = |j: &Matrix12x3| (d_loss_d_g.transpose() * j).transpose();
        PointGradients {
            x: self.x.iter().map(row).collect(),
            y: self.y.iter().map(row).collect(),
            n: self.n.iter().map(row).collect(),
            zeta: self.zeta.iter().map(|j| d_loss_d_g.dot(j)).collect(),
        }
    }
}

fn flatten(g: &PointGradients, kind: InputKind) -> Vec<f64> {
    let v3 = |v: &Vec<Vector3<f64>>| v.iter().flat_map(|p| p.iter().copied().collect::<Vec<_>>()).collect();
    match kind {
        InputKind::X => v3(&g.x),
        InputKind::Y => v3(&g.y),
        InputKind::N => v3(&g.n),
        InputKind::Zeta => g.zeta.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KindError {
    pub kind: InputKind,
    pub mse: f64,
    pub rel_mse: f64,
}

/// Error of analytic against oracle loss gradients. `rel_mse` of a kind is
/// its MSE over the oracle's mean square; the aggregate `rel_mse` is the
/// mean of the per-kind values and the aggregate `mse` is pooled.
#[derive(Debug, Clone, PartialEq)]
pub struct GradErrorReport {
    pub per_kind: Vec<KindError>,
    pub mse: f64,
    pub rel_mse: f64,
    pub n_iters: usize,
}

pub fn compare_gradients(analytic: &PointGradients, oracle: &PointGradients, n_iters: usize) -> GradErrorReport {
    let mut per_kind = Vec::new();
    let (mut sq, mut count) = (0.0, 0usize);
    for kind in InputKind::ALL {
        let a = flatten(analytic, kind);
        let o = flatten(oracle, kind);
        let err: f64 = a.iter().zip(&o).map(|(p, q)| (p - q).powi(2)).sum();
        let ms_oracle = o.iter().map(|q| q * q).sum::<f64>() / o.len() as f64;
        let mse = err / a.len() as f64;
        let rel_mse = if ms_oracle > 0.0 { mse / ms_oracle } else if mse == 0.0 { 0.0 } else { f64::INFINITY };
        per_kind.push(KindError { kind, mse, rel_mse });
        sq += err;
        count += a.len();
    }
    let rel_mse = per_kind.iter().map(|k| k.rel_mse).sum::<f64>() / per_kind.len() as f64;
    GradErrorReport { per_kind, mse: sq / count as f64, rel_mse, n_iters }
}

pub fn compare(analytic: &GradientBundle, fd: &FdBundle, loss_direction: &Vector12, n_iters: usize) -> GradErrorReport {
    compare_gradients(&chain_loss(loss_direction, analytic), &fd.chain(loss_direction), n_iters)
}

/// A seeded registration problem with noisy but known correspondences.
#[derive(Debug, Clone)]
pub struct GradInstance {
    pub source: PointCloud,
    pub corr: CorrespondenceSet,
    pub gt: RigidTransform,
}

/// Position noise of generated instances.
pub const INSTANCE_NOISE: f64 = 0.005;

/// Blob source of `n` points, ground truth with up to 45° per axis and 0.5
/// translation, targets `gt(x) + noise`, normals `gt(m) + noise`
/// renormalized, weights in [0.5, 1.5].
pub fn make_instance(seed: u64, n: usize) -> Result<GradInstance> {
    let source = synth_shape(ShapeKind::Blob, n, seed)?;
    let mut r = rng::substream(seed, 0x67AD, 0);
    let m = 45f64.to_radians();
    let gt = RigidTransform::new(
        RotationMatrix::from_euler_zyx(r.random_range(0.0..m), r.random_range(0.0..m), r.random_range(0.0..m)),
        Vector3::from_fn(|_, _| r.random_range(-0.5..0.5)),
    );
    let moved = apply(&gt, &source);
    let mut noise = |s: f64| Vector3::from_fn(|_, _| r.random_range(-s..s));
    let targets: Vec<_> = moved.positions.iter().map(|p| p + noise(INSTANCE_NOISE)).collect();
    let normals: Vec<_> = moved.normals.as_ref().expect("synthetic normals").iter().map(|v| (v + noise(INSTANCE_NOISE)).normalize()).collect();
    let weights = (0..n).map(|_| r.random_range(0.5..1.5)).collect();
    Ok(GradInstance { source, corr: CorrespondenceSet::with_weights(targets, normals, weights)?, gt })
}

/// Forward solve, analytic backward, FD oracle and comparison, with the
/// rigid motion loss against the instance's ground truth.
pub fn check_instance(inst: &GradInstance, cfg: &FDConfig) -> Result<GradErrorReport> {
    let g = register_p2pl(&inst.corr, &inst.source, cfg.n_iters_forward, &SolveOptions::default())?.transform.to_g();
    let (_, dl) = rigid_motion_loss(&g, &inst.gt);
    let bundle = backward(&inst.corr, &inst.source, &g)?;
    let fd = fd_bundle(&inst.corr, &inst.source, cfg)?;
    Ok(compare(&bundle, &fd, &dl, cfg.n_iters_forward))
}

/// `‖D(h) − D(h/2)‖ / ‖D(h/2) − D(h/4)‖` over all FD Jacobian entries;
/// about 4 when truncation error dominates.
pub fn richardson_ratio(corr: &CorrespondenceSet, source: &PointCloud, cfg: &FDConfig) -> Result<f64> {
    let flat = |step: f64| -> Result<Vec<f64>> {
        let b = fd_bundle(corr, source, &FDConfig { step, ..*cfg })?;
        let mut v: Vec<f64> = Vec::new();
        for m in b.x.iter().chain(&b.y).chain(&b.n) {
            v.extend(m.iter());
        }
        b.zeta.iter().for_each(|z| v.extend(z.iter()));
        Ok(v)
    };
    let (a, b, c) = (flat(cfg.step)?, flat(cfg.step / 2.0)?, flat(cfg.step / 4.0)?);
    let dist = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
    Ok(dist(&a, &b) / dist(&b, &c))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compare_examples() {
        let inst = make_instance(1, 8).unwrap();
        let g = register_p2pl(&inst.corr, &inst.source, 10, &SolveOptions::default()).unwrap().transform.to_g();
        let b = backward(&inst.corr, &inst.source, &g).unwrap();
        let dl = rigid_motion_loss(&g, &inst.gt).1;
        let a = chain_loss(&dl, &b);
        let same = compare_gradients(&a, &a, 10);
        assert_eq!((same.mse, same.rel_mse), (0.0, 0.0));

        let doubled = PointGradients {
            x: a.x.iter().map(|v| v * 2.0).collect(),
            y: a.y.iter().map(|v| v * 2.0).collect(),
            n: a.n.iter().map(|v| v * 2.0).collect(),
            zeta: a.zeta.iter().map(|v| v * 2.0).collect(),
        };
        let rep = compare_gradients(&a, &doubled, 10);
        for k in &rep.per_kind {
            assert!((k.rel_mse - 0.25).abs() < 1e-12);
        }
        assert!((rep.rel_mse - 0.25).abs() < 1e-12);
    }

    #[test]
    fn zero_residual_y_block_matches_tightly() {
        let mut inst = make_instance(2, 16).unwrap();
        inst.corr.targets = inst.source.positions.iter().map(|p| inst.gt.apply_point(p)).collect();
        let cfg = FDConfig::default();
        let g = register_p2pl(&inst.corr, &inst.source, 10, &SolveOptions::default()).unwrap().transform.to_g();
        let b = backward(&inst.corr, &inst.source, &g).unwrap();
        let mut err = 0.0;
        let mut norm = 0.0;
        for i in 0..16 {
            let fd = fd_jacobian(&inst.corr, &inst.source, InputKind::Y, i, &cfg).unwrap();
            for c in 0..3 {
                err += (fd[c] - b.d_g_d_y[i].column(c)).norm_squared();
                norm += fd[c].norm_squared();
            }
        }
        assert!(err / norm <= 1e-6, "{}", err / norm);
    }

    #[test]
    fn uniform_zeta_direction_is_flat() {
        let mut inst = make_instance(3, 16).unwrap();
        inst.corr.weights = vec![1.0; 16];
        let cfg = FDConfig::default();
        let cols: Vec<Vector12> =
            (0..16).map(|i| fd_jacobian(&inst.corr, &inst.source, InputKind::Zeta, i, &cfg).unwrap()[0]).collect();
        let total: Vector12 = cols.iter().sum();
        let scale: f64 = cols.iter().map(|c| c.norm()).sum();
        assert!(total.norm() <= 1e-6 * scale, "{} vs {}", total.norm(), scale);
    }

    #[test]
    fn converged_instance_meets_tolerance() {
        for seed in 0..3 {
            let rep = check_instance(&make_instance(seed, 32).unwrap(), &FDConfig::default()).unwrap();
            assert!(rep.rel_mse <= 1e-4, "seed {seed}: {rep:?}");
        }
    }

    #[test]
    fn richardson_ratio_is_near_four() {
        let inst = make_instance(4, 32).unwrap();
        let ratio = richardson_ratio(&inst.corr, &inst.source, &FDConfig { step: 1e-4, ..Default::default() }).unwrap();
        assert!((ratio - 4.0).abs() < 0.5, "{ratio}");
    }
}
