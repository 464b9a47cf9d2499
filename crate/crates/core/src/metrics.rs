//! Evaluation metrics: Euler-angle and translation residual statistics over
//! a batch of registrations, and the symmetric chamfer distance.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::cloud::RegistrationPair;
use crate::error::{Error, Result};
use crate::geom::{apply, geodesic_angle, RigidTransform, RotationMatrix};
use crate::kdtree::KdTree;
use crate::linalg::CompensatedSum;

/// |pitch| within this of 90° is reported as gimbal lock.
pub const GIMBAL_TOL: f64 = 1e-6;

/// Intrinsic Z–Y–X angles `(yaw, pitch, roll)` in radians, with
/// `R = Rz(yaw)·Ry(pitch)·Rx(roll)`. At gimbal lock roll is set to zero.
pub fn euler_zyx(r: &RotationMatrix) -> (f64, f64, f64) {
    let m = r.matrix();
    let pitch = (-m[(2, 0)]).clamp(-1.0, 1.0).asin();
    if is_gimbal_locked(pitch) {
        let yaw = (-m[(0, 1)]).atan2(m[(1, 1)]);
        return (yaw, pitch, 0.0);
    }
    let yaw = m[(1, 0)].atan2(m[(0, 0)]);
    let roll = m[(2, 1)].atan2(m[(2, 2)]);
    (yaw, pitch, roll)
}

fn is_gimbal_locked(pitch: f64) -> bool {
    (pitch.abs() - std::f64::consts::FRAC_PI_2).abs() < GIMBAL_TOL
}

fn wrap_deg(d: f64) -> f64 {
    let w = (d + 180.0).rem_euclid(360.0) - 180.0;
    if w == -180.0 {
        180.0
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationError {
    /// `est − gt` per Euler angle (yaw, pitch, roll), degrees in (−180, 180].
    pub residual_deg: [f64; 3],
    pub geodesic_deg: f64,
    pub gimbal_lock: bool,
}

pub fn rotation_errors(est: &RigidTransform, gt: &RigidTransform) -> RotationError {
    let (ey, ep, er) = euler_zyx(&est.rotation);
    let (gy, gp, gr) = euler_zyx(&gt.rotation);
    RotationError {
        residual_deg: [
            wrap_deg((ey - gy).to_degrees()),
            wrap_deg((ep - gp).to_degrees()),
            wrap_deg((er - gr).to_degrees()),
        ],
        geodesic_deg: geodesic_angle(&est.rotation, &gt.rotation).to_degrees(),
        gimbal_lock: is_gimbal_locked(ep) || is_gimbal_locked(gp),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub mse: f64,
    pub rmse: f64,
    pub mae: f64,
    /// `None` when the ground truth is constant.
    pub r2: Option<f64>,
}

/// Statistics of 3-component residuals against the matching ground-truth
/// values. R² uses `predicted = truth − residual` and is pooled over the
/// three components, each centred on its own mean.
pub fn batch_stats(residuals: &[[f64; 3]], truth: &[[f64; 3]]) -> Result<Stats> {
    if residuals.len() < 2 || residuals.len() != truth.len() {
        return Err(Error::InvalidArgument("batch_stats needs >= 2 cases with matching truth".into()));
    }
    let count = (residuals.len() * 3) as f64;
    let sq: CompensatedSum = residuals.iter().flatten().map(|e| e * e).collect();
    let abs: CompensatedSum = residuals.iter().flatten().map(|e| e.abs()).collect();
    let mse = sq.value() / count;
    Ok(Stats { mse, rmse: mse.sqrt(), mae: abs.value() / count, r2: r_squared(residuals, truth).ok() })
}

pub fn r_squared(residuals: &[[f64; 3]], truth: &[[f64; 3]]) -> Result<f64> {
    let n = truth.len() as f64;
    let mut ss_tot = CompensatedSum::default();
    for c in 0..3 {
        let mean = truth.iter().map(|t| t[c]).collect::<CompensatedSum>().value() / n;
        truth.iter().for_each(|t| ss_tot.add((t[c] - mean).powi(2)));
    }
    let ss_tot = ss_tot.value();
    if ss_tot < 1e-18 {
        return Err(Error::ConstantTarget);
    }
    let ss_res: CompensatedSum = residuals.iter().flatten().map(|e| e * e).collect();
    Ok(1.0 - ss_res.value() / ss_tot)
}

/// Symmetric mean of squared nearest-neighbour distances between the
/// transformed source and the target, using the clean clouds when present.
pub fn chamfer(est: &RigidTransform, pair: &RegistrationPair) -> f64 {
    let s = pair.clean_source.as_ref().unwrap_or(&pair.source);
    let t = pair.clean_target.as_ref().unwrap_or(&pair.target);
    let moved = apply(est, s).positions;
    (mean_nn_sq(&moved, &t.positions) + mean_nn_sq(&t.positions, &moved)) / 2.0
}

fn mean_nn_sq(from: &[Vector3<f64>], to: &[Vector3<f64>]) -> f64 {
    let tree = KdTree::new(to);
    let d: Vec<f64> = from.par_iter().map(|p| tree.nearest(p).map_or(0.0, |(_, d2)| d2)).collect();
    d.into_iter().collect::<CompensatedSum>().value() / from.len() as f64
}

/// One registration outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseRow {
    pub case_id: String,
    pub rot_residual_deg: [f64; 3],
    pub geodesic_deg: f64,
    pub trans_residual: [f64; 3],
    pub chamfer: f64,
    pub fwd_ms: f64,
    pub bwd_ms: f64,
    /// Ground-truth Euler angles (degrees) and translation, kept for R².
    pub gt_euler_deg: [f64; 3],
    pub gt_translation: [f64; 3],
    pub gimbal_lock: bool,
    /// Error code when the case failed; metric fields are NaN then.
    pub error: Option<String>,
}

impl CaseRow {
    pub fn new(case_id: impl Into<String>, est: &RigidTransform, gt: &RigidTransform, chamfer: f64) -> Self {
        let rot = rotation_errors(est, gt);
        let (y, p, r) = euler_zyx(&gt.rotation);
        let dt = est.translation - gt.translation;
        CaseRow {
            case_id: case_id.into(),
            rot_residual_deg: rot.residual_deg,
            geodesic_deg: rot.geodesic_deg,
            trans_residual: [dt.x, dt.y, dt.z],
            chamfer,
            fwd_ms: 0.0,
            bwd_ms: 0.0,
            gt_euler_deg: [y.to_degrees(), p.to_degrees(), r.to_degrees()],
            gt_translation: [gt.translation.x, gt.translation.y, gt.translation.z],
            gimbal_lock: rot.gimbal_lock,
            error: None,
        }
    }

    pub fn failed(case_id: impl Into<String>, error: &Error) -> Self {
        CaseRow {
            case_id: case_id.into(),
            rot_residual_deg: [f64::NAN; 3],
            geodesic_deg: f64::NAN,
            trans_residual: [f64::NAN; 3],
            chamfer: f64::NAN,
            fwd_ms: f64::NAN,
            bwd_ms: f64::NAN,
            gt_euler_deg: [f64::NAN; 3],
            gt_translation: [f64::NAN; 3],
            gimbal_lock: false,
            error: Some(error.code().to_string()),
        }
    }

    pub const CSV_HEADER: [&'static str; 12] = [
        "case_id",
        "res_yaw_deg",
        "res_pitch_deg",
        "res_roll_deg",
        "geodesic_deg",
        "res_tx",
        "res_ty",
        "res_tz",
        "chamfer",
        "fwd_ms",
        "bwd_ms",
        "error",
    ];

    pub fn csv_record(&self) -> Vec<String> {
        let mut rec = vec![self.case_id.clone()];
        rec.extend(self.rot_residual_deg.iter().map(|v| v.to_string()));
        rec.push(self.geodesic_deg.to_string());
        rec.extend(self.trans_residual.iter().map(|v| v.to_string()));
        rec.push(self.chamfer.to_string());
        rec.push(self.fwd_ms.to_string());
        rec.push(self.bwd_ms.to_string());
        rec.push(self.error.clone().unwrap_or_default());
        rec
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub rotation: Stats,
    pub translation: Stats,
    pub chamfer: f64,
    pub rows: Vec<CaseRow>,
}

impl MetricReport {
    /// Aggregates the successful rows; needs at least two of them.
    pub fn from_rows(rows: Vec<CaseRow>) -> Result<Self> {
        let ok: Vec<&CaseRow> = rows.iter().filter(|r| r.error.is_none()).collect();
        let rot_res: Vec<_> = ok.iter().map(|r| r.rot_residual_deg).collect();
        let rot_gt: Vec<_> = ok.iter().map(|r| r.gt_euler_deg).collect();
        let tr_res: Vec<_> = ok.iter().map(|r| r.trans_residual).collect();
        let tr_gt: Vec<_> = ok.iter().map(|r| r.gt_translation).collect();
        let rotation = batch_stats(&rot_res, &rot_gt)?;
        let translation = batch_stats(&tr_res, &tr_gt)?;
        let chamfer = ok.iter().map(|r| r.chamfer).sum::<f64>() / ok.len() as f64;
        Ok(MetricReport { rotation, translation, chamfer, rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{make_cpu_pair, synth_shape, PointCloud, ShapeKind, SynthConfig};
    use crate::geom::{compose, rodrigues, AxisAngle};
    use crate::rng;
    use rand::Rng;

    fn random_rotation(r: &mut impl Rng) -> RotationMatrix {
        let a = Vector3::new(r.random_range(-2.0..2.0), r.random_range(-2.0..2.0), r.random_range(-2.0..2.0));
        rodrigues(&AxisAngle(a))
    }

    #[test]
    fn euler_round_trip() {
        let mut r = rng::stream(1, 0);
        for _ in 0..500 {
            let (y, p, ro) = (r.random_range(-3.0..3.0), r.random_range(-1.5..1.5), r.random_range(-3.0..3.0));
            let (a, b, c) = euler_zyx(&RotationMatrix::from_euler_zyx(y, p, ro));
            assert!((a - y).abs() < 1e-9 && (b - p).abs() < 1e-9 && (c - ro).abs() < 1e-9);
        }
    }

    #[test]
    fn rotation_error_examples() {
        let mut r = rng::stream(2, 0);
        let gt = RigidTransform::new(RotationMatrix::from_euler_zyx(0.3, -0.2, 0.5), Vector3::zeros());
        let e = rotation_errors(&gt, &gt);
        assert_eq!(e.residual_deg, [0.0; 3]);

        let yawed = compose(&RigidTransform::new(RotationMatrix::about_axis(2, 5f64.to_radians()), Vector3::zeros()), &gt);
        let e = rotation_errors(&yawed, &gt);
        assert!((e.residual_deg[0] - 5.0).abs() < 1e-9);
        assert!(e.residual_deg[1].abs() < 1e-9 && e.residual_deg[2].abs() < 1e-9);

        for _ in 0..200 {
            let a = RigidTransform::new(random_rotation(&mut r), Vector3::zeros());
            let b = RigidTransform::new(random_rotation(&mut r), Vector3::zeros());
            let m = a.rotation.matrix().transpose() * b.rotation.matrix();
            let oracle = ((m.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos().to_degrees();
            assert!((rotation_errors(&a, &b).geodesic_deg - oracle).abs() < 1e-9);

            let q = random_rotation(&mut r);
            let conj = |t: &RigidTransform| {
                RigidTransform::new(q * t.rotation * q.transpose(), Vector3::zeros())
            };
            let g2 = rotation_errors(&conj(&a), &conj(&b)).geodesic_deg;
            assert!((g2 - oracle).abs() < 1e-9);
        }
    }

    #[test]
    fn gimbal_lock_is_flagged() {
        let t = RigidTransform::new(RotationMatrix::from_euler_zyx(0.2, std::f64::consts::FRAC_PI_2, 0.1), Vector3::zeros());
        assert!(rotation_errors(&t, &RigidTransform::identity()).gimbal_lock);
    }

    #[test]
    fn batch_stats_examples() {
        let truth = [[1.0, 2.0, 3.0], [2.0, -1.0, 0.5], [0.0, 4.0, 1.0]];
        let zero = [[0.0; 3]; 3];
        let s = batch_stats(&zero, &truth).unwrap();
        assert_eq!((s.mse, s.r2), (0.0, Some(1.0)));
        assert!(batch_stats(&truth, &truth).unwrap().r2.unwrap() <= 0.0);
        let constant = [[1.0; 3]; 3];
        assert_eq!(batch_stats(&zero, &constant).unwrap().r2, None);
        assert!(matches!(r_squared(&zero, &constant), Err(Error::ConstantTarget)));
        assert!(batch_stats(&zero[..1], &truth[..1]).is_err());
    }

    #[test]
    fn batch_stats_match_textbook_formulas() {
        let mut r = rng::stream(3, 0);
        let n = 57;
        let res: Vec<[f64; 3]> = (0..n).map(|_| std::array::from_fn(|_| r.random_range(-2.0..2.0))).collect();
        let truth: Vec<[f64; 3]> = (0..n).map(|_| std::array::from_fn(|_| r.random_range(-40.0..40.0))).collect();
        let s = batch_stats(&res, &truth).unwrap();

        let flat: Vec<f64> = res.iter().flatten().copied().collect();
        let mse = flat.iter().map(|e| e * e).sum::<f64>() / flat.len() as f64;
        let mae = flat.iter().map(|e| e.abs()).sum::<f64>() / flat.len() as f64;
        let mut ss_tot = 0.0;
        for c in 0..3 {
            let mean = truth.iter().map(|t| t[c]).sum::<f64>() / n as f64;
            ss_tot += truth.iter().map(|t| (t[c] - mean).powi(2)).sum::<f64>();
        }
        let r2 = 1.0 - flat.iter().map(|e| e * e).sum::<f64>() / ss_tot;
        assert!((s.mse - mse).abs() <= 1e-12 * mse);
        assert!((s.mae - mae).abs() <= 1e-12 * mae);
        assert!((s.r2.unwrap() - r2).abs() <= 1e-12);
        assert!((s.rmse * s.rmse - s.mse).abs() <= 1e-12 && s.mae <= s.rmse);
    }

    #[test]
    fn chamfer_of_single_points() {
        let a = PointCloud::new(vec![Vector3::zeros()]).unwrap();
        let b = PointCloud::new(vec![Vector3::new(0.0, 0.3, 0.4)]).unwrap();
        let c = chamfer(&RigidTransform::identity(), &RegistrationPair::new(a, b));
        assert!((c - 0.25).abs() < 1e-15);
    }

    #[test]
    fn chamfer_at_gt_sits_at_sampling_floor() {
        let shapes = vec![synth_shape(ShapeKind::Blob, 3000, 4).unwrap()];
        let cfg = SynthConfig { seed: 5, compose_count: 1, ..Default::default() };
        let pair = make_cpu_pair(&shapes, &cfg).unwrap();
        let gt = pair.gt.unwrap();
        let at_gt = chamfer(&gt, &pair);

        // Exhaustive scan between the two clean samples, both in the target frame.
        let s: Vec<_> = pair.clean_source.as_ref().unwrap().positions.iter().map(|p| gt.apply_point(p)).collect();
        let t = &pair.clean_target.as_ref().unwrap().positions;
        let scan = |from: &[Vector3<f64>], to: &[Vector3<f64>]| {
            from.iter()
                .map(|p| to.iter().map(|q| (p - q).norm_squared()).fold(f64::INFINITY, f64::min))
                .sum::<f64>()
                / from.len() as f64
        };
        let floor = (scan(&s, t) + scan(t, &s)) / 2.0;
        assert!((at_gt - floor).abs() <= 1e-12 * floor.max(1e-300));
        assert!(at_gt < 0.01);
        assert!(chamfer(&RigidTransform::identity(), &pair) > at_gt);
    }

    #[test]
    fn report_skips_failed_rows() {
        let mut r = rng::stream(6, 0);
        let mut rows: Vec<CaseRow> = (0..5)
            .map(|i| {
                let gt = RigidTransform::new(random_rotation(&mut r), Vector3::new(r.random(), r.random(), r.random()));
                let est = RigidTransform::new(RotationMatrix::about_axis(0, 0.01) * gt.rotation, gt.translation);
                CaseRow::new(i.to_string(), &est, &gt, 0.0)
            })
            .collect();
        rows.push(CaseRow::failed("bad", &Error::SingularSystem { iteration: Some(0) }));
        let rep = MetricReport::from_rows(rows).unwrap();
        assert_eq!(rep.rows.len(), 6);
        assert!(rep.rotation.mse.is_finite() && rep.translation.mse < 1e-20);
        assert_eq!(rep.rows[5].csv_record().last().unwrap(), "singular_system");
    }
}
