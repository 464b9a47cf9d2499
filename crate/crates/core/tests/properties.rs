use approx::assert_relative_eq;
use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;

use p2pl_core::cloud::synth_shape;
use p2pl_core::correspond::{average_normal_vectors, nn_correspond, soft_pointers};
use p2pl_core::geom::{compose, geodesic_angle, log_rotation, rodrigues};
use p2pl_core::solver::{register_p2pl, register_procrustes, SolveOptions};
use p2pl_core::{AxisAngle, CorrespondenceSet, PointCloud, RigidTransform, ScoreMatrix, ShapeKind};

fn vec3() -> impl Strategy<Value = Vector3<f64>> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

fn axis() -> impl Strategy<Value = Vector3<f64>> {
    vec3().prop_filter("axis needs length", |v| v.norm() > 0.1)
}

fn transform(max_angle: f64) -> impl Strategy<Value = RigidTransform> {
    (axis(), 0.0..max_angle, vec3())
        .prop_map(|(a, angle, t)| RigidTransform::new(rodrigues(&AxisAngle::new(a, angle)), t * 0.5))
}

fn exact_corr(cloud: &PointCloud, gt: &RigidTransform) -> CorrespondenceSet {
    CorrespondenceSet::new(
        cloud.positions.iter().map(|p| gt.apply_point(p)).collect(),
        cloud.normals.as_ref().unwrap().iter().map(|n| gt.apply_vector(n)).collect(),
    )
    .unwrap()
}

fn brute_nearest(q: &Vector3<f64>, pts: &[Vector3<f64>]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (j, p) in pts.iter().enumerate() {
        let d = (p - q).norm_squared();
        if d < best.1 {
            best = (j, d);
        }
    }
    best.0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn log_inverts_rodrigues(a in axis(), angle in 1e-6..3.1f64) {
        let aa = AxisAngle::new(a, angle);
        let back = log_rotation(&rodrigues(&aa));
        assert_relative_eq!(back.0, aa.0, epsilon = 1e-9);
    }

    #[test]
    fn rodrigues_is_orthonormal(a in axis(), angle in 0.0..std::f64::consts::PI) {
        let r = *rodrigues(&AxisAngle::new(a, angle)).matrix();
        assert_relative_eq!(r.transpose() * r, Matrix3::identity(), epsilon = 1e-12);
        assert_relative_eq!(r.determinant(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn compose_with_inverse_is_identity(t in transform(3.0), p in vec3()) {
        let id = compose(&t.inverse(), &t);
        assert_relative_eq!(id.apply_point(&p), p, epsilon = 1e-12);
    }

    #[test]
    fn g_vector_round_trips(t in transform(3.0)) {
        let back = RigidTransform::from_g(&t.to_g());
        assert_relative_eq!(*back.rotation.matrix(), *t.rotation.matrix());
        assert_relative_eq!(back.translation, t.translation);
    }

    #[test]
    fn nn_correspond_matches_exhaustive(
        xs in proptest::collection::vec(vec3(), 1..80),
        ys in proptest::collection::vec(vec3(), 1..80),
    ) {
        let src = PointCloud::new(xs).unwrap();
        let normals = vec![Vector3::z(); ys.len()];
        let tgt = PointCloud::with_normals(ys, normals).unwrap();
        let corr = nn_correspond(&src, &tgt).unwrap();
        for (i, q) in src.positions.iter().enumerate() {
            let j = brute_nearest(q, &tgt.positions);
            prop_assert_eq!(corr.targets[i], tgt.positions[j]);
        }
    }

    #[test]
    fn procrustes_recovers_exact_motion(seed in 0u64..1000, t in transform(3.0)) {
        let src = synth_shape(ShapeKind::Blob, 50, seed).unwrap();
        let est = register_procrustes(&exact_corr(&src, &t), &src).unwrap();
        prop_assert!(geodesic_angle(&est.rotation, &t.rotation) < 1e-10);
        prop_assert!((est.translation - t.translation).norm() < 1e-10);
    }

    #[test]
    fn soft_pointer_directions_ignore_normal_signs(seed in 0u64..1000, flips in proptest::collection::vec(any::<bool>(), 24)) {
        let tgt = synth_shape(ShapeKind::Cube, 24, seed).unwrap();
        let scores = ScoreMatrix::from_fn(6, 24, |i, j| ((i * 7 + j * 3) % 11) as f64 * 0.3).unwrap();
        let flipped = PointCloud::with_normals(
            tgt.positions.clone(),
            tgt.normals.as_ref().unwrap().iter().zip(&flips).map(|(n, f)| if *f { -n } else { *n }).collect(),
        )
        .unwrap();
        let a = soft_pointers(&scores, &tgt).unwrap();
        let b = soft_pointers(&scores, &flipped).unwrap();
        for (u, v) in a.corr.normals.iter().zip(&b.corr.normals) {
            prop_assert!(u.dot(v).abs() > 1.0 - 1e-12);
        }
        prop_assert_eq!(a.corr.targets, b.corr.targets);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn registration_commutes_with_conjugation(seed in 0u64..1000, gt in transform(0.6), q in transform(3.1)) {
        let src = synth_shape(ShapeKind::Blob, 128, seed).unwrap();
        let corr = exact_corr(&src, &gt);
        let qr = q.rotation.matrix();
        let src_q = PointCloud::with_normals(
            src.positions.iter().map(|p| qr * p).collect(),
            src.normals.as_ref().unwrap().iter().map(|n| qr * n).collect(),
        )
        .unwrap();
        let corr_q = CorrespondenceSet::with_weights(
            corr.targets.iter().map(|p| qr * p).collect(),
            corr.normals.iter().map(|n| qr * n).collect(),
            corr.weights.clone(),
        )
        .unwrap();
        let a = register_p2pl(&corr, &src, 10, &SolveOptions::default()).unwrap().transform;
        let b = register_p2pl(&corr_q, &src_q, 10, &SolveOptions::default()).unwrap().transform;
        assert_relative_eq!(*b.rotation.matrix(), qr * a.rotation.matrix() * qr.transpose(), epsilon = 1e-8);
        assert_relative_eq!(b.translation, qr * a.translation, epsilon = 1e-8);
    }
}

#[test]
fn vector_average_collapses_on_antipodal_normals() {
    let n = Vector3::new(0.0, 0.0, 1.0);
    let tgt = PointCloud::with_normals(vec![Vector3::zeros(), Vector3::new(0.1, 0.0, 0.0)], vec![n, -n]).unwrap();
    let scores = ScoreMatrix::new(1, 2, vec![0.0, 0.0]).unwrap();
    let naive = average_normal_vectors(&scores, &tgt).unwrap();
    assert!(naive[0].norm() < 1e-12);
    let soft = soft_pointers(&scores, &tgt).unwrap();
    assert_relative_eq!(soft.corr.normals[0].dot(&n).abs(), 1.0, epsilon = 1e-12);
}
