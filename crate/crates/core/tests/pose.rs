use nalgebra::{Matrix3, Vector3};
use p2rgbd::pose::{
    compose_relative_poses, denormalize_pose, euler_to_quat, normalize_pose, quat_to_euler, relative_from_absolute,
    EulerAngles, InputMode, Pose, PoseBounds, Quat, RelativePose,
};
use proptest::prelude::*;
use std::f64::consts::{FRAC_PI_2, PI};

fn rx(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn ry(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rz(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Intrinsic Z-Y-X: yaw about z, then pitch about the new y, then roll.
fn euler_matrix(e: &EulerAngles) -> Matrix3<f64> {
    rz(e.yaw) * ry(e.pitch) * rx(e.roll)
}

fn angle_err(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

fn quat_strategy() -> impl Strategy<Value = Quat> {
    (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
        .prop_filter("non-degenerate", |(w, x, y, z)| w * w + x * x + y * y + z * z > 0.01)
        .prop_map(|(w, x, y, z)| Quat::new(w, x, y, z).normalized().canonical())
}

fn pose_strategy() -> impl Strategy<Value = Pose> {
    (prop::array::uniform3(-50.0f64..50.0), quat_strategy()).prop_map(|(t, q)| Pose::new(t, q))
}

/// Homogeneous transform oracle of an absolute pose (camera to world).
fn matrix(p: &Pose) -> (Matrix3<f64>, Vector3<f64>) {
    (p.rotation.to_rotation_matrix(), Vector3::from(p.translation))
}

#[test]
fn euler_examples() {
    assert_eq!(euler_to_quat(EulerAngles::new(0.0, 0.0, 0.0)), Quat::IDENTITY);
    let q = euler_to_quat(EulerAngles::new(0.0, 0.0, PI));
    assert!((q.w).abs() < 1e-15 && q.w >= 0.0);
    assert!((q.z - 1.0).abs() < 1e-15 && q.x.abs() < 1e-15 && q.y.abs() < 1e-15);
    let e = quat_to_euler(Quat::IDENTITY);
    assert!(!e.gimbal_lock);
    assert_eq!(e.angles, EulerAngles::new(0.0, 0.0, 0.0));
}

#[test]
fn gimbal_lock_is_flagged() {
    for pitch in [FRAC_PI_2, -FRAC_PI_2] {
        let c = quat_to_euler(euler_to_quat(EulerAngles::new(0.3, pitch, 0.4)));
        assert!(c.gimbal_lock);
        assert_eq!(c.angles.yaw, 0.0);
        // The rotation survives even though the split between roll and yaw does not.
        let back = euler_to_quat(c.angles);
        assert!(back.angle_to(&euler_to_quat(EulerAngles::new(0.3, pitch, 0.4))) < 1e-6);
    }
    assert!(!quat_to_euler(euler_to_quat(EulerAngles::new(0.0, 1.5, 0.0))).gimbal_lock);
}

#[test]
fn relative_pose_examples() {
    let a = Pose::new([1.0, 2.0, 3.0], euler_to_quat(EulerAngles::new(0.1, 0.2, 0.3)));
    let r = relative_from_absolute(&a, &a);
    assert!(r.translation.norm() < 1e-12);
    assert!(r.rotation.angle_to(&Quat::IDENTITY) < 1e-7);
    assert!(r.scaled);

    let b = Pose::new([1.0, 0.0, 0.0], Quat::IDENTITY);
    let r = relative_from_absolute(&Pose::IDENTITY, &b);
    assert_eq!(r.translation, Vector3::new(1.0, 0.0, 0.0));
}

#[test]
fn compose_examples() {
    let ids = compose_relative_poses(&[RelativePose::identity(false); 5]).unwrap();
    assert_eq!(ids.len(), 6);
    assert!(ids.iter().all(|p| p.approx_eq(&Pose::IDENTITY, 1e-15, 1e-7)));

    let step = RelativePose {
        rotation: euler_to_quat(EulerAngles::new(0.2, -0.4, 1.0)),
        translation: Vector3::new(0.5, -1.0, 2.0),
        scaled: false,
    };
    let out = compose_relative_poses(&[step, step.inverse()]).unwrap();
    assert!(out[2].approx_eq(&Pose::IDENTITY, 1e-9, 1e-7));
    assert!(compose_relative_poses(&[]).is_err());
}

#[test]
fn normalize_examples() {
    let b = PoseBounds::new([-10.0, 0.0, 20.0], [10.0, 4.0, 40.0]).unwrap();
    let at_min = normalize_pose(&Pose::new(b.min, Quat::IDENTITY), &b, InputMode::Quaternion).unwrap();
    assert_eq!(&at_min.values[..3], &[-1.0, -1.0, -1.0]);
    assert_eq!(&at_min.values[3..], &[1.0, 0.0, 0.0, 0.0]);
    let mid = normalize_pose(&Pose::new(b.center(), Quat::IDENTITY), &b, InputMode::Euler).unwrap();
    assert_eq!(mid.values, vec![0.0; 6]);
    // Out-of-bounds translations clamp.
    let out = normalize_pose(&Pose::new([99.0, -5.0, 30.0], Quat::IDENTITY), &b, InputMode::Quaternion).unwrap();
    assert_eq!(&out.values[..3], &[1.0, -1.0, 0.0]);

    let degenerate = PoseBounds {
        min: [0.0; 3],
        max: [1.0, 0.0, 1.0],
    };
    assert!(normalize_pose(&Pose::IDENTITY, &degenerate, InputMode::Quaternion).is_err());
    assert!(PoseBounds::new([0.0; 3], [1.0, 0.0, 1.0]).is_err());

    let mut bad = at_min.clone();
    bad.values[0] = 1.5;
    assert!(denormalize_pose(&bad, &b).is_err());
    let back = denormalize_pose(&at_min, &b).unwrap();
    assert_eq!(back.translation, b.min);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn euler_matches_matrix_oracle(r in -PI..PI, p in -1.5f64..1.5, y in -PI..PI) {
        let e = EulerAngles::new(r, p, y);
        let q = euler_to_quat(e);
        prop_assert!((q.norm() - 1.0).abs() < 1e-12);
        prop_assert!(q.w >= 0.0);
        let diff = (q.to_rotation_matrix() - euler_matrix(&e)).abs().max();
        prop_assert!(diff < 1e-9, "{}", diff);
    }

    #[test]
    fn euler_round_trip(r in -PI..PI, p in -1.5f64..1.5, y in -PI..PI) {
        let c = quat_to_euler(euler_to_quat(EulerAngles::new(r, p, y)));
        prop_assert!(!c.gimbal_lock);
        prop_assert!(angle_err(c.angles.roll, r) < 1e-9);
        prop_assert!(angle_err(c.angles.pitch, p) < 1e-9);
        prop_assert!(angle_err(c.angles.yaw, y) < 1e-9);
    }

    #[test]
    fn euler_angles_are_canonical(q in quat_strategy()) {
        let c = quat_to_euler(q);
        let a = c.angles;
        prop_assert!(a.pitch.abs() <= FRAC_PI_2);
        for v in [a.roll, a.yaw] {
            prop_assert!(v > -PI && v <= PI);
        }
        prop_assert!(euler_to_quat(a).angle_to(&q) < 1e-6);
    }

    #[test]
    fn relative_composition_matches_matrix_oracle(a in pose_strategy(), b in pose_strategy(), c in pose_strategy()) {
        let ab = relative_from_absolute(&a, &b);
        let bc = relative_from_absolute(&b, &c);
        let ac = relative_from_absolute(&a, &c);
        let chained = ab.then(&bc);
        prop_assert!((chained.translation - ac.translation).norm() < 1e-9);
        prop_assert!(chained.rotation.angle_to(&ac.rotation) < 1e-7);

        // T_ab = T_a^-1 T_b with 4x4-style algebra.
        let ((ra, ta), (rb, tb)) = (matrix(&a), matrix(&b));
        let r_oracle = ra.transpose() * rb;
        let t_oracle = ra.transpose() * (tb - ta);
        prop_assert!((ab.rotation.to_rotation_matrix() - r_oracle).abs().max() < 1e-7);
        prop_assert!((ab.translation - t_oracle).norm() < 1e-7);
        prop_assert!(ab.rotation.w >= 0.0 && (ab.rotation.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn self_relative_is_identity(a in pose_strategy()) {
        let r = relative_from_absolute(&a, &a);
        prop_assert!(r.translation.norm() < 1e-9);
        prop_assert!(r.rotation.angle_to(&Quat::IDENTITY) < 1e-7);
    }

    #[test]
    fn normalize_round_trip(
        t in prop::array::uniform3(0.0f64..1.0),
        q in quat_strategy(),
        euler in (-3.0f64..3.0, -1.5f64..1.5, -3.0f64..3.0),
    ) {
        let b = PoseBounds::new([-12.0, 3.0, 20.0], [8.0, 9.0, 45.0]).unwrap();
        let tr = [0, 1, 2].map(|a| b.min[a] + t[a] * (b.max[a] - b.min[a]));
        let p = Pose::new(tr, q);
        let enc = normalize_pose(&p, &b, InputMode::Quaternion).unwrap();
        prop_assert_eq!(enc.values.len(), 7);
        prop_assert!(enc.values.iter().all(|v| (-1.0..=1.0).contains(v)));
        let back = denormalize_pose(&enc, &b).unwrap();
        prop_assert!(back.approx_eq(&p, 1e-6, 1e-6));

        let pe = Pose::new(tr, euler_to_quat(EulerAngles::new(euler.0, euler.1, euler.2)));
        let enc = normalize_pose(&pe, &b, InputMode::Euler).unwrap();
        prop_assert_eq!(enc.values.len(), 6);
        prop_assert!(enc.values.iter().all(|v| (-1.0..=1.0).contains(v)));
        let back = denormalize_pose(&enc, &b).unwrap();
        prop_assert!(back.approx_eq(&pe, 1e-6, 1e-6));
    }
}

#[test]
fn chain_of_100_matches_matrix_product() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let chain: Vec<RelativePose> = (0..100)
        .map(|_| RelativePose {
            rotation: euler_to_quat(EulerAngles::new(
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
            )),
            translation: Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
            scaled: false,
        })
        .collect();
    let poses = compose_relative_poses(&chain).unwrap();
    let (mut r, mut t) = (Matrix3::identity(), Vector3::zeros());
    for (rel, pose) in chain.iter().zip(&poses[1..]) {
        t += r * rel.translation;
        r *= rel.rotation.to_rotation_matrix();
        assert!((Vector3::from(pose.translation) - t).norm() < 1e-7);
        assert!((pose.rotation.to_rotation_matrix() - r).abs().max() < 1e-7);
    }
}
