use p2rgbd::datastore::Dataset;
use p2rgbd::pose::{euler_to_quat, EulerAngles, Pose, Quat};
use p2rgbd::scene::*;
use std::f64::consts::FRAC_PI_3;

fn intrinsics(res: usize) -> CameraIntrinsics {
    CameraIntrinsics::new(FRAC_PI_3, res).unwrap()
}

fn down_at(x: f64, y: f64, h: f64) -> Pose {
    Pose::new([x, y, h], Quat::IDENTITY)
}

#[test]
fn scene_is_deterministic() {
    assert_eq!(build_scene(3, 8, 40.0).unwrap(), build_scene(3, 8, 40.0).unwrap());
    assert_ne!(build_scene(3, 8, 40.0).unwrap(), build_scene(4, 8, 40.0).unwrap());
    assert!(build_scene(0, 0, 40.0).unwrap().boxes.is_empty());
    assert!(build_scene(0, 4, 0.0).is_err());
    assert!(CameraIntrinsics::new(std::f64::consts::PI, 16).is_err());
    assert!(CameraIntrinsics::new(0.0, 16).is_err());
}

#[test]
fn boxes_stay_inside_world_bounds() {
    for seed in 0..100 {
        let s = build_scene(seed, 12, 40.0).unwrap();
        for b in &s.boxes {
            assert!(b.size.iter().all(|&v| v > 0.0));
            let (lo, hi) = (b.min(), b.max());
            for a in 0..3 {
                assert!(lo[a] >= s.world_min[a] && hi[a] <= s.world_max[a], "seed {seed}: {b:?}");
            }
        }
    }
}

#[test]
fn flat_ground_has_constant_z_depth() {
    let s = build_scene(0, 0, 40.0).unwrap();
    for h in [3.0, 12.5, 30.0] {
        let v = render_gt(&s, &down_at(1.0, -2.0, h), &intrinsics(32));
        assert_eq!(v.misses, 0);
        assert!(v.depth.iter().all(|d| (d - h).abs() < 1e-9));
    }
}

#[test]
fn box_under_full_frustum_lifts_depth() {
    let mut s = build_scene(0, 0, 40.0).unwrap();
    let b = 4.0;
    s.boxes.push(SceneBox {
        center: [0.0, 0.0],
        size: [30.0, 30.0, b],
        color: [0.5, 0.2, 0.1],
        texture_seed: 1,
    });
    let h = 12.0;
    // The footprint at z = b has half-width (h - b) tan(30 deg), well inside the box.
    let v = render_gt(&s, &down_at(0.0, 0.0, h), &intrinsics(32));
    assert!(v.depth.iter().all(|d| (d - (h - b)).abs() < 1e-9));
}

#[test]
fn parallel_translation_shifts_image_by_projected_offset() {
    let s = build_scene(0, 0, 40.0).unwrap();
    let k = intrinsics(64);
    let (h, shift) = (10.0, 5usize);
    // A world step of dx moves the image by dx * f / h pixels.
    let dx = shift as f64 * h / k.focal();
    let a = render_gt(&s, &down_at(0.0, 0.0, h), &k);
    let b = render_gt(&s, &down_at(dx, 0.0, h), &k);
    let (mut same, mut total) = (0, 0);
    for y in 0..64 {
        for x in 0..64 - shift {
            total += 1;
            let ca = a.rgb[y * 64 + x + shift];
            let cb = b.rgb[y * 64 + x];
            if ca.iter().zip(&cb).all(|(p, q)| (p - q).abs() < 1e-9) {
                same += 1;
            }
        }
    }
    // Pixels whose sample lands exactly on a texture edge may flip by rounding.
    assert!(same as f64 >= 0.99 * total as f64, "{same}/{total}");
    assert_ne!(a.rgb, b.rgb);
}

#[test]
fn render_is_pure_and_consistent() {
    let s = build_scene(2, 8, 40.0).unwrap();
    let k = intrinsics(24);
    let p = Pose::new([1.0, 2.0, 25.0], euler_to_quat(EulerAngles::new(0.1, -0.05, 0.7)));
    let a = render_gt(&s, &p, &k);
    assert_eq!(a, render_gt(&s, &p, &k));
    // A pose change far below 1e-9 leaves the stored frame unchanged.
    let mut q = p;
    q.translation[0] += 1e-10;
    let range = p2rgbd::model::DepthRange::new(1.0, 40.0, p2rgbd::model::DepthUnit::Meters).unwrap();
    let (fa, fb) = (a.to_frame(&range).unwrap(), render_gt(&s, &q, &k).to_frame(&range).unwrap());
    assert_eq!(fa.rgb_u8(), fb.rgb_u8());
    assert!(fa.depth_plane().iter().zip(fb.depth_plane()).all(|(x, y)| (x - y).abs() < 1e-6));
    assert!(a.depth.iter().all(|d| d.is_finite() && *d > 0.0));
}

#[test]
fn generated_dataset_is_byte_identical_on_rerun() {
    let s = build_scene(0, 8, 40.0).unwrap();
    let traj = lawn_mower(&LawnMower {
        min_xy: [-8.0, -8.0],
        max_xy: [8.0, 8.0],
        altitude: 30.0,
        frames: 4,
        jitter: 0.05,
        seed: 1,
    })
    .unwrap();
    assert!(traj.iter().all(|p| p.translation[2] == 30.0));
    let dir = tempfile::tempdir().unwrap();
    let a = generate_dataset(&s, &traj, &intrinsics(16), dir.path().join("a"), "a").unwrap();
    let b = generate_dataset(&s, &traj, &intrinsics(16), dir.path().join("b"), "a").unwrap();
    assert_eq!(a.len(), 4);
    assert!(a.manifest.frames.iter().all(|f| a.manifest.bounds.contains(&f.pose.translation)));
    assert_eq!(a.content_hash().unwrap(), b.content_hash().unwrap());
    for e in &a.manifest.frames {
        for rel in [&e.rgb_path, &e.depth_path] {
            assert_eq!(std::fs::read(a.root().join(rel)).unwrap(), std::fs::read(b.root().join(rel)).unwrap());
        }
    }
    assert_eq!(
        std::fs::read(a.root().join("manifest.json")).unwrap(),
        std::fs::read(b.root().join("manifest.json")).unwrap()
    );

    // Normalized depth reaches both ends of the range at the set's extremes.
    let reopened = Dataset::open(a.root()).unwrap();
    let depths: Vec<f32> = reopened.samples().unwrap().iter().flat_map(|s| s.frame.depth_plane()).collect();
    let lo = depths.iter().cloned().fold(f32::INFINITY, f32::min);
    let hi = depths.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    assert_eq!((lo, hi), (-1.0, 1.0));
    assert_eq!(reopened.manifest.far_plane_m, None);
}

#[test]
fn rays_that_miss_get_the_far_plane() {
    let s = build_scene(0, 4, 40.0).unwrap();
    // Rolled a quarter turn, the camera looks at the horizon.
    let p = Pose::new([0.0, 0.0, 5.0], euler_to_quat(EulerAngles::new(1.5, 0.0, 0.0)));
    let v = render_gt(&s, &p, &intrinsics(16));
    assert!(v.misses > 0);
    let far = 4.0 * s.world_diagonal();
    assert_eq!(s.far_plane(), far);
    assert_eq!(v.depth.iter().filter(|&&d| d == far).count(), v.misses);

    let dir = tempfile::tempdir().unwrap();
    let ds = generate_dataset(&s, &[p, down_at(0.0, 0.0, 20.0)], &intrinsics(16), dir.path(), "far").unwrap();
    assert_eq!(ds.manifest.far_plane_m, Some(far));
    assert_eq!(ds.manifest.depth_range.max, far);
}
