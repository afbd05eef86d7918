use p2rgbd::datastore::*;
use p2rgbd::model::{DepthRange, DepthUnit, RgbdFrame};
use p2rgbd::pose::{euler_to_quat, EulerAngles, Pose, PoseBounds, Quat};
use p2rgbd::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn manifest(res: usize) -> DatasetManifest {
    DatasetManifest::new(
        "t",
        res,
        PoseBounds::new([-5.0, -5.0, 10.0], [5.0, 5.0, 20.0]).unwrap(),
        DepthRange::new(1.0, 9.0, DepthUnit::Meters).unwrap(),
    )
}

fn random_frame(res: usize, rng: &mut impl Rng) -> RgbdFrame {
    RgbdFrame::new(res, res, (0..res * res * 4).map(|_| rng.random_range(-1.0f32..=1.0)).collect()).unwrap()
}

fn random_pose(rng: &mut impl Rng) -> Pose {
    Pose::new(
        [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(10.0..20.0)],
        euler_to_quat(EulerAngles::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-3.0..3.0))),
    )
}

fn filled(dir: &std::path::Path, n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ds = Dataset::create(dir, manifest(8)).unwrap();
    for i in 0..n {
        let (p, f) = (random_pose(&mut rng), random_frame(8, &mut rng));
        ds.write_frame(i as f64 * 0.1, p, &f).unwrap();
    }
    ds.save_manifest().unwrap();
    ds
}

#[test]
fn frame_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut ds = Dataset::create(dir.path(), manifest(8)).unwrap();
    let frames: Vec<(Pose, RgbdFrame)> = (0..3).map(|_| (random_pose(&mut rng), random_frame(8, &mut rng))).collect();
    for (i, (p, f)) in frames.iter().enumerate() {
        assert_eq!(ds.write_frame(i as f64, *p, f).unwrap(), i);
    }
    ds.save_manifest().unwrap();
    let ds = Dataset::open(dir.path()).unwrap();
    assert_eq!(ds.len(), 3);
    for (i, (p, f)) in frames.iter().enumerate() {
        let (back, pose) = ds.read_frame(i).unwrap();
        assert_eq!(pose, *p);
        let (d0, d1) = (f.depth_plane(), back.depth_plane());
        assert!(d0.iter().zip(&d1).all(|(a, b)| a.to_bits() == b.to_bits()));
        for (a, b) in f.rgb_plane().iter().zip(back.rgb_plane()) {
            // Compare on the [0, 1] intensity scale.
            assert!(((a - b) / 2.0).abs() <= 1.0 / 255.0 + 1e-6, "{a} {b}");
        }
    }
    assert!(std::fs::metadata(dir.path().join("rgb/000002.png")).is_ok());
    assert_eq!(std::fs::metadata(dir.path().join("depth/000000.f32")).unwrap().len(), 8 + 4 * 64);
}

#[test]
fn read_errors_name_the_frame() {
    let dir = tempfile::tempdir().unwrap();
    let ds = filled(dir.path(), 3, 2);
    assert!(matches!(ds.read_frame(3), Err(Error::Frame { index: 3, .. })));
    std::fs::remove_file(dir.path().join("depth/000001.f32")).unwrap();
    assert!(matches!(ds.read_frame(1), Err(Error::Frame { index: 1, .. })));
    std::fs::write(dir.path().join("depth/000002.f32"), [1, 2, 3]).unwrap();
    assert!(matches!(ds.read_frame(2), Err(Error::Frame { index: 2, .. })));
    let mut ds = Dataset::open(dir.path()).unwrap();
    assert!(matches!(ds.write_frame(0.0, Pose::IDENTITY, &random_frame(4, &mut rand::rng())), Err(Error::Dimension(_))));
}

#[test]
fn depth_file_format() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.f32");
    write_depth_file(&p, 2, 3, &[0.5, -1.0, 1.0, 0.0, 0.25, -0.75]).unwrap();
    let bytes = std::fs::read(&p).unwrap();
    assert_eq!(&bytes[..8], &[2, 0, 0, 0, 3, 0, 0, 0]);
    assert_eq!(&bytes[8..12], &0.5f32.to_le_bytes());
    assert_eq!(read_depth_file(&p).unwrap(), (2, 3, vec![0.5, -1.0, 1.0, 0.0, 0.25, -0.75]));
    assert!(write_depth_file(&p, 2, 2, &[0.0; 3]).is_err());
}

#[test]
fn hundred_frame_dataset_hash_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let a = filled(&dir.path().join("a"), 100, 3);
    let b = filled(&dir.path().join("b"), 100, 3);
    assert_eq!(a.content_hash().unwrap(), b.content_hash().unwrap());
    assert_eq!(a.content_hash().unwrap(), Dataset::open(a.root()).unwrap().content_hash().unwrap());
    let c = filled(&dir.path().join("c"), 100, 4);
    assert_ne!(a.content_hash().unwrap(), c.content_hash().unwrap());
}

#[test]
fn validate_reports() {
    let dir = tempfile::tempdir().unwrap();
    let mut ds = filled(dir.path(), 6, 5);
    assert!(validate(&ds).is_clean());

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let bound = ds.manifest.bounds;
    ds.write_frame(1.0, Pose::new(bound.max, Quat::IDENTITY), &random_frame(8, &mut rng)).unwrap();
    ds.write_frame(1.1, Pose::new(bound.min, Quat::IDENTITY), &random_frame(8, &mut rng)).unwrap();
    assert!(validate(&ds).is_clean());

    let dup = ds.manifest.frames[2].pose;
    ds.write_frame(1.2, dup, &random_frame(8, &mut rng)).unwrap();
    let mut off = bound.max;
    off[2] += 1e-3;
    ds.write_frame(1.3, Pose::new(off, Quat::IDENTITY), &random_frame(8, &mut rng)).unwrap();
    // Same pose and same content is not a conflict.
    let (same, _) = ds.read_frame(0).unwrap();
    ds.write_frame(1.4, ds.manifest.frames[0].pose, &same).unwrap();
    let r = validate(&ds);
    assert_eq!(r.duplicates, vec![(2, 8)]);
    assert_eq!(r.out_of_bounds, vec![9]);
    assert!(r.unreadable.is_empty());

    // Poses within tolerance count as duplicates.
    let mut near = dup;
    near.translation[1] += 5e-7;
    ds.write_frame(1.5, near, &random_frame(8, &mut rng)).unwrap();
    assert_eq!(validate(&ds).duplicates, vec![(2, 8), (2, 11), (8, 11)]);
}

#[test]
fn split_examples() {
    let dir = tempfile::tempdir().unwrap();
    let ds = filled(dir.path(), 10, 7);
    let (tr, val) = split(&ds.manifest, 0.8, 0).unwrap();
    assert_eq!((tr.frames.len(), val.frames.len()), (8, 2));
    let (tr2, val2) = split(&ds.manifest, 0.8, 0).unwrap();
    assert_eq!((tr.frames.clone(), val.frames.clone()), (tr2.frames, val2.frames));
    assert!(tr.frames.windows(2).all(|w| w[0].index < w[1].index));
    let mut small = ds.manifest.clone();
    small.frames.truncate(1);
    assert!(matches!(split(&small, 0.8, 0), Err(Error::Validation(_))));
    assert!(split(&ds.manifest, 1.0, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_is_a_seeded_partition(n in 2usize..60, seed in any::<u64>(), ratio in 0.05f64..0.95) {
        let mut m = manifest(4);
        m.frames = (0..n)
            .map(|i| FrameEntry {
                index: i,
                timestamp_s: i as f64,
                pose: Pose::IDENTITY,
                rgb_path: String::new(),
                depth_path: String::new(),
            })
            .collect();
        let (tr, val) = split(&m, ratio, seed).unwrap();
        let expect = ((ratio * n as f64).ceil() as usize).clamp(1, n - 1);
        prop_assert_eq!(tr.frames.len(), expect);
        let mut all: Vec<usize> = tr.frames.iter().chain(&val.frames).map(|f| f.index).collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        let again = split(&m, ratio, seed).unwrap();
        prop_assert_eq!(again.0.frames, tr.frames);
    }
}
