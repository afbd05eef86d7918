use p2rgbd::pose::{Pose, Quat, RelativePose};
use p2rgbd::scene::capture::{simulate_capture, CapturePlan};
use p2rgbd::scene::{build_scene, render_gt, CameraIntrinsics};
use p2rgbd::sync::pipeline::{scale_depth, sync_capture, SyncOptions};
use p2rgbd::sync::*;
use p2rgbd::Error;
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn series(values: Vec<f64>) -> SignalSeries {
    SignalSeries::uniform(0.0, 10.0, values).unwrap()
}

fn textured(w: usize, h: usize, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GrayImage::new(w, h, (0..w * h).map(|_| rng.random_range(0.0f32..255.0)).collect()).unwrap()
}

/// `b(x, y) = a(x - dx, y - dy)`, so content moves by `(dx, dy)`.
fn shifted(a: &GrayImage, dx: i64, dy: i64) -> GrayImage {
    let (w, h) = (a.width as i64, a.height as i64);
    let data = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| {
            let (sx, sy) = ((x - dx).clamp(0, w - 1), (y - dy).clamp(0, h - 1));
            a.data[(sy * w + sx) as usize]
        })
        .collect();
    GrayImage::new(a.width, a.height, data).unwrap()
}

/// Non-periodic positive test signal.
fn bumpy(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let knots: Vec<f64> = (0..n / 6 + 2).map(|_| rng.random_range(1.0..6.0)).collect();
    (0..n)
        .map(|i| {
            let (k, x) = (i / 6, (i % 6) as f64 / 6.0);
            knots[k] + (knots[k + 1] - knots[k]) * (1.0 - (std::f64::consts::PI * x).cos()) / 2.0
        })
        .collect()
}

#[test]
fn signal_series_invariants() {
    assert!(SignalSeries::new(vec![0.0], vec![1.0], 1.0).is_err());
    assert!(SignalSeries::new(vec![0.0, 0.0], vec![1.0, 2.0], 1.0).is_err());
    assert!(SignalSeries::new(vec![0.0, 1.0], vec![1.0], 1.0).is_err());
    assert!(SignalSeries::new(vec![0.0, 1.0], vec![1.0, 2.0], 1.0).is_ok());
}

#[test]
fn interpolation_examples() {
    let s = SignalSeries::new(vec![0.0, 1.0], vec![0.0, 10.0], 1.0).unwrap();
    let r = interpolate_signal(&s, 2.0).unwrap();
    assert_eq!(r.timestamps(), &[0.0, 0.5, 1.0]);
    assert_eq!(r.values(), &[0.0, 5.0, 10.0]);
    assert_eq!(r.frequency(), 2.0);

    let on_grid = series(bumpy(30, 1));
    let same = interpolate_signal(&on_grid, 10.0).unwrap();
    assert_eq!(same.values(), on_grid.values());
    assert!(interpolate_signal(&s, 0.0).is_err());

    // No extrapolation: the grid ends at the last sample.
    let r = interpolate_signal(&SignalSeries::new(vec![0.0, 0.95], vec![0.0, 1.0], 1.0).unwrap(), 2.0).unwrap();
    assert_eq!(r.timestamps(), &[0.0, 0.5]);

    let ramp = SignalSeries::new((0..101).map(|i| i as f64 * 0.01).collect(), (0..101).map(|i| 3.0 * i as f64 * 0.01 - 1.0).collect(), 100.0).unwrap();
    let down = interpolate_signal(&ramp, 7.0).unwrap();
    let up = interpolate_signal(&down, 100.0).unwrap();
    for (t, v) in up.timestamps().iter().zip(up.values()) {
        assert!((v - (3.0 * t - 1.0)).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn interpolation_reproduces_affine_signals(
        gaps in prop::collection::vec(0.01f64..0.5, 2..40),
        a in -10.0f64..10.0,
        b in -10.0f64..10.0,
        f in 0.5f64..50.0,
    ) {
        let times: Vec<f64> = gaps.iter().scan(0.0, |t, g| { *t += g; Some(*t) }).collect();
        // Spans shorter than one grid step leave fewer than two samples.
        prop_assume!((times[times.len() - 1] - times[0]) * f >= 1.0);
        let s = SignalSeries::new(times.clone(), times.iter().map(|t| a * t + b).collect(), 1.0).unwrap();
        let r = interpolate_signal(&s, f).unwrap();
        prop_assert!(r.timestamps().last().unwrap() <= times.last().unwrap());
        for (t, v) in r.timestamps().iter().zip(r.values()) {
            prop_assert!((v - (a * t + b)).abs() < 1e-9 * (1.0 + a.abs() + b.abs()) * 10.0);
        }
    }
}

#[test]
fn flow_examples() {
    let a = textured(48, 40, 2);
    let f = compute_flow(&a, &a, 8, 4).unwrap();
    assert!(f.data.iter().all(|v| *v == [0.0, 0.0]));
    assert_eq!(flow_magnitude(&f), 0.0);

    let b = shifted(&a, 2, 0);
    let f = compute_flow(&a, &b, 8, 4).unwrap();
    for y in 8..32 {
        for x in 8..40 {
            assert_eq!(f.at(x, y), [2.0, 0.0], "({x}, {y})");
        }
    }

    let flat = GrayImage::new(32, 32, vec![90.0; 1024]).unwrap();
    let f = compute_flow(&flat, &flat, 8, 4).unwrap();
    assert!(f.data.iter().all(|v| *v == [0.0, 0.0]));

    assert!(matches!(compute_flow(&a, &textured(32, 32, 3), 8, 4), Err(Error::Dimension(_) | Error::Validation(_))));
}

#[test]
fn flow_magnitude_examples() {
    let field = |data: Vec<[f32; 2]>| FlowField { width: data.len(), height: 1, data };
    assert_eq!(flow_magnitude(&field(vec![[3.0, 4.0]; 10])), 5.0);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let data: Vec<[f32; 2]> = (0..500).map(|_| [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)]).collect();
    let mut sum = 0.0;
    for [u, v] in &data {
        sum += ((*u as f64) * (*u as f64) + (*v as f64) * (*v as f64)).sqrt();
    }
    assert!((flow_magnitude(&field(data)) - sum / 500.0).abs() < 1e-7);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn flow_recovers_integer_translations(dx in -4i64..=4, dy in -4i64..=4, seed in any::<u64>()) {
        let a = textured(40, 40, seed);
        let b = shifted(&a, dx, dy);
        let f = compute_flow(&a, &b, 8, 4).unwrap();
        for y in 8..32 {
            for x in 8..32 {
                prop_assert_eq!(f.at(x, y), [dx as f32, dy as f32]);
            }
        }
    }
}

#[test]
fn median_and_normalization() {
    assert_eq!(median_filter(&[1.0, 1.0, 50.0, 1.0, 1.0], 5), vec![1.0; 5]);
    assert_eq!(median_filter(&[3.0, 1.0, 2.0], 1), vec![3.0, 1.0, 2.0]);
    let z = z_normalize(&[1.0, 2.0, 3.0, 4.0]);
    assert!(z.iter().sum::<f64>().abs() < 1e-12);
    assert!((z.iter().map(|v| v * v).sum::<f64>() / 4.0 - 1.0).abs() < 1e-12);
    assert!(z_normalize(&[2.0; 4]).iter().all(|v| *v == 0.0));
}

#[test]
fn identical_signals_match_at_zero() {
    let s = series(bumpy(120, 5));
    let m = match_signals(&s, &s, 20, None).unwrap();
    assert_eq!(m.offset, 0);
    assert!((m.peak - 1.0).abs() < 1e-9);
    assert_eq!((m.start, m.end), (0, 119));
    assert_eq!(m.correlations.len(), 41);
}

#[test]
fn delayed_noisy_speed_is_recovered() {
    let n = 300;
    let speed = bumpy(n + 37, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let noise = Normal::new(0.0, 1.0).unwrap();
    // flow[t] sees the motion the speed log records 37 samples later.
    let flow: Vec<f64> = (0..n).map(|t| 2.5 * speed[t + 37] * (1.0 + 0.05 * noise.sample(&mut rng))).collect();
    let m = match_signals(&series(flow), &series(speed), 60, None).unwrap();
    assert!((m.offset - 37).abs() <= 1, "{m:?}");
    assert!(m.peak > 0.9);
}

#[test]
fn degenerate_matches_fail() {
    let c = series(vec![4.0; 50]);
    assert!(matches!(match_signals(&c, &c, 10, None), Err(Error::LowConfidence { .. })));
    let other = SignalSeries::uniform(0.0, 20.0, vec![1.0; 50]).unwrap();
    assert!(matches!(match_signals(&series(bumpy(50, 8)), &other, 10, None), Err(Error::Validation(_))));
    assert!(match_signals(&series(bumpy(50, 8)), &series(bumpy(50, 8)), 10, Some((30, 20))).is_err());
}

#[test]
fn range_restriction_scores_only_chosen_frames() {
    let speed = bumpy(200, 9);
    let flow: Vec<f64> = (0..180).map(|t| speed[t + 12]).collect();
    let m = match_signals(&series(flow), &series(speed), 30, Some((40, 120))).unwrap();
    assert_eq!(m.offset, 12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn matching_is_shift_covariant(k in 0usize..20, j in 0usize..10, seed in 0u64..1000) {
        let speed = bumpy(260, seed);
        let flow = |lag: usize| series((0..200).map(|t| speed[t + lag]).collect());
        let s = series(speed.clone());
        let base = match_signals(&flow(k), &s, 40, None).unwrap().offset;
        let moved = match_signals(&flow(k + j), &s, 40, None).unwrap().offset;
        prop_assert_eq!(base, k as i64);
        prop_assert_eq!(moved - base, j as i64);
    }

    #[test]
    fn matching_ignores_affine_rescaling(a in 0.1f64..20.0, b in -50.0f64..50.0, k in 0usize..20, seed in 0u64..1000) {
        let speed = bumpy(240, seed);
        let flow: Vec<f64> = (0..200).map(|t| speed[t + k] + 0.3 * (t as f64 * 0.7).sin()).collect();
        let s = series(speed.clone());
        let m0 = match_signals(&series(flow.clone()), &s, 30, None).unwrap();
        let m1 = match_signals(&series(flow.iter().map(|v| a * v + b).collect()), &s, 30, None).unwrap();
        let m2 = match_signals(&series(flow), &series(speed.iter().map(|v| a * v + b).collect()), 30, None).unwrap();
        prop_assert_eq!(m0.offset, m1.offset);
        prop_assert_eq!(m0.offset, m2.offset);
    }
}

fn rel(t: [f64; 3], scaled: bool) -> RelativePose {
    RelativePose {
        rotation: Quat::IDENTITY,
        translation: Vector3::from(t),
        scaled,
    }
}

#[test]
fn find_scale_examples() {
    let scaled: Vec<RelativePose> = (0..10).map(|i| rel([1.0 + i as f64, -0.5, 0.25 * i as f64], true)).collect();
    let unscaled: Vec<RelativePose> = scaled.iter().map(|r| rel((r.translation / 5.0).into(), false)).collect();
    let e = find_scale(&unscaled, &scaled).unwrap();
    assert!(e.per_frame.iter().all(|s| (s - 5.0).abs() < 1e-12));
    assert!((e.global - 5.0).abs() < 1e-12);

    let mut u = unscaled.clone();
    let mut s = scaled.clone();
    u[4] = rel([0.0; 3], false);
    s[4] = rel([0.0; 3], true);
    s[2].translation *= 3.0;
    let e = find_scale(&u, &s).unwrap();
    assert!(!e.measured[4] && e.measured[3]);
    // Frame 4 takes the median of the scales measured before it: {5, 5, 15, 5}.
    assert_eq!(e.per_frame[4], 5.0);
    assert!((e.global - 5.0).abs() < 1e-12);

    let still = vec![rel([0.0; 3], false); 3];
    assert!(matches!(find_scale(&still, &still), Err(Error::DegenerateMotion)));
    assert!(matches!(find_scale(&u[..3], &s), Err(Error::Dimension(_))));
}

#[test]
fn find_scale_is_robust_to_noise_and_outliers() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let noise = Normal::new(0.0, 0.02).unwrap();
    let (mut u, mut s) = (Vec::new(), Vec::new());
    for i in 0..200 {
        let t = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.2..1.0));
        let factor = if i % 10 == 0 { rng.random_range(0.1..10.0) } else { 1.0 + noise.sample(&mut rng) };
        s.push(rel((t * 4.2).into(), true));
        u.push(rel((t / factor).into(), false));
    }
    let e = find_scale(&u, &s).unwrap();
    assert!((e.global / 4.2 - 1.0).abs() < 0.02, "{}", e.global);
}

proptest! {
    #[test]
    fn find_scale_is_exact_without_noise(
        ts in prop::collection::vec(prop::array::uniform3(-5.0f64..5.0), 1..30),
        scale in 0.05f64..50.0,
    ) {
        let ts: Vec<[f64; 3]> = ts.into_iter().filter(|t| Vector3::from(*t).norm() > 0.1).collect();
        prop_assume!(!ts.is_empty());
        let s: Vec<_> = ts.iter().map(|t| rel((Vector3::from(*t) * scale).into(), true)).collect();
        let u: Vec<_> = ts.iter().map(|t| rel(*t, false)).collect();
        let e = find_scale(&u, &s).unwrap();
        prop_assert!((e.global - scale).abs() <= 1e-9 * scale);
    }
}

#[test]
fn apply_scaling_examples() {
    assert_eq!(apply_scaling(&[1.0f32; 4], 3.0).unwrap(), vec![3.0; 4]);
    let d = apply_scaling(&[0.5f64, 0.25], 2.0).unwrap();
    let d2 = apply_scaling(&[1.0f64, 0.5], 2.0).unwrap();
    assert_eq!(d, vec![4.0, 8.0]);
    assert_eq!(d2, vec![2.0, 4.0]);
    assert!(matches!(apply_scaling(&[1.0f64], 0.0), Err(Error::Validation(_))));
    assert!(apply_scaling(&[1.0f64], -2.0).is_err());
    assert_eq!(apply_scaling(&[0.0f64], 1.0).unwrap(), vec![1e6]);
}

#[test]
fn oracle_disparity_round_trip() {
    let scene = build_scene(0, 8, 40.0).unwrap();
    let k = CameraIntrinsics::new(std::f64::consts::FRAC_PI_3, 32).unwrap();
    let view = render_gt(&scene, &Pose::new([2.0, -1.0, 30.0], Quat::IDENTITY), &k);
    let scale = 4.2;
    let disparity: Vec<f64> = view.depth.iter().map(|z| scale / z).collect();
    let depth = apply_scaling(&disparity, scale).unwrap();
    for (a, b) in depth.iter().zip(&view.depth) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn gps_log_round_trip() {
    let log = "# t,x,y,z,qw,qx,qy,qz\n0.0,1,2,3,1,0,0,0\n\n0.5,1.5,2,3,0.7071067811865476,0,0,0.7071067811865476\n";
    let t = PoseTrack::parse(log).unwrap();
    assert!(t.has_rotation);
    assert_eq!(t.timestamps, vec![0.0, 0.5]);
    assert_eq!(PoseTrack::parse(&t.to_log()).unwrap(), t);
    let no_rot = PoseTrack::parse("0,0,0,0\n1,3,4,0\n").unwrap();
    assert_eq!(no_rot.speeds(1.0), vec![5.0]);
    assert!(matches!(PoseTrack::parse("0,0,0\n1,0,0,0\n"), Err(Error::Format(_))));
    assert!(PoseTrack::parse("0,0,0,0\n1,0,0,0,1,0,0,0\n").is_err());
    assert!(PoseTrack::parse("0,0,0,0\n0,1,0,0\n").is_err());
}

fn track(n: usize, fps: f64, lead: usize, speed: &[f64]) -> PoseTrack {
    let mut x = 0.0;
    let mut ts = Vec::new();
    let mut poses = Vec::new();
    for i in 0..n {
        ts.push(500.0 + (i as f64 - lead as f64) / fps);
        poses.push(Pose::new([x, 0.0, 30.0], Quat::IDENTITY));
        x += speed[i] / fps;
    }
    PoseTrack::new(ts, poses, false).unwrap()
}

#[test]
fn pre_synchronized_inputs_pair_identically() {
    let speed = bumpy(80, 11);
    let gps = track(80, 10.0, 0, &speed);
    let flow: Vec<f64> = speed[..79].iter().map(|s| 0.4 * s).collect();
    let r = synchronize_dataset(80, 10.0, &gps, &flow, 15, None).unwrap();
    assert_eq!(r.offset, 0);
    assert_eq!((r.start, r.end), (0, 79));
    assert_eq!(r.pairs.len(), 80);
    for (k, (i, p)) in r.pairs.iter().enumerate() {
        assert_eq!(*i, k);
        assert!((p.translation[0] - gps.poses[k].translation[0]).abs() < 1e-9);
    }
}

#[test]
fn lead_of_gps_log_is_recovered() {
    let speed = bumpy(100, 12);
    let gps = track(100, 10.0, 9, &speed);
    let flow: Vec<f64> = (0..70).map(|i| 0.4 * speed[i + 9]).collect();
    let r = synchronize_dataset(71, 10.0, &gps, &flow, 15, None).unwrap();
    assert_eq!(r.offset, 9);
    assert!((r.gps_times[0] - 500.0).abs() < 1e-9);
}

#[test]
fn empty_intersection_is_an_error() {
    let speed = bumpy(40, 13);
    let gps = track(40, 10.0, 0, &speed);
    let flow = speed[..39].to_vec();
    // The restricted range lies beyond the GPS log, so nothing can pair.
    assert!(synchronize_dataset(40, 10.0, &gps, &flow, 5, Some((10, 10))).is_err());
    assert!(matches!(synchronize_dataset(40, 10.0, &gps, &flow[..20], 5, None), Err(Error::Dimension(_))));
    let short = track(2, 10.0, 0, &speed);
    assert!(synchronize_dataset(40, 10.0, &short, &flow, 5, None).is_err());
}

#[test]
fn capture_pipeline_recovers_offset_and_scale() {
    let scene = build_scene(0, 8, 40.0).unwrap();
    let k = CameraIntrinsics::new(std::f64::consts::FRAC_PI_3, 64).unwrap();
    for seed in 0..3 {
        let dir = tempfile::tempdir().unwrap();
        let plan = CapturePlan { seed, ..Default::default() };
        let (cap, truth) = simulate_capture(&scene, &plan, &k, dir.path().join("cap")).unwrap();
        let (ds, r) = sync_capture(&cap, dir.path().join("sync"), "sync", &SyncOptions::default()).unwrap();
        assert_eq!(r.offset, truth.offset, "seed {seed}: {r:?}");
        let (scaled, est) = scale_depth(&cap, &ds, dir.path().join("scaled"), "scaled", false).unwrap();
        assert!((est.global / truth.scale - 1.0).abs() < 0.02, "seed {seed}: {}", est.global);
        for e in &scaled.manifest.frames {
            let i = (e.timestamp_s * plan.fps).round() as usize;
            assert!((e.pose.t() - truth.poses[i].t()).norm() < 0.1);
        }
        let range = scaled.manifest.depth_range;
        assert!((range.min / truth.depth_range.min - 1.0).abs() < 0.05);
        assert!((range.max / truth.depth_range.max - 1.0).abs() < 0.05);
    }
}
