use imunet::data::*;
use proptest::prelude::*;

fn unit_quat() -> impl Strategy<Value = Quaternion> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
        .prop_filter("non-degenerate", |(w, x, y, z)| (w * w + x * x + y * y + z * z) > 1e-3)
        .prop_map(|(w, x, y, z)| Quaternion::new(w, x, y, z).normalize())
}

fn vec3() -> impl Strategy<Value = [f64; 3]> {
    prop::array::uniform3(-100.0..100.0f64)
}

/// Rotation matrix built from the quaternion components, independent of `rotate`.
fn rotation_matrix(q: &Quaternion) -> [[f64; 3]; 3] {
    let (w, x, y, z) = (q.w, q.x, q.y, q.z);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn linear_sequence(n: usize, hz: f64) -> ImuSequence {
    let timestamps: Vec<f64> = (0..n).map(|i| i as f64 / hz).collect();
    ImuSequence {
        gyro: timestamps.iter().map(|&t| [3.0 * t, -t, 0.5]).collect(),
        accel: timestamps.iter().map(|&t| [1.0 - 2.0 * t, 7.0 * t, 0.0]).collect(),
        orientation: vec![Quaternion::IDENTITY; n],
        gt_position: Some(timestamps.iter().map(|&t| [t, 2.0 * t, 0.0]).collect()),
        gt_dim: 2,
        sample_rate_hz: hz,
        timestamps,
    }
}

proptest! {
    #[test]
    fn rotation_inverse_is_identity(q in unit_quat(), v in vec3()) {
        let back = quat_rotate(&q.conjugate(), quat_rotate(&q, v).unwrap()).unwrap();
        for k in 0..3 {
            prop_assert!((back[k] - v[k]).abs() < 1e-12 * (1.0 + v[k].abs()));
        }
    }

    #[test]
    fn rotation_matches_matrix_and_preserves_length(q in unit_quat(), v in vec3()) {
        let r = quat_rotate(&q, v).unwrap();
        let m = rotation_matrix(&q);
        for i in 0..3 {
            let want: f64 = (0..3).map(|j| m[i][j] * v[j]).sum();
            prop_assert!((r[i] - want).abs() < 1e-11);
        }
        let n = |a: [f64; 3]| (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
        prop_assert!((n(r) - n(v)).abs() < 1e-11);
    }

    #[test]
    fn normalize_gives_unit_norm(w in -50.0..50.0f64, x in -50.0..50.0f64, y in -50.0..50.0f64, z in -50.0..50.0f64) {
        let q = Quaternion::new(w, x, y, z);
        prop_assume!(q.norm() > 1e-6);
        prop_assert!((q.normalize().norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn resample_is_exact_on_linear_signals(src_hz in 20.0..200.0f64, dst_hz in 20.0..400.0f64, n in 20usize..200) {
        let seq = linear_sequence(n, src_hz);
        prop_assume!(seq.duration() > 2.0 / dst_hz);
        let out = resample_linear(&seq, dst_hz).unwrap();
        let gt = out.gt_position.as_ref().unwrap();
        for (i, &t) in out.timestamps.iter().enumerate() {
            prop_assert!(t >= seq.timestamps[0] && t <= *seq.timestamps.last().unwrap());
            prop_assert!((out.gyro[i][0] - 3.0 * t).abs() < 1e-12);
            prop_assert!((out.gyro[i][1] + t).abs() < 1e-12);
            prop_assert!((out.accel[i][0] - (1.0 - 2.0 * t)).abs() < 1e-12);
            prop_assert!((out.accel[i][1] - 7.0 * t).abs() < 1e-12);
            prop_assert!((gt[i][1] - 2.0 * t).abs() < 1e-12);
        }
    }

    #[test]
    fn window_count_formula(n in 200usize..1500, stride in 1usize..300) {
        let seq = linear_sequence(n, 200.0);
        let w = make_windows(&seq, WINDOW, stride, false).unwrap();
        prop_assert_eq!(w.len(), (n - WINDOW) / stride + 1);
        for win in &w {
            prop_assert!(win.t_end > win.t_start);
            prop_assert_eq!(win.input.shape(), &[6, WINDOW][..]);
            prop_assert!(win.input.is_finite());
        }
    }

    #[test]
    fn synthetic_noise_free_accel_recovers_reference(kind in 0usize..4, seed in 0u64..50, dims in 2usize..4) {
        let kind = [ProfileKind::Line, ProfileKind::Circle, ProfileKind::Figure8, ProfileKind::RandomWalk][kind];
        let profile = Profile::randomized(kind, seed);
        let seq = synth_generate(&profile, 20.0, 200.0, &NoiseSpec::none(), seed, dims).unwrap();
        for i in (0..seq.len()).step_by(37) {
            let a = quat_rotate(&seq.orientation[i], seq.accel[i]).unwrap();
            let (_, want) = synth_reference(&profile, seq.timestamps[i], dims);
            for k in 0..3 {
                prop_assert!((a[k] - want[k]).abs() < 1e-9, "sample {} axis {}: {} vs {}", i, k, a[k], want[k]);
            }
        }
    }

    #[test]
    fn targets_integrate_back_to_displacement(kind in 0usize..4, seed in 0u64..50) {
        let kind = [ProfileKind::Line, ProfileKind::Circle, ProfileKind::Figure8, ProfileKind::RandomWalk][kind];
        let seq = synth_generate(&Profile::randomized(kind, seed), 12.0, 200.0, &NoiseSpec::none(), seed, 2).unwrap();
        let windows = make_windows(&seq, WINDOW, WINDOW, true).unwrap();
        let mut sum = [0.0; 2];
        for w in &windows {
            let tgt = w.target.as_ref().unwrap();
            for k in 0..2 {
                sum[k] += tgt[k] * (w.t_end - w.t_start);
            }
        }
        let gt = seq.gt_position.as_ref().unwrap();
        let first = windows[0].start;
        let last = windows.iter().map(|w| seq.timestamps.iter().position(|&t| t == w.t_end).unwrap()).max().unwrap();
        for k in 0..2 {
            prop_assert!((sum[k] - (gt[last][k] - gt[first][k])).abs() < 1e-9);
        }
    }
}

#[test]
fn identity_rotation_is_a_no_op() {
    assert_eq!(quat_rotate(&Quaternion::IDENTITY, [1.0, 2.0, 3.0]).unwrap(), [1.0, 2.0, 3.0]);
}

#[test]
fn quarter_turn_about_z() {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let q = Quaternion::new(h, 0.0, 0.0, h);
    let r = quat_rotate(&q, [1.0, 0.0, 0.0]).unwrap();
    let m = rotation_matrix(&q);
    let want = [m[0][0], m[1][0], m[2][0]];
    for k in 0..3 {
        assert!((r[k] - want[k]).abs() < 1e-12);
        assert!((r[k] - [0.0, 1.0, 0.0][k]).abs() < 1e-12);
    }
}

#[test]
fn non_unit_quaternion_is_a_contract_error() {
    let q = Quaternion::new(1.0, 0.1, 0.0, 0.0);
    assert!(matches!(quat_rotate(&q, [1.0, 0.0, 0.0]), Err(DataError::Contract(_))));
}

#[test]
fn non_monotonic_timestamps_name_the_first_offending_index() {
    let mut seq = linear_sequence(50, 200.0);
    seq.timestamps[17] = seq.timestamps[16];
    seq.timestamps[30] = 0.0;
    match seq.validate() {
        Err(DataError::Validation { index, .. }) => assert_eq!(index, 17),
        other => panic!("expected a validation error, got {other:?}"),
    }
}

#[test]
fn resample_to_same_rate_is_a_no_op() {
    let seq = synth_generate(&Profile::circle(), 5.0, 200.0, &NoisePreset::Consumer.spec(), 3, 2).unwrap();
    let out = resample_linear(&seq, 200.0).unwrap();
    assert_eq!(out.len(), seq.len());
    for i in 0..seq.len() {
        assert_eq!(out.timestamps[i], seq.timestamps[i]);
        assert_eq!(out.gyro[i], seq.gyro[i]);
        assert_eq!(out.accel[i], seq.accel[i]);
    }
}

#[test]
fn window_boundaries() {
    assert_eq!(make_windows(&linear_sequence(1000, 200.0), 200, 10, false).unwrap().len(), 81);
    for stride in [1, 10, 200, 5000] {
        assert_eq!(make_windows(&linear_sequence(200, 200.0), 200, stride, false).unwrap().len(), 1);
    }
    assert!(matches!(
        make_windows(&linear_sequence(199, 200.0), 200, 10, false),
        Err(DataError::Validation { .. })
    ));
}

#[test]
fn targets_without_ground_truth_are_a_config_error() {
    let mut seq = linear_sequence(400, 200.0);
    seq.gt_position = None;
    assert!(matches!(make_windows(&seq, 200, 10, true), Err(DataError::Config(_))));
}

#[test]
fn straight_line_targets_are_constant() {
    let seq = synth_generate(&Profile::line(), 10.0, 200.0, &NoiseSpec::none(), 0, 2).unwrap();
    let windows = make_windows(&seq, WINDOW, 10, true).unwrap();
    // windows that start after the one-second speed ramp
    for w in windows.iter().filter(|w| w.t_start >= 1.0) {
        let t = w.target.as_ref().unwrap();
        assert!((t[0] - 1.0).abs() < 1e-12 && t[1].abs() < 1e-12, "{t:?}");
    }
}

#[test]
fn line_is_inertial_after_the_ramp() {
    let seq = synth_generate(&Profile::line(), 10.0, 200.0, &NoiseSpec::none(), 0, 2).unwrap();
    for i in 0..seq.len() {
        assert_eq!(seq.gyro[i], [0.0; 3]);
        if seq.timestamps[i] > 1.0 {
            let a = quat_rotate(&seq.orientation[i], seq.accel[i]).unwrap();
            assert!(a.iter().all(|x| x.abs() < 1e-12), "{a:?}");
        }
    }
}

#[test]
fn circle_speed_is_radius_times_rate() {
    let seq = synth_generate(&Profile::circle(), 60.0, 200.0, &NoiseSpec::none(), 0, 2).unwrap();
    let profile = Profile::circle();
    for &t in &seq.timestamps {
        let (v, _) = synth_reference(&profile, t, 2);
        assert!(((v[0] * v[0] + v[1] * v[1]).sqrt() - 1.0).abs() < 1e-12);
    }
    // and the stored positions move at that speed
    let gt = seq.gt_position.as_ref().unwrap();
    for i in (1..seq.len()).step_by(101) {
        let d = ((gt[i][0] - gt[i - 1][0]).powi(2) + (gt[i][1] - gt[i - 1][1]).powi(2)).sqrt();
        assert!((d / 0.005 - 1.0).abs() < 1e-5);
    }
}

#[test]
fn generator_is_deterministic_and_seed_sensitive() {
    let noise = NoisePreset::Consumer.spec();
    let a = synth_generate(&Profile::random_walk(1.2, 4), 20.0, 200.0, &noise, 4, 2).unwrap();
    let b = synth_generate(&Profile::random_walk(1.2, 4), 20.0, 200.0, &noise, 4, 2).unwrap();
    let c = synth_generate(&Profile::random_walk(1.2, 4), 20.0, 200.0, &noise, 5, 2).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.accel, c.accel);
    assert_eq!(a.len(), 4000);
}

#[test]
fn negative_noise_is_rejected() {
    let mut noise = NoiseSpec::none();
    noise.gyro_noise_std = -1.0;
    assert!(noise.validate().is_err());
    assert!(synth_generate(&Profile::line(), 5.0, 200.0, &noise, 0, 2).is_err());
    assert!("spiral".parse::<ProfileKind>().is_err());
}

#[test]
fn csv_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let seq = synth_generate(&Profile::figure8(), 10.0, 200.0, &NoisePreset::Consumer.spec(), 2, 2).unwrap();
    let files = write_dataset(dir.path(), &seq).unwrap();
    assert_eq!(files.len(), 3);
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back.len(), seq.len());
    assert_eq!(back.timestamps, seq.timestamps);
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-8 * (1.0 + b.abs());
    for i in 0..seq.len() {
        for k in 0..3 {
            assert!(close(back.gyro[i][k], seq.gyro[i][k]));
            assert!(close(back.accel[i][k], seq.accel[i][k]));
        }
        assert!(back.orientation[i].is_unit());
    }
    // canonical loading of a 200 Hz dataset keeps the samples as written
    let canon = load_canonical(dir.path()).unwrap();
    assert_eq!(canon.timestamps, back.timestamps);
    assert_eq!(canon.accel, back.accel);
}
