mod common;

use common::*;
use imunet::data::*;
use imunet::nav::*;
use proptest::prelude::*;

fn grid(n: usize, dt: f64) -> Vec<f64> {
    (0..n).map(|i| i as f64 * dt).collect()
}

fn series_1d(t: &[f64], v: &[f64]) -> VelocitySeries {
    VelocitySeries {
        timestamps: t.to_vec(),
        velocities: v.iter().map(|&x| [x, 0.0, 0.0]).collect(),
        dim: 1,
    }
}

fn increasing_times() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-3..0.1f64, 2..80).prop_map(|dts| {
        let mut t = vec![0.0];
        for dt in dts {
            let last = *t.last().unwrap();
            t.push(last + dt);
        }
        t
    })
}

proptest! {
    #[test]
    fn velocity_integration_matches_riemann_oracle(t in increasing_times(), seed in 0u64..1000, p0 in -10.0..10.0f64) {
        let v: Vec<f64> = t.iter().enumerate().map(|(i, _)| ((seed + i as u64) as f64 * 0.37).sin() * 3.0).collect();
        let traj = integrate_velocity(&series_1d(&t, &v), &[p0]).unwrap();
        let want = riemann_oracle(&t, &v, p0);
        for (p, w) in traj.positions.iter().zip(&want) {
            prop_assert_eq!(p[0], *w);
        }
    }

    #[test]
    fn differencing_inverts_integration(t in increasing_times(), seed in 0u64..1000) {
        let v: Vec<f64> = (0..t.len()).map(|i| ((seed * 7 + i as u64) as f64 * 0.91).cos()).collect();
        let traj = integrate_velocity(&series_1d(&t, &v), &[0.0]).unwrap();
        for k in 0..t.len() - 1 {
            let back = (traj.positions[k + 1][0] - traj.positions[k][0]) / (t[k + 1] - t[k]);
            prop_assert!((back - v[k]).abs() < 1e-9, "k={} {} vs {}", k, back, v[k]);
        }
    }

    #[test]
    fn start_offset_shifts_every_point(t in increasing_times(), ox in -50.0..50.0f64, oy in -50.0..50.0f64) {
        let vel = VelocitySeries {
            timestamps: t.clone(),
            velocities: t.iter().map(|&x| [x.sin(), x.cos(), 0.0]).collect(),
            dim: 2,
        };
        let base = integrate_velocity(&vel, &[0.0, 0.0]).unwrap();
        let moved = integrate_velocity(&vel, &[ox, oy]).unwrap();
        for (a, b) in base.positions.iter().zip(&moved.positions) {
            prop_assert_eq!(b[0], ox + a[0]);
            prop_assert_eq!(b[1], oy + a[1]);
        }
    }

    #[test]
    fn ate_matches_direct_rmse_and_is_symmetric(seed in 0u64..1000, n in 2usize..300, shift in -1e3..1e3f64) {
        let t = grid(n, 0.25);
        let g = planar(&t, |x| [x.sin() * 3.0, x * 0.5]);
        let e = planar(&t, |x| [x.sin() * 3.0 + ((x + seed as f64) * 1.7).sin(), x * 0.5 + ((x * 3.1) + seed as f64).cos() * 0.2]);
        let a = ate(&e, &g).unwrap();
        prop_assert!((a - direct_rmse(&e.positions, &g.positions, 2)).abs() < 1e-12);
        prop_assert_eq!(a, ate(&g, &e).unwrap());
        let ts: Vec<f64> = t.iter().map(|x| x + shift).collect();
        let es = Trajectory::new(ts.clone(), e.positions.clone(), 2).unwrap();
        let gs = Trajectory::new(ts, g.positions.clone(), 2).unwrap();
        prop_assert!((ate(&es, &gs).unwrap() - a).abs() < 1e-12);
    }

    #[test]
    fn rte_of_linear_drift_matches_oracle(rho in 0.001..2.0f64, n in 50usize..400, interval in 3.0..40.0f64) {
        let t = grid(n, 0.5);
        prop_assume!(t[n - 1] >= interval);
        let g = planar(&t, |x| [x.cos(), x.sin()]);
        let e = planar(&t, |x| [x.cos() + rho * x, x.sin() - 0.5 * rho * x]);
        let got = rte(&e, &g, interval).unwrap();
        let want = rte_oracle(&t, &e.positions, &g.positions, 2, interval);
        prop_assert!((got - want).abs() < 1e-9, "{} vs {}", got, want);
        // drift from an anchored start accumulates, so the re-anchored error is smaller
        prop_assert!(got <= ate(&e, &g).unwrap() + 1e-12);
    }

    #[test]
    fn constant_offset_has_zero_rte(dx in -20.0..20.0f64, dy in -20.0..20.0f64, interval in 1.0..30.0f64) {
        let t = grid(200, 0.5);
        let g = planar(&t, |x| [x.cos() * 4.0, x]);
        let e = planar(&t, |x| [x.cos() * 4.0 + dx, x + dy]);
        prop_assert!(rte(&e, &g, interval).unwrap() < 1e-12);
        prop_assert!((ate(&e, &g).unwrap() - (dx * dx + dy * dy).sqrt()).abs() < 1e-12);
    }
}

#[test]
fn constant_velocity_reaches_one_metre() {
    let t = grid(201, 0.005);
    let p = integrate_velocity(&series_1d(&t, &[1.0; 201]), &[0.0]).unwrap();
    assert_eq!(p.positions[200][0], riemann_oracle(&t, &[1.0; 201], 0.0)[200]);
    assert!((p.positions[200][0] - 1.0).abs() < 1e-12);
}

#[test]
fn ramp_velocity_left_riemann_sum() {
    let t = grid(201, 0.005);
    let v: Vec<f64> = t.clone();
    let p = integrate_velocity(&series_1d(&t, &v), &[0.0]).unwrap();
    let closed_form = 0.005 * 0.005 * 199.0 * 200.0 / 2.0;
    assert_eq!(p.positions[200][0], riemann_oracle(&t, &v, 0.0)[200]);
    assert!((p.positions[200][0] - closed_form).abs() < 1e-12);
    assert!((closed_form - 0.4975).abs() < 1e-15);
}

#[test]
fn constant_acceleration_double_sum() {
    let t = grid(201, 0.005);
    let a = [[2.0, 0.0, 0.0]; 201];
    let traj = integrate_acceleration(&t, &a, 2, &[0.0, 0.0], &[0.0, 0.0]).unwrap();
    let oracle = double_sum_oracle(&t, &[2.0; 201], 0.0, 0.0);
    for (p, o) in traj.positions.iter().zip(&oracle) {
        assert!((p[0] - o).abs() < 1e-12);
        assert_eq!(p[1], 0.0);
    }
    // Σ_{k<200} 2·k·dt·dt, which tends to 1 as dt → 0
    assert!((traj.positions[200][0] - 0.995).abs() < 1e-12);
}

#[test]
fn zero_acceleration_is_a_straight_line() {
    let t = grid(500, 0.01);
    let traj = integrate_acceleration(&t, &vec![[0.0; 3]; 500], 2, &[1.0, 0.0], &[3.0, -1.0]).unwrap();
    for (p, &ti) in traj.positions.iter().zip(&t) {
        assert!((p[0] - (3.0 + ti)).abs() < 1e-12);
        assert_eq!(p[1], -1.0);
    }
}

#[test]
fn accelerometer_bias_drift_grows_quadratically() {
    let dt = 0.005;
    let n = 12_001; // one minute
    let t = grid(n, dt);
    let b = [0.05, -0.02];
    let clean = integrate_acceleration(&t, &vec![[0.0; 3]; n], 2, &[1.0, 0.5], &[0.0, 0.0]).unwrap();
    let biased = integrate_acceleration(&t, &vec![[b[0], b[1], 0.0]; n], 2, &[1.0, 0.5], &[0.0, 0.0]).unwrap();
    let bias_norm = (b[0] * b[0] + b[1] * b[1]).sqrt();
    for k in [100, 2000, n - 1] {
        let err = ((biased.positions[k][0] - clean.positions[k][0]).powi(2)
            + (biased.positions[k][1] - clean.positions[k][1]).powi(2))
        .sqrt();
        let discrete = double_sum_oracle(&t[..=k], &vec![bias_norm; k + 1], 0.0, 0.0)[k];
        assert!((err - discrete).abs() < 1e-9, "k={k}: {err} vs {discrete}");
        let tk = t[k];
        let continuous = 0.5 * bias_norm * tk * tk;
        assert!((err - continuous).abs() <= bias_norm * tk * dt, "k={k}");
    }
}

#[test]
fn non_increasing_timestamps_are_rejected() {
    let t = vec![0.0, 0.1, 0.1, 0.2];
    assert!(matches!(
        integrate_velocity(&series_1d(&t, &[1.0; 4]), &[0.0]),
        Err(NavError::Validation { index: 2, .. })
    ));
}

#[test]
fn uniform_offset_ate_is_five() {
    let t = grid(1000, 0.1);
    let g = planar(&t, |x| [x.sin() * 10.0, x.cos()]);
    let e = planar(&t, |x| [x.sin() * 10.0 + 3.0, x.cos() + 4.0]);
    assert_eq!(ate(&e, &g).unwrap(), 5.0);
    assert_eq!(ate(&g, &g).unwrap(), 0.0);
    assert_eq!(rte(&g, &g, 60.0).unwrap(), 0.0);
    assert!(rte(&e, &g, 60.0).unwrap() < 1e-12);
}

#[test]
fn oracle_model_closes_the_loop() {
    for (profile, dims) in [(Profile::line(), 2), (Profile::circle(), 2), (Profile::figure8(), 3)] {
        let seq = synth_generate(&profile, 300.0, 200.0, &NoiseSpec::none(), 1, dims).unwrap();
        let est = predict_trajectory(&WindowOracle { dim: dims }, &seq, EVAL_STRIDE).unwrap();
        let (a, _, _) = evaluate(&est, &seq, DEFAULT_RTE_INTERVAL_S).unwrap();
        assert!(a < 1e-6, "{profile:?}: ATE {a}");
    }
}

#[test]
fn zero_model_stays_at_the_start() {
    let seq = synth_generate(&Profile::circle(), 20.0, 200.0, &NoiseSpec::none(), 0, 2).unwrap();
    let est = predict_trajectory(&ZeroModel { dim: 2 }, &seq, 200).unwrap();
    let p0 = seq.gt_position.as_ref().unwrap()[0];
    assert!(est.positions.iter().all(|p| p[0] == p0[0] && p[1] == p0[1]));
}

#[test]
fn halving_the_stride_doubles_the_points() {
    let seq = synth_generate(&Profile::circle(), 30.0, 200.0, &NoiseSpec::none(), 0, 2).unwrap();
    let n = seq.len();
    for stride in [200, 100, 50] {
        let est = predict_trajectory(&WindowOracle { dim: 2 }, &seq, stride).unwrap();
        assert_eq!(est.len(), (n - WINDOW) / stride + 2);
    }
}

#[test]
fn short_sequences_and_dim_mismatch_are_rejected() {
    let mut seq = synth_generate(&Profile::line(), 5.0, 200.0, &NoiseSpec::none(), 0, 2).unwrap();
    seq.timestamps.truncate(150);
    seq.gyro.truncate(150);
    seq.accel.truncate(150);
    seq.orientation.truncate(150);
    seq.gt_position.as_mut().unwrap().truncate(150);
    assert!(matches!(
        predict_trajectory(&ZeroModel { dim: 2 }, &seq, 200),
        Err(NavError::Validation { .. })
    ));
    let seq = synth_generate(&Profile::line(), 5.0, 200.0, &NoiseSpec::none(), 0, 2).unwrap();
    assert!(matches!(predict_trajectory(&ZeroModel { dim: 3 }, &seq, 200), Err(NavError::Config(_))));
}

#[test]
fn trajectory_csv_has_header_and_rows() {
    let t = grid(5, 0.5);
    let csv = planar(&t, |x| [x, -x]).to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,px,py"));
    assert_eq!(lines.count(), 5);
}
