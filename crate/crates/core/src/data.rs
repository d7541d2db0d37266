//! IMU sequences: frame rotation, resampling, windowing, synthetic generation
//! and the canonical on-disk CSV layout.

use std::f64::consts::PI;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("validation failed at index {index}: {reason}")]
    Validation { index: usize, reason: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, DataError>;

fn validation(index: usize, reason: impl Into<String>) -> DataError {
    DataError::Validation {
        index,
        reason: reason.into(),
    }
}

pub const QUAT_NORM_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_RATE_HZ: f64 = 200.0;
pub const WINDOW: usize = 200;
pub const TRAIN_STRIDE: usize = 10;

/// Rotation quaternion `(w, x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Self {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        let (s, c) = (angle / 2.0).sin_cos();
        Self::new(c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n)
    }

    /// Rotation by `heading` radians about `+z`.
    pub fn from_heading(heading: f64) -> Self {
        let (s, c) = (heading / 2.0).sin_cos();
        Self::new(c, 0.0, 0.0, s)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, o: &Self) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn normalize(&self) -> Self {
        let n = self.norm();
        Self::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn conjugate(&self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Hamilton product `self ⊗ o`.
    pub fn mul(&self, o: &Self) -> Self {
        Self::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }

    pub fn is_unit(&self) -> bool {
        (self.norm() - 1.0).abs() < QUAT_NORM_TOLERANCE
    }

    /// Vector part of `q ⊗ (0, v) ⊗ q⁻¹`, body frame to global frame.
    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        let p = Quaternion::new(0.0, v[0], v[1], v[2]);
        let r = self.mul(&p).mul(&self.conjugate());
        [r.x, r.y, r.z]
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }
}

/// Rotates `v` by the unit quaternion `q`.
pub fn quat_rotate(q: &Quaternion, v: [f64; 3]) -> Result<[f64; 3]> {
    if !q.is_unit() {
        return Err(DataError::Contract(format!(
            "quaternion norm {} is not within {QUAT_NORM_TOLERANCE} of 1",
            q.norm()
        )));
    }
    Ok(q.rotate(v))
}

/// Time-stamped IMU streams with optional ground-truth positions.
///
/// Positions are stored as 3-vectors; `gt_dim` says how many components are
/// meaningful (2 for planar data, 3 otherwise).
#[derive(Debug, Clone, PartialEq)]
pub struct ImuSequence {
    pub timestamps: Vec<f64>,
    pub gyro: Vec<[f64; 3]>,
    pub accel: Vec<[f64; 3]>,
    pub orientation: Vec<Quaternion>,
    pub gt_position: Option<Vec<[f64; 3]>>,
    pub gt_dim: usize,
    pub sample_rate_hz: f64,
}

impl ImuSequence {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.timestamps.last().copied().unwrap_or(0.0) - self.timestamps.first().copied().unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if n < 2 {
            return Err(validation(0, format!("need at least 2 samples, got {n}")));
        }
        if self.gyro.len() != n || self.accel.len() != n || self.orientation.len() != n {
            return Err(validation(
                0,
                format!(
                    "stream lengths differ: t={n}, gyro={}, accel={}, ori={}",
                    self.gyro.len(),
                    self.accel.len(),
                    self.orientation.len()
                ),
            ));
        }
        if let Some(gt) = &self.gt_position {
            if gt.len() != n {
                return Err(validation(0, format!("ground truth has {} samples, expected {n}", gt.len())));
            }
        }
        if !(2..=3).contains(&self.gt_dim) {
            return Err(DataError::Config(format!("position dimension must be 2 or 3, got {}", self.gt_dim)));
        }
        check_increasing(&self.timestamps)?;
        if let Some(i) = self.orientation.iter().position(|q| !q.is_unit()) {
            return Err(validation(i, format!("orientation norm {} is not unit", self.orientation[i].norm())));
        }
        Ok(())
    }
}

pub(crate) fn check_increasing(t: &[f64]) -> Result<()> {
    if let Some(i) = t.iter().position(|v| !v.is_finite()) {
        return Err(validation(i, "non-finite timestamp"));
    }
    if let Some(i) = t.windows(2).position(|w| w[1] <= w[0]) {
        return Err(validation(
            i + 1,
            format!("timestamps not strictly increasing: {} then {}", t[i], t[i + 1]),
        ));
    }
    Ok(())
}

/// Index `i` and weight `w` with `t = (1−w)·times[i] + w·times[i+1]`.
/// `t` must lie within `[times[0], times[n−1]]`.
pub(crate) fn bracket(times: &[f64], t: f64) -> (usize, f64) {
    let n = times.len();
    let i = match times.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
        Ok(i) => return (i.min(n - 2), if i == n - 1 { 1.0 } else { 0.0 }),
        Err(i) => i.clamp(1, n - 1) - 1,
    };
    let w = (t - times[i]) / (times[i + 1] - times[i]);
    (i, w)
}

fn lerp3(a: [f64; 3], b: [f64; 3], w: f64) -> [f64; 3] {
    [
        a[0] + (b[0] - a[0]) * w,
        a[1] + (b[1] - a[1]) * w,
        a[2] + (b[2] - a[2]) * w,
    ]
}

fn lerp_quat(a: Quaternion, b: Quaternion, w: f64) -> Quaternion {
    // keep both ends in the same hemisphere so the blend does not pass near zero
    let b = if a.dot(&b) < 0.0 {
        Quaternion::new(-b.w, -b.x, -b.y, -b.z)
    } else {
        b
    };
    Quaternion::new(
        a.w + (b.w - a.w) * w,
        a.x + (b.x - a.x) * w,
        a.y + (b.y - a.y) * w,
        a.z + (b.z - a.z) * w,
    )
    .normalize()
}

/// Interpolates 3-vector samples onto `query` times (all inside `times`' span).
pub(crate) fn interp_vec3(times: &[f64], values: &[[f64; 3]], query: &[f64]) -> Vec<[f64; 3]> {
    query
        .iter()
        .map(|&t| {
            let (i, w) = bracket(times, t);
            if w == 0.0 {
                values[i]
            } else if w == 1.0 {
                values[i + 1]
            } else {
                lerp3(values[i], values[i + 1], w)
            }
        })
        .collect()
}

pub(crate) fn interp_quat(times: &[f64], values: &[Quaternion], query: &[f64]) -> Vec<Quaternion> {
    query
        .iter()
        .map(|&t| {
            let (i, w) = bracket(times, t);
            if w == 0.0 {
                values[i]
            } else if w == 1.0 {
                values[i + 1]
            } else {
                lerp_quat(values[i], values[i + 1], w)
            }
        })
        .collect()
}

/// Uniform grid `t₀ + k/rate` covering `[t₀, t_N]`.
fn uniform_grid(t0: f64, t1: f64, rate: f64) -> Vec<f64> {
    let n = ((t1 - t0) * rate + 1e-9).floor() as usize + 1;
    (0..n).map(|k| t0 + k as f64 / rate).collect()
}

/// Linearly resamples every stream onto a uniform `target_hz` grid.
/// Quaternions are blended componentwise and renormalized.
pub fn resample_linear(seq: &ImuSequence, target_hz: f64) -> Result<ImuSequence> {
    if !(target_hz > 0.0 && target_hz.is_finite()) {
        return Err(DataError::Config(format!("target rate must be positive, got {target_hz}")));
    }
    check_increasing(&seq.timestamps)?;
    seq.validate()?;
    if seq.duration() <= 2.0 / target_hz {
        return Err(DataError::Config(format!(
            "sequence spans {} s, need more than {} s at {target_hz} Hz",
            seq.duration(),
            2.0 / target_hz
        )));
    }
    let t = &seq.timestamps;
    let grid = uniform_grid(t[0], t[t.len() - 1], target_hz);
    Ok(ImuSequence {
        gyro: interp_vec3(t, &seq.gyro, &grid),
        accel: interp_vec3(t, &seq.accel, &grid),
        orientation: interp_quat(t, &seq.orientation, &grid),
        gt_position: seq.gt_position.as_ref().map(|p| interp_vec3(t, p, &grid)),
        gt_dim: seq.gt_dim,
        sample_rate_hz: target_hz,
        timestamps: grid,
    })
}

/// One network input: globally rotated gyro (rows 0–2) and accel (rows 3–5).
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub input: Tensor,
    /// Mean ground-truth velocity over `[t_start, t_end]`.
    pub target: Option<Vec<f64>>,
    pub t_start: f64,
    pub t_end: f64,
    /// Sample index of the first input column.
    pub start: usize,
}

/// Cuts `floor((N − window)/stride) + 1` windows.
///
/// A window starting at sample `i` spans `[t_i, t_{i+window}]`, so consecutive
/// windows at `stride == window` tile the sequence without gaps. The final
/// window of a sequence whose samples end at `i + window − 1` is clipped to
/// `[t_i, t_{N−1}]`.
pub fn make_windows(seq: &ImuSequence, window: usize, stride: usize, with_targets: bool) -> Result<Vec<Window>> {
    if window == 0 || stride == 0 {
        return Err(DataError::Config("window and stride must be positive".into()));
    }
    let n = seq.len();
    if n < window {
        return Err(validation(n, format!("sequence has {n} samples, shorter than one window of {window}")));
    }
    let gt = match (with_targets, &seq.gt_position) {
        (true, None) => return Err(DataError::Config("targets requested but the sequence has no ground truth".into())),
        (true, Some(gt)) => Some(gt),
        (false, _) => None,
    };
    let rotated: Vec<([f64; 3], [f64; 3])> = seq
        .orientation
        .iter()
        .zip(seq.gyro.iter().zip(&seq.accel))
        .map(|(q, (g, a))| (q.rotate(*g), q.rotate(*a)))
        .collect();
    let count = (n - window) / stride + 1;
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let i = k * stride;
        let mut data = vec![0.0; 6 * window];
        for (j, (g, a)) in rotated[i..i + window].iter().enumerate() {
            for r in 0..3 {
                data[r * window + j] = g[r];
                data[(r + 3) * window + j] = a[r];
            }
        }
        let end = (i + window).min(n - 1);
        let (t_start, t_end) = (seq.timestamps[i], seq.timestamps[end]);
        let target = gt.map(|p| {
            let dt = t_end - t_start;
            (0..seq.gt_dim).map(|d| (p[end][d] - p[i][d]) / dt).collect()
        });
        if let Some(j) = data.iter().position(|v| !v.is_finite()) {
            return Err(validation(i + j % window, "non-finite IMU value"));
        }
        out.push(Window {
            input: Tensor::new(vec![6, window], data)?,
            target,
            t_start,
            t_end,
            start: i,
        });
    }
    Ok(out)
}

/// Sensor error model: white noise, constant bias and a random-walk drift.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub gyro_noise_std: f64,
    pub accel_noise_std: f64,
    pub gyro_bias: [f64; 3],
    pub accel_bias: [f64; 3],
    /// Standard deviation of the per-sample bias increment (both sensors).
    pub bias_random_walk_std: f64,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoisePreset {
    None,
    Consumer,
    Harsh,
}

impl NoisePreset {
    pub fn spec(self) -> NoiseSpec {
        match self {
            NoisePreset::None => NoiseSpec::none(),
            NoisePreset::Consumer => NoiseSpec {
                gyro_noise_std: 0.005,
                accel_noise_std: 0.05,
                gyro_bias: [0.002, -0.001, 0.0015],
                accel_bias: [0.06, -0.04, 0.05],
                bias_random_walk_std: 1e-4,
                rng_seed: 0,
            },
            NoisePreset::Harsh => NoiseSpec {
                gyro_noise_std: 0.02,
                accel_noise_std: 0.2,
                gyro_bias: [0.01, -0.008, 0.006],
                accel_bias: [0.25, -0.2, 0.15],
                bias_random_walk_std: 5e-4,
                rng_seed: 0,
            },
        }
    }
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            gyro_noise_std: 0.0,
            accel_noise_std: 0.0,
            gyro_bias: [0.0; 3],
            accel_bias: [0.0; 3],
            bias_random_walk_std: 0.0,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let stds = [self.gyro_noise_std, self.accel_noise_std, self.bias_random_walk_std];
        if stds.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(DataError::Config(format!("noise standard deviations must be ≥ 0: {stds:?}")));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        *self == Self {
            rng_seed: self.rng_seed,
            ..Self::none()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileKind {
    Line,
    Circle,
    Figure8,
    RandomWalk,
}

impl std::str::FromStr for ProfileKind {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "line" => Ok(Self::Line),
            "circle" => Ok(Self::Circle),
            "figure8" => Ok(Self::Figure8),
            "random-walk" => Ok(Self::RandomWalk),
            other => Err(DataError::Config(format!(
                "unknown profile {other:?} (expected line, circle, figure8 or random-walk)"
            ))),
        }
    }
}

/// A smooth planar motion with closed-form kinematics (up to the position of
/// the random walk, which is integrated by quadrature).
#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    /// Accelerates from rest to `speed` over `ramp_s`, then holds it.
    Line { speed: f64, heading: f64, ramp_s: f64 },
    Circle { radius: f64, angular_rate: f64 },
    /// `(R sin ωt, R/2 · sin 2ωt)`.
    Figure8 { scale: f64, angular_rate: f64 },
    /// Speed and turn rate are sums of sinusoids drawn from the seed.
    RandomWalk {
        mean_speed: f64,
        speed_terms: Vec<(f64, f64, f64)>,
        turn_terms: Vec<(f64, f64, f64)>,
        heading0: f64,
    },
}

impl Profile {
    pub fn line() -> Self {
        Profile::Line {
            speed: 1.0,
            heading: 0.0,
            ramp_s: 1.0,
        }
    }

    pub fn circle() -> Self {
        Profile::Circle {
            radius: 5.0,
            angular_rate: 0.2,
        }
    }

    pub fn figure8() -> Self {
        Profile::Figure8 {
            scale: 10.0,
            angular_rate: 0.1,
        }
    }

    /// Random walk whose shape is fully determined by `seed`.
    pub fn random_walk(mean_speed: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_ba11);
        let mut terms = |n: usize, amp: f64, lo: f64, hi: f64| -> Vec<(f64, f64, f64)> {
            (0..n)
                .map(|_| {
                    (
                        amp * rng.gen_range(0.3..1.0),
                        2.0 * PI * rng.gen_range(lo..hi),
                        rng.gen_range(0.0..2.0 * PI),
                    )
                })
                .collect()
        };
        let speed_terms = terms(3, mean_speed / 6.0, 0.01, 0.1);
        let turn_terms = terms(3, 0.15, 0.005, 0.05);
        let heading0 = rng.gen_range(-PI..PI);
        Profile::RandomWalk {
            mean_speed,
            speed_terms,
            turn_terms,
            heading0,
        }
    }

    /// Default parameters for `kind`; the random walk draws its shape from `seed`.
    pub fn default_for(kind: ProfileKind, seed: u64) -> Self {
        match kind {
            ProfileKind::Line => Self::line(),
            ProfileKind::Circle => Self::circle(),
            ProfileKind::Figure8 => Self::figure8(),
            ProfileKind::RandomWalk => Self::random_walk(1.0, seed),
        }
    }

    /// Parameters drawn from `seed` within walking-speed ranges.
    pub fn randomized(kind: ProfileKind, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa11_0c8);
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        match kind {
            ProfileKind::Line => Profile::Line {
                speed: rng.gen_range(0.5..1.5),
                heading: rng.gen_range(-PI..PI),
                ramp_s: 1.0,
            },
            ProfileKind::Circle => {
                let radius = rng.gen_range(3.0..10.0);
                let speed = rng.gen_range(0.6..1.4);
                Profile::Circle {
                    radius,
                    angular_rate: sign * speed / radius,
                }
            }
            ProfileKind::Figure8 => {
                let scale = rng.gen_range(6.0..14.0);
                Profile::Figure8 {
                    scale,
                    angular_rate: sign * rng.gen_range(0.6..1.2) / scale,
                }
            }
            ProfileKind::RandomWalk => Self::random_walk(rng.gen_range(0.6..1.4), rng.gen()),
        }
    }

    fn kind(&self) -> ProfileKind {
        match self {
            Profile::Line { .. } => ProfileKind::Line,
            Profile::Circle { .. } => ProfileKind::Circle,
            Profile::Figure8 { .. } => ProfileKind::Figure8,
            Profile::RandomWalk { .. } => ProfileKind::RandomWalk,
        }
    }
}

/// Planar kinematic state at one instant.
#[derive(Debug, Clone, Copy)]
pub struct Kinematics {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    pub acceleration: [f64; 2],
    pub heading: f64,
    pub heading_rate: f64,
}

fn sum_sin(terms: &[(f64, f64, f64)], t: f64) -> f64 {
    terms.iter().map(|(a, f, p)| a * (f * t + p).sin()).sum()
}

fn sum_sin_dt(terms: &[(f64, f64, f64)], t: f64) -> f64 {
    terms.iter().map(|(a, f, p)| a * f * (f * t + p).cos()).sum()
}

/// `∫₀ᵗ Σ a sin(f s + p) ds`.
fn sum_sin_integral(terms: &[(f64, f64, f64)], t: f64) -> f64 {
    terms.iter().map(|(a, f, p)| a / f * (p.cos() - (f * t + p).cos())).sum()
}

impl Profile {
    /// Everything but the position for the random walk (filled by quadrature).
    fn kinematics(&self, t: f64) -> Kinematics {
        match *self {
            Profile::Line { speed, heading, ramp_s } => {
                let (dist, v, a) = if t < ramp_s {
                    let w = PI / ramp_s;
                    (
                        speed / 2.0 * (t - (w * t).sin() / w),
                        speed / 2.0 * (1.0 - (w * t).cos()),
                        speed / 2.0 * w * (w * t).sin(),
                    )
                } else {
                    (speed * (t - ramp_s / 2.0), speed, 0.0)
                };
                let (s, c) = heading.sin_cos();
                Kinematics {
                    position: [dist * c, dist * s],
                    velocity: [v * c, v * s],
                    acceleration: [a * c, a * s],
                    heading,
                    heading_rate: 0.0,
                }
            }
            Profile::Circle { radius, angular_rate } => {
                let (s, c) = (angular_rate * t).sin_cos();
                let rw = radius * angular_rate;
                Kinematics {
                    position: [radius * c, radius * s],
                    velocity: [-rw * s, rw * c],
                    acceleration: [-rw * angular_rate * c, -rw * angular_rate * s],
                    heading: angular_rate * t + angular_rate.signum() * PI / 2.0,
                    heading_rate: angular_rate,
                }
            }
            Profile::Figure8 { scale, angular_rate: w } => {
                let (s1, c1) = (w * t).sin_cos();
                let (s2, c2) = (2.0 * w * t).sin_cos();
                let v = [scale * w * c1, scale * w * c2];
                let a = [-scale * w * w * s1, -2.0 * scale * w * w * s2];
                Kinematics {
                    position: [scale * s1, scale / 2.0 * s2],
                    velocity: v,
                    acceleration: a,
                    heading: v[1].atan2(v[0]),
                    heading_rate: (v[0] * a[1] - v[1] * a[0]) / (v[0] * v[0] + v[1] * v[1]),
                }
            }
            Profile::RandomWalk {
                mean_speed,
                ref speed_terms,
                ref turn_terms,
                heading0,
            } => {
                let speed = mean_speed + sum_sin(speed_terms, t);
                let dspeed = sum_sin_dt(speed_terms, t);
                let heading = heading0 + sum_sin_integral(turn_terms, t);
                let rate = sum_sin(turn_terms, t);
                let (s, c) = heading.sin_cos();
                Kinematics {
                    position: [0.0, 0.0],
                    velocity: [speed * c, speed * s],
                    acceleration: [dspeed * c - speed * rate * s, dspeed * s + speed * rate * c],
                    heading,
                    heading_rate: rate,
                }
            }
        }
    }
}

const VERTICAL_AMPLITUDE: f64 = 0.5;
const VERTICAL_FREQ_HZ: f64 = 0.1;

/// Samples `profile` at `rate_hz` for `duration_s` seconds (`duration·rate`
/// samples) and corrupts the body-frame IMU streams with `noise`.
///
/// The body frame is aligned with the heading, so the gyro reads the heading
/// rate on `z` and the accelerometer reads `Rᵀ(θ)·a_global`. Orientation and
/// positions are exact. With `dims == 3` a vertical oscillation is added.
pub fn synth_generate(
    profile: &Profile,
    duration_s: f64,
    rate_hz: f64,
    noise: &NoiseSpec,
    seed: u64,
    dims: usize,
) -> Result<ImuSequence> {
    if !(duration_s >= 2.0 && duration_s.is_finite()) {
        return Err(DataError::Config(format!("duration must be at least 2 s, got {duration_s}")));
    }
    if !(rate_hz > 0.0 && rate_hz.is_finite()) {
        return Err(DataError::Config(format!("rate must be positive, got {rate_hz}")));
    }
    if !(2..=3).contains(&dims) {
        return Err(DataError::Config(format!("dims must be 2 or 3, got {dims}")));
    }
    noise.validate()?;
    let n = (duration_s * rate_hz).round() as usize;
    let timestamps: Vec<f64> = (0..n).map(|k| k as f64 / rate_hz).collect();
    let mut kin: Vec<Kinematics> = timestamps.iter().map(|&t| profile.kinematics(t)).collect();

    if profile.kind() == ProfileKind::RandomWalk {
        integrate_positions(profile, &timestamps, &mut kin);
    }
    if profile.kind() == ProfileKind::Figure8 {
        unwrap_headings(&mut kin);
    }

    let wz = 2.0 * PI * VERTICAL_FREQ_HZ;
    let mut gyro = Vec::with_capacity(n);
    let mut accel = Vec::with_capacity(n);
    let mut orientation = Vec::with_capacity(n);
    let mut gt = Vec::with_capacity(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ noise.rng_seed);
    let gyro_noise = Normal::new(0.0, noise.gyro_noise_std).expect("validated std");
    let accel_noise = Normal::new(0.0, noise.accel_noise_std).expect("validated std");
    let walk = Normal::new(0.0, noise.bias_random_walk_std).expect("validated std");
    let mut gyro_bias = noise.gyro_bias;
    let mut accel_bias = noise.accel_bias;
    for (k, &t) in timestamps.iter().enumerate() {
        let s = &kin[k];
        let (z, az) = if dims == 3 {
            (
                VERTICAL_AMPLITUDE * (wz * t).sin(),
                -VERTICAL_AMPLITUDE * wz * wz * (wz * t).sin(),
            )
        } else {
            (0.0, 0.0)
        };
        let q = Quaternion::from_heading(s.heading);
        let a_body = q.conjugate().rotate([s.acceleration[0], s.acceleration[1], az]);
        let w_body = [0.0, 0.0, s.heading_rate];
        let mut gm = [0.0; 3];
        let mut am = [0.0; 3];
        for r in 0..3 {
            gm[r] = w_body[r] + gyro_bias[r] + gyro_noise.sample(&mut rng);
            am[r] = a_body[r] + accel_bias[r] + accel_noise.sample(&mut rng);
        }
        for r in 0..3 {
            gyro_bias[r] += walk.sample(&mut rng);
            accel_bias[r] += walk.sample(&mut rng);
        }
        gyro.push(gm);
        accel.push(am);
        orientation.push(q);
        gt.push([s.position[0], s.position[1], z]);
    }
    Ok(ImuSequence {
        timestamps,
        gyro,
        accel,
        orientation,
        gt_position: Some(gt),
        gt_dim: dims,
        sample_rate_hz: rate_hz,
    })
}

/// Ground-truth global velocity and acceleration of a synthetic profile at `t`,
/// including the vertical component when `dims == 3`.
pub fn synth_reference(profile: &Profile, t: f64, dims: usize) -> ([f64; 3], [f64; 3]) {
    let k = profile.kinematics(t);
    let wz = 2.0 * PI * VERTICAL_FREQ_HZ;
    let (vz, az) = if dims == 3 {
        (
            VERTICAL_AMPLITUDE * wz * (wz * t).cos(),
            -VERTICAL_AMPLITUDE * wz * wz * (wz * t).sin(),
        )
    } else {
        (0.0, 0.0)
    };
    (
        [k.velocity[0], k.velocity[1], vz],
        [k.acceleration[0], k.acceleration[1], az],
    )
}

/// Five-point Gauss–Legendre quadrature of the velocity between samples.
fn integrate_positions(profile: &Profile, t: &[f64], kin: &mut [Kinematics]) {
    const NODES: [f64; 5] = [
        0.0,
        -0.538_469_310_105_683_1,
        0.538_469_310_105_683_1,
        -0.906_179_845_938_664,
        0.906_179_845_938_664,
    ];
    const WEIGHTS: [f64; 5] = [
        0.568_888_888_888_888_9,
        0.478_628_670_499_366_5,
        0.478_628_670_499_366_5,
        0.236_926_885_056_189_1,
        0.236_926_885_056_189_1,
    ];
    let mut p = [0.0f64; 2];
    kin[0].position = p;
    for k in 1..t.len() {
        let (a, b) = (t[k - 1], t[k]);
        let (mid, half) = ((a + b) / 2.0, (b - a) / 2.0);
        for (x, w) in NODES.iter().zip(WEIGHTS) {
            let v = profile.kinematics(mid + half * x).velocity;
            p[0] += half * w * v[0];
            p[1] += half * w * v[1];
        }
        kin[k].position = p;
    }
}

fn unwrap_headings(kin: &mut [Kinematics]) {
    for k in 1..kin.len() {
        let prev = kin[k - 1].heading;
        let mut h = kin[k].heading;
        while h - prev > PI {
            h -= 2.0 * PI;
        }
        while h - prev < -PI {
            h += 2.0 * PI;
        }
        kin[k].heading = h;
    }
}

/// Formats `v` with 9 significant digits in plain decimal where practical.
pub fn fmt_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let s = format!("{v:.decimals$}");
        let s = if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        };
        if s == "-0" {
            "0".into()
        } else {
            s
        }
    } else {
        format!("{v:.8e}")
    }
}

/// Writes `contents` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let io = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(contents).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub const IMU_FILE: &str = "imu.csv";
pub const ORI_FILE: &str = "ori.csv";
pub const GT_FILE: &str = "gt.csv";

fn csv_rows<const N: usize>(header: &str, t: &[f64], rows: impl Iterator<Item = [f64; N]>, cols: usize) -> String {
    let mut s = String::with_capacity(t.len() * 16 * (cols + 1));
    s.push_str(header);
    s.push('\n');
    for (ti, row) in t.iter().zip(rows) {
        s.push_str(&fmt_sig9(*ti));
        for v in &row[..cols] {
            s.push(',');
            s.push_str(&fmt_sig9(*v));
        }
        s.push('\n');
    }
    s
}

/// Writes `imu.csv`, `ori.csv` and (when present) `gt.csv` into `dir`.
pub fn write_dataset(dir: &Path, seq: &ImuSequence) -> Result<Vec<PathBuf>> {
    seq.validate()?;
    fs::create_dir_all(dir).map_err(|source| DataError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let t = &seq.timestamps;
    let imu = csv_rows(
        "t,gx,gy,gz,ax,ay,az",
        t,
        seq.gyro.iter().zip(&seq.accel).map(|(g, a)| [g[0], g[1], g[2], a[0], a[1], a[2]]),
        6,
    );
    let ori = csv_rows("t,qw,qx,qy,qz", t, seq.orientation.iter().map(|q| q.to_array()), 4);
    let mut written = vec![dir.join(IMU_FILE), dir.join(ORI_FILE)];
    write_atomic(&written[0], imu.as_bytes())?;
    write_atomic(&written[1], ori.as_bytes())?;
    if let Some(gt) = &seq.gt_position {
        let header = if seq.gt_dim == 3 { "t,px,py,pz" } else { "t,px,py" };
        let body = csv_rows(header, t, gt.iter().copied(), seq.gt_dim);
        let path = dir.join(GT_FILE);
        write_atomic(&path, body.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

fn read_table(path: &Path, expected: &[&[&str]]) -> Result<(usize, Vec<f64>, Vec<Vec<f64>>)> {
    let parse_err = |reason: String| DataError::Parse {
        path: path.to_path_buf(),
        reason,
    };
    let file = fs::File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_err(e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let variant = expected
        .iter()
        .position(|cols| cols.len() == header.len() && cols.iter().zip(&header).all(|(a, b)| a == b))
        .ok_or_else(|| parse_err(format!("unexpected header {header:?}")))?;
    let mut t = Vec::new();
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(e.to_string()))?;
        let vals: std::result::Result<Vec<f64>, _> = rec.iter().map(|f| f.trim().parse::<f64>()).collect();
        let vals = vals.map_err(|e| parse_err(format!("row {}: {e}", line + 2)))?;
        if vals.len() != header.len() {
            return Err(parse_err(format!("row {} has {} fields", line + 2, vals.len())));
        }
        t.push(vals[0]);
        rows.push(vals[1..].to_vec());
    }
    Ok((variant, t, rows))
}

/// Reads a canonical dataset directory. Orientation and ground truth are
/// linearly interpolated onto the IMU timestamps when their clocks differ.
pub fn read_dataset(dir: &Path) -> Result<ImuSequence> {
    if !dir.is_dir() {
        return Err(DataError::Config(format!("dataset directory {} does not exist", dir.display())));
    }
    let (_, t, imu) = read_table(&dir.join(IMU_FILE), &[&["t", "gx", "gy", "gz", "ax", "ay", "az"]])?;
    let (_, to, ori) = read_table(&dir.join(ORI_FILE), &[&["t", "qw", "qx", "qy", "qz"]])?;
    check_increasing(&t)?;
    check_increasing(&to)?;
    let gyro: Vec<[f64; 3]> = imu.iter().map(|r| [r[0], r[1], r[2]]).collect();
    let accel: Vec<[f64; 3]> = imu.iter().map(|r| [r[3], r[4], r[5]]).collect();
    let ori: Vec<Quaternion> = ori.iter().map(|r| Quaternion::new(r[0], r[1], r[2], r[3]).normalize()).collect();
    let orientation = if to == t { ori } else { interp_quat(&to, &ori, &clamp_to(&t, &to)) };

    let gt_path = dir.join(GT_FILE);
    let (gt_position, gt_dim) = if gt_path.exists() {
        let (variant, tg, gt) = read_table(&gt_path, &[&["t", "px", "py"], &["t", "px", "py", "pz"]])?;
        check_increasing(&tg)?;
        let dim = variant + 2;
        let pts: Vec<[f64; 3]> = gt
            .iter()
            .map(|r| [r[0], r[1], if dim == 3 { r[2] } else { 0.0 }])
            .collect();
        let pts = if tg == t { pts } else { interp_vec3(&tg, &pts, &clamp_to(&t, &tg)) };
        (Some(pts), dim)
    } else {
        (None, 2)
    };
    let rate = if t.len() > 1 {
        let mut dts: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
        dts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        1.0 / dts[dts.len() / 2]
    } else {
        DEFAULT_RATE_HZ
    };
    let seq = ImuSequence {
        timestamps: t,
        gyro,
        accel,
        orientation,
        gt_position,
        gt_dim,
        sample_rate_hz: rate,
    };
    seq.validate()?;
    Ok(seq)
}

/// Sequence directories under `path`: `path` itself when it holds an
/// `imu.csv`, otherwise its immediate subdirectories that do, sorted by name.
pub fn discover_sequences(path: &Path) -> Result<Vec<PathBuf>> {
    if !path.is_dir() {
        return Err(DataError::Config(format!("data directory {} does not exist", path.display())));
    }
    if path.join(IMU_FILE).is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let entries = fs::read_dir(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(IMU_FILE).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(DataError::Config(format!("no {IMU_FILE} found in {} or its subdirectories", path.display())));
    }
    Ok(dirs)
}

/// Reads a dataset and brings it to the canonical 200 Hz grid when needed.
pub fn load_canonical(dir: &Path) -> Result<ImuSequence> {
    let seq = read_dataset(dir)?;
    let uniform = seq
        .timestamps
        .windows(2)
        .all(|w| ((w[1] - w[0]) * DEFAULT_RATE_HZ - 1.0).abs() < 1e-6);
    if uniform {
        Ok(seq)
    } else {
        resample_linear(&seq, DEFAULT_RATE_HZ)
    }
}

fn clamp_to(query: &[f64], span: &[f64]) -> Vec<f64> {
    let (lo, hi) = (span[0], span[span.len() - 1]);
    query.iter().map(|&q| q.clamp(lo, hi)).collect()
}
