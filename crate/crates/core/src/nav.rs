//! Trajectory reconstruction from velocities or accelerations, and ATE/RTE.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::arch::Model;
use crate::data::{self, check_increasing, fmt_sig9, DataError, ImuSequence, Window, WINDOW};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum NavError {
    #[error("validation failed at index {index}: {reason}")]
    Validation { index: usize, reason: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, NavError>;

pub const DEFAULT_RTE_INTERVAL_S: f64 = 60.0;
pub const EVAL_STRIDE: usize = 200;

fn validation(index: usize, reason: impl Into<String>) -> NavError {
    NavError::Validation {
        index,
        reason: reason.into(),
    }
}

fn check_times(t: &[f64]) -> Result<()> {
    check_increasing(t).map_err(|e| match e {
        DataError::Validation { index, reason } => NavError::Validation { index, reason },
        other => other.into(),
    })
}

/// Positions over time; components beyond `dim` are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub timestamps: Vec<f64>,
    pub positions: Vec<[f64; 3]>,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VelocitySeries {
    pub timestamps: Vec<f64>,
    pub velocities: Vec<[f64; 3]>,
    pub dim: usize,
}

fn check_dim(dim: usize) -> Result<()> {
    if (1..=3).contains(&dim) {
        Ok(())
    } else {
        Err(NavError::Config(format!("dimension must be 1, 2 or 3, got {dim}")))
    }
}

fn pad(v: &[f64], dim: usize) -> Result<[f64; 3]> {
    if v.len() != dim {
        return Err(NavError::Config(format!("expected a {dim}-vector, got {} components", v.len())));
    }
    let mut out = [0.0; 3];
    out[..dim].copy_from_slice(v);
    Ok(out)
}

impl Trajectory {
    pub fn new(timestamps: Vec<f64>, positions: Vec<[f64; 3]>, dim: usize) -> Result<Self> {
        check_dim(dim)?;
        if timestamps.len() != positions.len() {
            return Err(NavError::Config(format!(
                "{} timestamps but {} positions",
                timestamps.len(),
                positions.len()
            )));
        }
        check_times(&timestamps)?;
        if let Some(i) = positions.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(validation(i, "non-finite position"));
        }
        Ok(Self {
            timestamps,
            positions,
            dim,
        })
    }

    /// Ground truth of `seq` restricted to its first `dim` components.
    pub fn ground_truth(seq: &ImuSequence) -> Result<Self> {
        let gt = seq
            .gt_position
            .clone()
            .ok_or_else(|| NavError::Config("sequence has no ground truth".into()))?;
        Self::new(seq.timestamps.clone(), gt, seq.gt_dim)
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Linear interpolation at `query` times, which must lie inside the span.
    pub fn sample_at(&self, query: &[f64]) -> Result<Self> {
        let (lo, hi) = (self.timestamps[0], self.timestamps[self.len() - 1]);
        if let Some(i) = query.iter().position(|&t| t < lo || t > hi) {
            return Err(validation(i, format!("time {} outside [{lo}, {hi}]", query[i])));
        }
        let positions = data::interp_vec3(&self.timestamps, &self.positions, query);
        Self::new(query.to_vec(), positions, self.dim)
    }

    pub fn to_csv(&self) -> String {
        let header = ["t,px", "t,px,py", "t,px,py,pz"][self.dim - 1];
        let mut s = String::with_capacity(self.len() * 40);
        s.push_str(header);
        s.push('\n');
        for (t, p) in self.timestamps.iter().zip(&self.positions) {
            s.push_str(&fmt_sig9(*t));
            for v in &p[..self.dim] {
                s.push(',');
                s.push_str(&fmt_sig9(*v));
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        Ok(data::write_atomic(path, self.to_csv().as_bytes())?)
    }
}

/// Left-Riemann position integral: `P_{k+1} = P_k + V_k·(t_{k+1} − t_k)`.
pub fn integrate_velocity(v: &VelocitySeries, p0: &[f64]) -> Result<Trajectory> {
    check_dim(v.dim)?;
    let n = v.timestamps.len();
    if n < 2 {
        return Err(validation(0, format!("need at least 2 samples, got {n}")));
    }
    if v.velocities.len() != n {
        return Err(NavError::Config(format!("{n} timestamps but {} velocities", v.velocities.len())));
    }
    check_times(&v.timestamps)?;
    let p0 = pad(p0, v.dim)?;
    // displacement is accumulated from zero so that p0 enters exactly once
    let mut disp = [0.0; 3];
    let mut positions = Vec::with_capacity(n);
    positions.push(p0);
    for k in 0..n - 1 {
        let dt = v.timestamps[k + 1] - v.timestamps[k];
        let mut p = [0.0; 3];
        for d in 0..v.dim {
            disp[d] += v.velocities[k][d] * dt;
            p[d] = p0[d] + disp[d];
        }
        positions.push(p);
    }
    Trajectory::new(v.timestamps.clone(), positions, v.dim)
}

/// Double left-Riemann integration: velocity from acceleration, then position.
pub fn integrate_acceleration(
    timestamps: &[f64],
    accel: &[[f64; 3]],
    dim: usize,
    v0: &[f64],
    p0: &[f64],
) -> Result<Trajectory> {
    check_dim(dim)?;
    let n = timestamps.len();
    if n < 2 {
        return Err(validation(0, format!("need at least 2 samples, got {n}")));
    }
    if accel.len() != n {
        return Err(NavError::Config(format!("{n} timestamps but {} accelerations", accel.len())));
    }
    check_times(timestamps)?;
    let mut v = pad(v0, dim)?;
    let mut velocities = Vec::with_capacity(n);
    velocities.push(v);
    for k in 0..n - 1 {
        let dt = timestamps[k + 1] - timestamps[k];
        for d in 0..dim {
            v[d] += accel[k][d] * dt;
        }
        velocities.push(v);
    }
    integrate_velocity(
        &VelocitySeries {
            timestamps: timestamps.to_vec(),
            velocities,
            dim,
        },
        p0,
    )
}

/// Classical strapdown baseline: rotate the measured accel into the global
/// frame and integrate twice from the ground-truth initial state.
pub fn dead_reckon(seq: &ImuSequence) -> Result<Trajectory> {
    let gt = seq
        .gt_position
        .as_ref()
        .ok_or_else(|| NavError::Config("dead reckoning needs the ground-truth initial state".into()))?;
    let dim = seq.gt_dim;
    let accel: Vec<[f64; 3]> = seq
        .orientation
        .iter()
        .zip(&seq.accel)
        .map(|(q, a)| {
            let mut g = q.rotate(*a);
            g[dim..].iter_mut().for_each(|v| *v = 0.0);
            g
        })
        .collect();
    let dt = seq.timestamps[1] - seq.timestamps[0];
    let v0: Vec<f64> = (0..dim).map(|d| (gt[1][d] - gt[0][d]) / dt).collect();
    integrate_acceleration(&seq.timestamps, &accel, dim, &v0, &gt[0][..dim])
}

/// Anything that maps windows to mean velocities.
pub trait VelocityRegressor {
    fn output_dim(&self) -> usize;

    /// Whether `predict` reads `Window::target` (only the plug-in oracle does).
    fn needs_targets(&self) -> bool {
        false
    }

    fn predict(&self, windows: &[Window]) -> Result<Vec<Vec<f64>>>;
}

const PREDICT_BATCH: usize = 64;

impl VelocityRegressor for Model {
    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn predict(&self, windows: &[Window]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(PREDICT_BATCH) {
            let x = stack_inputs(chunk)?;
            let y = Model::predict(self, &x)?;
            out.extend(y.data().chunks(self.output_dim).map(|r| r.to_vec()));
        }
        Ok(out)
    }
}

/// Stacks window inputs into `[batch, 6, window]`.
pub fn stack_inputs(windows: &[Window]) -> Result<Tensor> {
    let first = windows
        .first()
        .ok_or_else(|| NavError::Config("no windows to stack".into()))?
        .input
        .shape()
        .to_vec();
    let mut data = Vec::with_capacity(windows.len() * first.iter().product::<usize>());
    for w in windows {
        if w.input.shape() != first.as_slice() {
            return Err(TensorError::Dimension {
                op: "stack",
                lhs: first,
                rhs: w.input.shape().to_vec(),
            }
            .into());
        }
        data.extend_from_slice(w.input.data());
    }
    let mut shape = vec![windows.len()];
    shape.extend(first);
    Ok(Tensor::new(shape, data)?)
}

/// Plug-in model returning each window's exact ground-truth mean velocity.
#[derive(Debug, Clone, Copy)]
pub struct WindowOracle {
    pub dim: usize,
}

impl VelocityRegressor for WindowOracle {
    fn output_dim(&self) -> usize {
        self.dim
    }

    fn needs_targets(&self) -> bool {
        true
    }

    fn predict(&self, windows: &[Window]) -> Result<Vec<Vec<f64>>> {
        windows
            .iter()
            .map(|w| {
                w.target
                    .clone()
                    .ok_or_else(|| NavError::Config("oracle needs windows with targets".into()))
            })
            .collect()
    }
}

/// Always predicts zero velocity.
#[derive(Debug, Clone, Copy)]
pub struct ZeroModel {
    pub dim: usize,
}

impl VelocityRegressor for ZeroModel {
    fn output_dim(&self) -> usize {
        self.dim
    }

    fn predict(&self, windows: &[Window]) -> Result<Vec<Vec<f64>>> {
        Ok(vec![vec![0.0; self.dim]; windows.len()])
    }
}

/// Slides windows at `stride`, predicts mean velocities and integrates them.
///
/// Positions are reported at `t_{k·stride}` for every window `k` plus one
/// final point, each step advancing by `v_k · (t_{(k+1)·stride} − t_{k·stride})`.
/// The start is the ground-truth position when available, else the origin.
pub fn predict_trajectory<M: VelocityRegressor + ?Sized>(
    model: &M,
    seq: &ImuSequence,
    stride: usize,
) -> Result<Trajectory> {
    let dim = model.output_dim();
    if seq.gt_position.is_some() && seq.gt_dim != dim {
        return Err(NavError::Config(format!(
            "model predicts {dim}-D velocity but the data has {}-D ground truth",
            seq.gt_dim
        )));
    }
    if seq.len() < WINDOW {
        return Err(validation(
            seq.len(),
            format!("sequence has {} samples, shorter than one window of {WINDOW}", seq.len()),
        ));
    }
    let windows = data::make_windows(seq, WINDOW, stride, model.needs_targets())?;
    let preds = model.predict(&windows)?;
    if preds.len() != windows.len() || preds.iter().any(|p| p.len() != dim) {
        return Err(NavError::Config("model returned malformed predictions".into()));
    }
    let n = seq.len();
    let times: Vec<f64> = (0..=windows.len())
        .map(|k| seq.timestamps[(k * stride).min(n - 1)])
        .collect();
    let p0 = match &seq.gt_position {
        Some(gt) => gt[0][..dim].to_vec(),
        None => vec![0.0; dim],
    };
    let mut velocities: Vec<[f64; 3]> = preds.iter().map(|p| pad(p, dim)).collect::<Result<_>>()?;
    velocities.push([0.0; 3]);
    integrate_velocity(
        &VelocitySeries {
            timestamps: times,
            velocities,
            dim,
        },
        &p0,
    )
}

/// Overlap of both spans, and `gt` points inside it with `est` interpolated there.
fn align(est: &Trajectory, gt: &Trajectory) -> Result<(Vec<[f64; 3]>, Vec<[f64; 3]>, Vec<f64>, usize)> {
    if est.dim != gt.dim {
        return Err(NavError::Config(format!("dimension mismatch: {} vs {}", est.dim, gt.dim)));
    }
    if est.is_empty() || gt.is_empty() {
        return Err(validation(0, "empty trajectory"));
    }
    let lo = est.timestamps[0].max(gt.timestamps[0]);
    let hi = est.timestamps[est.len() - 1].min(gt.timestamps[gt.len() - 1]);
    let idx: Vec<usize> = (0..gt.len())
        .filter(|&i| gt.timestamps[i] >= lo && gt.timestamps[i] <= hi)
        .collect();
    if idx.is_empty() {
        return Err(validation(0, format!("time ranges do not overlap (overlap [{lo}, {hi}])")));
    }
    let t: Vec<f64> = idx.iter().map(|&i| gt.timestamps[i]).collect();
    let g: Vec<[f64; 3]> = idx.iter().map(|&i| gt.positions[i]).collect();
    let e = if est.len() == 1 {
        vec![est.positions[0]; t.len()]
    } else {
        data::interp_vec3(&est.timestamps, &est.positions, &t)
    };
    Ok((e, g, t, gt.dim))
}

fn rmse(e: &[[f64; 3]], g: &[[f64; 3]], offset: [f64; 3], dim: usize) -> f64 {
    let ss: f64 = e
        .iter()
        .zip(g)
        .map(|(a, b)| (0..dim).map(|d| (a[d] + offset[d] - b[d]).powi(2)).sum::<f64>())
        .sum();
    (ss / e.len() as f64).sqrt()
}

/// Absolute trajectory error: RMSE after interpolating `est` onto `gt` times.
pub fn ate(est: &Trajectory, gt: &Trajectory) -> Result<f64> {
    let (e, g, _, dim) = align(est, gt)?;
    Ok(rmse(&e, &g, [0.0; 3], dim))
}

/// Relative trajectory error: mean ATE over consecutive `interval_s` spans,
/// each re-anchored at its first point. The trailing partial span joins the
/// last full one; spans shorter than one interval are scaled up to it.
pub fn rte(est: &Trajectory, gt: &Trajectory, interval_s: f64) -> Result<f64> {
    if !(interval_s > 0.0 && interval_s.is_finite()) {
        return Err(NavError::Config(format!("interval must be positive, got {interval_s}")));
    }
    let (e, g, t, dim) = align(est, gt)?;
    let anchored = |a: usize, b: usize| {
        let mut off = [0.0; 3];
        for d in 0..dim {
            off[d] = g[a][d] - e[a][d];
        }
        rmse(&e[a..b], &g[a..b], off, dim)
    };
    let duration = t[t.len() - 1] - t[0];
    if duration < interval_s {
        let scale = if duration > 0.0 { interval_s / duration } else { 1.0 };
        return Ok(anchored(0, t.len()) * scale);
    }
    let spans = (duration / interval_s).floor() as usize;
    let mut bounds = Vec::with_capacity(spans + 1);
    let mut j = 0;
    for k in 0..spans {
        let start = t[0] + k as f64 * interval_s;
        while j < t.len() && t[j] < start {
            j += 1;
        }
        bounds.push(j);
    }
    bounds.push(t.len());
    bounds.dedup();
    let errs: Vec<f64> = bounds.windows(2).map(|w| anchored(w[0], w[1])).collect();
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceMetrics {
    pub sequence: String,
    pub ate: f64,
    pub rte: f64,
}

pub fn metrics_csv(rows: &[SequenceMetrics]) -> String {
    let mut s = String::from("sequence,ate,rte\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.sequence, fmt_sig9(r.ate), fmt_sig9(r.rte));
    }
    s
}

/// Scores `est` against the ground truth sampled at the estimate's own
/// timestamps (window boundaries), so no interpolation error enters.
pub fn evaluate(est: &Trajectory, seq: &ImuSequence, interval_s: f64) -> Result<(f64, f64, Trajectory)> {
    let gt = Trajectory::ground_truth(seq)?.sample_at(&est.timestamps)?;
    Ok((ate(est, &gt)?, rte(est, &gt, interval_s)?, gt))
}
