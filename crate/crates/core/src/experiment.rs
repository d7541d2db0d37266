//! The desk-scale end-to-end experiment: train on synthetic `consumer`-noise
//! sequences, then compare the learned trajectory against classical double
//! integration on held-out sequences.

use std::time::{Duration, Instant};

use log::info;

use crate::arch::Arch;
use crate::data::{self, ImuSequence, NoisePreset, Profile, ProfileKind, Window, WINDOW};
use crate::nav::{self, Trajectory, EVAL_STRIDE};
use crate::train::{self, TrainConfig, TrainReport};

#[derive(Debug, Clone, PartialEq)]
pub struct DeskConfig {
    pub train_sequences: usize,
    pub test_sequences: usize,
    pub duration_s: f64,
    pub noise: NoisePreset,
    /// Window stride over the training sequences.
    pub stride: usize,
    pub train: TrainConfig,
}

impl Default for DeskConfig {
    fn default() -> Self {
        Self {
            train_sequences: 10,
            test_sequences: 3,
            duration_s: 300.0,
            noise: NoisePreset::Consumer,
            stride: 300,
            train: TrainConfig {
                batch_size: 32,
                epochs: 20,
                report_every: 1,
                ..TrainConfig::default()
            },
        }
    }
}

/// Profiles cycle through random walk, circle and figure-8 by `index`; the
/// shape parameters are drawn from `seed`.
pub fn desk_profile(index: u64, seed: u64) -> Profile {
    let kind = [ProfileKind::RandomWalk, ProfileKind::Circle, ProfileKind::Figure8][(index % 3) as usize];
    Profile::randomized(kind, seed)
}

/// Seed offset of the held-out sequences, far from the training seeds.
pub const TEST_SEED_BASE: u64 = 100;

/// Training sequences use seeds `0..n`; held-out ones use `100..100+k`.
pub fn desk_dataset(cfg: &DeskConfig) -> data::Result<(Vec<ImuSequence>, Vec<ImuSequence>)> {
    let noise = cfg.noise.spec();
    let make = |index: u64, seed: u64| {
        data::synth_generate(&desk_profile(index, seed), cfg.duration_s, data::DEFAULT_RATE_HZ, &noise, seed, 2)
    };
    let train = (0..cfg.train_sequences as u64).map(|i| make(i, i)).collect::<data::Result<_>>()?;
    let test = (0..cfg.test_sequences as u64)
        .map(|i| make(i, TEST_SEED_BASE + i))
        .collect::<data::Result<_>>()?;
    Ok((train, test))
}

#[derive(Debug, Clone)]
pub struct HeldOut {
    pub model_ate: f64,
    pub model_rte: f64,
    pub baseline_ate: f64,
}

#[derive(Debug, Clone)]
pub struct DeskResult {
    pub arch: Arch,
    pub windows: usize,
    pub report: TrainReport,
    pub held_out: Vec<HeldOut>,
    pub elapsed: Duration,
}

impl DeskResult {
    pub fn mean_model_ate(&self) -> f64 {
        mean(self.held_out.iter().map(|h| h.model_ate))
    }

    pub fn mean_baseline_ate(&self) -> f64 {
        mean(self.held_out.iter().map(|h| h.baseline_ate))
    }

    /// How many times smaller the learned model's mean ATE is than the baseline's.
    pub fn improvement(&self) -> f64 {
        self.mean_baseline_ate() / self.mean_model_ate()
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Double-integration ATE against the full-rate ground truth.
pub fn baseline_ate(seq: &ImuSequence) -> nav::Result<f64> {
    nav::ate(&nav::dead_reckon(seq)?, &Trajectory::ground_truth(seq)?)
}

/// Trains `arch` on `train_seqs` and scores it on `test_seqs`.
pub fn run_desk(
    arch: Arch,
    cfg: &DeskConfig,
    train_seqs: &[ImuSequence],
    test_seqs: &[ImuSequence],
) -> train::Result<DeskResult> {
    let started = Instant::now();
    let mut windows: Vec<Window> = Vec::new();
    for s in train_seqs {
        windows.extend(data::make_windows(s, WINDOW, cfg.stride, true).map_err(nav::NavError::from)?);
    }
    info!("desk: {} on {} windows", arch, windows.len());
    let mut model = arch.build(2, cfg.train.seed)?;
    let report = train::train(&mut model, &windows, &cfg.train)?;
    let mut held_out = Vec::with_capacity(test_seqs.len());
    for seq in test_seqs {
        let est = nav::predict_trajectory(&model, seq, EVAL_STRIDE)?;
        let (model_ate, model_rte, _) = nav::evaluate(&est, seq, nav::DEFAULT_RTE_INTERVAL_S)?;
        held_out.push(HeldOut {
            model_ate,
            model_rte,
            baseline_ate: baseline_ate(seq)?,
        });
    }
    Ok(DeskResult {
        arch,
        windows: windows.len(),
        report,
        held_out,
        elapsed: started.elapsed(),
    })
}
