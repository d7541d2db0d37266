//! MSE regression training with Adam, and the binary checkpoint format.
//!
//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! magic "IMUNETCK" | version u32 | name | m u32 | steps u64
//! n_params u32 | per param: name, ndim u32, dims u64…, offset u64
//! n_norms u32  | per norm: name, channels u64
//! blob_len u64 | f64 × blob_len        (parameters, directory order)
//! f64 × Σ 2·channels                   (running mean then variance per norm)
//! ```
//!
//! Strings are a `u32` byte length followed by UTF-8.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::arch::{Arch, Model};
use crate::autograd::Graph;
use crate::data::{self, DataError, Window};
use crate::layers::{ForwardCtx, Module};
use crate::nav::{self, NavError, VelocityRegressor, WindowOracle};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Nav(#[from] NavError),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("corrupt checkpoint header: {0}")]
    CorruptHeader(String),
    #[error("checkpoint truncated: needed {needed} bytes at offset {offset}, file has {len}")]
    Truncated { offset: usize, needed: usize, len: usize },
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint does not match architecture: {0}")]
    ArchMismatch(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Log the epoch loss every this many epochs (0 disables).
    pub report_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 128,
            epochs: 300,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            report_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // lr = 0 is allowed: it freezes the parameters, which is a useful control
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!("learning rate must be ≥ 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(TrainError::Config("Adam betas must be in [0, 1) and epsilon > 0".into()));
        }
        Ok(())
    }
}

/// Mean squared error over all `batch · m` entries.
pub fn mse_loss<'g>(pred: crate::Var<'g>, target: &Tensor) -> Result<crate::Var<'g>> {
    Ok(pred.mse(target)?)
}

/// First and second moment estimates, one per parameter tensor.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(sizes: impl IntoIterator<Item = usize>) -> Self {
        let (m, v) = sizes.into_iter().map(|n| (vec![0.0; n], vec![0.0; n])).unzip();
        Self { m, v, step: 0 }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TrainError::Config(format!(
            "{} parameters, {} gradients, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        if p.shape() != g.shape() || state.m[i].len() != p.len() {
            return Err(TensorError::Dimension {
                op: "adam_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            }
            .into());
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (((w, &gj), mj), vj) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mj = cfg.beta1 * *mj + (1.0 - cfg.beta1) * gj;
            *vj = cfg.beta2 * *vj + (1.0 - cfg.beta2) * gj * gj;
            let mhat = *mj / bc1;
            let vhat = *vj / bc2;
            *w -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

/// Holds optimizer state and the dropout stream across steps.
pub struct Trainer {
    pub config: TrainConfig,
    pub adam: AdamState,
    dropout_rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new<M: Module + ?Sized>(model: &M, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(model.params().iter().map(|p| p.len()));
        let dropout_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0xD50F));
        Ok(Self {
            config,
            adam,
            dropout_rng,
        })
    }

    pub fn steps(&self) -> u64 {
        self.adam.step
    }

    /// Forward, backward and one Adam update on `batch`; returns the batch loss.
    pub fn step<M: Module + ?Sized>(&mut self, model: &mut M, batch: &[&Window]) -> Result<f64> {
        let m = batch.first().and_then(|w| w.target.as_ref()).map_or(0, |t| t.len());
        let owned: Vec<Window> = batch.iter().map(|w| (*w).clone()).collect();
        let x = nav::stack_inputs(&owned)?;
        let mut target = Vec::with_capacity(batch.len() * m);
        for w in batch {
            match &w.target {
                Some(t) if t.len() == m && m > 0 => target.extend_from_slice(t),
                _ => {
                    return Err(TrainError::Config(format!(
                        "every training window needs a {m}-dimensional target"
                    )))
                }
            }
        }
        let target = Tensor::new(vec![batch.len(), m], target)?;

        let g = Graph::new();
        let rng = std::mem::replace(&mut self.dropout_rng, ChaCha8Rng::seed_from_u64(0));
        let mut ctx = ForwardCtx::training(&g, rng);
        let xv = g.constant(x);
        let pred = model.forward(&mut ctx, xv)?;
        let loss = mse_loss(pred, &target)?;
        let value = loss.value().item();
        if !value.is_finite() {
            self.dropout_rng = ctx.into_rng();
            return Err(TrainError::NonFinite { epoch: 0, batch: 0 });
        }
        g.backward(loss)?;
        let names: Vec<String> = model.params().iter().map(|p| p.name.clone()).collect();
        let grads: Vec<Tensor> = model
            .params()
            .iter()
            .zip(&names)
            .map(|(p, n)| ctx.grad(n).unwrap_or_else(|| Tensor::zeros(p.value.shape())))
            .collect();
        let stats = ctx.take_stats();
        self.dropout_rng = ctx.into_rng();
        drop(g);
        {
            let mut params = model.params_mut();
            let mut tensors: Vec<&mut Tensor> = params.iter_mut().map(|p| p.make_mut()).collect();
            adam_step(&mut tensors, &grads, &mut self.adam, &self.config)?;
        }
        model.apply_stats(&stats);
        Ok(value)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Sample-weighted mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
}

impl TrainReport {
    /// `epoch,loss` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss\n");
        for (i, l) in self.epoch_losses.iter().enumerate() {
            s.push_str(&format!("{},{}\n", i + 1, data::fmt_sig9(*l)));
        }
        s
    }
}

fn cmp_windows(a: &Window, b: &Window) -> Ordering {
    let key = |w: &Window| (w.t_start, w.t_end);
    let (ka, kb) = (key(a), key(b));
    ka.0.total_cmp(&kb.0)
        .then(ka.1.total_cmp(&kb.1))
        .then_with(|| {
            let (ta, tb) = (a.target.as_deref().unwrap_or(&[]), b.target.as_deref().unwrap_or(&[]));
            cmp_slices(ta, tb)
        })
        .then_with(|| cmp_slices(a.input.data(), b.input.data()))
}

fn cmp_slices(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or_else(|| a.len().cmp(&b.len()))
}

/// Trains `model` on `windows` for `config.epochs` epochs of seeded,
/// shuffled mini-batches. Windows are put in a canonical order before
/// shuffling, so the result does not depend on the order they are passed in.
pub fn train<M: Module + ?Sized>(model: &mut M, windows: &[Window], config: &TrainConfig) -> Result<TrainReport> {
    train_with(model, windows, config, |_, _, _| {})
}

/// [`train`] with a callback receiving `(epoch, mean loss, model)` after each epoch.
pub fn train_with<M: Module + ?Sized>(
    model: &mut M,
    windows: &[Window],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64, &M),
) -> Result<TrainReport> {
    if windows.is_empty() {
        return Err(TrainError::Config("no training windows".into()));
    }
    let mut trainer = Trainer::new(model, config.clone())?;
    let mut order: Vec<&Window> = windows.iter().collect();
    order.sort_by(|a, b| cmp_windows(a, b));
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let loss = trainer.step(model, batch).map_err(|e| match e {
                TrainError::NonFinite { .. } => TrainError::NonFinite { epoch, batch: b + 1 },
                other => other,
            })?;
            debug!("epoch {epoch} batch {} loss {loss:.6e}", b + 1);
            total += loss * batch.len() as f64;
        }
        let mean = total / order.len() as f64;
        if config.report_every > 0 && epoch % config.report_every == 0 {
            info!("epoch {epoch}/{} loss {mean:.6e}", config.epochs);
        }
        on_epoch(epoch, mean, model);
        epoch_losses.push(mean);
    }
    Ok(TrainReport {
        epoch_losses,
        steps: trainer.steps(),
    })
}

/// A checkpointed velocity model: a trained network or the plug-in oracle.
#[derive(Debug, Clone)]
pub enum Predictor {
    Network(Model),
    Oracle(WindowOracle),
}

pub const ORACLE_NAME: &str = "oracle";

impl Predictor {
    pub fn name(&self) -> &'static str {
        match self {
            Predictor::Network(m) => m.name(),
            Predictor::Oracle(_) => ORACLE_NAME,
        }
    }

    pub fn scalar_count(&self) -> usize {
        match self {
            Predictor::Network(m) => m.param_count(),
            Predictor::Oracle(_) => 0,
        }
    }
}

impl VelocityRegressor for Predictor {
    fn output_dim(&self) -> usize {
        match self {
            Predictor::Network(m) => m.output_dim,
            Predictor::Oracle(o) => o.dim,
        }
    }

    fn needs_targets(&self) -> bool {
        matches!(self, Predictor::Oracle(_))
    }

    fn predict(&self, windows: &[Window]) -> nav::Result<Vec<Vec<f64>>> {
        match self {
            Predictor::Network(m) => VelocityRegressor::predict(m, windows),
            Predictor::Oracle(o) => o.predict(windows),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub predictor: Predictor,
    pub steps: u64,
}

const MAGIC: &[u8; 8] = b"IMUNETCK";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

/// Serializes a checkpoint; the bytes depend only on its contents.
pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    put_str(&mut buf, ckpt.predictor.name());
    let m = ckpt.predictor.output_dim() as u32;
    buf.extend_from_slice(&m.to_le_bytes());
    buf.extend_from_slice(&ckpt.steps.to_le_bytes());
    let (params, norms) = match &ckpt.predictor {
        Predictor::Network(model) => (model.params(), model.norms()),
        Predictor::Oracle(_) => (Vec::new(), Vec::new()),
    };
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for p in &params {
        put_str(&mut buf, &p.name);
        buf.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
        for &d in p.value.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        buf.extend_from_slice(&offset.to_le_bytes());
        offset += p.len() as u64;
    }
    buf.extend_from_slice(&(norms.len() as u32).to_le_bytes());
    for bn in &norms {
        put_str(&mut buf, &bn.name);
        buf.extend_from_slice(&(bn.running_mean.len() as u64).to_le_bytes());
    }
    buf.extend_from_slice(&offset.to_le_bytes());
    for p in &params {
        for v in p.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    for bn in &norms {
        for v in bn.running_mean.iter().chain(&bn.running_var) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> std::result::Result<(), CheckpointError> {
    data::write_atomic(path, &encode_checkpoint(ckpt))?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], CheckpointError> {
        if self.buf.len() - self.pos < n {
            return Err(CheckpointError::Truncated {
                offset: self.pos,
                needed: n,
                len: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> std::result::Result<Vec<f64>, CheckpointError> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| corrupt("blob size overflows"))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    /// A count of `unit`-byte items that must still fit in the file; a file
    /// shorter than the header promises is truncated.
    fn count(&mut self, what: &str, unit: usize) -> std::result::Result<usize, CheckpointError> {
        let offset = self.pos;
        let n = usize::try_from(self.u64()?).map_err(|_| corrupt(format!("{what} count overflows")))?;
        let needed = n.checked_mul(unit).ok_or_else(|| corrupt(format!("{what} count {n} overflows")))?;
        if needed > self.buf.len() - self.pos {
            return Err(CheckpointError::Truncated {
                offset,
                needed,
                len: self.buf.len(),
            });
        }
        Ok(n)
    }

    fn string(&mut self) -> std::result::Result<String, CheckpointError> {
        let n = self.u32()? as usize;
        if n > 4096 {
            return Err(corrupt(format!("string length {n} is implausible")));
        }
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| corrupt("string is not UTF-8"))
    }
}

fn corrupt(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::CorruptHeader(msg.into())
}

pub fn decode_checkpoint(buf: &[u8]) -> std::result::Result<Checkpoint, CheckpointError> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(MAGIC.len()).map_err(|_| corrupt("file too short for magic"))? != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let name = r.string()?;
    let m = r.u32()? as usize;
    let steps = r.u64()?;
    if !(m == 2 || m == 3) {
        return Err(corrupt(format!("output dimension {m}")));
    }
    let n_params = r.u32()? as usize;
    let mut dir = Vec::with_capacity(n_params.min(4096));
    for _ in 0..n_params {
        let pname = r.string()?;
        let ndim = r.u32()? as usize;
        if ndim == 0 || ndim > 8 {
            return Err(corrupt(format!("parameter {pname} has {ndim} dimensions")));
        }
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
        let offset = r.u64()? as usize;
        dir.push((pname, shape, offset));
    }
    let n_norms = r.u32()? as usize;
    let mut norm_dir = Vec::with_capacity(n_norms.min(4096));
    for _ in 0..n_norms {
        let bname = r.string()?;
        let channels = r.count("channel", 16)?;
        norm_dir.push((bname, channels));
    }
    let blob_len = r.count("parameter scalar", 8)?;

    if name == ORACLE_NAME {
        if n_params != 0 || n_norms != 0 || blob_len != 0 {
            return Err(corrupt("oracle checkpoint carries parameters"));
        }
        return Ok(Checkpoint {
            predictor: Predictor::Oracle(WindowOracle { dim: m }),
            steps,
        });
    }
    let arch: Arch = name
        .parse()
        .map_err(|_| CheckpointError::ArchMismatch(format!("unknown architecture {name:?}")))?;
    let mut model = arch
        .build(m, 0)
        .map_err(|e| CheckpointError::ArchMismatch(e.to_string()))?;

    let expected: Vec<(String, Vec<usize>)> = model
        .params()
        .iter()
        .map(|p| (p.name.clone(), p.value.shape().to_vec()))
        .collect();
    if expected.len() != dir.len() {
        return Err(CheckpointError::ArchMismatch(format!(
            "{name} has {} parameter tensors, checkpoint lists {}",
            expected.len(),
            dir.len()
        )));
    }
    let mut offset = 0;
    for ((en, es), (dn, ds, doff)) in expected.iter().zip(&dir) {
        if en != dn || es != ds {
            return Err(CheckpointError::ArchMismatch(format!("expected {en} {es:?}, found {dn} {ds:?}")));
        }
        if *doff != offset {
            return Err(corrupt(format!("parameter {dn} at offset {doff}, expected {offset}")));
        }
        offset += es.iter().product::<usize>();
    }
    if blob_len != offset {
        return Err(corrupt(format!("blob holds {blob_len} scalars, directory needs {offset}")));
    }
    let norm_expected: Vec<(String, usize)> = model
        .norms()
        .iter()
        .map(|b| (b.name.clone(), b.running_mean.len()))
        .collect();
    if norm_expected != norm_dir {
        return Err(CheckpointError::ArchMismatch("batch-norm buffers differ".into()));
    }

    let blob = r.f64s(blob_len)?;
    let mut at = 0;
    for p in model.params_mut() {
        let n = p.len();
        p.make_mut().data_mut().copy_from_slice(&blob[at..at + n]);
        at += n;
    }
    for bn in model.norms_mut() {
        let c = bn.running_mean.len();
        let vals = r.f64s(2 * c)?;
        bn.running_mean.copy_from_slice(&vals[..c]);
        bn.running_var.copy_from_slice(&vals[c..]);
    }
    if r.pos != buf.len() {
        return Err(corrupt(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(Checkpoint {
        predictor: Predictor::Network(model),
        steps,
    })
}

pub fn load_checkpoint(path: &Path) -> std::result::Result<Checkpoint, CheckpointError> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Param;

    #[test]
    fn mse_values() {
        let g = Graph::new();
        let p = g.constant(Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap());
        let l = mse_loss(p, &Tensor::zeros(&[1, 2])).unwrap();
        assert_eq!(l.value().item(), 1.0);
        let l = mse_loss(p, &Tensor::full(&[1, 2], 1.0)).unwrap();
        assert_eq!(l.value().item(), 0.0);
        assert!(mse_loss(p, &Tensor::zeros(&[2, 1])).is_err());
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut p = Tensor::new(vec![3], vec![1.0, -2.0, 3.0]).unwrap();
        let before = p.clone();
        let mut st = AdamState::new([3]);
        adam_step(&mut [&mut p], &[Tensor::zeros(&[3])], &mut st, &TrainConfig::default()).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adam_first_step() {
        let mut p = Tensor::scalar(0.0);
        let mut st = AdamState::new([1]);
        let cfg = TrainConfig::default();
        adam_step(&mut [&mut p], &[Tensor::scalar(0.5)], &mut st, &cfg).unwrap();
        // m̂ = 0.5, v̂ = 0.25 → Δ = −lr · 0.5 / (0.5 + ε)
        let expect = -1e-4 * 0.5 / (0.5 + 1e-8);
        assert!((p.item() - expect).abs() < 1e-18);
        assert!((p.item() + 1e-4).abs() < 1e-7);
    }

    #[test]
    fn adam_shape_mismatch() {
        let mut p = Tensor::zeros(&[2]);
        let mut st = AdamState::new([2]);
        assert!(adam_step(&mut [&mut p], &[Tensor::zeros(&[3])], &mut st, &TrainConfig::default()).is_err());
    }

    #[test]
    fn config_validation() {
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            learning_rate: -1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn oracle_roundtrip() {
        let ck = Checkpoint {
            predictor: Predictor::Oracle(WindowOracle { dim: 3 }),
            steps: 0,
        };
        let back = decode_checkpoint(&encode_checkpoint(&ck)).unwrap();
        assert!(matches!(back.predictor, Predictor::Oracle(WindowOracle { dim: 3 })));
    }

    #[test]
    fn header_errors_are_distinct() {
        let ck = Checkpoint {
            predictor: Predictor::Oracle(WindowOracle { dim: 2 }),
            steps: 0,
        };
        let bytes = encode_checkpoint(&ck);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(CheckpointError::CorruptHeader(_))));
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(matches!(
            decode_checkpoint(&bad),
            Err(CheckpointError::VersionMismatch { found: 9, .. })
        ));
        assert!(matches!(
            decode_checkpoint(&bytes[..bytes.len() - 3]),
            Err(CheckpointError::Truncated { .. })
        ));
    }

    #[test]
    fn param_directory_order_is_stable() {
        let m = Arch::ImuNet.build(2, 1).unwrap();
        let names: Vec<&Param> = m.params();
        assert_eq!(names[0].name, "stem.conv.weight");
    }
}
