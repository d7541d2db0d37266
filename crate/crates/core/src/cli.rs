//! Command-line entry point: `synth`, `train`, `eval` and `flops`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
//! Every command that writes files also writes one `manifest.json` beside them.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

use crate::arch::Arch;
use crate::data::{self, DataError, NoisePreset, Profile, ProfileKind};
use crate::nav::{self, NavError, SequenceMetrics, WindowOracle};
use crate::train::{self, CheckpointError, Checkpoint, Predictor, TrainConfig, TrainError};

pub const LOG_ENV: &str = "IMUNET_LOG";

#[derive(Debug, Parser)]
#[command(name = "imunet", version, about = "Neural inertial navigation on 1D CNNs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset in the canonical CSV layout.
    Synth(SynthArgs),
    /// Train a velocity regressor and write a checkpoint.
    Train(TrainArgs),
    /// Predict trajectories and score them with ATE/RTE.
    Eval(EvalArgs),
    /// Print parameter and FLOP counts.
    Flops(FlopsArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileArg {
    Line,
    Circle,
    Figure8,
    RandomWalk,
}

impl From<ProfileArg> for ProfileKind {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Line => ProfileKind::Line,
            ProfileArg::Circle => ProfileKind::Circle,
            ProfileArg::Figure8 => ProfileKind::Figure8,
            ProfileArg::RandomWalk => ProfileKind::RandomWalk,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseArg {
    None,
    Consumer,
    Harsh,
}

impl From<NoiseArg> for NoisePreset {
    fn from(n: NoiseArg) -> Self {
        match n {
            NoiseArg::None => NoisePreset::None,
            NoiseArg::Consumer => NoisePreset::Consumer,
            NoiseArg::Harsh => NoisePreset::Harsh,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub profile: ProfileArg,
    /// Seconds of motion.
    #[arg(long, default_value_t = 300.0)]
    pub duration: f64,
    #[arg(long, default_value_t = 200.0)]
    pub rate: f64,
    #[arg(long, value_enum, default_value = "none")]
    pub noise_preset: NoiseArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Ground-truth dimension (3 adds a vertical oscillation).
    #[arg(long, default_value_t = 2)]
    pub dims: usize,
    /// Draw profile parameters (radius, speed, heading…) from the seed.
    #[arg(long)]
    pub randomize: bool,
    /// Overrides the preset's gyro white-noise std (rad/s).
    #[arg(long)]
    pub gyro_noise: Option<f64>,
    /// Overrides the preset's accel white-noise std (m/s²).
    #[arg(long)]
    pub accel_noise: Option<f64>,
    /// Overrides the preset's constant gyro bias, `x,y,z`.
    #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
    pub gyro_bias: Option<[f64; 3]>,
    /// Overrides the preset's constant accel bias, `x,y,z`.
    #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
    pub accel_bias: Option<[f64; 3]>,
    /// Overrides the preset's per-sample bias random-walk std.
    #[arg(long)]
    pub bias_walk: Option<f64>,
    #[arg(long)]
    pub noise_seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Write into a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

fn parse_vec3(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected x,y,z, got {s:?}"));
    }
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.trim().parse().map_err(|e| format!("{p:?}: {e}"))?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum ArchArg {
    Imunet,
    Resnet18,
    Mobilenet,
    /// Plug-in model returning ground-truth window velocities.
    Oracle,
}

impl ArchArg {
    fn arch(self) -> Option<Arch> {
        match self {
            ArchArg::Imunet => Some(Arch::ImuNet),
            ArchArg::Resnet18 => Some(Arch::ResNet18),
            ArchArg::Mobilenet => Some(Arch::MobileNet),
            ArchArg::Oracle => None,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub arch: ArchArg,
    /// Dataset directories (each a sequence or a directory of sequences).
    #[arg(long, value_delimiter = ',', required = true)]
    pub data: Vec<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub m: usize,
    #[arg(long, default_value_t = 300)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 128)]
    pub batch: usize,
    #[arg(long, default_value_t = data::TRAIN_STRIDE)]
    pub stride: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep only the first N windows (in sequence order).
    #[arg(long)]
    pub max_windows: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    pub data: Vec<PathBuf>,
    #[arg(long, default_value_t = nav::EVAL_STRIDE)]
    pub stride: usize,
    #[arg(long, default_value_t = nav::DEFAULT_RTE_INTERVAL_S)]
    pub rte_interval: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum FlopsArch {
    All,
    Imunet,
    Resnet18,
    Mobilenet,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Table,
    Csv,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FlopsArgs {
    #[arg(long, value_enum, default_value = "all")]
    pub arch: FlopsArch,
    #[arg(long, default_value_t = 2)]
    pub m: usize,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
    /// Also write `<arch>_cost.csv` files and a manifest here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Failure classes mapped onto exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<NavError> for CliError {
    fn from(e: NavError) -> Self {
        match e {
            NavError::Config(_) => CliError::Usage(e.to_string()),
            NavError::Data(d) => d.into(),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            TrainError::Nav(n) => n.into(),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<crate::TensorError> for CliError {
    fn from(e: crate::TensorError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Provenance record written beside every command's outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest<'a, F: Serialize> {
    pub command: &'a str,
    pub flags: &'a F,
    pub seed: Option<u64>,
    pub artifacts: Vec<String>,
    pub duration_s: f64,
    pub version: &'a str,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn write_manifest<F: Serialize>(
    path: &Path,
    command: &str,
    flags: &F,
    seed: Option<u64>,
    artifacts: &[PathBuf],
    started: Instant,
) -> CliResult<PathBuf> {
    let manifest = RunManifest {
        command,
        flags,
        seed,
        artifacts: artifacts.iter().map(|p| p.display().to_string()).collect(),
        duration_s: started.elapsed().as_secs_f64(),
        version: env!("CARGO_PKG_VERSION"),
    };
    let mut json = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
    json.push('\n');
    data::write_atomic(path, json.as_bytes())?;
    Ok(path.to_path_buf())
}

fn prepare_out_dir(dir: &Path, force: bool) -> CliResult<()> {
    if dir.exists() {
        if !dir.is_dir() {
            return Err(CliError::Usage(format!("{} exists and is not a directory", dir.display())));
        }
        let non_empty = fs::read_dir(dir)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?
            .next()
            .is_some();
        if non_empty && !force {
            return Err(CliError::Usage(format!(
                "output directory {} is not empty (use --force to overwrite)",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))
}

pub fn cmd_synth(args: &SynthArgs) -> CliResult<Vec<PathBuf>> {
    let started = Instant::now();
    let kind: ProfileKind = args.profile.into();
    let profile = if args.randomize {
        Profile::randomized(kind, args.seed)
    } else {
        Profile::default_for(kind, args.seed)
    };
    let mut noise = NoisePreset::from(args.noise_preset).spec();
    if let Some(v) = args.gyro_noise {
        noise.gyro_noise_std = v;
    }
    if let Some(v) = args.accel_noise {
        noise.accel_noise_std = v;
    }
    if let Some(v) = args.gyro_bias {
        noise.gyro_bias = v;
    }
    if let Some(v) = args.accel_bias {
        noise.accel_bias = v;
    }
    if let Some(v) = args.bias_walk {
        noise.bias_random_walk_std = v;
    }
    if let Some(v) = args.noise_seed {
        noise.rng_seed = v;
    }
    let seq = data::synth_generate(&profile, args.duration, args.rate, &noise, args.seed, args.dims)?;
    prepare_out_dir(&args.out, args.force)?;
    let mut artifacts = data::write_dataset(&args.out, &seq)?;
    info!("wrote {} samples to {}", seq.len(), args.out.display());
    let manifest = write_manifest(
        &args.out.join(MANIFEST_FILE),
        "synth",
        args,
        Some(args.seed),
        &artifacts,
        started,
    )?;
    artifacts.push(manifest);
    Ok(artifacts)
}

fn load_sequences(dirs: &[PathBuf]) -> CliResult<Vec<(String, data::ImuSequence)>> {
    let mut out = Vec::new();
    for d in dirs {
        for seq_dir in data::discover_sequences(d)? {
            let name = seq_dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "sequence".into());
            let seq = data::load_canonical(&seq_dir)?;
            out.push((name, seq));
        }
    }
    Ok(out)
}

/// Paths written next to a checkpoint: loss history and manifest.
pub fn checkpoint_siblings(ckpt: &Path) -> (PathBuf, PathBuf) {
    let stem = ckpt.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into());
    let dir = ckpt.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    (dir.join(format!("{stem}.loss.csv")), dir.join(format!("{stem}.manifest.json")))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub artifacts: Vec<PathBuf>,
    pub report: train::TrainReport,
    /// Inference-mode MSE of the final model on its training windows.
    pub final_fit_mse: f64,
    pub windows: usize,
}

pub fn cmd_train(args: &TrainArgs) -> CliResult<TrainOutcome> {
    let started = Instant::now();
    if !(args.m == 2 || args.m == 3) {
        return Err(CliError::Usage(format!("--m must be 2 or 3, got {}", args.m)));
    }
    if args.out.exists() && !args.force {
        return Err(CliError::Usage(format!(
            "{} already exists (use --force to overwrite)",
            args.out.display()
        )));
    }
    let seqs = load_sequences(&args.data)?;
    for (name, s) in &seqs {
        if s.gt_position.is_none() {
            return Err(CliError::Usage(format!("sequence {name} has no gt.csv")));
        }
        if s.gt_dim != args.m {
            return Err(CliError::Usage(format!(
                "--m {} does not match the {}-D ground truth of sequence {name}",
                args.m, s.gt_dim
            )));
        }
    }
    let mut windows = Vec::new();
    for (_, s) in &seqs {
        windows.extend(data::make_windows(s, data::WINDOW, args.stride, true)?);
    }
    if let Some(n) = args.max_windows {
        windows.truncate(n);
    }
    if windows.is_empty() {
        return Err(CliError::Usage("no training windows".into()));
    }
    let config = TrainConfig {
        learning_rate: args.lr,
        batch_size: args.batch,
        epochs: args.epochs,
        seed: args.seed,
        ..TrainConfig::default()
    };
    config.validate()?;
    info!("{} training windows from {} sequences", windows.len(), seqs.len());

    let (predictor, report) = match args.arch.arch() {
        Some(arch) => {
            let mut model = arch.build(args.m, args.seed)?;
            let report = train::train(&mut model, &windows, &config)?;
            (Predictor::Network(model), report)
        }
        None => (
            Predictor::Oracle(WindowOracle { dim: args.m }),
            train::TrainReport {
                epoch_losses: Vec::new(),
                steps: 0,
            },
        ),
    };
    let preds = nav::VelocityRegressor::predict(&predictor, &windows)?;
    let mut se = 0.0;
    for (p, w) in preds.iter().zip(&windows) {
        for (a, b) in p.iter().zip(w.target.as_deref().unwrap_or(&[])) {
            se += (a - b).powi(2);
        }
    }
    let final_fit_mse = se / (windows.len() * args.m) as f64;
    if let Some(l) = report.epoch_losses.last() {
        info!("final epoch loss {l:.6e}");
    }
    info!("final fit MSE {final_fit_mse:.6e}");

    let ckpt = Checkpoint {
        predictor,
        steps: report.steps,
    };
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::Runtime(format!("{}: {e}", parent.display())))?;
    }
    train::save_checkpoint(&ckpt, &args.out)?;
    let (loss_path, manifest_path) = checkpoint_siblings(&args.out);
    data::write_atomic(&loss_path, report.to_csv().as_bytes())?;
    let mut artifacts = vec![args.out.clone(), loss_path];
    let manifest = write_manifest(&manifest_path, "train", args, Some(args.seed), &artifacts, started)?;
    artifacts.push(manifest);
    Ok(TrainOutcome {
        artifacts,
        report,
        final_fit_mse,
        windows: windows.len(),
    })
}

pub fn cmd_eval(args: &EvalArgs) -> CliResult<Vec<SequenceMetrics>> {
    let started = Instant::now();
    if !args.ckpt.is_file() {
        return Err(CliError::Usage(format!("checkpoint {} does not exist", args.ckpt.display())));
    }
    let ckpt = train::load_checkpoint(&args.ckpt)?;
    let seqs = load_sequences(&args.data)?;
    prepare_out_dir(&args.out, args.force)?;
    let m = nav::VelocityRegressor::output_dim(&ckpt.predictor);
    let mut rows = Vec::with_capacity(seqs.len());
    let mut artifacts = Vec::new();
    for (name, seq) in &seqs {
        if seq.gt_position.is_some() && seq.gt_dim != m {
            return Err(CliError::Usage(format!(
                "checkpoint predicts {m}-D velocity but sequence {name} has {}-D ground truth",
                seq.gt_dim
            )));
        }
        let est = nav::predict_trajectory(&ckpt.predictor, seq, args.stride)?;
        let dir = args.out.join(name);
        fs::create_dir_all(&dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
        let traj_path = dir.join("traj.csv");
        est.write_csv(&traj_path)?;
        artifacts.push(traj_path);
        if seq.gt_position.is_some() {
            let (ate, rte, _) = nav::evaluate(&est, seq, args.rte_interval)?;
            let gt_path = dir.join("gt.csv");
            nav::Trajectory::ground_truth(seq)?.write_csv(&gt_path)?;
            artifacts.push(gt_path);
            info!("{name}: ATE {ate:.4} m, RTE {rte:.4} m");
            rows.push(SequenceMetrics {
                sequence: name.clone(),
                ate,
                rte,
            });
        } else {
            rows.push(SequenceMetrics {
                sequence: name.clone(),
                ate: f64::NAN,
                rte: f64::NAN,
            });
        }
    }
    let metrics = args.out.join("metrics.csv");
    data::write_atomic(&metrics, nav::metrics_csv(&rows).as_bytes())?;
    artifacts.push(metrics);
    write_manifest(&args.out.join(MANIFEST_FILE), "eval", args, None, &artifacts, started)?;
    Ok(rows)
}

/// Renders the requested cost reports plus, for `all`, the parameter ratio.
pub fn cmd_flops(args: &FlopsArgs) -> CliResult<String> {
    let started = Instant::now();
    let archs: Vec<Arch> = match args.arch {
        FlopsArch::All => Arch::ALL.to_vec(),
        FlopsArch::Imunet => vec![Arch::ImuNet],
        FlopsArch::Resnet18 => vec![Arch::ResNet18],
        FlopsArch::Mobilenet => vec![Arch::MobileNet],
    };
    if !(args.m == 2 || args.m == 3) {
        return Err(CliError::Usage(format!("--m must be 2 or 3, got {}", args.m)));
    }
    let mut reports = Vec::new();
    for a in archs {
        reports.push(a.build(args.m, 0)?.cost_report()?);
    }
    let mut out = String::new();
    for r in &reports {
        match args.format {
            Format::Table => out.push_str(&r.to_table()),
            Format::Csv => {
                out.push_str(&format!("# {}\n", r.model));
                out.push_str(&r.to_csv());
            }
        }
        out.push('\n');
    }
    let params = |name: &str| reports.iter().find(|r| r.model == name).map(|r| r.total_params);
    if let (Some(a), Some(b)) = (params("imunet"), params("resnet18")) {
        out.push_str(&format!("imunet/resnet18 parameter ratio: {:.4}\n", a as f64 / b as f64));
    }
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
        let mut artifacts = Vec::new();
        for r in &reports {
            let p = dir.join(format!("{}_cost.csv", r.model));
            data::write_atomic(&p, r.to_csv().as_bytes())?;
            artifacts.push(p);
        }
        write_manifest(&dir.join(MANIFEST_FILE), "flops", args, None, &artifacts, started)?;
    }
    Ok(out)
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Synth(a) => {
            for p in cmd_synth(a)? {
                println!("{}", p.display());
            }
        }
        Command::Train(a) => {
            let o = cmd_train(a)?;
            println!("windows: {}", o.windows);
            println!("steps: {}", o.report.steps);
            if let Some(l) = o.report.epoch_losses.last() {
                println!("final epoch loss: {l:.6e}");
            }
            println!("final fit mse: {:.6e}", o.final_fit_mse);
            for p in &o.artifacts {
                println!("{}", p.display());
            }
        }
        Command::Eval(a) => {
            print!("{}", nav::metrics_csv(&cmd_eval(a)?));
        }
        Command::Flops(a) => print!("{}", cmd_flops(a)?),
    }
    Ok(())
}

/// Usage line of the subcommand named in `args`, or of the whole program.
fn usage_for(args: &[OsString]) -> String {
    let mut cmd = Cli::command();
    cmd.build();
    let sub = args.get(1).and_then(|a| a.to_str()).map(str::to_owned);
    match sub.and_then(|name| cmd.find_subcommand_mut(&name).cloned()) {
        Some(mut s) => s.render_usage().to_string(),
        None => cmd.render_usage().to_string(),
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Errors go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "info")).try_init();
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                return 0;
            }
            if !e.to_string().contains("Usage:") {
                eprintln!("\n{}", usage_for(&args));
            }
            return 2;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
