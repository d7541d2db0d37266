// Trains IMUNet to regress window-mean velocity from noisy synthetic IMU data,
// checkpoints it, and verifies the reloaded model predicts identically.
//
//     cargo run --example train_velocity -- [EPOCHS]

use imunet::arch::Arch;
use imunet::data::{make_windows, synth_generate, NoisePreset, Profile, ProfileKind, Window, WINDOW};
use imunet::nav::VelocityRegressor;
use imunet::train::{load_checkpoint, save_checkpoint, train_with, Checkpoint, Predictor, TrainConfig};

pub fn run(epochs: usize) -> anyhow::Result<Vec<f64>> {
    let noise = NoisePreset::Consumer.spec();
    let mut windows: Vec<Window> = Vec::new();
    for (i, kind) in [ProfileKind::Circle, ProfileKind::Figure8, ProfileKind::RandomWalk].into_iter().enumerate() {
        let seq = synth_generate(&Profile::randomized(kind, i as u64), 60.0, 200.0, &noise, i as u64, 2)?;
        windows.extend(make_windows(&seq, WINDOW, 100, true)?);
    }
    let mut model = Arch::ImuNet.build(2, 0)?;
    let cfg = TrainConfig {
        batch_size: 32,
        epochs,
        learning_rate: 1e-3,
        report_every: 0,
        ..TrainConfig::default()
    };
    println!("{} windows, {} parameters", windows.len(), model.cost_report()?.total_params);
    let report = train_with(&mut model, &windows, &cfg, |epoch, loss, _| {
        println!("epoch {epoch:>3}  loss {loss:.5}");
    })?;

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("imunet.ckpt");
    let ckpt = Checkpoint {
        predictor: Predictor::Network(model),
        steps: report.steps,
    };
    save_checkpoint(&ckpt, &path)?;
    let loaded = load_checkpoint(&path)?;
    let before = ckpt.predictor.predict(&windows[..4])?;
    let after = loaded.predictor.predict(&windows[..4])?;
    assert_eq!(before, after);
    println!(
        "checkpoint: {} bytes, {} steps; first window predicted {:.3?} vs target {:.3?}",
        std::fs::metadata(&path)?.len(),
        loaded.steps,
        after[0],
        windows[0].target.as_ref().unwrap()
    );
    Ok(report.epoch_losses)
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    let epochs = std::env::args().nth(1).map_or(Ok(5), |s| s.parse())?;
    run(epochs)?;
    Ok(())
}
