// The end-to-end desk experiment: train IMUNet and ResNet18-1D on ten 5-minute
// consumer-grade synthetic sequences, then compare their ATE on three held-out
// sequences with classical double integration. Takes about 15 minutes on one
// core; `--quick` shrinks everything to a smoke run.
//
//     cargo run --release --example desk_experiment -- [--quick]

use imunet::arch::Arch;
use imunet::experiment::{desk_dataset, run_desk, DeskConfig, DeskResult};

pub fn quick_config() -> DeskConfig {
    let mut cfg = DeskConfig {
        train_sequences: 3,
        test_sequences: 1,
        duration_s: 30.0,
        stride: 200,
        ..DeskConfig::default()
    };
    cfg.train.epochs = 1;
    cfg.train.report_every = 0;
    cfg
}

pub fn run(cfg: &DeskConfig) -> anyhow::Result<Vec<DeskResult>> {
    let (train, test) = desk_dataset(cfg)?;
    let mut results = Vec::new();
    for arch in [Arch::ImuNet, Arch::ResNet18] {
        let r = run_desk(arch, cfg, &train, &test)?;
        println!("{arch}: {} windows, {} steps, {:.0} s", r.windows, r.report.steps, r.elapsed.as_secs_f64());
        for (i, h) in r.held_out.iter().enumerate() {
            println!(
                "  held-out {i}: ATE {:8.2} m  RTE {:8.2} m  double integration ATE {:9.2} m",
                h.model_ate, h.model_rte, h.baseline_ate
            );
        }
        println!(
            "  mean ATE {:.2} m vs {:.2} m: {:.1}x better",
            r.mean_model_ate(),
            r.mean_baseline_ate(),
            r.improvement()
        );
        results.push(r);
    }
    Ok(results)
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("IMUNET_LOG", "info")).init();
    let quick = std::env::args().any(|a| a == "--quick");
    run(&if quick { quick_config() } else { DeskConfig::default() })?;
    Ok(())
}
