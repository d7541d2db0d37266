// Integrates per-window velocities into a trajectory and scores it with ATE
// and RTE: the plug-in oracle reproduces ground truth, a zero-velocity model
// stays put, and classical double integration drifts.
//
//     cargo run --example evaluate_trajectory -- [OUT_DIR]

use std::path::Path;

use imunet::data::{synth_generate, NoisePreset, Profile};
use imunet::nav::{
    ate, dead_reckon, evaluate, metrics_csv, predict_trajectory, rte, SequenceMetrics, Trajectory, WindowOracle,
    ZeroModel, DEFAULT_RTE_INTERVAL_S, EVAL_STRIDE,
};

pub fn run(out: &Path) -> anyhow::Result<Vec<SequenceMetrics>> {
    let mut rows = Vec::new();
    for (label, preset) in [("clean", NoisePreset::None), ("consumer", NoisePreset::Consumer)] {
        let seq = synth_generate(&Profile::figure8(), 300.0, 200.0, &preset.spec(), 1, 2)?;
        let gt = Trajectory::ground_truth(&seq)?;

        let oracle = predict_trajectory(&WindowOracle { dim: 2 }, &seq, EVAL_STRIDE)?;
        let (a, r, _) = evaluate(&oracle, &seq, DEFAULT_RTE_INTERVAL_S)?;
        rows.push(SequenceMetrics { sequence: format!("{label}/oracle"), ate: a, rte: r });

        let still = predict_trajectory(&ZeroModel { dim: 2 }, &seq, EVAL_STRIDE)?;
        let (a, r, _) = evaluate(&still, &seq, DEFAULT_RTE_INTERVAL_S)?;
        rows.push(SequenceMetrics { sequence: format!("{label}/zero"), ate: a, rte: r });

        let dr = dead_reckon(&seq)?;
        rows.push(SequenceMetrics {
            sequence: format!("{label}/double-integration"),
            ate: ate(&dr, &gt)?,
            rte: rte(&dr, &gt, DEFAULT_RTE_INTERVAL_S)?,
        });

        std::fs::create_dir_all(out.join(label))?;
        oracle.write_csv(&out.join(label).join("traj.csv"))?;
        gt.write_csv(&out.join(label).join("gt.csv"))?;
    }
    print!("{}", metrics_csv(&rows));
    Ok(rows)
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    match std::env::args().nth(1) {
        Some(dir) => run(Path::new(&dir)).map(drop),
        None => {
            let dir = tempfile::tempdir()?;
            run(dir.path()).map(drop)
        }
    }
}
