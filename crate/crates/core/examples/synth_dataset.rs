// Generates synthetic IMU sequences with known ground truth, writes them in the
// canonical CSV layout (imu.csv, ori.csv, gt.csv) and loads them back.
//
//     cargo run --example synth_dataset -- [OUT_DIR]

use std::path::Path;

use imunet::data::{
    load_canonical, make_windows, quat_rotate, resample_linear, synth_generate, write_dataset, NoisePreset, Profile,
    ProfileKind, WINDOW,
};

pub fn run(out: &Path) -> anyhow::Result<()> {
    for (kind, preset) in [
        (ProfileKind::Circle, NoisePreset::None),
        (ProfileKind::Figure8, NoisePreset::Consumer),
        (ProfileKind::RandomWalk, NoisePreset::Harsh),
    ] {
        let profile = Profile::default_for(kind, 7);
        let seq = synth_generate(&profile, 30.0, 200.0, &preset.spec(), 7, 2)?;
        let dir = out.join(format!("{kind:?}").to_lowercase());
        write_dataset(&dir, &seq)?;

        // body-frame accel rotated by the true orientation gives the global acceleration
        let a = quat_rotate(&seq.orientation[1000], seq.accel[1000])?;
        let back = load_canonical(&dir)?;
        let windows = make_windows(&back, WINDOW, 10, true)?;
        println!(
            "{:<10} {:>8?}  {} samples, a_global(5 s) = ({:+.3}, {:+.3}) m/s², {} training windows -> {}",
            format!("{kind:?}"),
            preset,
            back.len(),
            a[0],
            a[1],
            windows.len(),
            dir.display()
        );
    }

    // the loader resamples anything that is not 200 Hz
    let seq = synth_generate(&Profile::line(), 10.0, 200.0, &NoisePreset::None.spec(), 0, 2)?;
    let slow = resample_linear(&seq, 50.0)?;
    write_dataset(&out.join("line_50hz"), &slow)?;
    let canon = load_canonical(&out.join("line_50hz"))?;
    println!("50 Hz line: {} samples on disk, {} after canonical loading", slow.len(), canon.len());
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    match std::env::args().nth(1) {
        Some(dir) => run(Path::new(&dir)),
        None => {
            let dir = tempfile::tempdir()?;
            run(dir.path())
        }
    }
}
