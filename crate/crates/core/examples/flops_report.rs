// Parameter and FLOP accounting for the three architectures.
//
//     cargo run --example flops_report -- [m]

use imunet::arch::Arch;

pub fn run(m: usize) -> anyhow::Result<f64> {
    let mut totals = Vec::new();
    for arch in Arch::ALL {
        let model = arch.build(m, 0)?;
        let report = model.cost_report()?;
        println!(
            "{:<10} {:>10} params {:>12} FLOPs  lengths {:?}",
            arch.name(),
            report.total_params,
            report.total_flops,
            model.length_schedule()?
        );
        totals.push(report);
    }
    println!();
    print!("{}", totals[0].to_table());
    let ratio = totals[0].total_params as f64 / totals[1].total_params as f64;
    println!("\nimunet/resnet18 parameter ratio: {ratio:.4}");
    Ok(ratio)
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    let m = std::env::args().nth(1).map_or(Ok(2), |s| s.parse())?;
    run(m)?;
    Ok(())
}
