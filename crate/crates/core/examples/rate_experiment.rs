//! Replicated EM fits over a grid of sample sizes and the fitted log-log
//! slope of the mean Voronoi loss.
//!
//! cargo run --release --example rate_experiment -- [regime1|regime2] [gate] [out_dir]

use std::time::Instant;

use moe_lab::harness::{run_rate_experiment, ExperimentConfig};
use moe_lab::{GateTransform, Preset};

fn main() -> moe_lab::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let scenario: Preset = args.first().map_or("regime1", String::as_str).parse()?;
    let gate: GateTransform = args.get(1).map_or("identity", String::as_str).parse()?;
    let mut cfg = ExperimentConfig::desk(scenario, gate);
    cfg.out_dir = args.get(2).map(Into::into);

    let start = Instant::now();
    for report in run_rate_experiment(&cfg)? {
        println!("{scenario} / {gate} / k = {}", report.k);
        println!("{:>8} {:>12} {:>12} {:>4}", "n", "mean D2", "std", "ok");
        for p in &report.points {
            println!("{:>8} {:>12.4e} {:>12.4e} {:>4}", p.n, p.mean_loss, p.std_loss, p.replications);
        }
        println!("slope {:.3}  r^2 {:.3}", report.slope, report.r_squared);
    }
    println!("elapsed {:.1?}", start.elapsed());
    Ok(())
}
