//! Draws a dataset from a preset, writes it as CSV and compares the
//! empirical label frequency with the exact marginal.
//!
//! cargo run --example sample_dataset -- [n] [out.csv]

use moe_lab::{synth, GateTransform, Preset};

fn main() -> moe_lab::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(100_000);
    let scenario = synth::preset(Preset::Regime1, GateTransform::Identity);
    let data = synth::sample(&scenario, n, 42)?;

    let ones = data.y.iter().filter(|&&y| y == 0).count() as f64 / n as f64;
    // midpoint rule on a fine grid
    let grid = 100_000;
    let exact: f64 = (0..grid)
        .map(|i| scenario.truth.density(&[(i as f64 + 0.5) / grid as f64]).unwrap()[0])
        .sum::<f64>()
        / grid as f64;
    let se = (exact * (1.0 - exact) / n as f64).sqrt();
    println!("n = {n}: P(Y = 1) empirical {ones:.4}, exact {exact:.4}, standard error {se:.4}");

    if let Some(path) = args.get(1) {
        data.write_csv(path.as_ref())?;
        println!("wrote {path}");
    }
    Ok(())
}
