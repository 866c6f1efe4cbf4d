//! EM trajectories for several gate transforms on one shared Regime-2
//! dataset, written as CSV and an SVG overlay.
//!
//! cargo run --release --example nll_comparison -- [out_dir]

use std::path::PathBuf;

use moe_lab::harness::{plot, run_nll_comparison, write_nll_csv, NllComparisonConfig};

fn main() -> moe_lab::Result<()> {
    let out: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "nll_out".into()).into();
    let cfg = NllComparisonConfig::default();
    let trajectories = run_nll_comparison(&cfg)?;
    for t in &trajectories {
        println!(
            "{:>9}: {:.3} -> {:.3} after {} iterations (drop {:.3})",
            t.gate.to_string(),
            t.nll[0],
            t.nll[cfg.iterations],
            cfg.iterations,
            t.total_drop()
        );
    }
    std::fs::create_dir_all(&out).map_err(|e| moe_lab::Error::Io { path: out.clone(), source: e })?;
    write_nll_csv(&trajectories, &out.join("nll.csv"))?;
    plot::write_nll_svg(&trajectories, &out.join("nll.svg"))?;
    println!("wrote {}", out.display());
    Ok(())
}
