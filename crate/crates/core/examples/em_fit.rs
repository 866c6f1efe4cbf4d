//! Over-specified EM fit (k = 3 against two true components) from a
//! near-truth start, with the NLL trajectory and the final Voronoi loss.

use moe_lab::{em, metrics, synth, FitConfig, GateTransform, Preset};

fn main() -> moe_lab::Result<()> {
    let scenario = synth::preset(Preset::Regime1, GateTransform::Identity);
    let data = synth::sample(&scenario, 20_000, 1)?;
    let init = em::init_near_truth(&scenario.truth, 3, 2, 0.1)?;

    let report = em::fit(&data, &FitConfig::new(3), scenario.gate_transform, &init)?;
    let traj = &report.nll_trajectory;
    println!("iterations {} (converged: {})", report.iterations, report.converged);
    for (i, v) in traj.iter().enumerate().step_by((traj.len() / 10).max(1)) {
        println!("  iter {i:>4}  NLL {v:.4}");
    }
    println!("  final      NLL {:.4}", traj[traj.len() - 1]);
    println!("truth NLL {:.4}", -scenario.truth.log_likelihood(&data)?);

    let cells = metrics::voronoi_cells(&report.measure, &scenario.truth)?;
    println!("Voronoi cells {:?}", cells.cells);
    println!(
        "loss at init {:.4}, after EM {:.4}",
        metrics::aligned_voronoi_loss(&init, &scenario.truth, 2.0)?,
        metrics::aligned_voronoi_loss(&report.measure, &scenario.truth, 2.0)?
    );
    println!("{}", report.measure.to_json()?);
    Ok(())
}
