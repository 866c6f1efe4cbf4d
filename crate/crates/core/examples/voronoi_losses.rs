//! Voronoi losses and expected density distances for a few hand-made
//! perturbations of the Regime-1 truth.

use moe_lab::metrics::{hellinger_expect, tv_expect, voronoi_cells, voronoi_loss};
use moe_lab::{synth, Component, GateTransform, MixingMeasure, Preset};

fn main() -> moe_lab::Result<()> {
    let scenario = synth::preset(Preset::Regime1, GateTransform::Identity);
    let truth = &scenario.truth;

    let mut raised = truth.clone();
    raised.components[0].beta0 += 0.1;

    let mut shifted = truth.clone();
    shifted.components[0].a[0] += 0.5;

    // split the first atom into two half-mass copies with opposite offsets
    let first = &truth.components[0];
    let half = |delta: f64| {
        Component::new(
            first.beta0 - 2f64.ln(),
            vec![first.beta1[0] + delta],
            first.a.clone(),
            first.b.clone(),
        )
    };
    let split = MixingMeasure::new(
        vec![half(0.2)?, half(-0.2)?, truth.components[1].clone()],
        GateTransform::Identity,
    )?;

    for (name, g) in [("beta0 + 0.1", &raised), ("a11 + 0.5", &shifted), ("split atom", &split)] {
        let cells = voronoi_cells(g, truth)?;
        let h = hellinger_expect(g, truth, &scenario.covariate_box, 20_000, 3)?;
        let v = tv_expect(g, truth, &scenario.covariate_box, 20_000, 3)?;
        println!("{name}: cells {:?}", cells.cells);
        for r in [1.0, 2.0, 4.0] {
            println!("  D_{r} = {:.6}", voronoi_loss(g, truth, r)?);
        }
        println!("  E h = {:.6} (se {:.1e}), E V = {:.6} (se {:.1e})", h.mean, h.std_error, v.mean, v.std_error);
    }
    Ok(())
}
