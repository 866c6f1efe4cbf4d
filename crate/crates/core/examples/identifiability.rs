//! Structural diagnostics: the gate/expert gradient proportionality that
//! appears when an expert's slopes vanish, and the adversarial sequence
//! whose density distance shrinks next to its Voronoi loss.

use moe_lab::theory::{
    adversarial_params, build_adversarial, classify_regime, collapse_ratio_series, collapsed_first,
    dr_closed_form, pde_interaction_check,
};
use moe_lab::{metrics, synth, GateTransform, Preset};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> moe_lab::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let domain = moe_lab::CovariateBox::unit(1);
    let xs: Vec<Vec<f64>> = (0..100).map(|_| domain.sample(&mut rng)).collect();

    for which in [Preset::Regime1, Preset::Regime2] {
        let truth = synth::preset(which, GateTransform::Identity).truth;
        println!("{which}: classified as {:?}", classify_regime(&truth, 1e-12));
        for (i, c) in truth.components.iter().enumerate() {
            let rep = pde_interaction_check(c, &xs, 1e-8)?;
            println!(
                "  component {}: constant {:.4}, spread {:.2e}, proportional: {}",
                i + 1,
                rep.proportionality_constant,
                rep.constant_spread,
                rep.holds
            );
        }
    }

    let truth = collapsed_first(&synth::preset(Preset::Regime2, GateTransform::Identity).truth, 1e-12)?;
    println!("\nadversarial sequence (r = 2)");
    for n in [100u64, 1_000, 10_000] {
        let p = adversarial_params(&truth, &domain, n)?;
        let g_n = build_adversarial(&truth, &p)?;
        println!(
            "  n = {n:>6}: t_n {:.3e}, c_n {:.3e}, D_2 {:.6e} (closed form {:.6e})",
            p.t_n,
            p.c_n,
            metrics::voronoi_loss(&g_n, &truth, 2.0)?,
            dr_closed_form(&truth, &p, 2.0)?
        );
    }
    for point in collapse_ratio_series(&truth, &domain, &[100, 1_000, 10_000], 2.0, 20_000, 11)? {
        println!("  n = {:>6}: E V / D_2 = {:.5}", point.n, point.ratio);
    }
    Ok(())
}
