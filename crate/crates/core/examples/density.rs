//! Conditional class probabilities of the two preset truths, their gate
//! weights, and invariance under a common gate translation.

use moe_lab::{synth, GateTransform, Preset};

fn main() -> moe_lab::Result<()> {
    for which in [Preset::Regime1, Preset::Regime2] {
        let truth = synth::preset(which, GateTransform::Identity).truth;
        println!("{which}: {} components, K = {}", truth.len(), truth.classes);
        println!("{:>5} {:>18} {:>18}", "x", "gate weights", "P(Y = 1 | x)");
        for x in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let w = truth.gate_weights(&[x])?;
            let p = truth.density(&[x])?;
            println!("{x:>5.2} {:>8.4} {:>9.4} {:>18.6}", w[0], w[1], p[0]);
        }

        let mut shifted = truth.clone();
        for c in &mut shifted.components {
            c.beta0 += 0.7;
            c.beta1[0] -= 1.3;
        }
        let gap = (0..=10)
            .map(|i| {
                let x = [i as f64 / 10.0];
                (truth.density(&x).unwrap()[0] - shifted.density(&x).unwrap()[0]).abs()
            })
            .fold(0.0, f64::max);
        println!("max density change under gate translation: {gap:.2e}\n");
    }

    let sigmoid = synth::preset(Preset::Regime2, GateTransform::Sigmoid).truth;
    println!("regime2 with sigmoid gate, P(Y = 1 | 0.5) = {:.6}", sigmoid.density(&[0.5])?[0]);
    Ok(())
}
