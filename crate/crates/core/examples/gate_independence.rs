//! Numerical rank of the monomial design `{x^p M(x)^q}` for each gate
//! transform: full rank means the transform restores identifiability.

use moe_lab::gates::{independence_check, monomials};
use moe_lab::{CovariateBox, GateTransform};

fn main() -> moe_lab::Result<()> {
    let gates = [
        GateTransform::Identity,
        GateTransform::Sigmoid,
        GateTransform::Tanh,
        GateTransform::Cos,
        GateTransform::Sin,
        GateTransform::LogAbs,
        GateTransform::power(3)?,
        GateTransform::Normalize,
    ];
    for d in 1..=2 {
        let m = monomials(d).len();
        println!("d = {d}: {m} monomials");
        for gate in gates {
            let rep = independence_check(gate, &CovariateBox::unit(d), 10 * m, 1e-8, 7)?;
            println!(
                "  {:>10}  rank {:>2}/{m}  min rel. singular value {:.2e}  {}",
                gate.to_string(),
                rep.numeric_rank,
                rep.relative_singular_values.last().copied().unwrap_or(0.0),
                if rep.pass { "independent" } else { "degenerate" }
            );
        }
    }
    Ok(())
}
