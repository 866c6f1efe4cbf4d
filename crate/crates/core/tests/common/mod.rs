#![allow(dead_code)]

use moe_lab::em::{e_step, expected_complete_loglik, Responsibilities, SoftmaxProblem};
use moe_lab::synth::sample;
use moe_lab::{Component, CovariateBox, Dataset, GateTransform, MixingMeasure, Scenario};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random measure with `k` components, `d` covariates and `classes`
/// classes; parameters uniform in `[-scale, scale]`.
pub fn random_measure(rng: &mut impl Rng, k: usize, d: usize, classes: usize, scale: f64, gate: GateTransform) -> MixingMeasure {
    let mut u = || rng.random_range(-scale..scale);
    let components = (0..k)
        .map(|_| {
            let beta0 = u();
            let beta1 = (0..d).map(|_| u()).collect();
            let a: Vec<f64> = (0..classes - 1).map(|_| u()).collect();
            let b: Vec<Vec<f64>> = (0..classes - 1).map(|_| (0..d).map(|_| u()).collect()).collect();
            Component::from_free(beta0, beta1, &a, &b).unwrap()
        })
        .collect();
    MixingMeasure::new(components, gate).unwrap()
}

pub fn random_dataset(rng: &mut impl Rng, n: usize, d: usize, classes: usize) -> Dataset {
    let x = (0..n * d).map(|_| rng.random_range(0.0..1.0)).collect();
    let y = (0..n).map(|_| rng.random_range(0..classes)).collect();
    Dataset::new(d, classes, x, y).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn bounded_gate() -> impl Strategy<Value = GateTransform> {
    prop_oneof![
        Just(GateTransform::Identity),
        Just(GateTransform::Sigmoid),
        Just(GateTransform::Tanh),
        Just(GateTransform::Cos),
        Just(GateTransform::Sin),
    ]
}

/// `(measure, x)` with `k in 1..=4`, `d in 1..=3`, `K in 2..=4`.
pub fn measure_and_point() -> impl Strategy<Value = (MixingMeasure, Vec<f64>)> {
    (1usize..=4, 1usize..=3, 2usize..=4, bounded_gate(), any::<u64>()).prop_map(|(k, d, classes, gate, seed)| {
        let mut r = rng(seed);
        let g = random_measure(&mut r, k, d, classes, 3.0, gate);
        let x = (0..d).map(|_| r.random_range(0.0..1.0)).collect();
        (g, x)
    })
}

/// Straightforward evaluation of the mixture density, written without any
/// of the crate's numerical helpers.
pub fn naive_density(g: &MixingMeasure, x: &[f64]) -> Vec<f64> {
    let m = g.gate_transform.apply(x).unwrap();
    let gates: Vec<f64> = g
        .components
        .iter()
        .map(|c| (c.beta0 + c.beta1.iter().zip(&m).map(|(b, v)| b * v).sum::<f64>()).exp())
        .collect();
    let total: f64 = gates.iter().sum();
    let mut out = vec![0.0; g.classes];
    for (c, w) in g.components.iter().zip(&gates) {
        let scores: Vec<f64> = (0..g.classes)
            .map(|s| (c.a[s] + (0..g.d).map(|j| c.b[j][s] * x[j]).sum::<f64>()).exp())
            .collect();
        let z: f64 = scores.iter().sum();
        for (o, e) in out.iter_mut().zip(&scores) {
            *o += w / total * e / z;
        }
    }
    out
}

const PROBLEM_GATES: [GateTransform; 3] = [GateTransform::Identity, GateTransform::Sigmoid, GateTransform::Cos];

/// `(data, start)`: 200 draws from a random truth plus an unrelated
/// canonical starting measure of the same shape.
pub fn random_problem(seed: u64) -> (Dataset, MixingMeasure) {
    let mut r = rng(seed);
    let k = r.random_range(1..=3);
    let d = r.random_range(1..=2);
    let classes = r.random_range(2..=3);
    let gate = PROBLEM_GATES[r.random_range(0..PROBLEM_GATES.len())];
    let truth = random_measure(&mut r, k, d, classes, 2.0, gate);
    let scenario = Scenario::new("random", truth, CovariateBox::unit(d)).unwrap();
    let data = sample(&scenario, 200, seed).unwrap();
    let start = random_measure(&mut r, k, d, classes, 1.0, gate).canonicalize();
    (data, start)
}

pub fn column(r: &Responsibilities, i: usize) -> Vec<f64> {
    (0..r.n).map(|t| r.row(t)[i]).collect()
}

fn design(data: &Dataset, gate: Option<GateTransform>) -> Vec<f64> {
    (0..data.len())
        .flat_map(|t| {
            let x = data.row(t);
            let z = match gate {
                Some(m) => m.apply(x).unwrap(),
                None => x.to_vec(),
            };
            std::iter::once(1.0).chain(z)
        })
        .collect()
}

fn onehot(data: &Dataset) -> Vec<f64> {
    data.y
        .iter()
        .flat_map(|&y| (0..data.classes).map(move |s| if s == y { 1.0 } else { 0.0 }))
        .collect()
}

/// Parameter handles in the solver layout: gate `(beta0, beta1)` per free
/// component; expert `(a_s, b[., s])` per free class.
fn gate_param(g: &mut MixingMeasure, idx: usize) -> &mut f64 {
    let p = g.d + 1;
    let c = &mut g.components[idx / p];
    match idx % p {
        0 => &mut c.beta0,
        j => &mut c.beta1[j - 1],
    }
}

fn expert_param(g: &mut MixingMeasure, comp: usize, idx: usize) -> &mut f64 {
    let p = g.d + 1;
    let (s, j) = (idx / p, idx % p);
    let c = &mut g.components[comp];
    if j == 0 {
        &mut c.a[s]
    } else {
        &mut c.b[j - 1][s]
    }
}

fn central_difference(g: &MixingMeasure, data: &Dataset, r: &Responsibilities, handle: impl Fn(&mut MixingMeasure) -> &mut f64) -> f64 {
    let h = 1e-5;
    let mut plus = g.clone();
    *handle(&mut plus) += h;
    let mut minus = g.clone();
    *handle(&mut minus) -= h;
    (expected_complete_loglik(&plus, data, r).unwrap() - expected_complete_loglik(&minus, data, r).unwrap()) / (2.0 * h)
}

/// Largest relative gap between the M-step solver gradients and central
/// differences of the expected complete log-likelihood, over every gate
/// and expert coordinate of one random instance.
pub fn max_gradient_error(seed: u64) -> f64 {
    let mut r = rng(500 + seed);
    let k = r.random_range(2..=3);
    let d = r.random_range(1..=2);
    let classes = r.random_range(2..=3);
    let gate = PROBLEM_GATES[seed as usize % PROBLEM_GATES.len()];
    let g = random_measure(&mut r, k, d, classes, 1.5, gate).canonicalize();
    let data = random_dataset(&mut r, 150, d, classes);
    // responsibilities from another measure, so g is not a fixed point
    let other = random_measure(&mut r, k, d, classes, 1.5, gate);
    let resp = e_step(&other, &data).unwrap();
    let p = d + 1;
    let rel = |an: f64, fd: f64| (an - fd).abs() / an.abs().max(1.0);
    let mut worst: f64 = 0.0;

    let gate_x = design(&data, Some(gate));
    let gate_problem = SoftmaxProblem { features: &gate_x, p, targets: resp.values(), weights: None, classes: k, frozen: None };
    let theta: Vec<f64> = g.components[..k - 1]
        .iter()
        .flat_map(|c| std::iter::once(c.beta0).chain(c.beta1.iter().copied()))
        .collect();
    for (idx, &an) in gate_problem.gradient(&theta).iter().enumerate() {
        worst = worst.max(rel(an, central_difference(&g, &data, &resp, |m| gate_param(m, idx))));
    }

    let expert_x = design(&data, None);
    let labels = onehot(&data);
    for i in 0..k {
        let w = column(&resp, i);
        let problem = SoftmaxProblem { features: &expert_x, p, targets: &labels, weights: Some(&w), classes, frozen: None };
        let c = &g.components[i];
        let theta: Vec<f64> = (0..classes - 1)
            .flat_map(|s| std::iter::once(c.a[s]).chain(c.b.iter().map(move |row| row[s])))
            .collect();
        for (idx, &an) in problem.gradient(&theta).iter().enumerate() {
            worst = worst.max(rel(an, central_difference(&g, &data, &resp, |m| expert_param(m, i, idx))));
        }
    }
    worst
}
