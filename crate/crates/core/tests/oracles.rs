//! Metric, sampling and theory checks against independently computed values.

mod common;

use common::{naive_density, random_measure, rng};
use moe_lab::metrics::{hellinger, hellinger_expect, tv_expect, voronoi_loss};
use moe_lab::synth::{preset, sample};
use moe_lab::theory::{
    adversarial_params, build_adversarial, classify_regime, collapsed_first, dr_closed_form, pde_interaction_check, u_gradients,
    Regime,
};
use moe_lab::{CovariateBox, GateTransform, MixingMeasure, Preset};
use rand::Rng;

/// Trapezoid rule on `[0, 1]` with `nodes` equally spaced nodes.
fn trapezoid(nodes: usize, f: impl Fn(f64) -> f64) -> f64 {
    let h = 1.0 / (nodes - 1) as f64;
    let inner: f64 = (1..nodes - 1).map(|i| f(i as f64 * h)).sum();
    h * (inner + 0.5 * (f(0.0) + f(1.0)))
}

fn shifted_regime1() -> (MixingMeasure, MixingMeasure) {
    let truth = preset(Preset::Regime1, GateTransform::Identity).truth;
    let mut other = truth.clone();
    other.components[0].a[0] += 0.5;
    (truth, other)
}

#[test]
fn expected_hellinger_matches_quadrature() {
    let (truth, other) = shifted_regime1();
    let exact = trapezoid(100_000, |x| {
        let (p, q) = (naive_density(&truth, &[x]), naive_density(&other, &[x]));
        let s: f64 = p.iter().zip(&q).map(|(a, b)| (a.sqrt() - b.sqrt()).powi(2)).sum();
        (0.5 * s).sqrt()
    });
    let mc = hellinger_expect(&truth, &other, &CovariateBox::unit(1), 20_000, 4).unwrap();
    assert!(
        (mc.mean - exact).abs() < 3.0 * mc.std_error,
        "MC {} +- {} vs quadrature {exact}",
        mc.mean,
        mc.std_error
    );
}

#[test]
fn hellinger_matches_its_definition_on_simplex_points() {
    let mut r = rng(8);
    for _ in 0..100 {
        let k = r.random_range(2..6);
        let raw: Vec<f64> = (0..2 * k).map(|_| r.random_range(0.01..1.0)).collect();
        let (p, q) = raw.split_at(k);
        let (sp, sq): (f64, f64) = (p.iter().sum(), q.iter().sum());
        let p: Vec<f64> = p.iter().map(|v| v / sp).collect();
        let q: Vec<f64> = q.iter().map(|v| v / sq).collect();
        let bc: f64 = p.iter().zip(&q).map(|(a, b)| (a * b).sqrt()).sum();
        assert!((hellinger(&p, &q) - (1.0 - bc).max(0.0).sqrt()).abs() < 1e-12);
    }
}

#[test]
fn label_frequencies_match_quadrature() {
    let scenario = preset(Preset::Regime1, GateTransform::Identity);
    let n = 100_000;
    let data = sample(&scenario, n, 31).unwrap();
    for s in 0..scenario.truth.classes {
        let exact = trapezoid(100_000, |x| naive_density(&scenario.truth, &[x])[s]);
        let freq = data.y.iter().filter(|&&y| y == s).count() as f64 / n as f64;
        let se = (exact * (1.0 - exact) / n as f64).sqrt();
        assert!((freq - exact).abs() < 0.01, "class {s}: {freq} vs {exact}");
        assert!((freq - exact).abs() < 3.0 * se, "class {s}: {freq} vs {exact} (se {se})");
    }
}

#[test]
fn distinct_seeds_give_distinct_datasets() {
    let scenario = preset(Preset::Regime2, GateTransform::Sigmoid);
    let a = sample(&scenario, 500, 1).unwrap();
    let b = sample(&scenario, 500, 2).unwrap();
    assert_ne!(a.covariates(), b.covariates());
    assert_ne!(a.y, b.y);
    assert_eq!(a, sample(&scenario, 500, 1).unwrap());
}

#[test]
fn u_gradients_match_finite_differences() {
    let mut r = rng(12);
    let h = 1e-6;
    for _ in 0..50 {
        let d = r.random_range(1..=3);
        let classes = r.random_range(2..=4);
        let g = random_measure(&mut r, 1, d, classes, 1.5, GateTransform::Identity);
        let c = &g.components[0];
        let x: Vec<f64> = (0..d).map(|_| r.random_range(0.05..1.0)).collect();
        let class = r.random_range(0..classes - 1);
        let (d_beta1, d_b) = u_gradients(c, &x, class).unwrap();
        for j in 0..d {
            let mut plus = c.clone();
            let mut minus = c.clone();
            plus.beta1[j] += h;
            minus.beta1[j] -= h;
            let fd = (plus.u_value(&x, class).unwrap() - minus.u_value(&x, class).unwrap()) / (2.0 * h);
            assert!((fd - d_beta1[j]).abs() <= 1e-6 * d_beta1[j].abs().max(1e-3), "beta1[{j}] {fd} vs {}", d_beta1[j]);

            let mut plus = c.clone();
            let mut minus = c.clone();
            plus.b[j][class] += h;
            minus.b[j][class] -= h;
            let fd = (plus.u_value(&x, class).unwrap() - minus.u_value(&x, class).unwrap()) / (2.0 * h);
            assert!((fd - d_b[j]).abs() <= 1e-6 * d_b[j].abs().max(1e-3), "b[{j}] {fd} vs {}", d_b[j]);
        }
    }
}

fn sample_points(count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    (0..count).map(|_| vec![r.random_range(0.0..1.0)]).collect()
}

#[test]
fn pde_holds_only_for_the_collapsed_expert() {
    let xs = sample_points(100, 40);
    let regime2 = collapsed_first(&preset(Preset::Regime2, GateTransform::Identity).truth, 1e-12).unwrap();
    let report = pde_interaction_check(&regime2.components[0], &xs, 1e-8).unwrap();
    assert!(report.holds && report.constant_spread < 1e-8, "{report:?}");

    let regime1 = preset(Preset::Regime1, GateTransform::Identity).truth;
    let report = pde_interaction_check(&regime1.components[0], &xs, 1e-8).unwrap();
    assert!(!report.holds, "{report:?}");
}

#[test]
fn regime_follows_collapsed_slopes() {
    let mut r = rng(5);
    for _ in 0..20 {
        let mut g = random_measure(&mut r, 3, 2, 3, 2.0, GateTransform::Identity);
        assert_eq!(classify_regime(&g, 1e-12), Regime::Regime1);
        let i = r.random_range(0..3);
        g.components[i].b.iter_mut().for_each(|row| row.iter_mut().for_each(|v| *v = 0.0));
        assert_eq!(classify_regime(&g, 1e-12), Regime::Regime2);
    }
}

#[test]
fn adversarial_loss_matches_closed_form() {
    let truth = preset(Preset::Regime2, GateTransform::Identity).truth;
    let domain = CovariateBox::unit(1);
    let canonical = collapsed_first(&truth, 1e-12).unwrap();
    for n in [1_000u64, 10_000] {
        let p = adversarial_params(&canonical, &domain, n).unwrap();
        let g_n = build_adversarial(&canonical, &p).unwrap();
        let mut previous = f64::INFINITY;
        for r in [1.0, 2.0, 4.0] {
            let direct = voronoi_loss(&g_n, &canonical, r).unwrap();
            let closed = dr_closed_form(&canonical, &p, r).unwrap();
            assert!((direct - closed).abs() < 1e-10, "n {n} r {r}: {direct} vs {closed}");
            assert!(direct <= previous);
            previous = direct;
        }
    }
}

#[test]
fn adversarial_tv_shrinks_with_n() {
    let truth = preset(Preset::Regime2, GateTransform::Identity).truth;
    let domain = CovariateBox::unit(1);
    let canonical = collapsed_first(&truth, 1e-12).unwrap();
    let tvs: Vec<f64> = [100u64, 1_000, 10_000]
        .iter()
        .map(|&n| {
            let p = adversarial_params(&canonical, &domain, n).unwrap();
            let g_n = build_adversarial(&canonical, &p).unwrap();
            tv_expect(&g_n, &canonical, &domain, 20_000, 3).unwrap().mean
        })
        .collect();
    assert!(tvs.windows(2).all(|w| w[1] < w[0]), "{tvs:?}");
}
