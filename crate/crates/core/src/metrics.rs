//! Voronoi cells and the order-r Voronoi loss between a fitted and a true
//! mixing measure, plus Monte-Carlo Hellinger and total-variation distances
//! between conditional densities.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CovariateBox, MixingMeasure};
use crate::numeric::{norm, pairwise_sum};

/// Assignment of fitted components to their nearest true atom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoronoiAssignment {
    /// `cells[j]` lists the fitted indices closest to true component `j`.
    pub cells: Vec<Vec<usize>>,
    /// Distance from each fitted atom to its assigned true atom.
    pub distances: Vec<f64>,
    /// `owner[i]` is the true component fitted atom `i` belongs to.
    pub owner: Vec<usize>,
}

fn check_pair(fit: &MixingMeasure, truth: &MixingMeasure) -> Result<()> {
    if !fit.canonical || !truth.canonical {
        return Err(Error::contract("Voronoi comparisons need canonical measures"));
    }
    if fit.d != truth.d || fit.classes != truth.classes {
        return Err(Error::contract("fitted and true measures differ in (d, K)"));
    }
    Ok(())
}

fn assign(fit: &MixingMeasure, truth: &MixingMeasure) -> VoronoiAssignment {
    let true_atoms: Vec<Vec<f64>> = truth.components.iter().map(|c| c.atom()).collect();
    let mut cells = vec![Vec::new(); truth.len()];
    let mut distances = Vec::with_capacity(fit.len());
    let mut owner = Vec::with_capacity(fit.len());
    for (i, c) in fit.components.iter().enumerate() {
        let atom = c.atom();
        let (best, dist) = true_atoms
            .iter()
            .map(|t| norm(&atom.iter().zip(t).map(|(a, b)| a - b).collect::<Vec<_>>()))
            .enumerate()
            // strict comparison keeps the smallest index on ties
            .fold((0, f64::INFINITY), |acc, (j, d)| if d < acc.1 { (j, d) } else { acc });
        cells[best].push(i);
        distances.push(dist);
        owner.push(best);
    }
    VoronoiAssignment {
        cells,
        distances,
        owner,
    }
}

/// Voronoi cells of `fit` generated by the atoms of `truth`. Atoms are
/// `(beta1, a_1..a_{K-1}, b_1..b_{K-1})`; ties go to the smaller true index.
pub fn voronoi_cells(fit: &MixingMeasure, truth: &MixingMeasure) -> Result<VoronoiAssignment> {
    check_pair(fit, truth)?;
    Ok(assign(fit, truth))
}

fn loss_with_cells(fit: &MixingMeasure, truth: &MixingMeasure, cells: &VoronoiAssignment, r: f64, beta0_shift: f64) -> f64 {
    let classes = truth.classes;
    let mut total = 0.0;
    for (j, cell) in cells.cells.iter().enumerate() {
        let t = &truth.components[j];
        let mass: f64 = cell.iter().map(|&i| (fit.components[i].beta0 + beta0_shift).exp()).sum();
        total += (mass - t.beta0.exp()).abs();

        let order = if cell.len() > 1 { r } else { 1.0 };
        for &i in cell {
            let c = &fit.components[i];
            let dbeta1 = norm(&c.beta1.iter().zip(&t.beta1).map(|(a, b)| a - b).collect::<Vec<_>>());
            let mut term = dbeta1.powf(order);
            for l in 0..classes - 1 {
                term += (c.a[l] - t.a[l]).abs().powf(order);
                let db: Vec<f64> = c.b.iter().zip(&t.b).map(|(rc, rt)| rc[l] - rt[l]).collect();
                term += norm(&db).powf(order);
            }
            total += (c.beta0 + beta0_shift).exp() * term;
        }
    }
    total
}

/// Order-`r` Voronoi loss of `fit` against `truth`.
///
/// The loss adds the gate-mass error of every cell, the order-`r`
/// parameter error of members of cells with more than one atom, and the
/// first-order parameter error of singleton cells, each parameter term
/// weighted by the fitted gate mass `exp(beta0_i)`.
pub fn voronoi_loss(fit: &MixingMeasure, truth: &MixingMeasure, r: f64) -> Result<f64> {
    if !(r >= 1.0) {
        return Err(Error::contract(format!("loss order must satisfy r >= 1, got {r}")));
    }
    let cells = voronoi_cells(fit, truth)?;
    Ok(loss_with_cells(fit, truth, &cells, r, 0.0))
}

/// Log-mass shift that makes the fitted last cell carry the true last
/// component's gate mass; zero when that cell is empty.
pub fn gate_mass_shift(fit: &MixingMeasure, truth: &MixingMeasure) -> Result<f64> {
    let cells = voronoi_cells(fit, truth)?;
    let last = truth.len() - 1;
    let members = &cells.cells[last];
    if members.is_empty() {
        return Ok(0.0);
    }
    let logs: Vec<f64> = members.iter().map(|&i| fit.components[i].beta0).collect();
    Ok(truth.components[last].beta0 - crate::numeric::log_sum_exp(&logs))
}

/// [`voronoi_loss`] after translating the fitted `beta0`s by
/// [`gate_mass_shift`].
///
/// Canonicalization pins a single fitted gate at zero. When the last true
/// component is approximated by several fitted atoms their masses sum to
/// more than the true mass even for a perfect fit, so the raw loss keeps an
/// O(1) gate-mass term. Translating all `beta0` leaves the density unchanged
/// and measures masses on the truth's scale.
pub fn aligned_voronoi_loss(fit: &MixingMeasure, truth: &MixingMeasure, r: f64) -> Result<f64> {
    if !(r >= 1.0) {
        return Err(Error::contract(format!("loss order must satisfy r >= 1, got {r}")));
    }
    let cells = voronoi_cells(fit, truth)?;
    let shift = gate_mass_shift(fit, truth)?;
    Ok(loss_with_cells(fit, truth, &cells, r, shift))
}

/// Hellinger distance `sqrt(1/2 sum_s (sqrt p_s - sqrt q_s)^2)`.
pub fn hellinger(p: &[f64], q: &[f64]) -> f64 {
    let s: f64 = p.iter().zip(q).map(|(a, b)| (a.sqrt() - b.sqrt()).powi(2)).sum();
    (0.5 * s).sqrt().min(1.0)
}

/// Total variation `1/2 sum_s |p_s - q_s|`.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    (0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()).min(1.0)
}

/// A Monte-Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

/// Default number of covariate draws for expected distances.
pub const DEFAULT_MC_SAMPLES: usize = 20_000;

/// Per-point distances between `a` and `b` at `n_mc` covariates drawn
/// uniformly from `domain` (avoiding points where either gate is undefined).
pub fn pointwise_distances(
    a: &MixingMeasure,
    b: &MixingMeasure,
    domain: &CovariateBox,
    n_mc: usize,
    seed: u64,
    distance: fn(&[f64], &[f64]) -> f64,
) -> Result<Vec<f64>> {
    if a.d != b.d || a.classes != b.classes || domain.dim() != a.d {
        return Err(Error::contract("measures and covariate box must share (d, K)"));
    }
    if n_mc == 0 {
        return Err(Error::contract("n_mc must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(n_mc);
    while xs.len() < n_mc {
        let x = domain.sample(&mut rng);
        if !a.gate_transform.near_excluded(&x) && !b.gate_transform.near_excluded(&x) {
            xs.push(x);
        }
    }
    xs.par_iter()
        .map(|x| Ok(distance(&a.density(x)?, &b.density(x)?)))
        .collect()
}

fn summarize(values: &[f64]) -> McEstimate {
    let n = values.len();
    let mean = pairwise_sum(values) / n as f64;
    let var = if n > 1 {
        let dev: Vec<f64> = values.iter().map(|v| (v - mean).powi(2)).collect();
        pairwise_sum(&dev) / (n - 1) as f64
    } else {
        0.0
    };
    McEstimate {
        mean,
        std_error: (var / n as f64).sqrt(),
        n,
    }
}

/// `E_X[h(g_A(.|X), g_B(.|X))]` by Monte Carlo.
pub fn hellinger_expect(a: &MixingMeasure, b: &MixingMeasure, domain: &CovariateBox, n_mc: usize, seed: u64) -> Result<McEstimate> {
    Ok(summarize(&pointwise_distances(a, b, domain, n_mc, seed, hellinger)?))
}

/// `E_X[V(g_A(.|X), g_B(.|X))]` by Monte Carlo.
pub fn tv_expect(a: &MixingMeasure, b: &MixingMeasure, domain: &CovariateBox, n_mc: usize, seed: u64) -> Result<McEstimate> {
    Ok(summarize(&pointwise_distances(a, b, domain, n_mc, seed, total_variation)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gates::GateTransform;
    use crate::synth::{preset, Preset};

    fn truth() -> MixingMeasure {
        preset(Preset::Regime1, GateTransform::Identity).truth
    }

    #[test]
    fn identical_measures_have_singleton_cells_and_zero_loss() {
        let g = truth();
        let cells = voronoi_cells(&g, &g).unwrap();
        assert_eq!(cells.cells, vec![vec![0], vec![1]]);
        assert_eq!(voronoi_loss(&g, &g, 2.0).unwrap(), 0.0);
        assert_eq!(aligned_voronoi_loss(&g, &g, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn duplicated_atom_forms_a_double_cell() {
        let g = truth();
        let mut dup = g.clone();
        dup.components.insert(0, g.components[0].clone());
        let cells = voronoi_cells(&dup, &g).unwrap();
        assert_eq!(cells.cells, vec![vec![0, 1], vec![2]]);
    }

    #[test]
    fn raised_gate_weight_moves_only_the_mass_term() {
        let g = truth();
        let mut fit = g.clone();
        fit.components[0].beta0 += 0.1;
        let loss = voronoi_loss(&fit, &g, 2.0).unwrap();
        let expect = (1.1f64.exp() - 1f64.exp()).abs();
        assert!((loss - expect).abs() < 1e-10);
        assert!((loss - 0.2859).abs() < 1e-4);
    }

    #[test]
    fn exact_cells_use_first_order_terms() {
        let g = truth();
        let mut fit = g.clone();
        fit.components[1].a[0] += 0.2;
        fit.components[1].b[0][0] -= 0.3;
        // gate mass of component 2 is exp(0) = 1
        let expect = 0.2 + 0.3;
        assert!((voronoi_loss(&fit, &g, 2.0).unwrap() - expect).abs() < 1e-12);
        assert!((voronoi_loss(&fit, &g, 4.0).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn order_below_one_is_rejected() {
        let g = truth();
        assert!(voronoi_loss(&g, &g, 0.5).is_err());
    }

    #[test]
    fn non_canonical_inputs_are_rejected() {
        let g = truth();
        assert!(voronoi_cells(&g.translate_gates(1.0, &[0.0]), &g).is_err());
    }

    #[test]
    fn alignment_removes_split_mass_offset() {
        // last true atom split into two equal halves, pinned gate at zero
        let g = truth();
        let mut fit = g.clone();
        fit.components.insert(1, g.components[1].clone());
        fit.components[0].beta0 += 2f64.ln();
        assert!((voronoi_loss(&fit, &g, 2.0).unwrap() - (2.0 * 1f64.exp() - 1f64.exp() + 1.0)).abs() < 1e-12);
        assert!(aligned_voronoi_loss(&fit, &g, 2.0).unwrap().abs() < 1e-12);
        assert!((gate_mass_shift(&fit, &g).unwrap() + 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn pointwise_distances_are_ordered() {
        let g = truth();
        let mut other = g.clone();
        other.components[0].a[0] += 0.8;
        let h = pointwise_distances(&g, &other, &CovariateBox::unit(1), 500, 3, hellinger).unwrap();
        let v = pointwise_distances(&g, &other, &CovariateBox::unit(1), 500, 3, total_variation).unwrap();
        for (hv, vv) in h.iter().zip(&v) {
            assert!(hv * hv <= *vv + 1e-15 && *vv <= std::f64::consts::SQRT_2 * hv + 1e-15 && *hv <= 1.0);
        }
    }

    #[test]
    fn equal_measures_have_zero_expected_distance() {
        let g = truth();
        let est = hellinger_expect(&g, &g, &CovariateBox::unit(1), 200, 1).unwrap();
        assert_eq!(est.mean, 0.0);
        assert_eq!(tv_expect(&g, &g, &CovariateBox::unit(1), 200, 1).unwrap().mean, 0.0);
    }
}
