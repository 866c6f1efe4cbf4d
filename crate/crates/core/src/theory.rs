//! Numerical checks of the model's structural properties: regime
//! classification, the gate/expert gradient interaction that appears when
//! an expert's slopes vanish, and the explicit sequence of measures whose
//! density error vanishes faster than its Voronoi loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::tv_expect;
use crate::model::{Component, CovariateBox, MixingMeasure};
use crate::numeric::{dot, norm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Every expert has some nonzero non-reference slope.
    Regime1,
    /// Some expert has all non-reference slopes equal to zero.
    Regime2,
}

fn is_collapsed(c: &Component, tol: f64) -> bool {
    (0..c.classes() - 1).all(|l| norm(&c.slope(l)) <= tol)
}

pub fn classify_regime(g: &MixingMeasure, tol: f64) -> Regime {
    if g.components.iter().any(|c| is_collapsed(c, tol)) {
        Regime::Regime2
    } else {
        Regime::Regime1
    }
}

/// Analytic gradients of `u(s | x) = exp(beta1 . x) f(s | x)` with respect
/// to `beta1` and to the class-`s` expert slope `b_{., s}`.
pub fn u_gradients(c: &Component, x: &[f64], class: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let f = c.expert_prob(x)?;
    let scale = dot(&c.beta1, x).exp();
    let u = scale * f[class];
    let d_slope = scale * f[class] * (1.0 - f[class]);
    Ok((
        x.iter().map(|xj| xj * u).collect(),
        x.iter().map(|xj| xj * d_slope).collect(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeReport {
    /// Mean ratio `du/dbeta1 / du/db_s` for the first class.
    pub proportionality_constant: f64,
    /// Mean ratio for every non-reference class.
    pub class_constants: Vec<f64>,
    pub max_relative_deviation: f64,
    /// Largest `max - min` of the ratios within one class.
    pub constant_spread: f64,
    pub tol: f64,
    pub holds: bool,
}

/// Smallest gradient magnitude a ratio is formed from.
const GRADIENT_FLOOR: f64 = 1e-14;

/// Tests whether `du/dbeta1 = C_s du/db_s` holds with a constant `C_s` that
/// does not depend on `x`, separately for each non-reference class `s`.
pub fn pde_interaction_check(c: &Component, xs: &[Vec<f64>], tol: f64) -> Result<PdeReport> {
    if xs.is_empty() {
        return Err(Error::contract("PDE check needs at least one covariate sample"));
    }
    let mut class_constants = Vec::new();
    let mut max_dev: f64 = 0.0;
    let mut spread: f64 = 0.0;
    for s in 0..c.classes() - 1 {
        let mut ratios = Vec::new();
        for x in xs {
            let (g_gate, g_slope) = u_gradients(c, x, s)?;
            for (gg, gs) in g_gate.iter().zip(&g_slope) {
                if gs.abs() > GRADIENT_FLOOR && gg.abs() > GRADIENT_FLOOR {
                    ratios.push(gg / gs);
                }
            }
        }
        if ratios.is_empty() {
            return Err(Error::Inconclusive(format!(
                "all gradients for class {} are below {GRADIENT_FLOOR:e}",
                s + 1
            )));
        }
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        let (lo, hi) = ratios
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| (lo.min(r), hi.max(r)));
        spread = spread.max(hi - lo);
        max_dev = ratios
            .iter()
            .map(|r| (r - mean).abs() / mean.abs())
            .fold(max_dev, f64::max);
        class_constants.push(mean);
    }
    Ok(PdeReport {
        proportionality_constant: class_constants[0],
        class_constants,
        max_relative_deviation: max_dev,
        constant_spread: spread,
        tol,
        holds: max_dev < tol && spread < tol,
    })
}

/// Moves the first component with collapsed slopes to the front and
/// re-canonicalizes.
pub fn collapsed_first(truth: &MixingMeasure, tol: f64) -> Result<MixingMeasure> {
    let idx = truth
        .components
        .iter()
        .position(|c| is_collapsed(c, tol))
        .ok_or_else(|| Error::contract("measure has no collapsed expert"))?;
    let mut out = truth.clone();
    let c = out.components.remove(idx);
    out.components.insert(0, c);
    Ok(out.canonicalize())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdversarialParams {
    pub n: u64,
    pub t_n: f64,
    pub c_n: f64,
    /// Bound on `||x||` over the covariate box.
    pub bound: f64,
    /// Sum of the first-order derivatives of `f(Y = 1 | h)` with respect to
    /// `h_1..h_{K-1}` at the collapsed expert.
    pub jacobian_sum: f64,
}

const COLLAPSE_TOL: f64 = 1e-12;

fn require_collapsed_first(truth: &MixingMeasure) -> Result<()> {
    if !truth.canonical {
        return Err(Error::contract("adversarial construction needs a canonical truth"));
    }
    if !is_collapsed(&truth.components[0], COLLAPSE_TOL) {
        return Err(Error::contract(
            "first true component must have collapsed slopes (see collapsed_first)",
        ));
    }
    Ok(())
}

/// `t_n = B / (n N)` and `c_n = 1 / (n N exp(beta0_1) - B)`.
///
/// With zero slopes the expert probabilities do not depend on `x`, so the
/// derivatives `df_1/dh_l = f_1 (delta_1l - f_l)` are constants.
pub fn adversarial_params(truth: &MixingMeasure, domain: &CovariateBox, n: u64) -> Result<AdversarialParams> {
    require_collapsed_first(truth)?;
    let c = &truth.components[0];
    let f = crate::numeric::softmax(&c.a);
    let jacobian_sum: f64 = (0..truth.classes - 1)
        .map(|l| f[0] * (if l == 0 { 1.0 } else { 0.0 } - f[l]))
        .sum();
    let bound = domain.sup_norm();
    let nn = n as f64 * jacobian_sum;
    let denom = nn * c.beta0.exp() - bound;
    if !(denom > 0.0) {
        return Err(Error::Range(format!(
            "n = {n} too small: n N exp(beta0) - B = {denom:.4e} must be positive"
        )));
    }
    Ok(AdversarialParams {
        n,
        t_n: bound / nn,
        c_n: 1.0 / denom,
        bound,
        jacobian_sum,
    })
}

/// The `(k* + 1)`-component measure that splits the collapsed first atom
/// into two copies shifted by `c_n` in gate slope and intercepts, with
/// total gate mass `exp(beta0_1) - t_n`.
pub fn build_adversarial(truth: &MixingMeasure, p: &AdversarialParams) -> Result<MixingMeasure> {
    require_collapsed_first(truth)?;
    let first = &truth.components[0];
    let half_mass = 0.5 * first.beta0.exp() - 0.5 * p.t_n;
    if !(half_mass > 0.0) {
        return Err(Error::Range(format!(
            "t_n = {} leaves no gate mass for the split atom",
            p.t_n
        )));
    }
    let classes = truth.classes;
    let mut split = first.clone();
    split.beta0 = half_mass.ln();
    split.beta1.iter_mut().for_each(|v| *v += p.c_n);
    split.a[..classes - 1].iter_mut().for_each(|v| *v += p.c_n);
    let mut components = vec![split.clone(), split];
    components.extend(truth.components[1..].iter().cloned());
    MixingMeasure::new(components, truth.gate_transform)
}

/// Voronoi loss of [`build_adversarial`] expanded by hand:
/// `t_n + (exp(beta0_1) - t_n) c_n^r (d^{r/2} + K - 1)`.
pub fn dr_closed_form(truth: &MixingMeasure, p: &AdversarialParams, r: f64) -> Result<f64> {
    require_collapsed_first(truth)?;
    if p.t_n >= truth.components[0].beta0.exp() {
        return Err(Error::Range("t_n exceeds the collapsed atom's gate mass".into()));
    }
    let d = truth.d as f64;
    let k = truth.classes as f64;
    Ok(p.t_n + (truth.components[0].beta0.exp() - p.t_n) * p.c_n.powf(r) * (d.powf(r / 2.0) + (k - 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollapsePoint {
    pub n: u64,
    pub t_n: f64,
    pub c_n: f64,
    pub expected_tv: f64,
    pub tv_std_error: f64,
    pub voronoi_loss: f64,
    pub ratio: f64,
}

/// Ratio of expected total variation to Voronoi loss along the adversarial
/// sequence. Every grid point reuses the same covariate draws.
pub fn collapse_ratio_series(
    truth: &MixingMeasure,
    domain: &CovariateBox,
    n_grid: &[u64],
    r: f64,
    n_mc: usize,
    seed: u64,
) -> Result<Vec<CollapsePoint>> {
    let truth = collapsed_first(truth, COLLAPSE_TOL)?;
    n_grid
        .iter()
        .map(|&n| {
            let p = adversarial_params(&truth, domain, n)?;
            let g_n = build_adversarial(&truth, &p)?;
            let tv = tv_expect(&g_n, &truth, domain, n_mc, seed)?;
            let loss = crate::metrics::voronoi_loss(&g_n, &truth, r)?;
            Ok(CollapsePoint {
                n,
                t_n: p.t_n,
                c_n: p.c_n,
                expected_tv: tv.mean,
                tv_std_error: tv.std_error,
                voronoi_loss: loss,
                ratio: tv.mean / loss,
            })
        })
        .collect()
}
