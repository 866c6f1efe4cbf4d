//! Maximum likelihood estimation of a k-component mixture by EM.
//!
//! The E-step computes posterior component responsibilities in log space.
//! The M-step splits into a gate problem over all components and one expert
//! problem per component; each is a concave multinomial logistic objective
//! solved by damped Newton (see [`newton`]). Fits are deterministic: every
//! reduction runs over fixed row chunks in a fixed order.

pub mod newton;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gates::GateTransform;
use crate::model::{Component, Dataset, MixingMeasure};
use crate::numeric::{derive_seed, log_sum_exp, pairwise_sum};

pub use newton::{NewtonConfig, NewtonOutcome, SoftmaxProblem};

const ROLE_INIT: u64 = 3;
const ROW_CHUNK: usize = 1024;

/// Which gate parameters stay fixed during the M-step.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatePinning {
    /// Only the last fitted component's `(beta0, beta1)` is pinned at zero.
    #[default]
    LastComponent,
    /// Additionally hold the gate slopes of the listed components at their
    /// current values (e.g. every member of the last true cell).
    LastComponentAndSlopes(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitSpec {
    NearTruth { sigma: f64, truth: MixingMeasure },
    Random { scale: f64 },
}

impl InitSpec {
    /// Builds a `k`-component starting measure under `gate`.
    pub fn build(&self, k: usize, d: usize, classes: usize, gate: GateTransform, seed: u64) -> Result<MixingMeasure> {
        match self {
            InitSpec::NearTruth { sigma, truth } => {
                Ok(init_near_truth(truth, k, seed, *sigma)?.with_gate(gate))
            }
            InitSpec::Random { scale } => init_random(k, d, classes, gate, seed, *scale),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub k: usize,
    pub max_iter: usize,
    /// Stop when `|dNLL| / (1 + |NLL|)` drops below this.
    pub tol: f64,
    pub newton: NewtonConfig,
    #[serde(default)]
    pub gate_pinning: GatePinning,
    /// Run exactly `max_iter` iterations, ignoring `tol`.
    #[serde(default)]
    pub fixed_iterations: bool,
}

impl FitConfig {
    pub fn new(k: usize) -> Self {
        FitConfig {
            k,
            max_iter: 2000,
            tol: 1e-6,
            newton: NewtonConfig::default(),
            gate_pinning: GatePinning::LastComponent,
            fixed_iterations: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::contract("k must be at least 1"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::contract("tol must be positive"));
        }
        let nc = &self.newton;
        if !(nc.damping >= 0.0 && nc.line_search_shrink > 0.0 && nc.line_search_shrink < 1.0 && nc.armijo > 0.0 && nc.armijo < 1.0) {
            return Err(Error::contract("invalid Newton configuration"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Fitted measure, canonicalized.
    pub measure: MixingMeasure,
    /// Negative log-likelihood per iteration; entry 0 is at initialization.
    pub nll_trajectory: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// M-steps where an inner solver could not improve and kept the
    /// previous parameters.
    pub mstep_fallbacks: usize,
}

/// Posterior component probabilities, row-major `n x k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    pub n: usize,
    pub k: usize,
    values: Vec<f64>,
}

impl Responsibilities {
    pub fn from_rows(n: usize, k: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * k {
            return Err(Error::contract("responsibility buffer has the wrong size"));
        }
        Ok(Responsibilities { n, k, values })
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.k..(t + 1) * self.k]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn column(&self, i: usize) -> Vec<f64> {
        (0..self.n).map(|t| self.values[t * self.k + i]).collect()
    }
}

/// Design matrices shared by every iteration of a fit.
struct Prepared<'a> {
    data: &'a Dataset,
    /// `(1, M(x_t))` rows.
    gate_features: Vec<f64>,
    /// `(1, x_t)` rows.
    expert_features: Vec<f64>,
    /// One-hot labels, `n x K`.
    onehot: Vec<f64>,
}

impl<'a> Prepared<'a> {
    fn new(data: &'a Dataset, gate: GateTransform) -> Result<Self> {
        let (n, d) = (data.len(), data.d);
        let p = d + 1;
        let mut gate_features = vec![0.0; n * p];
        let mut expert_features = vec![0.0; n * p];
        let mut onehot = vec![0.0; n * data.classes];
        for t in 0..n {
            let x = data.row(t);
            let gf = &mut gate_features[t * p..(t + 1) * p];
            gf[0] = 1.0;
            gate.apply_into(x, &mut gf[1..])?;
            let ef = &mut expert_features[t * p..(t + 1) * p];
            ef[0] = 1.0;
            ef[1..].copy_from_slice(x);
            onehot[t * data.classes + data.y[t]] = 1.0;
        }
        Ok(Prepared {
            data,
            gate_features,
            expert_features,
            onehot,
        })
    }

    fn p(&self) -> usize {
        self.data.d + 1
    }

    /// Per-row `log gate_i + log f_i(y_t)` for every component, `n x k`.
    fn log_joint(&self, g: &MixingMeasure) -> Vec<f64> {
        let (n, k, p, classes) = (self.data.len(), g.len(), self.p(), g.classes);
        let mut out = vec![0.0; n * k];
        out.par_chunks_mut(ROW_CHUNK * k)
            .enumerate()
            .for_each(|(ci, block)| {
                let mut logits = vec![0.0; k];
                let mut scores = vec![0.0; classes];
                for (r, row) in block.chunks_mut(k).enumerate() {
                    let t = ci * ROW_CHUNK + r;
                    let gf = &self.gate_features[t * p..(t + 1) * p];
                    let x = &self.expert_features[t * p + 1..(t + 1) * p];
                    for (l, c) in logits.iter_mut().zip(&g.components) {
                        *l = c.beta0 + crate::numeric::dot(&c.beta1, &gf[1..]);
                    }
                    let gate_norm = log_sum_exp(&logits);
                    let y = self.data.y[t];
                    for ((o, c), l) in row.iter_mut().zip(&g.components).zip(&logits) {
                        c.expert_logits_into(x, &mut scores);
                        *o = l - gate_norm + scores[y] - log_sum_exp(&scores);
                    }
                }
            });
        out
    }

    /// Responsibilities and the negative log-likelihood at `g`.
    fn e_step(&self, g: &MixingMeasure) -> (Responsibilities, f64) {
        let k = g.len();
        let mut joint = self.log_joint(g);
        let mut row_ll = vec![0.0; self.data.len()];
        joint
            .par_chunks_mut(k)
            .zip(row_ll.par_iter_mut())
            .for_each(|(row, ll)| {
                let lse = log_sum_exp(row);
                for v in row.iter_mut() {
                    *v = (*v - lse).exp();
                }
                *ll = lse;
            });
        let nll = -pairwise_sum(&row_ll);
        (
            Responsibilities {
                n: self.data.len(),
                k,
                values: joint,
            },
            nll,
        )
    }

    fn gate_problem<'b>(&'b self, r: &'b Responsibilities, frozen: Option<&'b [bool]>) -> SoftmaxProblem<'b> {
        SoftmaxProblem {
            features: &self.gate_features,
            p: self.p(),
            targets: r.values(),
            weights: None,
            classes: r.k,
            frozen,
        }
    }

    fn expert_problem<'b>(&'b self, weights: &'b [f64]) -> SoftmaxProblem<'b> {
        SoftmaxProblem {
            features: &self.expert_features,
            p: self.p(),
            targets: &self.onehot,
            weights: Some(weights),
            classes: self.data.classes,
            frozen: None,
        }
    }
}

fn gate_theta(g: &MixingMeasure) -> Vec<f64> {
    g.components[..g.len() - 1]
        .iter()
        .flat_map(|c| std::iter::once(c.beta0).chain(c.beta1.iter().copied()))
        .collect()
}

fn expert_theta(c: &Component) -> Vec<f64> {
    let classes = c.classes();
    (0..classes - 1)
        .flat_map(|s| std::iter::once(c.a[s]).chain(c.b.iter().map(move |row| row[s])))
        .collect()
}

fn set_gate_theta(g: &mut MixingMeasure, theta: &[f64]) {
    let p = g.d + 1;
    let k = g.len();
    for (c, chunk) in g.components[..k - 1].iter_mut().zip(theta.chunks(p)) {
        c.beta0 = chunk[0];
        c.beta1.copy_from_slice(&chunk[1..]);
    }
    let last = g.components.last_mut().expect("nonempty");
    last.beta0 = 0.0;
    last.beta1.iter_mut().for_each(|v| *v = 0.0);
    g.canonical = true;
}

fn set_expert_theta(c: &mut Component, theta: &[f64]) {
    let p = c.dim() + 1;
    for (s, chunk) in theta.chunks(p).enumerate() {
        c.a[s] = chunk[0];
        for (row, v) in c.b.iter_mut().zip(&chunk[1..]) {
            row[s] = *v;
        }
    }
}

fn check_shapes(g: &MixingMeasure, data: &Dataset) -> Result<()> {
    if g.d != data.d || g.classes != data.classes {
        return Err(Error::contract(format!(
            "measure is (d={}, K={}) but dataset is (d={}, K={})",
            g.d, g.classes, data.d, data.classes
        )));
    }
    Ok(())
}

/// Posterior responsibilities `r_ti = gate_i(x_t) f_i(y_t | x_t) / g(y_t | x_t)`.
pub fn e_step(g: &MixingMeasure, data: &Dataset) -> Result<Responsibilities> {
    check_shapes(g, data)?;
    let prep = Prepared::new(data, g.gate_transform)?;
    Ok(prep.e_step(g).0)
}

/// Expected complete-data log-likelihood
/// `Q(G) = sum_t sum_i r_ti [log gate_i(x_t) + log f_i(y_t | x_t)]`.
pub fn expected_complete_loglik(g: &MixingMeasure, data: &Dataset, r: &Responsibilities) -> Result<f64> {
    check_shapes(g, data)?;
    if r.n != data.len() || r.k != g.len() {
        return Err(Error::contract("responsibilities do not match (n, k)"));
    }
    let prep = Prepared::new(data, g.gate_transform)?;
    let joint = prep.log_joint(g);
    let terms: Vec<f64> = joint
        .chunks(g.len())
        .zip(r.values().chunks(g.len()))
        .map(|(lj, rr)| lj.iter().zip(rr).filter(|(_, &w)| w > 0.0).map(|(l, w)| w * l).sum())
        .collect();
    Ok(pairwise_sum(&terms))
}

/// Result of one M-step.
#[derive(Debug, Clone, PartialEq)]
pub struct MStep {
    pub measure: MixingMeasure,
    /// Why the step fell back to the previous parameters, if it did.
    pub warning: Option<String>,
}

/// One M-step from responsibilities `r` computed at `g`.
pub fn m_step(r: &Responsibilities, data: &Dataset, g: &MixingMeasure, cfg: &FitConfig) -> Result<MStep> {
    check_shapes(g, data)?;
    if r.n != data.len() || r.k != g.len() {
        return Err(Error::contract("responsibilities do not match (n, k)"));
    }
    let prep = Prepared::new(data, g.gate_transform)?;
    Ok(m_step_prepared(&prep, r, g, cfg))
}

fn gate_mask(g: &MixingMeasure, pinning: &GatePinning) -> Option<Vec<bool>> {
    match pinning {
        GatePinning::LastComponent => None,
        GatePinning::LastComponentAndSlopes(list) => {
            let p = g.d + 1;
            let mut mask = vec![false; (g.len() - 1) * p];
            for &i in list.iter().filter(|&&i| i + 1 < g.len()) {
                mask[i * p + 1..(i + 1) * p].iter_mut().for_each(|m| *m = true);
            }
            Some(mask)
        }
    }
}

fn m_step_prepared(prep: &Prepared<'_>, r: &Responsibilities, g: &MixingMeasure, cfg: &FitConfig) -> MStep {
    let mut next = g.canonicalize();
    let mut warnings = Vec::new();

    if next.len() > 1 {
        let mask = gate_mask(&next, &cfg.gate_pinning);
        let problem = prep.gate_problem(r, mask.as_deref());
        let mut theta = gate_theta(&next);
        let out = problem.maximize(&mut theta, &cfg.newton);
        if out.stalled {
            warnings.push(format!("gate solver stalled at gradient norm {:.3e}", out.grad_norm));
        } else {
            set_gate_theta(&mut next, &theta);
        }
    }

    let updates: Vec<(usize, Option<Vec<f64>>, NewtonOutcome)> = (0..next.len())
        .into_par_iter()
        .map(|i| {
            let weights = r.column(i);
            let problem = prep.expert_problem(&weights);
            let mut theta = expert_theta(&next.components[i]);
            let out = problem.maximize(&mut theta, &cfg.newton);
            (i, (!out.stalled).then_some(theta), out)
        })
        .collect();
    for (i, theta, out) in updates {
        match theta {
            Some(theta) => set_expert_theta(&mut next.components[i], &theta),
            None => warnings.push(format!(
                "expert {i} solver stalled at gradient norm {:.3e}",
                out.grad_norm
            )),
        }
    }

    MStep {
        measure: next,
        warning: (!warnings.is_empty()).then(|| warnings.join("; ")),
    }
}

/// Runs EM from `init` under gate transform `gate`.
pub fn fit(data: &Dataset, cfg: &FitConfig, gate: GateTransform, init: &MixingMeasure) -> Result<FitReport> {
    cfg.validate()?;
    check_shapes(init, data)?;
    if init.len() != cfg.k {
        return Err(Error::contract(format!(
            "initial measure has {} components, config asks for {}",
            init.len(),
            cfg.k
        )));
    }
    let prep = Prepared::new(data, gate)?;
    let mut current = init.clone().with_gate(gate).canonicalize();
    let (mut resp, mut nll) = prep.e_step(&current);
    if !nll.is_finite() {
        return Err(Error::Range("negative log-likelihood is not finite at initialization".into()));
    }
    let mut trajectory = vec![nll];
    let mut converged = false;
    let mut fallbacks = 0;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        iterations += 1;
        let step = m_step_prepared(&prep, &resp, &current, cfg);
        if let Some(w) = &step.warning {
            log::warn!("EM iteration {iterations}: {w}");
            fallbacks += 1;
        }
        current = step.measure;
        let (next_resp, next_nll) = prep.e_step(&current);
        if !next_nll.is_finite() {
            return Err(Error::Range(format!(
                "negative log-likelihood became non-finite at iteration {iterations}"
            )));
        }
        let change = (nll - next_nll).abs() / (1.0 + next_nll.abs());
        resp = next_resp;
        nll = next_nll;
        trajectory.push(nll);
        if change < cfg.tol && !cfg.fixed_iterations {
            converged = true;
            break;
        }
    }

    Ok(FitReport {
        measure: current.canonicalize(),
        nll_trajectory: trajectory,
        iterations,
        converged,
        mstep_fallbacks: fallbacks,
    })
}

/// Uniformly random assignment of `k` items to `cells` nonempty labelled
/// sets (rejection sampling over all assignments).
pub fn random_partition<R: Rng + ?Sized>(k: usize, cells: usize, rng: &mut R) -> Vec<Vec<usize>> {
    assert!(k >= cells && cells >= 1);
    loop {
        let mut out = vec![Vec::new(); cells];
        for i in 0..k {
            out[rng.random_range(0..cells)].push(i);
        }
        if out.iter().all(|c| !c.is_empty()) {
            return out;
        }
    }
}

/// Initialization used by the rate experiments, returning the cell sizes
/// alongside the measure. Fitted components are ordered by the true
/// component they start near, so the last one (whose gate is pinned)
/// belongs to the last true cell.
pub fn init_near_truth_with_cells(
    truth: &MixingMeasure,
    k: usize,
    seed: u64,
    sigma: f64,
) -> Result<(MixingMeasure, Vec<usize>)> {
    let k_true = truth.len();
    if k < k_true {
        return Err(Error::contract(format!(
            "cannot initialize {k} components near a {k_true}-component truth"
        )));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::contract("sigma must be finite and nonnegative"));
    }
    let truth = truth.canonicalize();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[ROLE_INIT]));
    let cells = random_partition(k, k_true, &mut rng);
    let classes = truth.classes;
    let noise = |rng: &mut ChaCha8Rng| sigma * rng.sample::<f64, _>(StandardNormal);

    let mut components = Vec::with_capacity(k);
    for (j, cell) in cells.iter().enumerate() {
        let shift = (cell.len() as f64).ln();
        for _ in cell {
            let mut c = truth.components[j].clone();
            let is_last = components.len() == k - 1;
            if !is_last {
                c.beta0 += noise(&mut rng);
                c.beta1.iter_mut().for_each(|v| *v += noise(&mut rng));
            }
            c.a[..classes - 1].iter_mut().for_each(|v| *v += noise(&mut rng));
            for row in &mut c.b {
                row[..classes - 1].iter_mut().for_each(|v| *v += noise(&mut rng));
            }
            c.beta0 -= shift;
            components.push(c);
        }
    }
    let sizes = cells.iter().map(Vec::len).collect();
    let measure = MixingMeasure::new(components, truth.gate_transform)?.canonicalize();
    Ok((measure, sizes))
}

/// Partitions `{1..k}` into one nonempty cell per true component and starts
/// each fitted component at its cell's true parameters plus Gaussian noise
/// of standard deviation `sigma`.
pub fn init_near_truth(truth: &MixingMeasure, k: usize, seed: u64, sigma: f64) -> Result<MixingMeasure> {
    Ok(init_near_truth_with_cells(truth, k, seed, sigma)?.0)
}

fn init_random(k: usize, d: usize, classes: usize, gate: GateTransform, seed: u64, scale: f64) -> Result<MixingMeasure> {
    if !(scale > 0.0) {
        return Err(Error::contract("random init scale must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[ROLE_INIT]));
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect() };
    let components = (0..k)
        .map(|_| {
            let beta0 = draw(1)[0];
            let beta1 = draw(d);
            let a_free = draw(classes - 1);
            let b_free: Vec<Vec<f64>> = (0..classes - 1).map(|_| draw(d)).collect();
            Component::from_free(beta0, beta1, &a_free, &b_free)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MixingMeasure::new(components, gate)?.canonicalize())
}

/// Shuffles component order with a seeded RNG (label-symmetry checks).
pub fn permute_components(g: &MixingMeasure, seed: u64) -> (MixingMeasure, Vec<usize>) {
    let mut order: Vec<usize> = (0..g.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = g.clone();
    out.components = order.iter().map(|&i| g.components[i].clone()).collect();
    out.canonical = false;
    (out, order)
}
