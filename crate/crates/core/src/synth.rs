//! Ground-truth scenarios and i.i.d. sampling from them.
//!
//! Randomness comes from [`ChaCha8Rng`] seeded through
//! [`derive_seed`](crate::numeric::derive_seed); a stream is identified by
//! `(seed, role)` so covariates and labels never share draws.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gates::GateTransform;
use crate::model::{Component, CovariateBox, Dataset, MixingMeasure};
use crate::theory::{classify_regime, Regime};

/// Named ground truths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Regime1,
    Regime2,
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Regime1 => "regime1",
            Preset::Regime2 => "regime2",
        })
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regime1" => Ok(Preset::Regime1),
            "regime2" => Ok(Preset::Regime2),
            other => Err(Error::contract(format!("unknown scenario `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub truth: MixingMeasure,
    pub gate_transform: GateTransform,
    pub covariate_box: CovariateBox,
    pub regime: Regime,
}

/// Tolerance used when labelling a scenario's regime.
pub const REGIME_TOL: f64 = 1e-12;

impl Scenario {
    pub fn new(name: impl Into<String>, truth: MixingMeasure, covariate_box: CovariateBox) -> Result<Self> {
        truth.validate_truth()?;
        if covariate_box.dim() != truth.d {
            return Err(Error::contract("covariate box dimension differs from truth"));
        }
        let truth = truth.canonicalize();
        Ok(Scenario {
            name: name.into(),
            gate_transform: truth.gate_transform,
            regime: classify_regime(&truth, REGIME_TOL),
            truth,
            covariate_box,
        })
    }

    pub fn num_true_components(&self) -> usize {
        self.truth.len()
    }
}

/// Two-component, two-class, one-dimensional truths used by the rate
/// experiments. Regime 2 collapses the second expert's slope to zero.
pub fn preset(which: Preset, gate: GateTransform) -> Scenario {
    let second_slope = match which {
        Preset::Regime1 => -1.0,
        Preset::Regime2 => 0.0,
    };
    let c1 = Component::new(1.0, vec![3.0], vec![-1.0, 0.0], vec![vec![2.0, 0.0]]).expect("valid");
    let c2 = Component::new(0.0, vec![0.0], vec![1.0, 0.0], vec![vec![second_slope, 0.0]])
        .expect("valid");
    let truth = MixingMeasure::new(vec![c1, c2], gate).expect("valid");
    Scenario::new(which.to_string(), truth, CovariateBox::unit(1)).expect("valid preset")
}

/// Seed-stream roles.
pub(crate) const ROLE_COVARIATES: u64 = 1;
pub(crate) const ROLE_LABELS: u64 = 2;

/// Inverse-CDF categorical draw over classes in order. A `u` that lands
/// exactly on a cumulative boundary goes to the earlier class.
pub fn categorical(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (s, p) in probs.iter().enumerate() {
        acc += p;
        if u <= acc && *p > 0.0 {
            return s;
        }
    }
    probs.len() - 1
}

/// Draws `n` observations: covariates uniform on the box (avoiding the gate
/// transform's undefined points), labels from the true conditional density.
pub fn sample(scenario: &Scenario, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::contract("sample size must be at least 1"));
    }
    let truth = scenario.truth.clone().with_gate(scenario.gate_transform);
    let d = truth.d;
    let mut xs = ChaCha8Rng::seed_from_u64(crate::numeric::derive_seed(seed, &[ROLE_COVARIATES]));
    let mut ys = ChaCha8Rng::seed_from_u64(crate::numeric::derive_seed(seed, &[ROLE_LABELS]));
    let mut x = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let row = loop {
            let row = scenario.covariate_box.sample(&mut xs);
            if !truth.gate_transform.near_excluded(&row) {
                break row;
            }
        };
        let probs = truth.density(&row)?;
        y.push(categorical(&probs, ys.random::<f64>()));
        x.extend_from_slice(&row);
    }
    Dataset::new(d, truth.classes, x, y)
}
