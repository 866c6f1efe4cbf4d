//! Parameters of the softmax-gated multinomial logistic mixture of experts
//! and evaluation of its conditional class probabilities.
//!
//! A measure with components `(beta0_i, beta1_i, a_i, b_i)` assigns
//!
//! ```text
//! g(Y = s | x) = sum_i softmax_i(beta1_i . M(x) + beta0_i) * f(s | x; a_i, b_i)
//! f(s | x; a, b) = exp(a_s + b_s . x) / sum_l exp(a_l + b_l . x)
//! ```
//!
//! The last class of every expert is the reference class: `a[K-1] == 0`
//! and the last column of `b` is zero.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gates::GateTransform;
use crate::numeric::{dot, log_sum_exp, softmax_in_place};

/// One gate/expert pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawComponent")]
pub struct Component {
    /// Log gate weight.
    pub beta0: f64,
    /// Gate slope, length `d`.
    pub beta1: Vec<f64>,
    /// Expert intercepts, length `K`; the last entry is zero.
    pub a: Vec<f64>,
    /// Expert slopes as `d` rows of `K` entries; the last column is zero.
    pub b: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct RawComponent {
    beta0: f64,
    beta1: Vec<f64>,
    a: Vec<f64>,
    b: Vec<Vec<f64>>,
}

impl TryFrom<RawComponent> for Component {
    type Error = Error;

    fn try_from(raw: RawComponent) -> Result<Self> {
        Component::new(raw.beta0, raw.beta1, raw.a, raw.b)
    }
}

impl Component {
    pub fn new(beta0: f64, beta1: Vec<f64>, a: Vec<f64>, b: Vec<Vec<f64>>) -> Result<Self> {
        let d = beta1.len();
        let k = a.len();
        if d == 0 {
            return Err(Error::contract("component needs d >= 1"));
        }
        if k < 2 {
            return Err(Error::contract("component needs K >= 2 classes"));
        }
        if b.len() != d || b.iter().any(|row| row.len() != k) {
            return Err(Error::contract(format!("b must be {d} rows of {k} entries")));
        }
        let finite = beta0.is_finite()
            && beta1.iter().all(|v| v.is_finite())
            && a.iter().all(|v| v.is_finite())
            && b.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(Error::contract("component parameters must be finite"));
        }
        if a[k - 1] != 0.0 || b.iter().any(|row| row[k - 1] != 0.0) {
            return Err(Error::contract("reference class parameters a[K] and b[:,K] must be zero"));
        }
        Ok(Component { beta0, beta1, a, b })
    }

    /// Builds a component from the free expert parameters of classes
    /// `1..K-1`; the reference class is filled with zeros.
    ///
    /// `a_free` has `K-1` entries and `b_free[c]` is the slope of class `c`.
    pub fn from_free(beta0: f64, beta1: Vec<f64>, a_free: &[f64], b_free: &[Vec<f64>]) -> Result<Self> {
        let d = beta1.len();
        let k = a_free.len() + 1;
        if b_free.len() != k - 1 || b_free.iter().any(|col| col.len() != d) {
            return Err(Error::contract("free slopes must be K-1 vectors of length d"));
        }
        let mut a = a_free.to_vec();
        a.push(0.0);
        let b = (0..d)
            .map(|r| {
                let mut row: Vec<f64> = b_free.iter().map(|col| col[r]).collect();
                row.push(0.0);
                row
            })
            .collect();
        Component::new(beta0, beta1, a, b)
    }

    pub fn dim(&self) -> usize {
        self.beta1.len()
    }

    pub fn classes(&self) -> usize {
        self.a.len()
    }

    /// Slope vector of class `class` (a column of `b`).
    pub fn slope(&self, class: usize) -> Vec<f64> {
        self.b.iter().map(|row| row[class]).collect()
    }

    /// Writes the expert scores `h_s = a_s + b_s . x` into `out`.
    pub fn expert_logits_into(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.a);
        for (row, &xr) in self.b.iter().zip(x) {
            for (o, &bv) in out.iter_mut().zip(row) {
                *o += bv * xr;
            }
        }
    }

    /// Class probabilities of this expert at `x`.
    pub fn expert_prob(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let mut p = vec![0.0; self.classes()];
        self.expert_logits_into(x, &mut p);
        softmax_in_place(&mut p);
        Ok(p)
    }

    /// `u(s | x) = exp(beta1 . x) * f(s | x)`.
    pub fn u_value(&self, x: &[f64], class: usize) -> Result<f64> {
        if class >= self.classes() {
            return Err(Error::contract(format!("class index {class} out of range")));
        }
        let p = self.expert_prob(x)?;
        Ok(dot(&self.beta1, x).exp() * p[class])
    }

    /// Parameter vector `(beta1, a_1..a_{K-1}, vec(b_1..b_{K-1}))` used for
    /// Voronoi distances. Reference-class entries are left out.
    pub fn atom(&self) -> Vec<f64> {
        let k = self.classes();
        let mut v = self.beta1.clone();
        v.extend_from_slice(&self.a[..k - 1]);
        for c in 0..k - 1 {
            v.extend(self.b.iter().map(|row| row[c]));
        }
        v
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::contract(format!(
                "covariate has length {}, component expects {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }
}

/// Axis-aligned box holding the covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateBox {
    pub bounds: Vec<(f64, f64)>,
}

impl CovariateBox {
    pub fn unit(d: usize) -> Self {
        CovariateBox {
            bounds: vec![(0.0, 1.0); d],
        }
    }

    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::contract("covariate box needs at least one axis"));
        }
        if bounds.iter().any(|&(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo < hi)) {
            return Err(Error::contract("covariate box bounds must be finite with lo < hi"));
        }
        Ok(CovariateBox { bounds })
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    /// Largest absolute coordinate reachable inside the box.
    pub fn sup_norm(&self) -> f64 {
        self.bounds
            .iter()
            .map(|&(lo, hi)| lo.abs().max(hi.abs()))
            .fold(0.0, f64::max)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.bounds
            .iter()
            .map(|&(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
            .collect()
    }
}

/// A finite mixing measure `G = sum_i exp(beta0_i) delta_(beta1_i, a_i, b_i)`
/// together with the gate transform it is evaluated under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMeasure")]
pub struct MixingMeasure {
    pub d: usize,
    #[serde(rename = "K")]
    pub classes: usize,
    pub canonical: bool,
    pub gate_transform: GateTransform,
    pub components: Vec<Component>,
}

#[derive(Deserialize)]
struct RawMeasure {
    d: usize,
    #[serde(rename = "K")]
    classes: usize,
    canonical: bool,
    gate_transform: GateTransform,
    components: Vec<Component>,
}

impl TryFrom<RawMeasure> for MixingMeasure {
    type Error = Error;

    fn try_from(raw: RawMeasure) -> Result<Self> {
        let mut g = MixingMeasure::new(raw.components, raw.gate_transform)?;
        if g.d != raw.d || g.classes != raw.classes {
            return Err(Error::contract("declared d/K disagree with component shapes"));
        }
        if raw.canonical && !g.last_gate_is_zero() {
            return Err(Error::contract("measure flagged canonical but last gate is nonzero"));
        }
        g.canonical = raw.canonical;
        Ok(g)
    }
}

impl MixingMeasure {
    /// Validates shapes; `canonical` is set when the last component's gate
    /// parameters are already zero.
    pub fn new(components: Vec<Component>, gate_transform: GateTransform) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::contract("mixing measure needs at least one component"))?;
        let (d, classes) = (first.dim(), first.classes());
        if components.iter().any(|c| c.dim() != d || c.classes() != classes) {
            return Err(Error::contract("all components must share (d, K)"));
        }
        let mut g = MixingMeasure {
            d,
            classes,
            canonical: false,
            gate_transform,
            components,
        };
        g.canonical = g.last_gate_is_zero();
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn with_gate(mut self, gate: GateTransform) -> Self {
        self.gate_transform = gate;
        self
    }

    fn last_gate_is_zero(&self) -> bool {
        let last = self.components.last().expect("nonempty");
        last.beta0 == 0.0 && last.beta1.iter().all(|&v| v == 0.0)
    }

    /// Checks the extra conditions a ground-truth measure must satisfy:
    /// pairwise distinct experts and at least one nonzero gate slope.
    pub fn validate_truth(&self) -> Result<()> {
        for (i, ci) in self.components.iter().enumerate() {
            for cj in &self.components[i + 1..] {
                if ci.a == cj.a && ci.b == cj.b {
                    return Err(Error::contract("true experts must be pairwise distinct"));
                }
            }
        }
        if !self.components.iter().any(|c| c.beta1.iter().any(|&v| v != 0.0)) {
            return Err(Error::contract("a true measure needs at least one nonzero gate slope"));
        }
        Ok(())
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::contract(format!(
                "covariate has length {}, measure expects {}",
                x.len(),
                self.d
            )));
        }
        Ok(())
    }

    /// Gate scores `beta1_i . M(x) + beta0_i`.
    pub fn gate_logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let m = self.gate_transform.apply(x)?;
        Ok(self
            .components
            .iter()
            .map(|c| dot(&c.beta1, &m) + c.beta0)
            .collect())
    }

    pub fn gate_weights(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut w = self.gate_logits(x)?;
        softmax_in_place(&mut w);
        Ok(w)
    }

    /// Conditional class probabilities `g(. | x)`.
    pub fn density(&self, x: &[f64]) -> Result<Vec<f64>> {
        let weights = self.gate_weights(x)?;
        let mut out = vec![0.0; self.classes];
        let mut expert = vec![0.0; self.classes];
        for (c, w) in self.components.iter().zip(&weights) {
            c.expert_logits_into(x, &mut expert);
            softmax_in_place(&mut expert);
            for (o, p) in out.iter_mut().zip(&expert) {
                *o += w * p;
            }
        }
        Ok(out)
    }

    /// `log g(class | x)` computed as a log-sum-exp over components.
    pub fn log_density(&self, x: &[f64], class: usize) -> Result<f64> {
        let logits = self.gate_logits(x)?;
        let gate_norm = log_sum_exp(&logits);
        let mut expert = vec![0.0; self.classes];
        let joint: Vec<f64> = self
            .components
            .iter()
            .zip(&logits)
            .map(|(c, l)| {
                c.expert_logits_into(x, &mut expert);
                l - gate_norm + expert[class] - log_sum_exp(&expert)
            })
            .collect();
        Ok(log_sum_exp(&joint))
    }

    /// `sum_t log g(y_t | x_t)`.
    pub fn log_likelihood(&self, data: &Dataset) -> Result<f64> {
        if data.d != self.d || data.classes != self.classes {
            return Err(Error::contract("dataset shape does not match the measure"));
        }
        let mut terms = Vec::with_capacity(data.len());
        for t in 0..data.len() {
            terms.push(self.log_density(data.row(t), data.y[t])?);
        }
        Ok(crate::numeric::pairwise_sum(&terms))
    }

    /// Adds `(shift0, shift1)` to every component's gate parameters.
    /// The conditional density is unchanged.
    pub fn translate_gates(&self, shift0: f64, shift1: &[f64]) -> MixingMeasure {
        let mut out = self.clone();
        for c in &mut out.components {
            c.beta0 += shift0;
            for (b, s) in c.beta1.iter_mut().zip(shift1) {
                *b += s;
            }
        }
        out.canonical = out.last_gate_is_zero();
        out
    }

    /// Translates the gates so the last component has `beta0 = 0` and
    /// `beta1 = 0`.
    pub fn canonicalize(&self) -> MixingMeasure {
        let last = self.components.last().expect("nonempty");
        let shift1: Vec<f64> = last.beta1.iter().map(|v| -v).collect();
        let mut out = self.translate_gates(-last.beta0, &shift1);
        // exact zeros, not x - x rounding
        let last = out.components.last_mut().expect("nonempty");
        last.beta0 = 0.0;
        last.beta1.iter_mut().for_each(|v| *v = 0.0);
        out.canonical = true;
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// `n` labelled observations. Labels are stored zero-based in memory and
/// written one-based in CSV files.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub d: usize,
    pub classes: usize,
    x: Vec<f64>,
    pub y: Vec<usize>,
}

impl Dataset {
    /// `x` is row-major `n x d`; `y` holds zero-based class indices.
    pub fn new(d: usize, classes: usize, x: Vec<f64>, y: Vec<usize>) -> Result<Self> {
        if d == 0 || classes < 2 {
            return Err(Error::contract("dataset needs d >= 1 and K >= 2"));
        }
        if y.is_empty() {
            return Err(Error::contract("dataset needs n >= 1"));
        }
        if x.len() != y.len() * d {
            return Err(Error::contract(format!(
                "covariate buffer has {} values, expected {} x {d}",
                x.len(),
                y.len()
            )));
        }
        if let Some(bad) = y.iter().find(|&&s| s >= classes) {
            return Err(Error::contract(format!("label {} outside 1..={classes}", bad + 1)));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("covariates must be finite"));
        }
        Ok(Dataset { d, classes, x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.x[t * self.d..(t + 1) * self.d]
    }

    pub fn covariates(&self) -> &[f64] {
        &self.x
    }

    /// Rows reordered as `order[0], order[1], ...`.
    pub fn select(&self, order: &[usize]) -> Result<Dataset> {
        let mut x = Vec::with_capacity(order.len() * self.d);
        let mut y = Vec::with_capacity(order.len());
        for &t in order {
            if t >= self.len() {
                return Err(Error::contract(format!("row {t} out of range")));
            }
            x.extend_from_slice(self.row(t));
            y.push(self.y[t]);
        }
        Dataset::new(self.d, self.classes, x, y)
    }

    /// Writes the header `x1,...,xd,y` followed by one row per observation.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        let mut header: Vec<String> = (1..=self.d).map(|j| format!("x{j}")).collect();
        header.push("y".into());
        w.write_record(&header)?;
        for t in 0..self.len() {
            let mut rec: Vec<String> = self.row(t).iter().map(|v| v.to_string()).collect();
            rec.push((self.y[t] + 1).to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Reads a dataset CSV. `classes` fixes K; labels must lie in `1..=K`.
    pub fn read_csv(path: &Path, classes: usize) -> Result<Dataset> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = csv::Reader::from_reader(file);
        let header = r.headers()?.clone();
        let d = header.len().saturating_sub(1);
        let expected: Vec<String> = (1..=d).map(|j| format!("x{j}")).chain(["y".into()]).collect();
        if d == 0 || header.iter().ne(expected.iter().map(String::as_str)) {
            return Err(Error::contract(format!(
                "{}: header must be `x1,...,xd,y`",
                path.display()
            )));
        }
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let bad = |field: &str| {
                Error::contract(format!("{}: row {}: bad value `{field}`", path.display(), line + 1))
            };
            for field in rec.iter().take(d) {
                x.push(field.trim().parse::<f64>().map_err(|_| bad(field))?);
            }
            let label = &rec[d];
            let s: usize = label.trim().parse().map_err(|_| bad(label))?;
            if s == 0 {
                return Err(bad(label));
            }
            y.push(s - 1);
        }
        Dataset::new(d, classes, x, y)
    }
}
