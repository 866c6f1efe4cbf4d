//! Covariate transforms used inside the softmax gate, and a numerical rank
//! test for the linear-independence condition that modified gates must meet.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::model::CovariateBox;

/// Radius of the ball removed around points where a transform is undefined
/// when sampling covariates.
pub const EXCLUSION_RADIUS: f64 = 1e-6;

/// Input map `M` applied to the covariate before the gate's linear score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum GateTransform {
    /// `M(x) = x`, the standard softmax gate.
    #[default]
    Identity,
    Sigmoid,
    Tanh,
    Cos,
    Sin,
    /// `log|x|`, undefined at zero coordinates.
    LogAbs,
    /// `x^m` element-wise, `m >= 3`.
    Power(u32),
    /// `x / ||x||`, undefined at the origin.
    Normalize,
}

impl GateTransform {
    pub fn power(m: u32) -> Result<Self> {
        if m < 3 {
            return Err(Error::contract(format!("power transform needs m >= 3, got {m}")));
        }
        Ok(GateTransform::Power(m))
    }

    pub fn is_identity(self) -> bool {
        self == GateTransform::Identity
    }

    /// Writes `M(x)` into `out`.
    pub fn apply_into(self, x: &[f64], out: &mut [f64]) -> Result<()> {
        debug_assert_eq!(x.len(), out.len());
        match self {
            GateTransform::Identity => out.copy_from_slice(x),
            GateTransform::Sigmoid => {
                for (o, &v) in out.iter_mut().zip(x) {
                    *o = 1.0 / (1.0 + (-v).exp());
                }
            }
            GateTransform::Tanh => {
                for (o, &v) in out.iter_mut().zip(x) {
                    *o = v.tanh();
                }
            }
            GateTransform::Cos => {
                for (o, &v) in out.iter_mut().zip(x) {
                    *o = v.cos();
                }
            }
            GateTransform::Sin => {
                for (o, &v) in out.iter_mut().zip(x) {
                    *o = v.sin();
                }
            }
            GateTransform::LogAbs => {
                for (j, (o, &v)) in out.iter_mut().zip(x).enumerate() {
                    if v == 0.0 || !v.is_finite() {
                        return Err(self.domain_error(j, v));
                    }
                    *o = v.abs().ln();
                }
            }
            GateTransform::Power(m) => {
                for (o, &v) in out.iter_mut().zip(x) {
                    *o = v.powi(m as i32);
                }
            }
            GateTransform::Normalize => {
                let norm = crate::numeric::norm(x);
                if norm == 0.0 || !norm.is_finite() {
                    return Err(self.domain_error(0, x.first().copied().unwrap_or(0.0)));
                }
                for (o, &v) in out.iter_mut().zip(x) {
                    *o = v / norm;
                }
            }
        }
        Ok(())
    }

    pub fn apply(self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; x.len()];
        self.apply_into(x, &mut out)?;
        Ok(out)
    }

    /// Whether `x` lies inside the exclusion ball of an undefined point.
    pub fn near_excluded(self, x: &[f64]) -> bool {
        match self {
            GateTransform::LogAbs => x.iter().any(|v| v.abs() < EXCLUSION_RADIUS),
            GateTransform::Normalize => crate::numeric::norm(x) < EXCLUSION_RADIUS,
            _ => false,
        }
    }

    fn has_excluded_points(self) -> bool {
        matches!(self, GateTransform::LogAbs | GateTransform::Normalize)
    }

    fn domain_error(self, coordinate: usize, value: f64) -> Error {
        Error::Domain {
            transform: self.to_string(),
            coordinate,
            value,
        }
    }
}

impl fmt::Display for GateTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GateTransform::Identity => f.write_str("identity"),
            GateTransform::Sigmoid => f.write_str("sigmoid"),
            GateTransform::Tanh => f.write_str("tanh"),
            GateTransform::Cos => f.write_str("cos"),
            GateTransform::Sin => f.write_str("sin"),
            GateTransform::LogAbs => f.write_str("logabs"),
            GateTransform::Power(m) => write!(f, "power{m}"),
            GateTransform::Normalize => f.write_str("normalize"),
        }
    }
}

impl FromStr for GateTransform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(GateTransform::Identity),
            "sigmoid" => Ok(GateTransform::Sigmoid),
            "tanh" => Ok(GateTransform::Tanh),
            "cos" => Ok(GateTransform::Cos),
            "sin" => Ok(GateTransform::Sin),
            "logabs" => Ok(GateTransform::LogAbs),
            "normalize" => Ok(GateTransform::Normalize),
            other => match other.strip_prefix("power").map(str::parse::<u32>) {
                Some(Ok(m)) => GateTransform::power(m),
                _ => Err(Error::contract(format!("unknown gate transform `{other}`"))),
            },
        }
    }
}

impl Serialize for GateTransform {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for GateTransform {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Outcome of [`independence_check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndependenceReport {
    pub transform: GateTransform,
    pub d: usize,
    pub monomial_count: usize,
    pub numeric_rank: usize,
    pub min_singular_value: f64,
    /// Singular values relative to the largest one, descending.
    pub relative_singular_values: Vec<f64>,
    pub rel_tol: f64,
    pub n_samples: usize,
    /// Radius of the ball removed around undefined points, if any were.
    pub excluded_radius: Option<f64>,
    pub pass: bool,
}

/// Exponent pairs `(p, q)` with `|p| + |q| <= 2`, graded lexicographic.
///
/// A monomial is stored as its (at most two) variable indices; index `v < d`
/// refers to `x_v`, `v >= d` to `M(x)_{v-d}`.
pub fn monomials(d: usize) -> Vec<Vec<usize>> {
    let vars = 2 * d;
    let mut out = vec![Vec::new()];
    out.extend((0..vars).map(|v| vec![v]));
    for v in 0..vars {
        for w in v..vars {
            out.push(vec![v, w]);
        }
    }
    out
}

/// Numerical rank of the sampled design `{x^p M(x)^q : |p| + |q| <= 2}`.
///
/// Columns are scaled to unit Euclidean norm before the SVD, and a singular
/// value counts towards the rank when it exceeds `rel_tol * sigma_max`.
pub fn independence_check(
    transform: GateTransform,
    domain: &CovariateBox,
    n_samples: usize,
    rel_tol: f64,
    seed: u64,
) -> Result<IndependenceReport> {
    let d = domain.dim();
    let terms = monomials(d);
    if n_samples < terms.len() {
        return Err(Error::contract(format!(
            "independence check needs at least {} samples, got {n_samples}",
            terms.len()
        )));
    }
    if !(rel_tol > 0.0) {
        return Err(Error::contract("rel_tol must be positive"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut design = DMatrix::<f64>::zeros(n_samples, terms.len());
    let mut vars = vec![0.0; 2 * d];
    for row in 0..n_samples {
        let x = loop {
            let x = domain.sample(&mut rng);
            if !transform.near_excluded(&x) {
                break x;
            }
        };
        vars[..d].copy_from_slice(&x);
        transform.apply_into(&x, &mut vars[d..])?;
        for (col, term) in terms.iter().enumerate() {
            design[(row, col)] = term.iter().map(|&v| vars[v]).product();
        }
    }
    for mut col in design.column_iter_mut() {
        let n = col.norm();
        if n > 0.0 {
            col /= n;
        }
    }

    let mut singular: Vec<f64> = design.singular_values().iter().copied().collect();
    singular.sort_by(|a, b| b.total_cmp(a));
    let sigma_max = singular.first().copied().unwrap_or(0.0);
    let numeric_rank = singular.iter().filter(|&&s| s > rel_tol * sigma_max).count();
    let relative = singular
        .iter()
        .map(|s| if sigma_max > 0.0 { s / sigma_max } else { 0.0 })
        .collect();

    Ok(IndependenceReport {
        transform,
        d,
        monomial_count: terms.len(),
        numeric_rank,
        min_singular_value: singular.last().copied().unwrap_or(0.0),
        relative_singular_values: relative,
        rel_tol,
        n_samples,
        excluded_radius: transform.has_excluded_points().then_some(EXCLUSION_RADIUS),
        pass: numeric_rank == terms.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apply_examples() {
        assert_eq!(GateTransform::Identity.apply(&[0.3, 0.7]).unwrap(), vec![0.3, 0.7]);
        assert_eq!(GateTransform::Sigmoid.apply(&[0.0, 0.0, 0.0]).unwrap(), vec![0.5; 3]);
        let n = GateTransform::Normalize.apply(&[3.0, 4.0]).unwrap();
        assert!((n[0] - 0.6).abs() < 1e-15 && (n[1] - 0.8).abs() < 1e-15);
        assert_eq!(GateTransform::Power(3).apply(&[2.0]).unwrap(), vec![8.0]);
    }

    #[test]
    fn domain_errors_name_the_coordinate() {
        match GateTransform::LogAbs.apply(&[0.5, 0.0]) {
            Err(Error::Domain { coordinate, .. }) => assert_eq!(coordinate, 1),
            other => panic!("expected domain error, got {other:?}"),
        }
        assert!(matches!(
            GateTransform::Normalize.apply(&[0.0, 0.0]),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn tags_round_trip_through_strings() {
        for tag in [
            GateTransform::Identity,
            GateTransform::Sigmoid,
            GateTransform::Tanh,
            GateTransform::Cos,
            GateTransform::Sin,
            GateTransform::LogAbs,
            GateTransform::Power(3),
            GateTransform::Power(7),
            GateTransform::Normalize,
        ] {
            assert_eq!(tag.to_string().parse::<GateTransform>().unwrap(), tag);
            let json = serde_json::to_string(&tag).unwrap();
            assert_eq!(serde_json::from_str::<GateTransform>(&json).unwrap(), tag);
        }
        assert!("power2".parse::<GateTransform>().is_err());
        assert!("relu".parse::<GateTransform>().is_err());
    }

    #[test]
    fn monomial_counts() {
        // C(2d + 2, 2)
        assert_eq!(monomials(1).len(), 6);
        assert_eq!(monomials(2).len(), 15);
        assert_eq!(monomials(3).len(), 28);
        assert_eq!(monomials(1), vec![vec![], vec![0], vec![1], vec![0, 0], vec![0, 1], vec![1, 1]]);
    }

    #[test]
    fn identity_collapses_to_three_functions() {
        let report =
            independence_check(GateTransform::Identity, &CovariateBox::unit(1), 200, 1e-8, 1).unwrap();
        assert_eq!(report.monomial_count, 6);
        assert_eq!(report.numeric_rank, 3);
        assert!(!report.pass);
    }

    #[test]
    fn identity_fails_in_every_dimension() {
        for d in 1..=3 {
            let report =
                independence_check(GateTransform::Identity, &CovariateBox::unit(d), 400, 1e-8, 5)
                    .unwrap();
            assert!(!report.pass, "d = {d}");
        }
    }

    #[test]
    fn bounded_nonlinear_transforms_pass() {
        for tag in [
            GateTransform::Sigmoid,
            GateTransform::Tanh,
            GateTransform::Cos,
            GateTransform::Sin,
        ] {
            for d in 1..=3 {
                let m = monomials(d).len();
                let report =
                    independence_check(tag, &CovariateBox::unit(d), 10 * m, 1e-8, 11).unwrap();
                assert!(report.pass, "{tag} d={d}: {:?}", report.relative_singular_values);
            }
        }
    }

    #[test]
    fn verdict_is_seed_stable() {
        for tag in [GateTransform::Identity, GateTransform::Sigmoid, GateTransform::Cos] {
            let verdicts: Vec<bool> = (0..20)
                .map(|seed| {
                    independence_check(tag, &CovariateBox::unit(1), 60, 1e-8, seed)
                        .unwrap()
                        .pass
                })
                .collect();
            assert!(verdicts.iter().all(|&v| v == verdicts[0]), "{tag}: {verdicts:?}");
        }
    }

    #[test]
    fn logabs_sampling_records_exclusion() {
        let report =
            independence_check(GateTransform::LogAbs, &CovariateBox::unit(1), 100, 1e-8, 3).unwrap();
        assert_eq!(report.excluded_radius, Some(EXCLUSION_RADIUS));
    }

    #[test]
    fn too_few_samples_is_rejected() {
        assert!(matches!(
            independence_check(GateTransform::Sigmoid, &CovariateBox::unit(2), 10, 1e-8, 0),
            Err(Error::Contract(_))
        ));
    }
}
