//! Softmax-gated mixtures of multinomial logistic experts.
//!
//! The crate covers the full estimation loop for this model family: exact
//! conditional densities ([`model`]), gate input transforms and their
//! algebraic-independence check ([`gates`]), synthetic data ([`synth`]),
//! maximum likelihood by EM ([`em`]), parameter and density losses
//! ([`metrics`]), identifiability diagnostics ([`theory`]) and replicated
//! convergence-rate experiments ([`harness`]).
//!
//! ```
//! use moe_lab::{synth, GateTransform, Preset};
//!
//! let scenario = synth::preset(Preset::Regime1, GateTransform::Identity);
//! let p = scenario.truth.density(&[0.5]).unwrap();
//! assert!((p[0] - 0.5093).abs() < 1e-4);
//! ```

// Negated comparisons below are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod em;
pub mod error;
pub mod gates;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod synth;
pub mod theory;

pub use em::{fit, FitConfig, FitReport, InitSpec};
pub use error::{Error, Result};
pub use gates::GateTransform;
pub use model::{Component, CovariateBox, Dataset, MixingMeasure};
pub use synth::{Preset, Scenario};
