//! Identification and inference for instrumental-variable quantile
//! regression when the binary treatment is endogenous and misclassified.
//!
//! * [`dgp`]: structural model, simulation and exact population laws.
//! * [`bounds`]: reduced-form QTE, attenuation factor and population checks.
//! * [`identify`]: sharp identified set and the observational-equivalence
//!   perturbation.
//! * [`moments`]: sample moment equalities/inequalities and the test statistic.
//! * [`inference`]: profiled minimum-resampling test and confidence sets.
//! * [`montecarlo`]: population table and coverage experiments.

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod dgp;
pub mod error;
pub mod identify;
pub mod inference;
pub mod moments;
pub mod montecarlo;
pub mod numerics;
pub mod rng;

pub use bounds::{AttenuationReport, QuantileSpec};
pub use dgp::{Dataset, InstrumentSupport, Observation, PopulationDistribution, QuantileFamily, StructuralModel};
pub use error::{Error, Result};
pub use identify::{IdentifiedSet, ObservedLaw, ParamPoint, PerturbedModel};
pub use inference::{InferenceConfig, TestResult};
pub use moments::{MomentEvaluation, MomentKind, MomentSpec};
pub use montecarlo::{CoverageCurve, Design};
