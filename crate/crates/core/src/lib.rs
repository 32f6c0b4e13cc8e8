//! Numerical laboratory for double descent of least-squares binary
//! classifiers on Gaussian data, together with a post-hoc OOD scoring engine,
//! AUC evaluation and Neural-Collapse metrics over exported feature tables.
//!
//! Numerical code is generic over [`Real`] (`f32` or `f64`); the aliases at the
//! crate root fix the scalar to `f64`, which is what file ingestion produces.

// `!(x > 0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod gauss_model;
pub mod ingest;
pub mod least_squares;
pub mod linalg;
pub mod metrics;
pub mod ood_scores;
pub mod risk_mc;
pub mod risk_theory;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Teacher = gauss_model::TeacherModel<f64>;
pub type Samples = gauss_model::SampleSet<f64>;
pub type OodInputs = gauss_model::OodInputConfig<f64>;
pub type Classifier = least_squares::SubsetClassifier<f64>;
pub type Estimate = risk_mc::McEstimate<f64>;
pub type Curve = risk_mc::RiskCurve<f64>;
pub type Spectrum = risk_theory::SpectrumBounds<f64>;
pub type Outputs = ood_scores::ModelOutputs<f64>;
pub type Head = ood_scores::ClassifierHead<f64>;
pub type Stats = ood_scores::IdStats<f64>;
pub type Scores = ood_scores::ScoreVector<f64>;
