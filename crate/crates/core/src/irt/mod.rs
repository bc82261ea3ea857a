//! Two-parameter logistic item response model.
//!
//! `P(correct | theta) = 1 / (1 + exp(-a (theta - b)))` with discrimination
//! `a` and difficulty `b`. Item parameters are fitted per response matrix by
//! marginal maximum likelihood, integrating ability over a discretized
//! standard normal prior, using EM.

mod ability;
mod em;
mod io;
mod likelihood;
mod model;
mod quadrature;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ability::{estimate_abilities, AbilityEstimate};
pub use em::{fit_2pl, FitConfig, FitDiagnostics, FitResult};
pub use io::{read_params_csv, read_params_json, write_abilities_csv, write_curves_csv, write_params_csv};
pub use likelihood::{marginal_log_likelihood, marginal_log_likelihood_gradient};
pub use model::{
    difficult_at_average, icc_prob, item_information, sample_curves, test_information, CurveTable, ThetaGrid,
};
pub use quadrature::{Quadrature, QuadratureSpec};

#[derive(Debug, Error, PartialEq)]
pub enum IrtError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("empty item set")]
    EmptyItemSet,
    #[error("empty theta grid")]
    EmptyGrid,
    #[error("invalid theta grid: {0}")]
    InvalidGrid(String),
    #[error("matrix cannot be calibrated: {0}")]
    DegenerateMatrix(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("bad parameter file: {0}")]
    Parse(String),
}

/// Fitted (or given) parameters for one item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemParameters {
    pub item_id: String,
    /// Discrimination. Negative values are allowed.
    pub a: f64,
    /// Difficulty, on the ability scale.
    pub b: f64,
    #[serde(default)]
    pub se_a: Option<f64>,
    #[serde(default)]
    pub se_b: Option<f64>,
    /// Not identifiable from the data, or pinned at a parameter bound.
    #[serde(default)]
    pub degenerate: bool,
}

impl ItemParameters {
    pub fn new(item_id: impl Into<String>, a: f64, b: f64) -> Self {
        ItemParameters { item_id: item_id.into(), a, b, se_a: None, se_b: None, degenerate: false }
    }
}
