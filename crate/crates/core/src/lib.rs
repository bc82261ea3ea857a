//! Exercise difficulty analytics and item calibration for eTextbook logs.
//!
//! The pipeline runs in stages, each in its own module:
//!
//! - [`ingest`]: parse and validate interaction logs, aggregate per
//!   (student, exercise) summaries.
//! - [`metrics`]: behavioral difficulty metrics (`dl`, `hr`, `ir`) and the
//!   `dl` quartile bands.
//! - [`matrix`]: dichotomized per-chapter response matrices.
//! - [`irt`]: the two-parameter logistic model, marginal maximum likelihood
//!   fitting by EM, ability estimates and curve tables.
//! - [`quality`]: discrimination/difficulty labels and good/poor verdicts.
//! - [`sim`]: synthetic cohorts, responses and event logs with known truth.
//! - [`cli`]: the command implementations behind the `exirt` binary.
//!
//! Data-parallel loops go through [`par`]; with the default `parallel`
//! feature they run on rayon, otherwise sequentially. Reductions use a fixed
//! chunking so results are bit-identical either way.

pub mod cli;
pub mod ingest;
pub mod irt;
pub mod matrix;
pub mod metrics;
pub mod par;
pub mod quality;
pub mod schema;
pub mod sim;

pub use ingest::{EventKind, InteractionEvent, StudentExerciseSummary};
pub use irt::{FitConfig, ItemParameters};
pub use matrix::ResponseMatrix;
pub use metrics::ExerciseMetrics;
pub use quality::QualityVerdict;
