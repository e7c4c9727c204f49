//! Phase-type survival forests for potentially avoidable hospital readmissions.
//!
//! The crate covers the full batch pipeline:
//!
//! - [`records`] — admission record schema, file ingest, patient timelines.
//! - [`par`] — the potentially-avoidable-readmission (PAR) labeling engine:
//!   role classification, exclusion rules, clinical-relation marking,
//!   physician overrides, PAR series, and rates.
//! - [`phase_type`] — Coxian phase-type distributions: density, survival,
//!   moments, sojourn sampling, and censored-data EM fitting.
//! - [`splitting`] — the WIC splitting criterion and per-node best-split
//!   search used during tree growth.
//! - [`forest`] — the phase-type survival forest: subject-level bootstrap,
//!   unpruned WIC-grown trees, out-of-bag error, and permutation importance.
//! - [`preprocess`] — hot-deck imputation, LOF outlier removal, consistency
//!   fixes, distance discretization, and Breiman replacement.
//! - [`metrics`] — confusion-matrix metrics, ROC/AUROC, risk-decile
//!   calibration, and repeated split-sample validation.
//! - [`synth`] — synthetic cohort generation with known ground truth.

pub mod data;
pub mod error;
pub mod forest;
pub mod metrics;
pub mod par;
pub mod phase_type;
pub mod preprocess;
pub mod records;
pub mod seed;
pub mod splitting;
pub mod synth;

pub use data::{FeatureDef, FeatureKind, FeatureValue, TrainingRow, TrainingSchema, TrainingSet};
pub use error::CoreError;
pub use forest::{ForestConfig, SurvivalForest, SurvivalTree};
pub use par::{LabelOutcome, LabelReport, ParSeries, RuleTables};
pub use phase_type::{CoxianPh, EmConfig, FitDiagnostics, ObservationSet};
pub use records::{AdmissionRecord, CovariateVector, PatientTimeline};
