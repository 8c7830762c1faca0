//! Predictive-inference toolkit wrapping any point-prediction regressor with
//! adaptive, subgroup-transparent prediction intervals.
//!
//! Pipeline: split the data, standardize on the training split, fit a base
//! regressor and a k-means covariate partition, build a nested family of
//! candidate intervals from recentered-influence-function regression on the
//! first calibration half, then select one band per subgroup by conformal
//! calibration on the second half. Variants: plain split conformal
//! prediction, per-subgroup selection (`cuqr`), its PAC-corrected form
//! (`cuqr_pac`) and a fixed per-subgroup quantile ablation (`cq`).

pub mod conformal;
pub mod core_types;
pub mod error;
pub mod evaluation;
pub mod models;
pub mod numerics;
pub mod partition;
pub mod pipeline;
pub mod rif_engine;

pub use conformal::{CalibratedPredictor, Method, PredictionResult};
pub use core_types::{DataSplit, Dataset, Interval, QuantileGrid, RunConfig};
pub use error::{Error, Result};
pub use evaluation::{EvaluationReport, SyntheticSpec};
pub use pipeline::{fit_pipeline, FittedPipeline, ModelArtifact};
