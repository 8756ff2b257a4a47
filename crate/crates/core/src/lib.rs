//! Generalized MCPMod for dose-finding studies.
//!
//! The pipeline runs in two stages. A first-stage ANOVA-type fit reduces
//! subject-level data to per-dose estimates `μ̂` with covariance `Ŝ`
//! ([`firststage`]). Everything downstream consumes only that pair:
//! multiple contrast testing over candidate shapes ([`mcptest`]), and
//! generalized least squares dose-response fitting, model selection,
//! averaging and target-dose estimation ([`glsfit`]).

pub mod drmodels;
pub mod error;
pub mod firststage;
pub mod glsfit;
pub mod linalg;
pub mod mcptest;
pub mod mvnorm;
pub mod numeric;
pub mod optcontrast;
pub mod simharness;

pub use drmodels::{CandidateModel, DoseDesign, FullParams, ModelFamily, ModelSet};
pub use error::{Error, Result};
pub use glsfit::{DosePredictor, FitBounds, FittedModel};
pub use mcptest::{AnovaEstimate, ContrastSource, MctResult};
pub use mvnorm::{CorrMatrix, QmcConfig};
pub use nalgebra::{DMatrix, DVector};
