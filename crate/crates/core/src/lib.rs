//! Randomized predictive p-values and calibrated goodness-of-fit diagnostics
//! for count regression models.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod cli;
pub mod distributions;
pub mod error;
pub mod gof;
pub mod regression;
pub mod residuals;
pub mod simlab;
pub mod special;
pub mod stream;

pub use distributions::{DistributionKind, FinitePmf, PredictiveLaw};
pub use error::{Error, Result};
pub use gof::{ks_uniform, replicated_sw, shapiro_wilk, TestResult};
pub use regression::{fit, loglik, predictive_laws, Family, FittedModel, ModelParams, ModelSpec};
pub use residuals::{ResidualKind, ResidualSet};
