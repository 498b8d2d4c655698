//! Hierarchical logistic and Weibull proportional-hazards regression with
//! Dirichlet-process-mixture priors on subject intercepts, the comparator
//! estimators they are benchmarked against, and a Monte-Carlo harness.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod dpm;
pub mod error;
mod linalg;
pub mod logistic;
pub mod mcmc;
pub mod mh;
pub mod panel;
pub mod quadrature;
pub mod sim;
pub mod stats;
pub mod survival;

pub use error::{Error, Result};
pub use mcmc::{InterceptPrior, McmcSettings, Posterior, Priors};
pub use panel::{BinaryPanel, Design, SurvivalPanel};
pub use stats::RandomStream;
