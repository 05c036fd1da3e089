//! Partial-identification bounds for incremental propensity-score
//! intervention effects under unmeasured confounding.
//!
//! The crate covers three layers:
//!
//! - cross-fitted doubly-robust estimation of effect bounds at a single time
//!   point under an odds-ratio confounding model ([`estimator`], backed by
//!   [`bounds`] and [`nuisance`]);
//! - a closed-form simulation oracle and replication harness for validating
//!   the estimators ([`oracle`], [`sim`]);
//! - identification-level sharp bounds for two-period discrete models under
//!   the marginal sensitivity model ([`t2`]).

pub mod bounds;
pub mod error;
pub mod estimator;
mod kernel;
mod linalg;
pub mod model;
pub mod nuisance;
pub mod oracle;
pub mod sim;
pub mod t2;

pub use error::{Error, Result};
pub use kernel::Locality;
pub use model::{Dataset, ParamGrid, SensitivityParams, UnitRecord};
