//! Adaptive treatment-assignment simulator with anytime sequential testing.

pub mod config;
pub mod dgp;
pub mod engine;
pub mod estimators;
pub mod harness;
pub mod policy;
pub mod regressors;
pub mod rng;
// The erf and inverse-cdf coefficient tables are kept verbatim from the
// published approximations, beyond f64 precision.
#[allow(clippy::excessive_precision)]
pub mod testing;
