//! Off-policy policy evaluation with linear function approximation:
//! two time-scale TDC with SVRG-style variance reduction, exact moment
//! oracles for validation, step-size feasibility conditions, and a
//! deterministic experiment harness.

pub mod error;
pub mod numerics;
pub mod env;
pub mod stats;
pub mod instance;
pub mod algorithms;
pub mod diagnostics;
pub mod theory;
pub mod harness;
