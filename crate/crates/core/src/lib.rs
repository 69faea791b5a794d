//! Linearly constrained recursive least-squares estimation: the CLS, rCLS
//! and DCD-rCLS estimators, closed-form steady-state predictions, and a
//! seeded Monte Carlo harness that checks one against the other.

pub mod acceptance;
pub mod cli;
pub mod filters;
pub mod model;
pub mod montecarlo;
pub mod numerics;
pub mod theory;
