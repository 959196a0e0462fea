//! Doubly robust estimation of average treatment effects on the treated in
//! staggered-adoption panels.
//!
//! Units adopt a binary treatment at different periods (or never) and stay
//! treated; outcomes and covariates are observed each period. The crate
//! estimates the building-block effects `τ_{g,t}` — the average effect at
//! period `t` for the group that adopted at period `g` — and aggregates them
//! by group, by period, by exposure duration (event study), and overall.
//!
//! The headline estimators combine an outcome-trend model with adoption
//! propensities so that either model being correct yields consistency
//! (double robustness). Comparison units are the not-yet-treated, pooled
//! either by inverse variance (`aivw`) or by propensity alone (`aipw`).
//! Simpler baselines (regression-only, weighting-only, two-way fixed
//! effects) are included for contrast. Inference is via influence
//! functions; a seeded Monte Carlo lab reproduces the estimators' sampling
//! behaviour under six synthetic scenarios.
//!
//! Modules, bottom-up:
//! - [`panel`]: long-CSV ingestion, balanced-panel validation, group tallies.
//! - [`design`]: design matrices for the outcome, variance, and propensity
//!   working models.
//! - [`linmod`]: rank-revealing least squares, logistic regression, and the
//!   fitted nuisance bundle.
//! - [`estimators`]: cell-level effect estimators and the two-way
//!   fixed-effects baseline.
//! - [`inference`]: influence functions, aggregation, standard errors, and
//!   confidence intervals.
//! - [`simlab`]: synthetic scenario generator and the Monte Carlo driver.

pub mod design;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod linmod;
pub mod panel;
pub mod simlab;

pub use error::{Error, Result};
