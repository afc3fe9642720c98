//! Pseudo-value based multi-state survival analysis.
//!
//! - [`data`]: long-format event histories, validation, risk sets.
//! - [`estimators`]: Aalen-Johansen (AJ) and landmark AJ (LMAJ) estimates of
//!   transition probabilities, state occupation and dynamic state occupation.
//! - [`markov_tests`]: global and transition-specific tests of the Markov assumption.
//! - [`pseudo`]: jackknife pseudo values and the test-driven estimator selection.
//! - [`model`]: feedforward pseudo-value regression network and its linear baseline.
//! - [`metrics`]: time-dependent Brier score and AUC with their integrated summaries.
//! - [`simulate`]: synthetic cohorts and censoring schemes.

pub mod data;
pub mod estimators;
pub mod markov_tests;
pub mod simulate;
pub mod pseudo;
pub mod model;
pub mod metrics;
