//! Theory-of-Mind uncertainty quantification.
//!
//! Calibrates Likert belief annotations into probabilities, elicits and
//! aggregates model forecasts of an interlocutor's certainty, fits scaling
//! and regression heads, and scores the results.

pub mod calibrate;
pub mod corpus;
pub mod forecast;
pub mod gateway;
pub mod harness;
pub mod metrics;
pub mod questions;
pub mod regress;
