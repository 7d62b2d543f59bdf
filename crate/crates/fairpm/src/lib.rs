//! Fair patient-trial matching at desk scale.
//!
//! The crate learns joint embeddings of synthetic patient records and trial
//! eligibility criteria, trains them under a criteria-discrepancy objective
//! with an optional group fairness constraint, and audits demographic parity
//! and equal opportunity at the criterion and trial level.
//!
//! Pipeline, end to end:
//!
//! 1. [`corpus`] generates a seeded synthetic corpus with controllable group
//!    bias and a rule oracle for ground-truth labels.
//! 2. [`encoders`] map patients (memory-network attention over visits) and
//!    criterion texts (convolution + highway) into one embedding space.
//! 3. [`objectives`] assemble cross-entropy, criteria-discrepancy, and the
//!    criteria-level fairness constraint into one differentiable loss.
//! 4. [`trainer`] runs seeded, deterministic optimization with early
//!    stopping and checkpointing.
//! 5. [`evaluator`] predicts both tasks and reports accuracy, F1, DP and EO
//!    per sensitive attribute, including lambda sweeps and case studies.
//!
//! All numerics run on the in-crate [`autodiff`] engine (64-bit floats,
//! reverse mode), so every gradient is verifiable by finite differences.

pub mod autodiff;
pub mod corpus;
pub mod encoders;
pub mod evaluator;
pub mod objectives;
pub mod parallel;
pub mod trainer;
