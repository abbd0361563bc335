//! Homeostatic learning-rate self-regulation under concept shift.
//!
//! A classifier's learning rate is nudged up or down by the classes of the
//! objects it chooses to "ingest". Each decision to ingest or reject is made
//! counterfactually: two copies of the network, one per candidate learning
//! rate, are trained on a replay store of recent samples and the one with the
//! lower store loss wins. Concept shift is simulated by swapping the labels of
//! two classes at a scheduled rate.
//!
//! Modules:
//!
//! - [`nn`]: the 784-80-60-10 ELU perceptron, backprop, SGD, snapshots.
//! - [`gradcheck`]: central finite-difference verification of [`nn::backward`].
//! - [`permutation`] and [`drift`]: IDX loading, label permutations, swap
//!   schedules, the presentation stream.
//! - [`homeostat`]: effect map, replay store, counterfactual decision and the
//!   per-presentation step for each learner kind.
//! - [`oracle`]: brute-force reference for the counterfactual decision.
//! - [`harness`]: configuration, replicate runs, aggregation, CSV and SVG
//!   output, and the command-line driver.
//!
//! See the crate's `examples/` directory for one runnable program per
//! capability.

pub mod drift;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod homeostat;
pub mod nn;
pub mod oracle;
pub mod permutation;

pub use error::{Error, Result};
pub use homeostat::{Controller, EffectMap, HomeostatState, Learner, LrPolicy, StepLog};
pub use nn::{Batch, Mlp, SparseImage};
pub use permutation::LabelPermutation;
