//! Deep feedforward networks as first-step estimators for semiparametric
//! causal inference.
//!
//! The crate has two halves. The estimation half fits fully connected ReLU
//! networks by minibatch gradient descent against a family of
//! generalized-linear losses ([`network`], [`losses`], [`training`]). The
//! inference half consumes fitted nuisance functions — outcome regressions
//! per treatment arm and a propensity score — and produces doubly robust
//! influence scores, average-effect and profit estimates with plug-in
//! confidence intervals, treatment-on-the-treated decompositions, and
//! threshold-policy evaluations ([`causal`], [`policy`]). A Monte Carlo
//! harness ([`simulation`]) wires both halves together for coverage studies
//! on synthetic designs.
//!
//! Everything downstream of a seed is deterministic: network initialization,
//! minibatch shuffling, dropout, and simulation draws all run on counter-mode
//! generators keyed by explicit seeds, so repeated runs reproduce bit for
//! bit.

pub mod causal;
pub mod data;
pub mod error;
pub mod losses;
pub mod network;
pub mod policy;
pub mod simulation;
pub mod training;

pub use error::{Error, Result};
