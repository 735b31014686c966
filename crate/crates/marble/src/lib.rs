//! Restless multi-armed bandits driven by a hidden Markov environment, with a
//! Whittle-index planning oracle and a two-timescale tabular index learner.
//!
//! The pieces, bottom-up:
//!
//! - [`model`]: instance data (arms, budget, latent chain), validation, the
//!   stationary distribution, and the instance JSON format.
//! - [`averaging`]: the environment-averaged single-arm MDP.
//! - [`oracle`]: subsidized Bellman fixed points, action gaps, Whittle indices
//!   by bisection, and grid-certified indexability verification.
//! - [`simulator`]: seeded generative access to hidden-mode evolution,
//!   mode-dependent reward tables, and Monte-Carlo successors.
//! - [`qwi`]: the synchronous two-timescale learner and step-size schedules.
//! - [`policy`]: budgeted top-M index policies and online evaluation.
//! - [`harness`]: default instance generation and the experiment pipeline
//!   behind the `marble-qwi` CLI.

// Dense little transition tables read most clearly with explicit indices.
#![allow(clippy::needless_range_loop)]

pub mod averaging;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod policy;
pub mod qwi;
pub mod simulator;
