//! Constrained preference optimization for autoregressive routing policies.
//!
//! The crate is organised bottom-up:
//!
//! - [`problems`]: instances and trajectory evaluators (objective, violations,
//!   feasibility indicator, Lagrangian);
//! - [`generators`]: seeded instance generation and 8x geometric augmentation;
//! - [`ranking`]: the feasibility-first partial order and batch ranking;
//! - [`tape`] and [`policy`]: a small attention policy with reverse-mode
//!   gradients;
//! - [`losses`]: preference losses (dual / margin / primal and variants) and a
//!   REINFORCE baseline;
//! - [`oracle`]: exact branch-and-bound and enumeration for small instances;
//! - [`harness`]: training, evaluation, ablation grids and checkpoints.

pub mod exec;
pub mod generators;
pub mod harness;
pub mod losses;


pub mod oracle;
pub mod policy;

pub mod problems;
pub mod ranking;
pub mod rng;
pub mod tape;

pub use exec::Exec;
