//! Relational certification of ReLU networks across multiple executions that
//! share one input perturbation: worst-case k-UAP accuracy and worst-case
//! hamming distance.
//!
//! The pipeline bounds each execution individually with backward linear
//! propagation, jointly refines the ReLU slopes of small groups of unverified
//! executions through a Lagrangian dual of the shared-perturbation LP, and
//! finally solves a MILP over per-execution output indicators.

pub mod corpus;
pub mod crown;
pub mod error;
pub mod milp;
pub mod model;
pub mod norm;
pub mod oracle;
pub mod pipeline;
pub mod refine;
pub mod relspec;
pub mod report;

pub use error::{Error, Result};
