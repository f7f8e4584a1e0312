//! Two-layer Deep Inverse Prior networks trained by gradient descent on a
//! linear inverse problem, with the quantities that govern convergence.
//!
//! The generator is `g(u, W) = V φ(W u) / √k` with a fixed unit input `u`,
//! trainable hidden weights `W` and frozen output weights `V`. Training
//! minimizes `‖A g − y‖² / (2m)`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod activation;
pub mod cli;
pub mod error;
pub mod experiment;
pub mod flow;
pub mod linalg;
pub mod model;
pub mod problem;
pub mod rng;
pub mod svg;
pub mod theory;

pub use activation::{ActivationKind, ActivationSpec};
pub use error::{DipError, Result};
pub use experiment::{run_grid, GridResult, GridSpec, TrialParams};
pub use flow::{run_flow, FlowConfig, Outcome, Trajectory};
pub use model::{init_network, init_network_with, DipNetwork, VDistribution};
pub use problem::{make_problem, InverseProblem, Operator, OperatorKind};
pub use theory::{build_report, TheoryReport};
