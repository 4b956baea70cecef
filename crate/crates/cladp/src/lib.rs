//! Online approximate optimal regulation for control-affine nonlinear
//! systems, driven by two concurrent-learning mechanisms:
//!
//! * a parameter identifier that augments the usual gradient update with
//!   residuals evaluated on a recorded history stack, replacing persistence
//!   of excitation with a verifiable rank condition, and
//! * an actor-critic value-function learner whose least-squares critic
//!   minimizes Bellman errors evaluated both along the trajectory and at a
//!   pre-sampled set of state-space points.
//!
//! The crate also ships the verification side: a Riccati oracle for
//! linear-quadratic instances, a gain-condition checker for the sufficient
//! stability conditions, and a deterministic fixed-step simulator with
//! structured CSV/JSON logging. See the `cladp` binary for the CLI.

pub mod adp;
pub mod analysis;
pub mod basis;
pub mod cli;
pub mod config;
pub mod error;
pub mod identifier;
pub mod linalg;
pub mod oracle;
pub mod plant;
pub mod sim;

pub use error::{Error, Result};
