//! Simulation and scheduling for multi-server federated learning on a chain
//! of overlapping cells, where clients in each overlap relay edge-server
//! models between neighbouring cells.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod channel;
pub mod diagnostics;
pub mod error;
pub mod fl;
pub mod harness;
pub mod model;
pub mod rng;
pub mod scheduler;
pub mod tasks;
pub mod topology;

pub use baselines::BaselineKind;
pub use error::{Error, Result};
pub use model::ModelVector;
pub use rng::SeedTree;
