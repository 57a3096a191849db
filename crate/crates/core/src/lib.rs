//! Tabular policy-space compression.
//!
//! Computes a small set of representative softmax policies whose discounted
//! occupancies cover every policy of a controlled Markov process within an
//! exponentiated 2-Rényi divergence budget, certifies the cover with a
//! linear program over the Bellman-flow polytope, and provides downstream
//! off-policy evaluation and optimization routines that consume the cover.

pub mod cmp;
pub mod envs;
pub mod error;
pub mod game;
pub mod grad;
pub mod guarantee;
pub mod instances;
pub mod io;
pub mod lp;
pub mod psca;
pub mod sampling;
pub mod tasks;

pub use cmp::{Occupancy, PolicyParams, TabularCmp};
pub use error::{Error, Result};
pub use game::{CoverSet, GdaConfig};
