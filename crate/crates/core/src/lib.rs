//! Delay-aware VNF placement laboratory.
//!
//! Generates synthetic three-tier data-center topologies carrying a vEPC service chain,
//! labels them with a constraint-respecting teacher placer, trains a multi-output
//! decision tree to imitate the teacher, and tunes the tree's maximum depth with a
//! particle swarm over a delay-plus-penalty objective.

pub mod cart;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod net_model;
pub mod objective;
pub mod features;
pub mod pipeline;
pub mod placer;
pub mod pso;

pub use error::{Error, Result};
