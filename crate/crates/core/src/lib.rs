//! Exact solvers and verifiers for finite state-adversarial Markov games.
//!
//! In a state-adversarial Markov game every agent acts on a perceived state
//! that its adversary picks from an admissible set around the true state.
//! The crate evaluates fixed agent/adversary policy pairs, computes optimal
//! adversaries, robust state values and stage-wise equilibrium gaps, and
//! searches for agent policies that maximize the worst-case expected value.

pub mod adversary;
pub mod counterexamples;
pub mod equilibrium;
pub mod error;
pub mod eval;
mod linalg;
pub mod maximin;
pub mod model;
pub mod policy;
pub mod robust;

pub use error::{Result, SamgError, Violation};
pub use eval::{OccupancyTable, QTable, ValueTable};
pub use model::{builtin_game, parse_model, random_game, serialize_model, SamgModel};
pub use policy::{AdversaryPolicy, AgentPolicy};
