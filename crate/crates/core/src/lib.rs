//! Inference of a human's mental model of a co-present agent, and of the
//! human's goal, from the human's moves in a turn-based grid world.

pub mod agent;
pub mod dist;
pub mod error;
pub mod grid;
pub mod inference;
pub mod planner;
pub mod session;
pub mod simulation;
pub mod trajectory;

pub use error::{Error, Result};
