pub mod abstract_mdp;
pub mod cli;
pub mod diffcore;
pub mod envs;
pub mod error;
pub mod experience;
pub mod homomorphism;
pub mod planner;

pub use error::{Error, Result};
