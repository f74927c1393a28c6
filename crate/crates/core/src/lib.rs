//! Control barrier function safety filtering and barrier-shaped rewards for
//! reinforcement learning on a 2D single-integrator navigation task.
//!
//! The pieces compose bottom-up: [`barrier`] evaluates the composite
//! min-barrier, [`filter`] projects velocities onto the safe halfspace,
//! [`env`] steps the navigation task, [`policy`] holds the Gaussian policy
//! and PPO, and [`experiment`] trains and evaluates the four training modes.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod barrier;
pub mod cli;
pub mod config;
pub mod env;
pub mod error;
pub mod experiment;
pub mod filter;
pub mod io;
pub mod policy;
pub mod verify;

pub use error::{Error, Result};
