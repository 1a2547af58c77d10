//! Simulation toolkit for parallel driving with descriptive, predictive and
//! prescriptive virtual vehicles.
//!
//! The pieces, bottom up:
//!
//! - [`markov`]: transition counting, ML estimation, propagation;
//! - [`trace`]: scalar traces, crisp state spaces, synthetic generators;
//! - [`fuzzy`]: membership families and the fuzzy-encoded Markov predictor;
//! - [`descriptive`], [`predictive`], [`prescriptive`]: the three agents;
//! - [`fleet`]: no-stop speed planning on a signalized corridor and the
//!   stop-at-red benchmark;
//! - [`world`]: the closed loop tying agents and vehicles together;
//! - [`cli`]: the `quadsim` command.

pub mod cli;
pub mod descriptive;
pub mod error;
pub mod fleet;
pub mod fuzzy;
pub mod markov;
pub mod predictive;
pub mod prescriptive;
pub mod trace;
pub mod world;

pub use error::{Error, Result};
