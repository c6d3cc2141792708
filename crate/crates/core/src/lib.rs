//! Simulation of two stochastic processes in random media, with exact
//! small-instance oracles.
//!
//! * One-dimensional random walks in stationary random environments with
//!   unbounded jumps: [`env`], [`walk`], the regeneration structure in
//!   [`regen`], and linear-algebra ground truth in [`oracle`].
//! * The Knudsen random walk with drift inside a random tube in ℝ³:
//!   [`tube`] and [`billiard`].
//!
//! Randomness flows from a master seed through [`seed::SeedStream`]; replica
//! loops go through [`par::map_replicas`], which runs on rayon when the
//! `parallel` feature is on and sequentially otherwise. Results are
//! identical in both modes.

pub mod alias;
pub mod band;
pub mod billiard;
pub mod env;
pub mod error;
pub mod geom;
pub mod line;
pub mod oracle;
pub mod par;
pub mod regen;
pub mod seed;
pub mod stats;
pub mod tube;
pub mod walk;

pub use error::{Error, Result};
