//! Reinforcement-learning temporal localization of language-described
//! moments in untrimmed videos.
//!
//! An agent steers a fixed-width window over a timeline of precomputed
//! feature units. At each step it pools the features under the window,
//! fuses them with a GRU encoding of the query, and an actor-critic LSTM
//! picks one of seven moves or terminates. Training is asynchronous
//! advantage actor-critic with generalized advantage estimation.

pub mod config;
pub mod data;
pub mod env;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod model;
pub mod ndcore;
pub mod policy;
pub mod trainer;

pub use error::{Error, Result};
