//! Simulation toolkit for untargeted injection attacks on social
//! recommenders: target models, a multi-agent PPO attacker, heuristic
//! baselines, defenses and ranking metrics.

pub mod attack;
pub mod community;
pub mod data;
pub mod error;
pub mod gradcore;
pub mod guard;
pub mod marl;
pub mod metrics;
pub mod recenv;
pub mod runner;
pub mod seed;

pub use error::{Error, Result};
