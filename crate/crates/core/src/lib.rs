//! One-step distillation of a flow-matching policy with a Q-guided noise prior,
//! together with the Multi-Crescent testbed, baselines and diagnostics.

pub mod analysis;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod critic;
pub mod diffcore;
pub mod env;
pub mod error;
pub mod qprior;
pub mod rng;
pub mod student;
pub mod teacher;
pub mod trainer;

pub use config::{TrainConfig, Variant};
pub use error::{Error, Result};
pub use trainer::Trainer;
