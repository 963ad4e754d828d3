//! Engine crate for a desk-scale multi-task sentence-simplification system:
//! a reverse-mode tape over flat `f64` tensors, a two-layer attention
//! encoder–decoder with a copy mechanism, layer-grouped soft/hard parameter
//! sharing, a Boltzmann bandit task scheduler, and the evaluation metrics
//! (SARI, FKGL, BLEU, ROUGE-L) used to judge outputs.
//!
//! Everything is deterministic under a fixed seed: random streams are
//! derived per purpose in [`rng`], parameter walks follow name order, and
//! no internal threading reorders floating-point reductions.

pub mod bandit;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod model;
pub mod params;
pub mod rng;
pub mod sharing;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};

/// Canonical task labels used in configs, stores, checkpoints, and traces.
pub mod tasks {
    /// The simplification task being optimized.
    pub const MAIN: &str = "main";
    /// Entailment-generation auxiliary task.
    pub const ENTAIL: &str = "entail";
    /// Paraphrase-generation auxiliary task.
    pub const PARA: &str = "para";
    /// All labels in scheduling order (arm 0, 1, 2).
    pub const ALL: [&str; 3] = [MAIN, ENTAIL, PARA];
}
