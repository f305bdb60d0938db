//! Synthetic tool-selection benchmark and trainers for a compact neural
//! selector. The crate covers the full loop: corpus synthesis, candidate-set
//! sampling, a hashed n-gram scorer with exact gradients, fine-tuning and
//! meta-training regimes, and format-checked evaluation.

pub mod cli;
pub mod corpus;
pub mod eval;
pub mod model;
pub mod optim;
pub mod sampler;
pub mod seeds;
