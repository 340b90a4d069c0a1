//! Coevolution of model genomes and tasks.

pub mod genome;
pub mod oracles;
pub mod population;
pub mod taskspace;
pub mod metrics;
pub mod engine;
pub mod persist;
