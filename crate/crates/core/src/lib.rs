//! Stressful test generation and instruction-count efficiency benchmarking
//! for generated code.

pub mod assembly;
pub mod config;
pub mod evaluator;
pub mod interchange;
pub mod llm;
pub mod metrics;
pub mod model;
pub mod normalize;
pub mod perf;
pub mod pipeline;
pub mod pysrc;
pub mod sandbox;
pub mod stgen;
pub mod validation;
