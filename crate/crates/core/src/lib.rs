//! Multi-agent chart-to-code refinement: generation, visual and code
//! critique, revision, a heuristic verifier that decides when to stop, and an
//! element-level evaluator.

pub mod agents;
pub mod cli;
pub mod config;
pub mod evaluator;
pub mod fixtures;
pub mod gateway;
pub mod imaging;
pub mod orchestrator;
pub mod persist;
pub mod render;
pub mod verifier;
