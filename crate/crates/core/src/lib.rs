//! Multi-stage modular reasoning for video question answering.
//!
//! Questions are answered in stages that share one memory: event parsing
//! narrows the frames and extracts events, grounding finds where the events
//! happen, reasoning asks sub-questions there, and a final completion picks
//! the answer from captions plus grounded answers. Every model call goes
//! through [`tools::ToolRegistry`], backed by a live server, a fixture-driven
//! mock, or a recording.

pub mod baselines;
pub mod eval;
pub mod pipeline;
pub mod program;
pub mod prompt;
pub mod text;
pub mod tools;
pub mod types;
