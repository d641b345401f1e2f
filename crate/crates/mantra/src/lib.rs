//! MANTRA-style memory-augmented multimodal trajectory prediction.

pub mod autodiff;
pub mod config;
pub mod data;
pub mod encdec;
pub mod error;
pub mod eval;
pub mod memory;
pub mod persist;
pub mod pipeline;
pub mod refine;
