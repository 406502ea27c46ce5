//! Image captioning as sequential decision making.
//!
//! A recurrent policy proposes next words, a value network estimates the
//! embedding reward reachable from a partial caption, and both are trained
//! with actor-critic reinforcement learning before decoding with a beam
//! search that mixes policy log-probabilities with value lookahead.

pub mod cells;
pub mod checkpoint;
pub mod config;
pub mod critic;
pub mod decode;
pub mod embedder;
pub mod error;
pub mod evalkit;
pub mod gradsuite;
pub mod numcore;
pub mod pipeline;
pub mod policy;
pub mod rl;
pub mod sceneworld;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/scene-world.md")]
    pub mod scene_world {}
    #[doc = include_str!("../../../book/src/gradients.md")]
    pub mod gradients {}
    #[doc = include_str!("../../../book/src/models.md")]
    pub mod models {}
    #[doc = include_str!("../../../book/src/training.md")]
    pub mod training {}
    #[doc = include_str!("../../../book/src/decoding.md")]
    pub mod decoding {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    pub mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
