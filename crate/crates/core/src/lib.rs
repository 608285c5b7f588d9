//! Speculative knowledge-graph reasoning with noisy positive-unlabeled
//! learning.
//!
//! The crate trains a posterior-aware attention encoder with two score heads
//! while estimating, for every observed and sampled unobserved triple, the
//! posterior probability that it is a true fact. Those posteriors drive a
//! self-training loop that prunes suspect edges from the encoder's
//! neighborhoods and steers negative sampling towards likely missing facts.
//!
//! Module map:
//! - [`tensor`]: dense tensors, reverse-mode tape, Adam.
//! - [`kg`]: triple I/O, perturbation, splitting, corruption sampling.
//! - [`encoder`]: neighbor sets, attention encoder, score heads.
//! - [`loss`]: collection probabilities, posteriors and the training objective.
//! - [`train`]: configuration and the self-training loop.
//! - [`eval`]: filtered ranking metrics and noise-detection reports.
//! - [`checkpoint`]: on-disk model format.

pub mod checkpoint;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod kg;
pub mod loss;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
