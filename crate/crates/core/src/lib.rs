//! Desk-scale tri-modality contrastive binding.
//!
//! Two non-text modalities (an image-like grid and a sequence-like array)
//! are bound to text and to each other in one embedding space. Text is tied
//! to each modality by a contrastive loss that treats identical texts as
//! extra positives (TMCL); the two non-text modalities are tied directly over
//! the subset of batch samples that carry both (EMCL).
//!
//! Modules:
//! - [`numerics`]: dense matrices, stable softmax, finite differences.
//! - [`losses`]: TMCL / EMCL values and analytic gradients.
//! - [`model`]: toy encoders, projection heads, checkpoints.
//! - [`data`]: records, synthetic generation, pairing, labeling, templates.
//! - [`train`]: batching, AdamW, cosine schedule, training loop.
//! - [`eval`]: retrieval, zero-shot, few-shot, cross-modal zero-shot.
//! - [`downstream`]: frozen-embedding fusion classifier.
//! - [`selfcheck`]: gradient oracles and loss identities.
//! - [`manifest`]: per-run provenance records.

pub mod data;
pub mod downstream;
pub mod error;
pub mod eval;
pub mod io;
pub mod losses;
pub mod manifest;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod selfcheck;
pub mod train;

pub use error::{Error, Result};
