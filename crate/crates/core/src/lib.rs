//! Probing multilingual embeddings for language neutrality.
//!
//! The crate works on embedding dumps (see [`embstore`]) and implements the
//! probes on top of them: language identification and quality-estimation
//! regressors ([`classify`]), language-similarity clustering ([`cluster`]),
//! parallel sentence retrieval ([`retrieval`]) and word alignment
//! ([`align`]). [`geometry`] holds the shared vector-space operations,
//! including language centroids and linear projections between spaces.

pub mod align;
pub mod classify;
pub mod cluster;
pub mod embstore;
pub mod error;
pub mod geometry;
pub mod retrieval;
pub mod synth;

pub use error::{Error, Result};
