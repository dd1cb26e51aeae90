//! Part-aligned bilinear pooling for re-identification matching.
//!
//! An image is described by two feature maps over the same `h × w` grid: an
//! appearance map (what a region looks like) and a part map (which body part
//! occupies it). Bilinear pooling averages the per-location outer products of
//! the two descriptors into one embedding whose blocks are appearance vectors
//! gated by part channels, so two embeddings compare appearance only between
//! corresponding parts.
//!
//! The crate is `no_std` with `alloc`. Modules:
//!
//! - [`model`]: feature maps, embeddings and sample labels.
//! - [`pooling`]: exact bilinear pooling, normalization and the baseline poolers.
//! - [`sketch`]: count sketch and tensor sketch (compact bilinear pooling).
//! - [`matching`]: similarities, the local factorization checks and gallery ranking.
//! - [`training`]: per-location linear heads, triplet loss, SGD with momentum.
//! - [`evaluation`]: CMC and mAP with distractor and camera handling.
//! - [`synth`]: deterministic synthetic identities with part misalignment.

#![cfg_attr(not(test), no_std)]
#![allow(clippy::needless_range_loop)]

extern crate alloc;

pub mod error;
pub mod evaluation;
pub mod fft;
pub mod matching;
pub mod model;
pub mod pooling;
pub mod sketch;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
pub use model::{Embedding, FeatureMap, ImageSample, Layout, MapRole, SampleLabel, Split, Violation};
