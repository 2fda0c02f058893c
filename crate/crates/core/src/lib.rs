//! Compiler for interleaved multi-modal in-context training corpora.
//!
//! Annotated vision-language records are turned into prompts where every image
//! is bound to a textual proxy token (`[IMGj]`), multi-image instances are
//! built from video frames and entity crops, few-shot exemplars are prepended,
//! and datasets are mixed with square-root-proportional probabilities. The
//! output is a deterministic JSON Lines stream that [`codec`] reads back and
//! [`layout`] checks against the interleaved embedding contract.

pub mod codec;
pub mod declaration;
pub mod error;
pub mod icl;
pub mod ingest;
pub mod interconnect;
pub mod layout;
pub mod manifest;
pub mod mixer;
pub mod model;
pub mod pipeline;
pub mod seed;
pub mod template;

pub use error::{Error, Result};
pub use model::{
    AssetKind, CropRect, Draft, ImageAssetSpec, InterleavedInstance, Segment, SourceRecord,
    Violation, FORMAT_VERSION,
};
