//! Modal decomposition and small-data vision transformer toolkit for
//! classifying snapshot sequences (echocardiography-style videos).
//!
//! Pipeline: [`preprocess`] homogenises sequences, [`decomp`] and [`hodmd`]
//! extract modes and denoised reconstructions, [`dataset`] assembles training
//! sets, [`vit`] and [`trainer`] fit the classifier, and [`inference`] fuses
//! per-image scores into per-sequence verdicts.

pub mod dataset;
pub mod decomp;
pub mod error;
pub mod hodmd;
pub mod inference;
pub mod linalg;
pub mod manifest;
pub mod preprocess;
pub mod registry;
pub mod synth;
pub mod tensor;
pub mod trainer;
pub mod vit;

pub use error::{Error, Result};
pub use tensor::{SnapshotSequence, Tensor};
