#![cfg_attr(not(any(test, feature = "std")), no_std)]
//! Allocation-only core of a longitudinal brain-atrophy image simulator.
//!
//! A conditional adversarial autoencoder learns to render a subject's slice
//! at any age bin and diagnosis, while two constraint losses keep simulated
//! intensities non-increasing with age: a voxel-wise sign penalty and a
//! regional penalty tied to per-region support vector regressors.

extern crate alloc;

pub mod error;
pub mod eval;
pub mod image;
pub mod losses;
pub mod nets;
pub mod personalize;
pub mod phantom;
pub mod preprocess;
pub mod regions;
mod rng;
pub mod svr;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use image::{Diagnosis, Image, NormalizedSlice, Slice, SliceMeta};
