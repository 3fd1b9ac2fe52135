//! Concept extraction for image classifiers: SPACE (scale-preserving
//! patch tiling) and the ACE superpixel baseline, with TCAV significance
//! testing and a static HTML report.

pub mod ace;
pub mod backend;
pub mod clustering;
pub mod compose;
pub mod config;
pub mod dataset;
pub mod error;
pub mod image;
pub mod method;
pub mod patch;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod saliency;
pub mod synth;
pub mod tcav;

pub use error::{Error, Result};
