//! Unsupervised domain adaptation for semantic segmentation with a
//! StarGAN translation backbone and a class-conditional feature critic.

pub mod cli;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod nets;
pub mod losses;
pub mod seeds;
pub mod training;
pub mod variant;

pub use error::{Error, Result};
pub use variant::Variant;
