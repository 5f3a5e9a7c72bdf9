//! Building damage assessment from georeferenced pre/post image pairs.
//!
//! The pipeline transfers point damage assessments onto building footprints,
//! burns them into per-pixel label masks, tiles the scene into
//! leave-one-quarter-out folds, trains siamese U-Nets with masked
//! cross-entropy, and reports per-class F1 and balanced accuracy under
//! four-, three- and two-class groupings.

pub mod augment;
pub mod error;
pub mod evaluation;
pub mod geodata;
pub mod image;
pub mod model;
pub mod pipeline;
pub mod sampling;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
