//! Five-class Arabic hate-speech experiment pipeline: text normalization,
//! encoder fine-tuning behind a backend registry, voting ensembles,
//! pseudo-label augmentation, stratified cross-validation and reporting.

pub mod augment;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod ensemble;
pub mod error;
pub mod evaluate;
pub mod label;
pub mod normalize;
pub mod pipeline;
pub mod report;
pub mod synthetic;
pub mod tune;

pub use corpus::{LabeledText, Origin};
pub use error::{Error, Result};
pub use label::{argmax, ClassProbs, Label, NUM_CLASSES};
