//! Sentence visualness scoring.
//!
//! A dual text/image encoder is trained so that visual sentences match their
//! paired images while non-visual sentences match one shared NULL image. The
//! similarity of a sentence to the NULL image then yields a visualness score.
//! The crate also carries the distant-labeling pipeline, lexicon baselines
//! and the evaluation metrics used to compare them.

pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod labeler;
pub mod lexicon;
pub mod model;
pub mod objective;
pub mod text;
pub mod trainer;
pub mod vector;

pub use corpus::{ImageBank, Label, LabeledExample};
pub use error::{Error, Result};
pub use model::{classify, ModelCheckpoint, ModelConfig, Params, VisualnessScore};
pub use vector::{inner, normalize, seeded_random_vector, RawVector, UnitEmbedding};
