//! Virtual-image curation and adaptive pseudo-labeling for human-object
//! interaction detection.

pub mod amf;
pub mod augmentation;
pub mod backends;
pub mod dataio;
pub mod error;
pub mod geometry;
pub mod jsonl;
pub mod music;
pub mod seed;
pub mod synth;
pub mod teacher_student;
pub mod toy;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
