//! Files on disk: images, datasets, configuration and synthetic data.

pub mod config;
pub mod dataset;
pub mod image;
pub mod synth;

pub use config::{ConfigError, EngineConfig};
pub use dataset::{load_dataset, load_sequence, DatasetError, SequenceRecord, Split};
pub use image::{read_image, write_gray, write_image};
pub use synth::{synth_dataset, SynthConfig};
