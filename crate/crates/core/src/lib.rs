//! Target-aware low-light enhancement for single-object tracking: a small
//! reverse-mode autodiff core, the guidance and curve-fusion networks,
//! their losses and trainer, and a one-pass tracking evaluation harness.

mod error;

pub mod ablation;
pub mod enhancement;
pub mod evaluation;
pub mod guidance;
pub mod io;
pub mod losses;
pub mod tensor;
pub mod training;

pub use enhancement::{enhance_image, Mode};
pub use error::{Error, Result};
pub use guidance::BBox;
