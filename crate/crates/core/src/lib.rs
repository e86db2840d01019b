//! Shared numerical and I/O foundations for the SaTQA workspace: a small
//! f64 reverse-mode tape, the neural layers built on it, AdamW with cosine
//! annealing, seeded RNG helpers, the RGB image type and the versioned
//! checkpoint container.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod hash;
pub mod image;
pub mod nn;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tensor;

pub use error::CoreError;
pub use image::RgbImage;
pub use params::{ParamId, ParamSet};
pub use tensor::{Arr, Tape, Var};
