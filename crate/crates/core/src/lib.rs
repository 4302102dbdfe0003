//! Lift, map, detect: unsupervised out-of-distribution detection with a
//! small denoising diffusion model.

mod error;

pub mod data;
pub mod detector;
pub mod diffusion;
pub mod image;
pub mod masking;
pub mod metrics;
pub mod numerics;
pub mod rng;

pub use error::Error;
pub use image::{Image, ImageShape};
pub use rng::SeededRng;
