//! Datasets: IDX ingestion, synthetic image families, and PGM export.

pub mod idx;
pub mod pgm;
pub mod synthetic;

pub use idx::{read_idx, write_idx, IdxImages};
pub use pgm::write_pgm_grid;
pub use synthetic::{generate, Family, Orientation, SyntheticSpec};

use crate::image::{Image, ImageShape};
use crate::Error;

/// Maps an 8-bit intensity to `[-1, 1]` via `x/127.5 − 1`.
pub fn normalize_byte(b: u8) -> f32 {
    b as f32 / 127.5 - 1.0
}

/// Uniform-shape image collection with values in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    images: Vec<Image>,
    source: String,
}

impl Dataset {
    pub fn new(images: Vec<Image>, source: impl Into<String>) -> Result<Self, Error> {
        let source = source.into();
        let first = images
            .first()
            .ok_or_else(|| Error::InvalidInput(format!("dataset `{source}` is empty")))?;
        for (i, img) in images.iter().enumerate() {
            if img.shape() != first.shape() {
                return Err(Error::InvalidInput(format!(
                    "dataset `{source}`: image {i} has shape {:?}, expected {:?}",
                    img.shape(),
                    first.shape()
                )));
            }
            if let Some(v) = img.data().iter().find(|v| !(-1.0..=1.0).contains(*v)) {
                return Err(Error::InvalidInput(format!(
                    "dataset `{source}`: image {i} holds {v} outside [-1, 1]"
                )));
            }
        }
        Ok(Self { images, source })
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn into_images(self) -> Vec<Image> {
        self.images
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn shape(&self) -> ImageShape {
        self.images[0].shape()
    }

    /// Keeps the first `n` images.
    pub fn truncate(mut self, n: usize) -> Result<Self, Error> {
        if n == 0 {
            return Err(Error::InvalidInput("cannot truncate a dataset to zero images".into()));
        }
        self.images.truncate(n);
        Ok(self)
    }
}
