use crate::Error;

/// Channel-planar image with values nominally in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

/// `(channels, height, width)`.
pub type ImageShape = (usize, usize, usize);

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self, Error> {
        if channels == 0 || height == 0 || width == 0 || data.len() != channels * height * width {
            return Err(Error::InvalidInput(format!(
                "image {channels}x{height}x{width} cannot hold {} values",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self::new(channels, height, width, vec![value; channels * height * width]).expect("positive dims")
    }

    pub fn grayscale(height: usize, width: usize, data: Vec<f32>) -> Result<Self, Error> {
        Self::new(1, height, width, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> ImageShape {
        (self.channels, self.height, self.width)
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        &self.data[c * self.pixels()..][..self.pixels()]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn clamp(mut self) -> Self {
        self.data.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
        self
    }

    pub(crate) fn check_same_shape(&self, other: &Image, op: &str) -> Result<(), Error> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                op: op.to_owned(),
                left: format!("{:?}", self.shape()),
                right: format!("{:?}", other.shape()),
            });
        }
        Ok(())
    }
}
