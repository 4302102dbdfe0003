use rand::Rng;
use rand_distr::StandardNormal;

use crate::image::Image;
use crate::numerics::kernels::{conv2d_forward, silu_inplace, ConvGeometry};
use crate::rng::{derive_seed, rng_from_seed};
use crate::Error;

pub const FEATURE_WIDTHS: [usize; 3] = [8, 16, 32];
pub const DEFAULT_FEATURE_SEED: u64 = 7;
const BIAS_STD: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
struct Stage {
    in_channels: usize,
    out_channels: usize,
    weight: Vec<f32>,
    bias: Vec<f32>,
}

/// Frozen random convolutional features: three 3×3 conv + SiLU stages of
/// widths 8, 16, 32 with 2×2 mean-pooling (odd trailing rows/columns
/// dropped) between stages. Weights are He-normal, biases normal with
/// standard deviation 0.1, all drawn once from `seed`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor {
    channels: usize,
    seed: u64,
    stages: Vec<Stage>,
}

impl FeatureExtractor {
    pub fn new(channels: usize, seed: u64) -> Self {
        let mut cin = channels;
        let stages = FEATURE_WIDTHS
            .iter()
            .enumerate()
            .map(|(i, &cout)| {
                let mut rng = rng_from_seed(derive_seed(seed, &[0xFEA7, i as u64]));
                let std = (2.0 / (cin * 9) as f64).sqrt();
                let weight = (0..cout * cin * 9)
                    .map(|_| (rng.sample::<f64, _>(StandardNormal) * std) as f32)
                    .collect();
                let bias = (0..cout)
                    .map(|_| (rng.sample::<f64, _>(StandardNormal) * BIAS_STD) as f32)
                    .collect();
                let stage = Stage {
                    in_channels: cin,
                    out_channels: cout,
                    weight,
                    bias,
                };
                cin = cout;
                stage
            })
            .collect();
        Self { channels, seed, stages }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `[out, in, 3, 3]` weights and biases of stage `i`.
    pub fn stage_parameters(&self, i: usize) -> (&[f32], &[f32]) {
        (&self.stages[i].weight, &self.stages[i].bias)
    }

    /// Concatenated stage outputs, each flattened channel-major.
    pub fn features(&self, image: &Image) -> Result<Vec<f32>, Error> {
        let (c, mut h, mut w) = image.shape();
        if c != self.channels {
            return Err(Error::ShapeMismatch {
                op: "features".into(),
                left: format!("{c} channels"),
                right: format!("extractor built for {}", self.channels),
            });
        }
        if h < 4 || w < 4 {
            return Err(Error::InvalidInput(format!(
                "feature extractor needs sides ≥ 4, got {h}x{w}"
            )));
        }
        let mut out = Vec::new();
        let mut x = image.data().to_vec();
        for (i, stage) in self.stages.iter().enumerate() {
            if i > 0 {
                x = pool_floor(&x, stage.in_channels, h, w);
                h /= 2;
                w /= 2;
            }
            let g = ConvGeometry {
                in_channels: stage.in_channels,
                out_channels: stage.out_channels,
                batch: 1,
                height: h,
                width: w,
                kernel: 3,
            };
            let mut y = vec![0.0; g.output_len()];
            conv2d_forward(&g, &x, &stage.weight, &stage.bias, &mut y);
            silu_inplace(&mut y);
            out.extend_from_slice(&y);
            x = y;
        }
        Ok(out)
    }

    /// `1 − cos(φ(a), φ(b))`.
    pub fn distance(&self, a: &Image, b: &Image) -> Result<f64, Error> {
        a.check_same_shape(b, "feature_distance")?;
        cosine_distance(&self.features(a)?, &self.features(b)?)
    }
}

fn pool_floor(x: &[f32], planes: usize, h: usize, w: usize) -> Vec<f32> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let src = &x[p * h * w..][..h * w];
        for y in 0..oh {
            for xo in 0..ow {
                let (r0, r1) = (2 * y * w, (2 * y + 1) * w);
                out.push(
                    0.25 * ((src[r0 + 2 * xo] + src[r0 + 2 * xo + 1]) + (src[r1 + 2 * xo] + src[r1 + 2 * xo + 1])),
                );
            }
        }
    }
    out
}

/// `1 − a·b / sqrt(|a|²|b|²)` in f64, clamped to `[0, 2]`. Zero-norm inputs
/// are rejected.
pub fn cosine_distance(a: &[f32], b: &[f32]) -> Result<f64, Error> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            op: "cosine_distance".into(),
            left: a.len().to_string(),
            right: b.len().to_string(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 {
        return Err(Error::ZeroFeatures { which: "first" });
    }
    if nb == 0.0 {
        return Err(Error::ZeroFeatures { which: "second" });
    }
    Ok((1.0 - dot / (na * nb).sqrt()).clamp(0.0, 2.0))
}
