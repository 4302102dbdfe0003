//! Reconstruction distances and ROC-AUC.

mod auc;
mod features;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use auc::roc_auc;
pub use features::{cosine_distance, FeatureExtractor, DEFAULT_FEATURE_SEED, FEATURE_WIDTHS};

use crate::image::Image;
use crate::Error;

/// Distance between an image and its reconstruction. Larger means further.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    Mse,
    SsimDistance,
    /// Cosine distance between frozen random-conv features, standing in for
    /// a learned perceptual metric.
    #[default]
    FeatureDistance,
}

impl DistanceMetric {
    pub const ALL: [DistanceMetric; 3] = [
        DistanceMetric::Mse,
        DistanceMetric::SsimDistance,
        DistanceMetric::FeatureDistance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DistanceMetric::Mse => "mse",
            DistanceMetric::SsimDistance => "ssim_distance",
            DistanceMetric::FeatureDistance => "feature_distance",
        }
    }
}

impl fmt::Display for DistanceMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DistanceMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "mse" => Ok(DistanceMetric::Mse),
            "ssim" | "ssim_distance" => Ok(DistanceMetric::SsimDistance),
            "feature" | "feature_distance" => Ok(DistanceMetric::FeatureDistance),
            other => Err(Error::InvalidInput(format!(
                "unknown metric {other:?}; expected mse, ssim_distance or feature_distance"
            ))),
        }
    }
}

/// Mean squared difference, accumulated in f64.
pub fn mse(a: &Image, b: &Image) -> Result<f64, Error> {
    a.check_same_shape(b, "mse")?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

pub const SSIM_WINDOW: usize = 7;
/// Dynamic range of pixel values in `[-1, 1]`.
const SSIM_RANGE: f64 = 2.0;
const SSIM_C1: f64 = (0.01 * SSIM_RANGE) * (0.01 * SSIM_RANGE);
const SSIM_C2: f64 = (0.03 * SSIM_RANGE) * (0.03 * SSIM_RANGE);

/// SSIM over one window given as an iterator of index pairs into `a`, `b`.
fn window_ssim(a: &[f32], b: &[f32], idx: impl Iterator<Item = usize> + Clone) -> f64 {
    let n = idx.clone().count() as f64;
    let (mut sa, mut sb) = (0.0f64, 0.0f64);
    for i in idx.clone() {
        sa += a[i] as f64;
        sb += b[i] as f64;
    }
    let (ma, mb) = (sa / n, sb / n);
    let (mut va, mut vb, mut cov) = (0.0f64, 0.0f64, 0.0f64);
    for i in idx {
        let (da, db) = (a[i] as f64 - ma, b[i] as f64 - mb);
        va += da * da;
        vb += db * db;
        cov += da * db;
    }
    let (va, vb, cov) = (va / n, vb / n, cov / n);
    ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2))
}

/// `1 − SSIM`, where SSIM is averaged over every fully contained 7×7 uniform
/// window and over channels (population moments). Images with a side below
/// 7 use one window spanning the whole plane.
pub fn ssim_distance(a: &Image, b: &Image) -> Result<f64, Error> {
    a.check_same_shape(b, "ssim_distance")?;
    let (c, h, w) = a.shape();
    let mut total = 0.0f64;
    let mut windows = 0usize;
    for ch in 0..c {
        let (pa, pb) = (a.plane(ch), b.plane(ch));
        if h < SSIM_WINDOW || w < SSIM_WINDOW {
            total += window_ssim(pa, pb, 0..h * w);
            windows += 1;
            continue;
        }
        for y0 in 0..=h - SSIM_WINDOW {
            for x0 in 0..=w - SSIM_WINDOW {
                let idx = (y0..y0 + SSIM_WINDOW).flat_map(move |y| (x0..x0 + SSIM_WINDOW).map(move |x| y * w + x));
                total += window_ssim(pa, pb, idx);
                windows += 1;
            }
        }
    }
    Ok(1.0 - total / windows as f64)
}

/// Evaluates any [`DistanceMetric`], holding the feature extractor used by
/// the perceptual proxy.
#[derive(Clone, Debug)]
pub struct Distances {
    extractor: FeatureExtractor,
}

impl Distances {
    pub fn new(channels: usize, feature_seed: u64) -> Self {
        Self {
            extractor: FeatureExtractor::new(channels, feature_seed),
        }
    }

    pub fn extractor(&self) -> &FeatureExtractor {
        &self.extractor
    }

    pub fn distance(&self, metric: DistanceMetric, a: &Image, b: &Image) -> Result<f64, Error> {
        match metric {
            DistanceMetric::Mse => mse(a, b),
            DistanceMetric::SsimDistance => ssim_distance(a, b),
            DistanceMetric::FeatureDistance => self.extractor.distance(a, b),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(h: usize, w: usize, v: Vec<f32>) -> Image {
        Image::grayscale(h, w, v).unwrap()
    }

    #[test]
    fn mse_examples() {
        let z = Image::filled(1, 4, 4, 0.0);
        assert_eq!(mse(&z, &z).unwrap(), 0.0);
        assert_eq!(mse(&z, &Image::filled(1, 4, 4, 0.5)).unwrap(), 0.25);
        let a = img(1, 2, vec![1.0, 0.0]);
        let b = img(1, 2, vec![0.0, 1.0]);
        assert_eq!(mse(&a, &b).unwrap(), 1.0);
        assert!(mse(&a, &z).is_err());
    }

    #[test]
    fn ssim_constant_images_global_window() {
        let a = Image::filled(1, 4, 4, 0.5);
        let b = Image::filled(1, 4, 4, 0.25);
        let ssim = (2.0 * 0.125 + 4e-4) / (0.3125 + 4e-4);
        let d = ssim_distance(&a, &b).unwrap();
        assert!((d - (1.0 - ssim)).abs() < 1e-12, "{d}");
        assert!((d - 0.1997).abs() < 5e-5);
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let a = img(8, 8, (0..64).map(|i| ((i * 37 % 11) as f32 / 5.5) - 1.0).collect());
        let b = img(8, 8, (0..64).map(|i| ((i * 13 % 7) as f32 / 3.5) - 1.0).collect());
        assert_eq!(ssim_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(ssim_distance(&a, &b).unwrap(), ssim_distance(&b, &a).unwrap());
        let d = ssim_distance(&a, &b).unwrap();
        assert!((0.0..=2.0).contains(&d));
    }

    #[test]
    fn metric_names_round_trip() {
        for m in DistanceMetric::ALL {
            assert_eq!(m.to_string().parse::<DistanceMetric>().unwrap(), m);
        }
        assert!("lpips".parse::<DistanceMetric>().is_err());
    }
}
