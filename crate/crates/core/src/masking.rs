//! Lift masks: checkerboards (alternating or fixed), a centred square, and
//! random patches. Mask value 1 keeps a pixel, 0 marks it for inpainting.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::pgm;
use crate::rng::rng_from_seed;
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MaskSpec {
    /// `grid × grid` checkerboard whose parity flips with every attempt.
    AlternatingCheckerboard { grid: usize },
    /// Same checkerboard on every attempt.
    FixedCheckerboard { grid: usize },
    /// Centred square covering a quarter of the image.
    Center,
    /// `ceil(grid² · cover)` patches of a `grid × grid` partition, drawn
    /// afresh on each attempt.
    RandomPatch { grid: usize, cover: f64 },
}

impl Default for MaskSpec {
    fn default() -> Self {
        MaskSpec::AlternatingCheckerboard { grid: 8 }
    }
}

impl MaskSpec {
    /// The six patterns of the mask ablation, in table order.
    pub fn ablation_set() -> [MaskSpec; 6] {
        [
            MaskSpec::AlternatingCheckerboard { grid: 4 },
            MaskSpec::AlternatingCheckerboard { grid: 8 },
            MaskSpec::AlternatingCheckerboard { grid: 16 },
            MaskSpec::FixedCheckerboard { grid: 8 },
            MaskSpec::Center,
            MaskSpec::RandomPatch { grid: 8, cover: 0.5 },
        ]
    }

    fn grid(&self) -> Option<usize> {
        match *self {
            MaskSpec::AlternatingCheckerboard { grid }
            | MaskSpec::FixedCheckerboard { grid }
            | MaskSpec::RandomPatch { grid, .. } => Some(grid),
            MaskSpec::Center => None,
        }
    }

    fn validate(&self, height: usize, width: usize) -> Result<(), Error> {
        if height == 0 || width == 0 {
            return Err(Error::Mask(format!(
                "image dims must be positive, got {height}x{width}"
            )));
        }
        if let Some(n) = self.grid() {
            if n < 2 {
                return Err(Error::Mask(format!("{self}: grid must be at least 2")));
            }
            if n > height.min(width) {
                return Err(Error::Mask(format!(
                    "{self}: grid {n} exceeds the smaller image side {}",
                    height.min(width)
                )));
            }
        }
        if let MaskSpec::RandomPatch { cover, .. } = *self {
            if !(cover > 0.0 && cover < 1.0) {
                return Err(Error::Mask(format!(
                    "random patch cover must lie in (0, 1), got {cover}"
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for MaskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            MaskSpec::AlternatingCheckerboard { grid } => write!(f, "alternating:{grid}"),
            MaskSpec::FixedCheckerboard { grid } => write!(f, "fixed:{grid}"),
            MaskSpec::Center => write!(f, "center"),
            MaskSpec::RandomPatch { grid, cover: 0.5 } => write!(f, "random:{grid}"),
            MaskSpec::RandomPatch { grid, cover } => write!(f, "random:{grid}:{cover}"),
        }
    }
}

impl FromStr for MaskSpec {
    type Err = Error;

    /// `alternating:N`, `fixed:N`, `center`, `random:N` or `random:N:cover`.
    fn from_str(s: &str) -> Result<Self, Error> {
        let parts: Vec<&str> = s.split(':').collect();
        let grid = |i: usize| -> Result<usize, Error> {
            parts
                .get(i)
                .and_then(|g| g.parse().ok())
                .ok_or_else(|| Error::Mask(format!("`{s}`: expected a grid size")))
        };
        match parts[0] {
            "alternating" | "alt" if parts.len() == 2 => Ok(MaskSpec::AlternatingCheckerboard { grid: grid(1)? }),
            "fixed" if parts.len() == 2 => Ok(MaskSpec::FixedCheckerboard { grid: grid(1)? }),
            "center" if parts.len() == 1 => Ok(MaskSpec::Center),
            "random" if parts.len() == 2 || parts.len() == 3 => {
                let cover = match parts.get(2) {
                    Some(c) => c
                        .parse()
                        .map_err(|_| Error::Mask(format!("`{s}`: bad cover fraction")))?,
                    None => 0.5,
                };
                Ok(MaskSpec::RandomPatch { grid: grid(1)?, cover })
            }
            _ => Err(Error::Mask(format!(
                "unknown mask `{s}`; use alternating:N, fixed:N, center, or random:N"
            ))),
        }
    }
}

/// Binary `height × width` grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    values: Vec<u8>,
}

impl Mask {
    /// Builds a mask from floats that must all be exactly 0 or 1.
    pub fn from_values(height: usize, width: usize, values: &[f32]) -> Result<Self, Error> {
        if values.len() != height * width || values.is_empty() {
            return Err(Error::Mask(format!(
                "{} values for a {height}x{width} mask",
                values.len()
            )));
        }
        let values = values
            .iter()
            .map(|&v| match v {
                0.0 => Ok(0),
                1.0 => Ok(1),
                other => Err(Error::Mask(format!("non-binary mask value {other}"))),
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { height, width, values })
    }

    pub fn filled(height: usize, width: usize, keep: bool) -> Self {
        Self {
            height,
            width,
            values: vec![u8::from(keep); height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn keeps(&self, y: usize, x: usize) -> bool {
        self.values[y * self.width + x] == 1
    }

    /// Number of pixels to inpaint.
    pub fn masked_count(&self) -> usize {
        self.values.iter().filter(|&&v| v == 0).count()
    }

    pub fn complement(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|v| 1 - v).collect(),
        }
    }

    /// Binary PGM with 0 ↦ 0 and 1 ↦ 255.
    pub fn to_pgm(&self) -> Vec<u8> {
        let bytes: Vec<u8> = self.values.iter().map(|&v| v * 255).collect();
        pgm::encode(self.width, self.height, &bytes)
    }
}

/// `band[i]` is the band index of row/column `i` when `len` pixels are split
/// into `n` contiguous bands `[⌊b·len/n⌋, ⌊(b+1)·len/n⌋)`.
fn bands(len: usize, n: usize) -> Vec<usize> {
    let mut out = vec![0; len];
    for b in 0..n {
        for slot in &mut out[b * len / n..(b + 1) * len / n] {
            *slot = b;
        }
    }
    out
}

fn patch_mask(height: usize, width: usize, grid: usize, keep_patch: impl Fn(usize, usize) -> bool) -> Mask {
    let rows = bands(height, grid);
    let cols = bands(width, grid);
    let mut values = Vec::with_capacity(height * width);
    for &i in &rows {
        for &j in &cols {
            values.push(u8::from(keep_patch(i, j)));
        }
    }
    Mask { height, width, values }
}

/// Mask for reconstruction attempt `attempt` (0-based).
///
/// Checkerboard patch `(i, j)` is kept iff `(i + j + a) mod 2 = 0`, with
/// `a = attempt` for the alternating variant and `a = 0` for the fixed one.
/// Only the random-patch variant consumes `rng`.
pub fn get_mask<R: Rng + ?Sized>(
    spec: &MaskSpec,
    attempt: usize,
    height: usize,
    width: usize,
    rng: &mut R,
) -> Result<Mask, Error> {
    spec.validate(height, width)?;
    let mask = match *spec {
        MaskSpec::AlternatingCheckerboard { grid } => {
            patch_mask(height, width, grid, |i, j| (i + j + attempt).is_multiple_of(2))
        }
        MaskSpec::FixedCheckerboard { grid } => patch_mask(height, width, grid, |i, j| (i + j) % 2 == 0),
        MaskSpec::Center => {
            let side = (((height * width) as f64).sqrt() / 2.0).floor() as usize;
            let (sh, sw) = (side.min(height), side.min(width));
            if sh == 0 || sw == 0 {
                return Err(Error::Mask(format!(
                    "{height}x{width} image too small for a center mask"
                )));
            }
            let (top, left) = ((height - sh) / 2, (width - sw) / 2);
            let mut m = Mask::filled(height, width, true);
            for y in top..top + sh {
                m.values[y * width + left..y * width + left + sw].fill(0);
            }
            m
        }
        MaskSpec::RandomPatch { grid, cover } => {
            let patches = grid * grid;
            let count = ((patches as f64 * cover).ceil() as usize).clamp(1, patches - 1);
            let mut hidden = vec![false; patches];
            for p in rand::seq::index::sample(rng, patches, count) {
                hidden[p] = true;
            }
            patch_mask(height, width, grid, |i, j| !hidden[i * grid + j])
        }
    };
    if mask.masked_count() == 0 || mask.masked_count() == height * width {
        return Err(Error::Mask(format!(
            "{spec} produced a degenerate mask on {height}x{width}"
        )));
    }
    Ok(mask)
}

/// Fraction of pixels inpainted in at least one of `attempts` attempts.
/// Random patches are drawn from a fixed internal seed.
pub fn coverage_union(spec: &MaskSpec, attempts: usize, height: usize, width: usize) -> Result<f64, Error> {
    if attempts == 0 {
        return Err(Error::Mask("coverage needs at least one attempt".into()));
    }
    let mut rng = rng_from_seed(0);
    let mut covered = vec![false; height * width];
    for a in 0..attempts {
        let m = get_mask(spec, a, height, width, &mut rng)?;
        for (c, &v) in covered.iter_mut().zip(m.values()) {
            *c |= v == 0;
        }
    }
    Ok(covered.iter().filter(|&&c| c).count() as f64 / (height * width) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rows(m: &Mask) -> Vec<Vec<u8>> {
        m.values().chunks(m.width()).map(<[u8]>::to_vec).collect()
    }

    #[test]
    fn alternating_two_by_two_on_four_by_four() {
        let spec = MaskSpec::AlternatingCheckerboard { grid: 2 };
        let mut rng = rng_from_seed(0);
        let m0 = get_mask(&spec, 0, 4, 4, &mut rng).unwrap();
        assert_eq!(
            rows(&m0),
            vec![vec![1, 1, 0, 0], vec![1, 1, 0, 0], vec![0, 0, 1, 1], vec![0, 0, 1, 1]]
        );
        let m1 = get_mask(&spec, 1, 4, 4, &mut rng).unwrap();
        assert_eq!(m1, m0.complement());
    }

    #[test]
    fn center_on_sixteen() {
        let m = get_mask(&MaskSpec::Center, 3, 16, 16, &mut rng_from_seed(0)).unwrap();
        assert_eq!(m.masked_count(), 64);
        for y in 0..16 {
            for x in 0..16 {
                let inside = (4..12).contains(&y) && (4..12).contains(&x);
                assert_eq!(m.keeps(y, x), !inside, "({y}, {x})");
            }
        }
    }

    #[test]
    fn coverage_examples() {
        let alt = MaskSpec::AlternatingCheckerboard { grid: 8 };
        assert_eq!(coverage_union(&alt, 1, 16, 16).unwrap(), 0.5);
        assert_eq!(coverage_union(&alt, 2, 16, 16).unwrap(), 1.0);
        let fixed = MaskSpec::FixedCheckerboard { grid: 8 };
        assert_eq!(coverage_union(&fixed, 7, 16, 16).unwrap(), 0.5);
        assert_eq!(coverage_union(&MaskSpec::Center, 5, 16, 16).unwrap(), 0.25);
        assert!(coverage_union(&alt, 0, 16, 16).is_err());
    }

    #[test]
    fn grid_larger_than_image_rejected() {
        let spec = MaskSpec::AlternatingCheckerboard { grid: 17 };
        assert!(get_mask(&spec, 0, 16, 16, &mut rng_from_seed(0)).is_err());
        let spec = MaskSpec::FixedCheckerboard { grid: 1 };
        assert!(get_mask(&spec, 0, 16, 16, &mut rng_from_seed(0)).is_err());
    }

    #[test]
    fn random_patch_hides_exact_count_and_redraws() {
        let spec = MaskSpec::RandomPatch { grid: 8, cover: 0.5 };
        let mut rng = rng_from_seed(4);
        let a = get_mask(&spec, 0, 16, 16, &mut rng).unwrap();
        let b = get_mask(&spec, 1, 16, 16, &mut rng).unwrap();
        assert_eq!(a.masked_count(), 32 * 4);
        assert_eq!(b.masked_count(), 32 * 4);
        assert_ne!(a, b);
        let again = get_mask(&spec, 0, 16, 16, &mut rng_from_seed(4)).unwrap();
        assert_eq!(a, again);
    }

    #[test]
    fn non_binary_values_rejected() {
        assert!(Mask::from_values(1, 2, &[0.0, 0.5]).is_err());
        assert!(Mask::from_values(1, 2, &[0.0, 1.0]).is_ok());
    }

    #[test]
    fn parse_and_display_round_trip() {
        for spec in MaskSpec::ablation_set() {
            assert_eq!(spec.to_string().parse::<MaskSpec>().unwrap(), spec);
        }
        assert!("diamond".parse::<MaskSpec>().is_err());
    }

    #[test]
    fn pgm_export_maps_values() {
        let m = get_mask(
            &MaskSpec::AlternatingCheckerboard { grid: 2 },
            0,
            2,
            2,
            &mut rng_from_seed(0),
        )
        .unwrap();
        let bytes = m.to_pgm();
        assert!(bytes.starts_with(b"P5\n2 2\n255\n"));
        assert_eq!(&bytes[bytes.len() - 4..], &[255, 0, 0, 255]);
    }

    proptest! {
        #[test]
        fn consecutive_alternating_masks_are_complements(
            grid in 2usize..12, extra_h in 0usize..20, extra_w in 0usize..20, a in 0usize..50
        ) {
            let (h, w) = (grid + extra_h, grid + extra_w);
            let spec = MaskSpec::AlternatingCheckerboard { grid };
            let mut rng = rng_from_seed(0);
            let m = get_mask(&spec, a, h, w, &mut rng).unwrap();
            let n = get_mask(&spec, a + 1, h, w, &mut rng).unwrap();
            prop_assert_eq!(n, m.complement());
        }

        #[test]
        fn divisible_checkerboards_hide_half(grid in (1usize..6).prop_map(|g| 2 * g), scale in 1usize..4, a in 0usize..4) {
            let side = grid * scale;
            for spec in [MaskSpec::AlternatingCheckerboard { grid }, MaskSpec::FixedCheckerboard { grid }] {
                let m = get_mask(&spec, a, side, side, &mut rng_from_seed(0)).unwrap();
                prop_assert_eq!(m.masked_count() * 2, side * side);
            }
        }

        #[test]
        fn bands_differ_by_at_most_one(len in 1usize..100, n in 1usize..100) {
            prop_assume!(n <= len);
            let b = bands(len, n);
            let mut sizes = vec![0usize; n];
            for &i in &b { sizes[i] += 1; }
            let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
            prop_assert!(hi - lo <= 1 && *lo >= 1);
        }
    }
}
