//! IDX image files (MNIST family): big-endian magic `0x00000803`, three
//! big-endian `u32` extents (count, rows, cols), then row-major `u8` pixels.

use std::path::Path;

use super::{normalize_byte, Dataset};
use crate::image::Image;
use crate::Error;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
const HEADER_LEN: usize = 16;

/// Raw, unnormalised contents of an IDX image file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

impl IdxImages {
    pub fn parse(bytes: &[u8]) -> Result<Self, Error> {
        if bytes.len() < 4 {
            return Err(Error::IdxTruncated {
                expected: HEADER_LEN,
                actual: bytes.len(),
            });
        }
        let magic = be_u32(bytes, 0);
        if magic != IMAGE_MAGIC {
            return Err(Error::IdxMagic { observed: magic });
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::IdxTruncated {
                expected: HEADER_LEN,
                actual: bytes.len(),
            });
        }
        let (count, rows, cols) = (
            be_u32(bytes, 4) as usize,
            be_u32(bytes, 8) as usize,
            be_u32(bytes, 12) as usize,
        );
        let payload = count
            .checked_mul(rows)
            .and_then(|v| v.checked_mul(cols))
            .and_then(|v| v.checked_add(HEADER_LEN))
            .ok_or_else(|| Error::InvalidInput(format!("IDX extents {count}x{rows}x{cols} overflow")))?;
        if bytes.len() < payload {
            return Err(Error::IdxTruncated {
                expected: payload,
                actual: bytes.len(),
            });
        }
        if bytes.len() > payload {
            return Err(Error::InvalidInput(format!(
                "IDX file has {} trailing bytes after {payload}",
                bytes.len() - payload
            )));
        }
        Ok(Self {
            count,
            rows,
            cols,
            pixels: bytes[HEADER_LEN..].to_vec(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.pixels.len());
        for v in [IMAGE_MAGIC, self.count as u32, self.rows as u32, self.cols as u32] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn to_dataset(&self, source: impl Into<String>) -> Result<Dataset, Error> {
        let per = self.rows * self.cols;
        if self.count == 0 || per == 0 {
            return Err(Error::InvalidInput("IDX file holds no pixels".into()));
        }
        let images = self
            .pixels
            .chunks_exact(per)
            .map(|px| Image::grayscale(self.rows, self.cols, px.iter().map(|&b| normalize_byte(b)).collect()))
            .collect::<Result<_, _>>()?;
        Dataset::new(images, source)
    }
}

pub fn read_idx(path: &Path) -> Result<Dataset, Error> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    IdxImages::parse(&bytes)?.to_dataset(format!("idx:{}", path.display()))
}

pub fn write_idx(path: &Path, images: &IdxImages) -> Result<(), Error> {
    std::fs::write(path, images.to_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_by_two() -> Vec<u8> {
        let mut b = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        b.extend_from_slice(&[0, 255, 128, 64, 10, 20, 30, 40]);
        b
    }

    #[test]
    fn label_magic_rejected_with_observed_value() {
        let mut b = two_by_two();
        b[3] = 1;
        let err = IdxImages::parse(&b).unwrap_err();
        assert!(matches!(err, Error::IdxMagic { observed: 0x801 }));
        assert!(err.to_string().contains("0x00000801"));
    }

    #[test]
    fn normalises_listed_bytes() {
        let ds = IdxImages::parse(&two_by_two()).unwrap().to_dataset("t").unwrap();
        assert_eq!(ds.len(), 2);
        let want = [-1.0, 1.0, 0.00392, -0.49804];
        for (got, want) in ds.images()[0].data().iter().zip(want) {
            assert!((got - want).abs() < 1e-5, "{got} vs {want}");
        }
    }

    #[test]
    fn truncation_reports_sizes() {
        let mut b = two_by_two();
        b.pop();
        match IdxImages::parse(&b) {
            Err(Error::IdxTruncated { expected, actual }) => assert_eq!((expected, actual), (24, 23)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("images.idx");
        std::fs::write(&path, two_by_two()).unwrap();
        let raw = IdxImages::parse(&std::fs::read(&path).unwrap()).unwrap();
        let out = dir.path().join("copy.idx");
        write_idx(&out, &raw).unwrap();
        assert_eq!(std::fs::read(out).unwrap(), two_by_two());
        assert_eq!(read_idx(&path).unwrap().shape(), (1, 2, 2));
    }

    proptest! {
        #[test]
        fn write_back_is_byte_identical(count in 1usize..4, rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let pixels = (0..count * rows * cols).map(|_| rng.random()).collect();
            let raw = IdxImages { count, rows, cols, pixels };
            let bytes = raw.to_bytes();
            prop_assert_eq!(IdxImages::parse(&bytes).unwrap().to_bytes(), bytes);
        }
    }
}
