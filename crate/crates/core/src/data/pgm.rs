use std::path::Path;

use crate::image::Image;
use crate::Error;

/// Binary (P5) PGM with maxval 255.
pub fn encode(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// `[-1, 1] → 0..=255` via `(x + 1)·127.5`, rounded half up.
pub fn to_byte(x: f32) -> u8 {
    ((x as f64 + 1.0) * 127.5 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Tiles grayscale images row-major, `columns` per row, with 1-pixel white
/// separators. Returns `(width, height, pixels)`.
pub fn render_grid(images: &[Image], columns: usize) -> Result<(usize, usize, Vec<u8>), Error> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidInput("no images to tile".into()))?;
    if columns == 0 {
        return Err(Error::InvalidInput("grid needs at least one column".into()));
    }
    for img in images {
        if img.channels() != 1 {
            return Err(Error::InvalidInput(format!(
                "PGM grids are grayscale only; got {} channels",
                img.channels()
            )));
        }
        first.check_same_shape(img, "write_pgm_grid")?;
    }
    let (h, w) = (first.height(), first.width());
    let cols = columns.min(images.len());
    let rows = images.len().div_ceil(cols);
    let (gw, gh) = (cols * w + cols - 1, rows * h + rows - 1);
    let mut px = vec![255u8; gw * gh];
    for (k, img) in images.iter().enumerate() {
        let (top, left) = ((k / cols) * (h + 1), (k % cols) * (w + 1));
        for y in 0..h {
            for x in 0..w {
                px[(top + y) * gw + left + x] = to_byte(img.get(0, y, x));
            }
        }
    }
    Ok((gw, gh, px))
}

pub fn write_pgm_grid(images: &[Image], columns: usize, path: &Path) -> Result<(), Error> {
    let (w, h, px) = render_grid(images, columns)?;
    std::fs::write(path, encode(w, h, &px)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extremes_map_to_byte_range() {
        let (_, _, px) = render_grid(&[Image::filled(1, 3, 3, -1.0)], 1).unwrap();
        assert!(px.iter().all(|&b| b == 0));
        let (_, _, px) = render_grid(&[Image::filled(1, 3, 3, 1.0)], 1).unwrap();
        assert!(px.iter().all(|&b| b == 255));
        assert_eq!(to_byte(0.0), 128);
    }

    #[test]
    fn tiling_dimensions() {
        let imgs = vec![Image::filled(1, 4, 4, 0.0); 2];
        let (w, h, _) = render_grid(&imgs, 2).unwrap();
        assert_eq!((w, h), (9, 4));
        let (w, h, px) = render_grid(&vec![Image::filled(1, 2, 2, -1.0); 3], 2).unwrap();
        assert_eq!((w, h), (5, 5));
        assert_eq!(px[2], 255);
    }

    #[test]
    fn color_rejected() {
        assert!(render_grid(&[Image::filled(3, 2, 2, 0.0)], 1).is_err());
    }

    #[test]
    fn file_has_p5_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.pgm");
        write_pgm_grid(&[Image::filled(1, 2, 2, 1.0)], 1, &p).unwrap();
        let bytes = std::fs::read(p).unwrap();
        assert_eq!(bytes, b"P5\n2 2\n255\n\xff\xff\xff\xff");
    }
}
