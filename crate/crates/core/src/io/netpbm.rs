//! Binary PGM (P5) and PPM (P6) images and sample grids.

use std::path::Path;

use super::idx::to_byte;
use crate::error::{Error, Result};

/// 8-bit raster with 1 (grey) or 3 (RGB, interleaved) channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl Raster {
    /// From planar `C x H x W` values in `[0, 1]`.
    pub fn from_planar(values: &[f32], channels: usize, height: usize, width: usize) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidShape {
                shape: vec![channels, height, width],
                reason: "only 1 or 3 channels can be written".into(),
            });
        }
        if values.len() != channels * height * width {
            return Err(Error::InvalidShape {
                shape: vec![channels, height, width],
                reason: format!("got {} values", values.len()),
            });
        }
        let plane = height * width;
        let pixels = (0..plane)
            .flat_map(|p| (0..channels).map(move |c| (c, p)))
            .map(|(c, p)| to_byte(values[c * plane + p]))
            .collect();
        Ok(Raster {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let tag = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{tag}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let mut at = 0;
        let mut token = || -> Result<String> {
            loop {
                while at < bytes.len() && bytes[at].is_ascii_whitespace() {
                    at += 1;
                }
                if at < bytes.len() && bytes[at] == b'#' {
                    while at < bytes.len() && bytes[at] != b'\n' {
                        at += 1;
                    }
                    continue;
                }
                break;
            }
            let start = at;
            while at < bytes.len() && !bytes[at].is_ascii_whitespace() {
                at += 1;
            }
            if start == at {
                return Err(Error::Truncated {
                    what: "netpbm header",
                    expected: start + 1,
                    found: bytes.len(),
                });
            }
            Ok(String::from_utf8_lossy(&bytes[start..at]).into_owned())
        };
        let channels = match token()?.as_str() {
            "P5" => 1,
            "P6" => 3,
            other => return Err(Error::malformed("netpbm", format!("unsupported type {other:?}"))),
        };
        let mut num = || -> Result<usize> {
            let t = token()?;
            t.parse()
                .map_err(|_| Error::malformed("netpbm", format!("bad header number {t:?}")))
        };
        let (width, height, maxval) = (num()?, num()?, num()?);
        if maxval != 255 {
            return Err(Error::malformed("netpbm", format!("maxval {maxval} unsupported")));
        }
        let start = at + 1;
        let len = width * height * channels;
        if bytes.len() < start + len {
            return Err(Error::Truncated {
                what: "netpbm payload",
                expected: start + len,
                found: bytes.len(),
            });
        }
        Ok(Raster {
            width,
            height,
            channels,
            pixels: bytes[start..start + len].to_vec(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Writes a `C x H x W` image in `[0, 1]` as PGM or PPM.
pub fn write_image(path: &Path, values: &[f32], dims: (usize, usize, usize)) -> Result<()> {
    Raster::from_planar(values, dims.0, dims.1, dims.2)?.write(path)
}

/// Scales `values` by their maximum so the largest becomes 1; returns the
/// scaled values and the raw maximum.
pub fn max_normalise(values: &[f64]) -> (Vec<f32>, f64) {
    let max = values.iter().copied().fold(0.0f64, f64::max);
    let scaled = values
        .iter()
        .map(|&v| if max > 0.0 { (v / max) as f32 } else { 0.0 })
        .collect();
    (scaled, max)
}

/// Tiles up to the first 64 images (each `C x H x W`) into an 8x8 grid,
/// row-major, leaving missing cells black.
pub fn grid<'a>(images: impl IntoIterator<Item = &'a [f32]>, dims: (usize, usize, usize)) -> Result<Raster> {
    let (c, h, w) = dims;
    let (gw, gh) = (8 * w, 8 * h);
    let mut canvas = vec![0.0f32; c * gh * gw];
    for (k, img) in images.into_iter().take(64).enumerate() {
        if img.len() != c * h * w {
            return Err(Error::InvalidShape {
                shape: vec![c, h, w],
                reason: format!("grid cell {k} has {} values", img.len()),
            });
        }
        let (gx, gy) = ((k % 8) * w, (k / 8) * h);
        for ch in 0..c {
            for y in 0..h {
                let src = &img[ch * h * w + y * w..ch * h * w + (y + 1) * w];
                let row = ch * gh * gw + (gy + y) * gw + gx;
                canvas[row..row + w].copy_from_slice(src);
            }
        }
    }
    Raster::from_planar(&canvas, c, gh, gw)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn black_pgm_is_all_zero() {
        let r = Raster::from_planar(&[0.0; 12], 1, 3, 4).unwrap();
        let bytes = r.to_bytes();
        assert!(bytes.starts_with(b"P5\n4 3\n255\n"));
        assert!(bytes[11..].iter().all(|&b| b == 0));
        assert_eq!(bytes.len(), 11 + 12);
    }

    #[test]
    fn rasters_round_trip() {
        let vals: Vec<f32> = (0..3 * 5 * 2).map(|i| i as f32 / 29.0).collect();
        let r = Raster::from_planar(&vals, 3, 5, 2).unwrap();
        assert_eq!(Raster::parse(&r.to_bytes()).unwrap(), r);
        assert!(Raster::parse(b"P5\n4 3\n255\n\0\0").is_err());
        assert!(Raster::parse(b"P2\n1 1\n255\n0").is_err());
    }

    #[test]
    fn grid_tiles_eight_by_eight() {
        let imgs: Vec<Vec<f32>> = (0..70).map(|k| vec![(k % 2) as f32; 28 * 28]).collect();
        let g = grid(imgs.iter().map(Vec::as_slice), (1, 28, 28)).unwrap();
        assert_eq!((g.width, g.height), (224, 224));
        assert_eq!(g.pixels[0], 0);
        assert_eq!(g.pixels[28], 255);
    }
}
