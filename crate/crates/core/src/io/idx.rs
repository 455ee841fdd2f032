//! IDX files as distributed with MNIST: a big-endian magic, big-endian
//! dimension sizes, then unsigned bytes.

use std::path::Path;

use crate::dataset::ImageStack;
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn header(bytes: &[u8], magic: u32, ndims: usize) -> Result<(Vec<usize>, &[u8])> {
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            what: "idx header",
            expected: 4,
            found: bytes.len(),
        });
    }
    let got = u32::from_be_bytes(bytes[..4].try_into().unwrap());
    if got != magic {
        return Err(Error::BadMagic(got));
    }
    let head = 4 + 4 * ndims;
    if bytes.len() < head {
        return Err(Error::Truncated {
            what: "idx header",
            expected: head,
            found: bytes.len(),
        });
    }
    let dims: Vec<usize> = bytes[4..head]
        .chunks(4)
        .map(|c| u32::from_be_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let numel = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
    let numel = numel.ok_or_else(|| Error::malformed("idx", format!("dimensions {dims:?} overflow")))?;
    let payload = &bytes[head..];
    if payload.len() < numel {
        return Err(Error::Truncated {
            what: "idx payload",
            expected: numel,
            found: payload.len(),
        });
    }
    if payload.len() > numel {
        return Err(Error::malformed(
            "idx",
            format!("{} bytes after a {numel}-byte payload", payload.len() - numel),
        ));
    }
    Ok((dims, payload))
}

/// Parses an image file into an `N x 1 x H x W` stack scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<ImageStack> {
    let (dims, payload) = header(bytes, IMAGES_MAGIC, 3)?;
    let data = payload.iter().map(|&b| b as f32 / 255.0).collect();
    ImageStack::new(dims[0], 1, dims[1], dims[2], data)
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let (_, payload) = header(bytes, LABELS_MAGIC, 1)?;
    Ok(payload.to_vec())
}

pub fn read_idx_images(path: &Path) -> Result<ImageStack> {
    parse_idx_images(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    parse_idx_labels(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Quantises `[0, 1]` values to bytes.
pub fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Single-channel stack as IDX image bytes.
pub fn idx_image_bytes(stack: &ImageStack) -> Result<Vec<u8>> {
    if stack.channels != 1 {
        return Err(Error::InvalidShape {
            shape: vec![stack.n, stack.channels, stack.height, stack.width],
            reason: "IDX images are single-channel".into(),
        });
    }
    let mut out = Vec::with_capacity(16 + stack.data.len());
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    for d in [stack.n, stack.height, stack.width] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend(stack.data.iter().map(|&v| to_byte(v)));
    Ok(out)
}

pub fn idx_label_bytes(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

pub fn write_idx_images(path: &Path, stack: &ImageStack) -> Result<()> {
    std::fs::write(path, idx_image_bytes(stack)?).map_err(|e| Error::io(path, e))
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    std::fs::write(path, idx_label_bytes(labels)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_white_image() -> Vec<u8> {
        let mut b = vec![0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 28, 0, 0, 0, 28];
        b.extend(std::iter::repeat_n(255u8, 784));
        b
    }

    #[test]
    fn white_fixture_reads_as_ones() {
        let s = parse_idx_images(&one_white_image()).unwrap();
        assert_eq!((s.n, s.channels, s.height, s.width), (1, 1, 28, 28));
        assert!(s.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn bad_magic_and_truncation_are_rejected() {
        let mut b = one_white_image();
        b[2] = 0;
        b[3] = 0;
        let err = parse_idx_images(&b).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
        let b = one_white_image();
        assert!(matches!(
            parse_idx_images(&b[..b.len() - 1]),
            Err(Error::Truncated { .. })
        ));
        assert!(matches!(parse_idx_images(&b[..10]), Err(Error::Truncated { .. })));
        assert!(parse_idx_labels(&b).is_err());
    }

    #[test]
    fn bytes_round_trip() {
        let data: Vec<f32> = (0..2 * 3 * 4).map(|i| (i * 10) as f32 / 255.0).collect();
        let s = ImageStack::new(2, 1, 3, 4, data).unwrap();
        let bytes = idx_image_bytes(&s).unwrap();
        assert_eq!(idx_image_bytes(&parse_idx_images(&bytes).unwrap()).unwrap(), bytes);
        let labels = vec![3, 7, 3];
        assert_eq!(parse_idx_labels(&idx_label_bytes(&labels)).unwrap(), labels);
    }
}
