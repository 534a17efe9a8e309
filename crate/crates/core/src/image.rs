//! Pixel-domain image representation and binary PGM (P5) file I/O.
//!
//! Samples are kept as `f64` so intermediate optimization results can live
//! outside the nominal range; [`write_pgm`] applies the canonical
//! clamp-and-round rule (nearest integer, ties away from zero, clamp to
//! `[0, 255]`).

use crate::error::{Error, Result};

/// Direction of the DC level shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftDirection {
    Forward,
    Inverse,
}

/// A rectangular grid of grayscale samples with a valid value range.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelImage {
    pub width: usize,
    pub height: usize,
    pub bit_depth: u8,
    /// Row-major samples, `height * width` entries.
    pub samples: Vec<f64>,
    pub x_min: f64,
    pub x_max: f64,
}

impl PixelImage {
    /// Builds an 8-bit image in the unshifted `[0, 255]` range.
    pub fn new(width: usize, height: usize, samples: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape("image dimensions must be positive".into()));
        }
        if samples.len() != width * height {
            return Err(Error::Shape(format!(
                "expected {} samples, got {}",
                width * height,
                samples.len()
            )));
        }
        Ok(PixelImage {
            width,
            height,
            bit_depth: 8,
            samples,
            x_min: 0.0,
            x_max: 255.0,
        })
    }

    pub fn sample(&self, i: usize, j: usize) -> f64 {
        self.samples[i * self.width + j]
    }

    pub fn sample_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.samples[i * self.width + j]
    }
}

/// Nearest-integer rounding with ties away from zero, then clamp to `[0, 255]`.
pub fn clamp_round_u8(v: f64) -> u8 {
    let r = v.round(); // f64::round ties away from zero
    r.clamp(0.0, 255.0) as u8
}

/// Applies the clamp-and-round rule to every sample, producing a finalized
/// byte-valued image.
pub fn finalize(img: &PixelImage) -> PixelImage {
    PixelImage {
        width: img.width,
        height: img.height,
        bit_depth: 8,
        samples: img.samples.iter().map(|&v| clamp_round_u8(v) as f64).collect(),
        x_min: 0.0,
        x_max: 255.0,
    }
}

/// Shifts samples by half the 8-bit range: forward maps `[0,255]` to
/// `[-128,127]`, inverse restores it. Forward then inverse is the identity.
pub fn level_shift(img: &PixelImage, direction: ShiftDirection) -> PixelImage {
    let (delta, x_min, x_max) = match direction {
        ShiftDirection::Forward => (-128.0, -128.0, 127.0),
        ShiftDirection::Inverse => (128.0, 0.0, 255.0),
    };
    PixelImage {
        width: img.width,
        height: img.height,
        bit_depth: img.bit_depth,
        samples: img.samples.iter().map(|&v| v + delta).collect(),
        x_min,
        x_max,
    }
}

fn is_pnm_space(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c)
}

/// Reads one whitespace-delimited unsigned integer, skipping `#` comments.
fn read_pnm_int(bytes: &[u8], pos: &mut usize) -> Result<u64> {
    loop {
        while *pos < bytes.len() && is_pnm_space(bytes[*pos]) {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if *pos == start {
        return Err(Error::Format("expected integer in PGM header".into()));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format("invalid integer in PGM header".into()))
}

/// Parses a binary (P5) PGM with `maxval <= 255`.
pub fn read_pgm(bytes: &[u8]) -> Result<PixelImage> {
    if bytes.len() < 2 || &bytes[0..2] != b"P5" {
        let magic = bytes.get(0..2).map(|m| String::from_utf8_lossy(m).into_owned());
        return Err(Error::Format(format!(
            "unsupported PNM magic {:?}, only binary P5 is accepted",
            magic.unwrap_or_default()
        )));
    }
    let mut pos = 2;
    let width = read_pnm_int(bytes, &mut pos)? as usize;
    let height = read_pnm_int(bytes, &mut pos)? as usize;
    let maxval = read_pnm_int(bytes, &mut pos)?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("maxval {maxval} out of supported range 1..=255")));
    }
    // Exactly one whitespace byte separates the header from the payload.
    if pos >= bytes.len() || !is_pnm_space(bytes[pos]) {
        return Err(Error::Format("missing separator before PGM payload".into()));
    }
    pos += 1;
    if width == 0 || height == 0 {
        return Err(Error::Shape("PGM dimensions must be positive".into()));
    }
    let need = width * height;
    let payload = &bytes[pos..];
    if payload.len() < need {
        return Err(Error::Format(format!(
            "truncated PGM payload: need {need} bytes, found {}",
            payload.len()
        )));
    }
    let samples = payload[..need].iter().map(|&b| b as f64).collect();
    PixelImage::new(width, height, samples)
}

/// Serializes as binary P5 with maxval 255, applying clamp-and-round.
/// Never emits header comments.
pub fn write_pgm(img: &PixelImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(img.width * img.height + 32);
    out.extend_from_slice(format!("P5\n{} {}\n255\n", img.width, img.height).as_bytes());
    out.extend(img.samples.iter().map(|&v| clamp_round_u8(v)));
    out
}
