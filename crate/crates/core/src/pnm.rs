//! Netpbm gray (PGM) and color (PPM) images, 8-bit only.
//!
//! Reads binary `P5`/`P6` and plain `P2`/`P3`; always writes binary.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::protocol::PixelFormat;

#[derive(Debug, Error)]
pub enum PnmError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("not a PGM/PPM image (magic {0:?})")]
    BadMagic(String),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("unsupported maxval {0}; only 8-bit images are handled")]
    Maxval(u32),
    #[error("pixel data truncated: expected {expected} samples, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{0}")]
    Invalid(String),
}

/// An 8-bit image with interleaved channels, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub format: PixelFormat,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: u32, height: u32, format: PixelFormat, data: Vec<u8>) -> Result<Self, PnmError> {
        let expected = width as usize * height as usize * format.channels();
        if data.len() != expected {
            return Err(PnmError::Invalid(format!(
                "buffer of {} bytes does not fit {width}x{height} {format:?}",
                data.len()
            )));
        }
        Ok(Self { width, height, format, data })
    }

    pub fn filled(width: u32, height: u32, format: PixelFormat, value: u8) -> Self {
        let len = width as usize * height as usize * format.channels();
        Self { width, height, format, data: vec![value; len] }
    }

    /// Gray value at `(x, y)`; RGB images are averaged.
    pub fn luma(&self, x: u32, y: u32) -> u8 {
        let idx = (y as usize * self.width as usize + x as usize) * self.format.channels();
        match self.format {
            PixelFormat::Gray8 => self.data[idx],
            PixelFormat::Rgb8 => {
                let sum: u32 = self.data[idx..idx + 3].iter().map(|&v| v as u32).sum();
                (sum / 3) as u8
            }
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let magic = match self.format {
            PixelFormat::Gray8 => "P5",
            PixelFormat::Rgb8 => "P6",
        };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), PnmError> {
        fs::write(path, self.encode()).map_err(|source| PnmError::Io { path: path.display().to_string(), source })
    }

    pub fn read(path: &Path) -> Result<Self, PnmError> {
        let bytes = fs::read(path).map_err(|source| PnmError::Io { path: path.display().to_string(), source })?;
        decode(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32, PnmError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(PnmError::Header(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| PnmError::Header(format!("{what} out of range")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Image, PnmError> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(PnmError::BadMagic(String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned()));
    }
    let (format, plain) = match bytes[1] {
        b'2' => (PixelFormat::Gray8, true),
        b'3' => (PixelFormat::Rgb8, true),
        b'5' => (PixelFormat::Gray8, false),
        b'6' => (PixelFormat::Rgb8, false),
        _ => return Err(PnmError::BadMagic(String::from_utf8_lossy(&bytes[..2]).into_owned())),
    };
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(PnmError::Maxval(maxval));
    }
    let expected = (width as usize)
        .checked_mul(height as usize)
        .and_then(|n| n.checked_mul(format.channels()))
        .ok_or_else(|| PnmError::Header("image dimensions overflow".into()))?;
    let data = if plain {
        let mut data = Vec::with_capacity(expected.min(bytes.len()));
        for _ in 0..expected {
            let v = cur.number("sample").map_err(|_| PnmError::Truncated { expected, found: data.len() })?;
            if v > maxval {
                return Err(PnmError::Invalid(format!("sample {v} above maxval {maxval}")));
            }
            data.push(v as u8);
        }
        data
    } else {
        // Exactly one whitespace byte separates the header from the raster.
        match bytes.get(cur.pos) {
            Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
            _ => return Err(PnmError::Header("missing separator after maxval".into())),
        }
        let raster = &bytes[cur.pos..];
        if raster.len() < expected {
            return Err(PnmError::Truncated { expected, found: raster.len() });
        }
        raster[..expected].to_vec()
    };
    let data = if maxval == 255 {
        data
    } else {
        data.into_iter().map(|v| ((v as u32 * 255 + maxval / 2) / maxval) as u8).collect()
    };
    Ok(Image { width, height, format, data })
}
