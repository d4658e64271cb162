//! Binary PGM (P5) / PPM (P6) reading and writing.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{ImageError, RasterImage};

/// Reads a P5/P6 file with maxval 255 and normalizes samples to `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<RasterImage, ImageError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| ImageError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_pnm(&bytes)
}

/// Decodes an in-memory P5/P6 image.
pub fn decode_pnm(bytes: &[u8]) -> Result<RasterImage, ImageError> {
    let raw = decode_raw(bytes)?;
    if raw.maxval != 255 {
        return Err(ImageError::Header {
            field: "maxval",
            detail: format!(
                "unsupported bit depth: maxval {} (only 255 is accepted)",
                raw.maxval
            ),
        });
    }
    let data = raw.samples.iter().map(|&v| f64::from(v) / 255.0).collect();
    RasterImage::new(raw.width, raw.height, raw.channels, data)
}

/// A decoded PNM before normalization. Samples are kept as integers so
/// 16-bit label maps can be read back exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawPnm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub maxval: u32,
    pub samples: Vec<u32>,
}

pub fn decode_raw(bytes: &[u8]) -> Result<RawPnm, ImageError> {
    let mut cursor = HeaderCursor { bytes, pos: 0 };
    let magic = cursor.token("magic number")?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => {
            return Err(ImageError::Header {
                field: "magic number",
                detail: format!("unsupported format {other:?} (expected P5 or P6)"),
            })
        }
    };
    let width = cursor.number("width")?;
    let height = cursor.number("height")?;
    let maxval = cursor.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(ImageError::Header {
            field: "width/height",
            detail: format!("empty image {width}x{height}"),
        });
    }
    if maxval == 0 || maxval > 65535 {
        return Err(ImageError::Header {
            field: "maxval",
            detail: format!("unsupported bit depth: maxval {maxval}"),
        });
    }
    // exactly one whitespace byte separates the header from the raster
    match cursor.bytes.get(cursor.pos) {
        Some(b) if b.is_ascii_whitespace() => cursor.pos += 1,
        _ => return Err(ImageError::UnexpectedEof),
    }
    let sample_bytes = if maxval < 256 { 1 } else { 2 };
    let count = width * height * channels;
    let raster = &bytes[cursor.pos..];
    if raster.len() < count * sample_bytes {
        return Err(ImageError::UnexpectedEof);
    }
    let samples: Vec<u32> = if sample_bytes == 1 {
        raster[..count].iter().map(|&b| u32::from(b)).collect()
    } else {
        raster[..count * 2]
            .chunks_exact(2)
            .map(|c| u32::from(u16::from_be_bytes([c[0], c[1]])))
            .collect()
    };
    if let Some(bad) = samples.iter().find(|&&v| v > maxval as u32) {
        return Err(ImageError::Header {
            field: "raster",
            detail: format!("sample {bad} exceeds maxval {maxval}"),
        });
    }
    Ok(RawPnm {
        width,
        height,
        channels,
        maxval: maxval as u32,
        samples,
    })
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' {
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

    fn token(&mut self, field: &'static str) -> Result<String, ImageError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() || b == b'#' {
                break;
            }
            self.pos += 1;
        }
        if start == self.pos {
            return Err(if self.pos >= self.bytes.len() {
                ImageError::UnexpectedEof
            } else {
                ImageError::Header {
                    field,
                    detail: "missing value".into(),
                }
            });
        }
        Ok(String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned())
    }

    fn number(&mut self, field: &'static str) -> Result<usize, ImageError> {
        let tok = self.token(field)?;
        tok.parse().map_err(|_| ImageError::Header {
            field,
            detail: format!("not a number: {tok:?}"),
        })
    }
}

/// Writes an 8-bit (maxval 255) or 16-bit (maxval 65535) single-channel PGM.
pub fn write_pgm(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    samples: &[u32],
    sixteen_bit: bool,
) -> Result<(), ImageError> {
    let path = path.as_ref();
    let bytes = encode_pgm(width, height, samples, sixteen_bit)?;
    let mut file = fs::File::create(path).map_err(|source| ImageError::Io {
        path: path.display().to_string(),
        source,
    })?;
    file.write_all(&bytes).map_err(|source| ImageError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn encode_pgm(
    width: usize,
    height: usize,
    samples: &[u32],
    sixteen_bit: bool,
) -> Result<Vec<u8>, ImageError> {
    if samples.len() != width * height {
        return Err(ImageError::Dimensions(format!(
            "{} samples for a {width}x{height} image",
            samples.len()
        )));
    }
    let maxval: u32 = if sixteen_bit { 65535 } else { 255 };
    if let Some(bad) = samples.iter().find(|&&v| v > maxval) {
        return Err(ImageError::Dimensions(format!(
            "sample {bad} does not fit maxval {maxval}"
        )));
    }
    let mut out = format!("P5\n{width} {height}\n{maxval}\n").into_bytes();
    if sixteen_bit {
        for &v in samples {
            out.extend_from_slice(&(v as u16).to_be_bytes());
        }
    } else {
        out.extend(samples.iter().map(|&v| v as u8));
    }
    Ok(out)
}
