//! Netpbm (P2/P3/P5/P6, maxval 255) and `.f64` tensor files.
//!
//! The `.f64` format is a header line `F64 v1 <height> <width> <channels>`
//! followed by the row-major data as little-endian f64.

use std::io::Write;
use std::path::Path;

use crate::container::{self, Payload};
use crate::error::{ReachError, Result};
use crate::model::ImageTensor;

pub fn read_image(path: &Path) -> Result<ImageTensor> {
    let bytes = container::read_file(path)?;
    if path.extension().and_then(|e| e.to_str()) == Some("f64") {
        parse_f64_tensor(&bytes)
    } else {
        parse_netpbm(&bytes)
    }
}

pub fn write_f64_tensor(path: &Path, image: &ImageTensor) -> Result<()> {
    let mut out = Vec::with_capacity(32 + image.len() * 8);
    container::write_header(
        &mut out,
        &[
            "F64".into(),
            "v1".into(),
            image.height.to_string(),
            image.width.to_string(),
            image.channels.to_string(),
        ],
    )?;
    container::write_f64s(&mut out, &image.data)?;
    std::fs::write(path, out)?;
    Ok(())
}

pub fn parse_f64_tensor(bytes: &[u8]) -> Result<ImageTensor> {
    let (tokens, payload) = container::split_header(bytes)?;
    container::expect_magic(&tokens, "F64", "v1")?;
    if tokens.len() != 5 {
        return Err(ReachError::MalformedHeader(
            "expected `F64 v1 <height> <width> <channels>`".into(),
        ));
    }
    let h = container::parse_usize(&tokens[2], "height")?;
    let w = container::parse_usize(&tokens[3], "width")?;
    let c = container::parse_usize(&tokens[4], "channels")?;
    let mut payload = Payload::new(payload);
    let data = payload.take(h * w * c, "tensor data")?;
    payload.finish()?;
    ImageTensor::new(h, w, c, data)
}

/// Writes a binary (P5) PGM from raw 8-bit gray levels.
pub fn write_pgm(path: &Path, width: usize, height: usize, levels: &[u8]) -> Result<()> {
    if levels.len() != width * height {
        return Err(ReachError::dim("pgm levels", width * height, levels.len()));
    }
    let mut out = Vec::with_capacity(levels.len() + 32);
    write!(out, "P5\n{width} {height}\n255\n")?;
    out.extend_from_slice(levels);
    std::fs::write(path, out)?;
    Ok(())
}

/// Writes an image with values in [0, 1] as P5 (one channel) or P6 (three).
pub fn write_netpbm(path: &Path, image: &ImageTensor) -> Result<()> {
    let magic = match image.channels {
        1 => "P5",
        3 => "P6",
        c => {
            return Err(ReachError::InvalidData(format!(
                "netpbm supports 1 or 3 channels, got {c}"
            )))
        }
    };
    let mut out = Vec::with_capacity(image.len() + 32);
    write!(out, "{magic}\n{} {}\n255\n", image.width, image.height)?;
    out.extend(image.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    std::fs::write(path, out)?;
    Ok(())
}

struct Tokens<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn next(&mut self) -> Option<&'a str> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        (self.pos > start)
            .then(|| std::str::from_utf8(&self.bytes[start..self.pos]).ok())
            .flatten()
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let tok = self
            .next()
            .ok_or_else(|| ReachError::MalformedHeader(format!("missing {what}")))?;
        tok.parse()
            .map_err(|_| ReachError::MalformedHeader(format!("invalid {what} `{tok}`")))
    }
}

pub fn parse_netpbm(bytes: &[u8]) -> Result<ImageTensor> {
    let mut tokens = Tokens { bytes, pos: 0 };
    let magic = tokens
        .next()
        .ok_or_else(|| ReachError::MalformedHeader("empty image file".into()))?;
    let (channels, binary) = match magic {
        "P2" => (1, false),
        "P5" => (1, true),
        "P3" => (3, false),
        "P6" => (3, true),
        other => {
            return Err(ReachError::MalformedHeader(format!(
                "unsupported netpbm magic `{other}`"
            )))
        }
    };
    let width = tokens.number("width")?;
    let height = tokens.number("height")?;
    let maxval = tokens.number("maxval")?;
    if maxval != 255 {
        return Err(ReachError::MalformedHeader(format!(
            "only maxval 255 is supported, got {maxval}"
        )));
    }
    let count = width * height * channels;
    let data: Vec<f64> = if binary {
        // Exactly one whitespace byte separates maxval from the raster.
        let start = tokens.pos + 1;
        let raster = bytes.get(start..start + count).ok_or_else(|| {
            ReachError::TruncatedPayload(format!("raster needs {count} bytes"))
        })?;
        raster.iter().map(|&b| b as f64 / 255.0).collect()
    } else {
        (0..count)
            .map(|_| {
                let v = tokens.next().ok_or_else(|| {
                    ReachError::TruncatedPayload(format!("raster needs {count} samples"))
                })?;
                let v: u32 = v
                    .parse()
                    .map_err(|_| ReachError::InvalidData(format!("invalid sample `{v}`")))?;
                if v > 255 {
                    return Err(ReachError::InvalidData(format!("sample {v} exceeds maxval")));
                }
                Ok(v as f64 / 255.0)
            })
            .collect::<Result<_>>()?
    };
    ImageTensor::new(height, width, channels, data)
}
