//! Binary container shared by model, basis, hull and bounds files: one
//! ASCII header line terminated by `\n`, then raw little-endian f64 values.

use std::io::{Read, Write};

use crate::error::{ReachError, Result};

pub(crate) fn write_header<W: Write>(w: &mut W, fields: &[String]) -> Result<()> {
    writeln!(w, "{}", fields.join(" "))?;
    Ok(())
}

pub(crate) fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Splits `bytes` into the header tokens and the payload after the newline.
pub(crate) fn split_header(bytes: &[u8]) -> Result<(Vec<String>, &[u8])> {
    if bytes.is_empty() {
        return Err(ReachError::MalformedHeader("empty file".into()));
    }
    let end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| ReachError::MalformedHeader("missing header terminator".into()))?;
    let line = std::str::from_utf8(&bytes[..end])
        .map_err(|_| ReachError::MalformedHeader("header is not UTF-8".into()))?;
    let tokens: Vec<String> = line.split_whitespace().map(str::to_owned).collect();
    if tokens.is_empty() {
        return Err(ReachError::MalformedHeader("blank header".into()));
    }
    Ok((tokens, &bytes[end + 1..]))
}

pub(crate) fn expect_magic(tokens: &[String], magic: &str, version: &str) -> Result<()> {
    if tokens.len() < 2 || tokens[0] != magic || tokens[1] != version {
        return Err(ReachError::MalformedHeader(format!(
            "expected `{magic} {version}`, found `{}`",
            tokens.join(" ")
        )));
    }
    Ok(())
}

pub(crate) fn parse_usize(token: &str, what: &str) -> Result<usize> {
    token
        .parse()
        .map_err(|_| ReachError::MalformedHeader(format!("invalid {what} `{token}`")))
}

/// Sequential reader over the f64 payload.
pub(crate) struct Payload<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Payload<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Payload { bytes, offset: 0 }
    }

    pub(crate) fn take(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        let need = count * 8;
        let rest = &self.bytes[self.offset..];
        if rest.len() < need {
            return Err(ReachError::TruncatedPayload(format!(
                "{what}: need {count} values, {} bytes left",
                rest.len()
            )));
        }
        let values = rest[..need]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        self.offset += need;
        Ok(values)
    }

    pub(crate) fn finish(self) -> Result<()> {
        let left = self.bytes.len() - self.offset;
        if left != 0 {
            return Err(ReachError::InvalidData(format!(
                "{left} trailing bytes after payload"
            )));
        }
        Ok(())
    }
}

pub(crate) fn read_file(path: &std::path::Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    Ok(bytes)
}
