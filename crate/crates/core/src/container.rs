//! The header + float32 container shared by motion (`GMC1`) and mel (`MEL1`)
//! files: one text line for the magic, one line per header field, then the
//! payload as little-endian `f32` values.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub fn encode(magic: &str, fields: &[String], values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + values.len() * 4);
    out.extend_from_slice(magic.as_bytes());
    out.push(b'\n');
    for f in fields {
        debug_assert!(!f.contains('\n'));
        out.extend_from_slice(f.as_bytes());
        out.push(b'\n');
    }
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// Splits `bytes` into `field_count` header lines and the float payload.
pub fn decode(
    kind: &'static str,
    magic: &str,
    field_count: usize,
    bytes: &[u8],
) -> Result<(Vec<String>, Vec<f64>)> {
    let mut pos = 0;
    let next_line = |pos: &mut usize| -> Result<String> {
        let rest = &bytes[*pos..];
        let Some(end) = rest.iter().position(|&b| b == b'\n') else {
            return Err(Error::format(kind, "truncated header"));
        };
        let line = std::str::from_utf8(&rest[..end])
            .map_err(|_| Error::format(kind, "header is not UTF-8"))?
            .to_string();
        *pos += end + 1;
        Ok(line)
    };
    let m = next_line(&mut pos)?;
    if m != magic {
        return Err(Error::format(kind, format!("bad magic {m:?}, expected {magic:?}")));
    }
    let mut fields = Vec::with_capacity(field_count);
    for _ in 0..field_count {
        fields.push(next_line(&mut pos)?);
    }
    let payload = &bytes[pos..];
    if payload.len() % 4 != 0 {
        return Err(Error::format(
            kind,
            format!("payload of {} bytes is not a whole number of f32", payload.len()),
        ));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    Ok((fields, values))
}

pub fn parse_field<T: std::str::FromStr>(kind: &'static str, what: &str, s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::format(kind, format!("cannot parse {what} from {s:?}")))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}
