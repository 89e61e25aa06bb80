//! Versioned binary container shared by every persisted artifact.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic[8] | version u16 | header_len u32 | payload_len u64
//! | header (JSON, header_len bytes) | payload (payload_len bytes)
//! | checksum u64 (FNV-1a over every preceding byte)
//! ```

use std::fs;
use std::hash::Hasher;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

const PREFIX_LEN: usize = 8 + 2 + 4 + 8;

pub fn checksum(bytes: &[u8]) -> u64 {
    let mut h = fnv::FnvHasher::default();
    h.write(bytes);
    h.finish()
}

pub fn encode<H: Serialize>(magic: &[u8; 8], version: u16, header: &H, payload: &[u8]) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(PREFIX_LEN + header.len() + payload.len() + 8);
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(payload);
    let sum = checksum(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    Ok(out)
}

pub fn decode<H: DeserializeOwned>(
    bytes: &[u8],
    magic: &[u8; 8],
    version: u16,
    origin: &Path,
) -> Result<(H, Vec<u8>)> {
    if bytes.len() < PREFIX_LEN + 8 {
        return Err(Error::Truncated(format!("{}: {} bytes", origin.display(), bytes.len())));
    }
    if &bytes[..8] != magic {
        return Err(Error::BadMagic {
            path: origin.to_path_buf(),
            expected: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let found = u16::from_le_bytes([bytes[8], bytes[9]]);
    if found != version {
        return Err(Error::VersionMismatch { found, expected: version });
    }
    let header_len = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    let payload_len = u64::from_le_bytes(bytes[14..22].try_into().unwrap()) as usize;
    let expected_len = PREFIX_LEN
        .checked_add(header_len)
        .and_then(|n| n.checked_add(payload_len))
        .and_then(|n| n.checked_add(8));
    match expected_len {
        Some(n) if n == bytes.len() => {}
        Some(n) if n > bytes.len() => {
            return Err(Error::Truncated(format!(
                "{}: expected {n} bytes, found {}",
                origin.display(),
                bytes.len()
            )))
        }
        _ => {
            return Err(Error::Truncated(format!(
                "{}: length fields inconsistent with {} bytes",
                origin.display(),
                bytes.len()
            )))
        }
    }
    let body = &bytes[..bytes.len() - 8];
    let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
    let computed = checksum(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let header_bytes = &body[PREFIX_LEN..PREFIX_LEN + header_len];
    let header = serde_json::from_slice(header_bytes)?;
    Ok((header, body[PREFIX_LEN + header_len..].to_vec()))
}

pub fn write<H: Serialize>(path: &Path, magic: &[u8; 8], version: u16, header: &H, payload: &[u8]) -> Result<()> {
    write_bytes(path, &encode(magic, version, header, payload)?)
}

/// Writes to a sibling temp file and renames over `path`.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read<H: DeserializeOwned>(path: &Path, magic: &[u8; 8], version: u16) -> Result<(H, Vec<u8>)> {
    let bytes = fs::read(path)?;
    decode(&bytes, magic, version, path)
}

pub fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    out.reserve(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Sequential reader over a payload.
pub struct PayloadReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PayloadReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        PayloadReader { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Truncated(format!("payload ends at {} but {} more bytes requested", self.bytes.len(), n))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n * 4)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Truncated(format!(
                "payload has {} trailing bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}
