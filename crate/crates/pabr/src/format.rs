//! Binary feature-map files.
//!
//! ```text
//! offset  size  field
//!      0     8  magic "PABRFMAP"
//!      8     2  version (u16 LE)
//!     10     1  role (0 appearance, 1 part, 2 raw)
//!     11     4  height (u32 LE)
//!     15     4  width (u32 LE)
//!     19     4  channels (u32 LE)
//!     23  4·hwc payload, f32 LE, row-major (y, x, channel)
//! ```
//!
//! Maps hold `f64` in memory; the payload stores `f32`. Reading a file and
//! writing it back reproduces it byte for byte.

use std::fs;
use std::path::Path;

use pabr_core::model::{validate_map, FeatureMap, MapRole};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PABRFMAP";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 23;

/// Serializes a map. Values must be finite and representable as `f32`.
pub fn encode(map: &FeatureMap) -> Result<Vec<u8>> {
    let dims = [map.height(), map.width(), map.channels()];
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * map.data().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(map.role().code());
    for d in dims {
        let d = u32::try_from(d).map_err(|_| Error::Validation(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for (i, &v) in map.data().iter().enumerate() {
        let stored = v as f32;
        if !v.is_finite() || !stored.is_finite() {
            return Err(Error::Validation(format!("value {v} at index {i} cannot be stored")));
        }
        out.extend_from_slice(&stored.to_le_bytes());
    }
    Ok(out)
}

fn u32_at(bytes: &[u8], offset: usize) -> usize {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().expect("4-byte slice")) as usize
}

/// Parses a complete file image.
pub fn decode(bytes: &[u8]) -> Result<FeatureMap> {
    if bytes.len() < MAGIC.len() {
        return Err(Error::Corrupt { offset: bytes.len() as u64, reason: "file ends inside the magic".into() });
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", String::from_utf8_lossy(&bytes[..8]))));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Corrupt {
            offset: bytes.len() as u64,
            reason: format!("header needs {HEADER_LEN} bytes"),
        });
    }
    let version = u16::from_le_bytes([bytes[8], bytes[9]]);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}, expected {VERSION}")));
    }
    let role = MapRole::from_code(bytes[10]).ok_or_else(|| Error::Format(format!("unknown role code {}", bytes[10])))?;
    let (h, w, c) = (u32_at(bytes, 11), u32_at(bytes, 15), u32_at(bytes, 19));

    let count = h
        .checked_mul(w)
        .and_then(|s| s.checked_mul(c))
        .ok_or_else(|| Error::Format(format!("dimensions {h}x{w}x{c} overflow")))?;
    let expected = count
        .checked_mul(4)
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::Format(format!("dimensions {h}x{w}x{c} overflow")))?;
    if bytes.len() < expected {
        return Err(Error::Corrupt {
            offset: bytes.len() as u64,
            reason: format!("payload truncated, expected {expected} bytes in total"),
        });
    }
    if bytes.len() > expected {
        return Err(Error::Corrupt {
            offset: expected as u64,
            reason: format!("{} trailing bytes after payload", bytes.len() - expected),
        });
    }

    let data: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4-byte chunk")) as f64)
        .collect();
    if let Some(v) = validate_map(h, w, c, &data).first() {
        return Err(Error::Validation(v.to_string()));
    }
    Ok(FeatureMap::new(h, w, c, data, role)?)
}

pub fn write_feature_file(map: &FeatureMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(map)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<FeatureMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
