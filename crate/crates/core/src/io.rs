//! Raster and JSON sidecar formats.
//!
//! `.vbrd`: `"VBRD"`, u32 width, u32 height, u32 flags (0), then row-major
//! f32 depths. `.vbri`: `"VBRI"`, same header, then row-major u16 ids.
//! All integers and floats little-endian.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::camera::{CameraIntrinsics, DepthImage};
use crate::edge_graph::{InstanceMap, LabelTable};
use crate::error::FormatError;

const HEADER: usize = 16;

fn io_err(path: &Path, source: std::io::Error) -> FormatError {
    if source.kind() == std::io::ErrorKind::NotFound {
        return FormatError::InputMissing(path.display().to_string());
    }
    FormatError::Io { path: path.display().to_string(), source }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, FormatError> {
    fs::read(path).map_err(|e| io_err(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn header(magic: &[u8; 4], w: usize, h: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER);
    out.extend_from_slice(magic);
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out
}

fn parse_header(bytes: &[u8], magic: &[u8; 4], name: &str) -> Result<(usize, usize), FormatError> {
    if bytes.len() < HEADER {
        return Err(FormatError::Truncated(name.into()));
    }
    if &bytes[..4] != magic {
        return Err(FormatError::BadMagic(name.into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    Ok((word(4), word(8)))
}

pub fn encode_depth(d: &DepthImage) -> Vec<u8> {
    let mut out = header(b"VBRD", d.width, d.height);
    out.reserve(d.data.len() * 4);
    for v in &d.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_depth(bytes: &[u8], name: &str) -> Result<DepthImage, FormatError> {
    let (w, h) = parse_header(bytes, b"VBRD", name)?;
    let body = &bytes[HEADER..];
    if body.len() != w * h * 4 {
        return Err(FormatError::Truncated(name.into()));
    }
    let data = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(DepthImage { width: w, height: h, data })
}

pub fn encode_ids(width: usize, height: usize, ids: &[u16]) -> Vec<u8> {
    let mut out = header(b"VBRI", width, height);
    for v in ids {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_ids(bytes: &[u8], name: &str) -> Result<(usize, usize, Vec<u16>), FormatError> {
    let (w, h) = parse_header(bytes, b"VBRI", name)?;
    let body = &bytes[HEADER..];
    if body.len() != w * h * 2 {
        return Err(FormatError::Truncated(name.into()));
    }
    Ok((w, h, body.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect()))
}

pub fn read_depth(path: &Path) -> Result<DepthImage, FormatError> {
    decode_depth(&read_bytes(path)?, &path.display().to_string())
}

pub fn write_depth(path: &Path, d: &DepthImage) -> Result<(), FormatError> {
    write_bytes(path, &encode_depth(d))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, FormatError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|source| FormatError::Json { path: path.display().to_string(), source })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FormatError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|source| FormatError::Json { path: path.display().to_string(), source })?;
    write_bytes(path, text.as_bytes())
}

pub fn read_camera(path: &Path) -> Result<CameraIntrinsics, FormatError> {
    let k: CameraIntrinsics = read_json(path)?;
    k.validate()?;
    Ok(k)
}

/// Reads an instance raster and its `labels.json` sidecar.
pub fn read_instance_map(raster: &Path, labels: &Path) -> Result<InstanceMap, FormatError> {
    let (w, h, ids) = decode_ids(&read_bytes(raster)?, &raster.display().to_string())?;
    let table: LabelTable = read_json(labels)?;
    let m = InstanceMap::new(w, h, ids, table);
    m.validate().map_err(FormatError::Invalid)?;
    Ok(m)
}

pub fn write_instance_map(raster: &Path, labels: &Path, m: &InstanceMap) -> Result<(), FormatError> {
    write_bytes(raster, &encode_ids(m.width, m.height, &m.ids))?;
    write_json(labels, &m.labels)
}
