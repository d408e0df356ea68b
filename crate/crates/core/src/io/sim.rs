//! Headerless SIM files: 16-byte little-endian XYZRGBA records.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use glam::Vec3;

use super::source::SpanReader;
use super::IoError;
use crate::octree::Point;

pub const RECORD_BYTES: usize = Point::BYTES;

/// Decodes whole records; `bytes.len()` must be a multiple of 16.
pub fn decode(bytes: &[u8]) -> Vec<Point> {
    debug_assert_eq!(bytes.len() % RECORD_BYTES, 0);
    bytes
        .chunks_exact(RECORD_BYTES)
        .map(|r| Point::from_le_bytes(r.try_into().unwrap()))
        .collect()
}

pub fn encode(points: &[Point]) -> Vec<u8> {
    let mut out = Vec::with_capacity(points.len() * RECORD_BYTES);
    for p in points {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn sim_write(path: &Path, points: &[Point]) -> Result<(), IoError> {
    let mut w = BufWriter::with_capacity(1 << 20, File::create(path)?);
    for p in points {
        w.write_all(&p.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a whole SIM file.
pub fn sim_read(path: &Path) -> Result<Vec<Point>, IoError> {
    let bytes = std::fs::read(path)?;
    if bytes.len() % RECORD_BYTES != 0 {
        return Err(IoError::Truncated("SIM record"));
    }
    Ok(decode(&bytes))
}

/// Min/max over all finite points, streamed in large unbuffered reads.
pub fn scan_extent(path: &Path) -> Result<Option<(Vec3, Vec3)>, IoError> {
    let mut reader = SpanReader::open(path)?;
    let len = reader.len()?;
    let usable = len - len % RECORD_BYTES as u64;
    const SPAN: u64 = 1 << 24;
    let mut acc: Option<(Vec3, Vec3)> = None;
    let mut offset = 0;
    while offset < usable {
        let n = SPAN.min(usable - offset) as usize;
        let bytes = reader.read_span(offset, n)?;
        let pts = decode(&bytes);
        if let Some((lo, hi)) = super::extent(&pts) {
            acc = Some(match acc {
                None => (lo, hi),
                Some((a, b)) => (a.min(lo), b.max(hi)),
            });
        }
        offset += n as u64;
    }
    Ok(acc)
}
