//! LAS point files (uncompressed, formats 2, 3, 7 and 8).

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use glam::{DVec3, Vec3};

use super::IoError;
use crate::octree::Point;

const MIN_HEADER: usize = 227;
const LAS14_HEADER: usize = 375;

#[derive(Debug, Clone, PartialEq)]
pub struct LasHeaderInfo {
    pub version: (u8, u8),
    pub point_count: u64,
    pub point_format: u8,
    pub record_length: u16,
    pub data_offset: u32,
    pub scale: DVec3,
    pub offset: DVec3,
    pub min: Vec3,
    pub max: Vec3,
}

impl LasHeaderInfo {
    /// Byte offset of the 16-bit RGB triple inside a record.
    pub fn rgb_offset(&self) -> usize {
        match self.point_format {
            2 => 20,
            3 => 28,
            _ => 30,
        }
    }
}

fn min_record_length(format: u8) -> Option<u16> {
    match format {
        2 => Some(26),
        3 => Some(34),
        7 => Some(36),
        8 => Some(38),
        _ => None,
    }
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn i32_at(b: &[u8], at: usize) -> i32 {
    i32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn f64_at(b: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

fn dvec_at(b: &[u8], at: usize) -> DVec3 {
    DVec3::new(f64_at(b, at), f64_at(b, at + 8), f64_at(b, at + 16))
}

/// Parses a LAS public header block.
pub fn parse_header(b: &[u8]) -> Result<LasHeaderInfo, IoError> {
    if b.len() < 4 {
        return Err(IoError::Truncated("LAS header"));
    }
    if &b[0..4] != b"LASF" {
        return Err(IoError::BadMagic);
    }
    if b.len() < MIN_HEADER {
        return Err(IoError::Truncated("LAS header"));
    }
    let version = (b[24], b[25]);
    let header_size = u16_at(b, 94) as usize;
    let raw_format = b[104];
    if raw_format & 0xC0 != 0 {
        return Err(IoError::LazUnsupported);
    }
    let point_format = raw_format & 0x3F;
    let record_length = u16_at(b, 105);
    match min_record_length(point_format) {
        None => return Err(IoError::UnsupportedFormat(point_format)),
        Some(min) if record_length < min => return Err(IoError::Truncated("LAS point record")),
        Some(_) => {}
    }
    let legacy_count = u32_at(b, 107) as u64;
    let point_count = if version >= (1, 4) && header_size >= LAS14_HEADER && b.len() >= LAS14_HEADER {
        let extended = u64::from_le_bytes(b[247..255].try_into().unwrap());
        if extended > 0 { extended } else { legacy_count }
    } else {
        legacy_count
    };
    let max_min = |at: usize| (f64_at(b, at), f64_at(b, at + 8));
    let (max_x, min_x) = max_min(179);
    let (max_y, min_y) = max_min(195);
    let (max_z, min_z) = max_min(211);
    Ok(LasHeaderInfo {
        version,
        point_count,
        point_format,
        record_length,
        data_offset: u32_at(b, 96),
        scale: dvec_at(b, 131),
        offset: dvec_at(b, 155),
        min: DVec3::new(min_x, min_y, min_z).as_vec3(),
        max: DVec3::new(max_x, max_y, max_z).as_vec3(),
    })
}

pub fn las_open(path: &Path) -> Result<LasHeaderInfo, IoError> {
    let mut head = Vec::with_capacity(LAS14_HEADER);
    File::open(path)?.take(LAS14_HEADER as u64).read_to_end(&mut head)?;
    parse_header(&head)
}

/// Turns raw records into points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LasDecoder {
    pub record_length: usize,
    pub rgb_offset: usize,
    pub scale: DVec3,
    pub offset: DVec3,
    /// 8 for 16-bit color channels, 0 for files that store 8-bit values.
    pub color_shift: u32,
}

impl LasDecoder {
    pub fn new(header: &LasHeaderInfo, color_shift: u32) -> Self {
        Self {
            record_length: header.record_length as usize,
            rgb_offset: header.rgb_offset(),
            scale: header.scale,
            offset: header.offset,
            color_shift,
        }
    }

    pub fn decode_record(&self, r: &[u8]) -> Point {
        let raw = DVec3::new(i32_at(r, 0) as f64, i32_at(r, 4) as f64, i32_at(r, 8) as f64);
        let world = raw * self.scale + self.offset;
        let c = |i: usize| (u16_at(r, self.rgb_offset + 2 * i) >> self.color_shift).min(255) as u8;
        Point {
            position: world.as_vec3(),
            color: [c(0), c(1), c(2), 255],
        }
    }

    pub fn decode(&self, bytes: &[u8]) -> Vec<Point> {
        bytes
            .chunks_exact(self.record_length)
            .map(|r| self.decode_record(r))
            .collect()
    }

    /// 16-bit colors are the norm; files whose sampled channels all fit in 8
    /// bits are read as 8-bit.
    pub fn detect_color_shift(&self, sample: &[u8]) -> u32 {
        let wide = sample.chunks_exact(self.record_length).any(|r| {
            (0..3).any(|i| u16_at(r, self.rgb_offset + 2 * i) > 255)
        });
        if wide { 8 } else { 0 }
    }
}

/// Writes a LAS 1.2 file with point format 2. Colors are stored as 16-bit.
pub fn write_las(path: &Path, points: &[Point], scale: DVec3, offset: DVec3) -> Result<(), IoError> {
    let (lo, hi) = super::extent(points).unwrap_or((Vec3::ZERO, Vec3::ZERO));
    let mut h = vec![0u8; MIN_HEADER];
    h[0..4].copy_from_slice(b"LASF");
    h[24] = 1;
    h[25] = 2;
    h[26..58].copy_from_slice(&[0u8; 32]);
    h[94..96].copy_from_slice(&(MIN_HEADER as u16).to_le_bytes());
    h[96..100].copy_from_slice(&(MIN_HEADER as u32).to_le_bytes());
    h[104] = 2;
    h[105..107].copy_from_slice(&26u16.to_le_bytes());
    h[107..111].copy_from_slice(&(points.len() as u32).to_le_bytes());
    h[111..115].copy_from_slice(&(points.len() as u32).to_le_bytes());
    for (i, v) in scale.to_array().iter().chain(offset.to_array().iter()).enumerate() {
        h[131 + 8 * i..139 + 8 * i].copy_from_slice(&v.to_le_bytes());
    }
    let bounds = [hi.x, lo.x, hi.y, lo.y, hi.z, lo.z];
    for (i, v) in bounds.iter().enumerate() {
        h[179 + 8 * i..187 + 8 * i].copy_from_slice(&(*v as f64).to_le_bytes());
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&h)?;
    for p in points {
        let mut rec = [0u8; 26];
        let raw = ((p.position.as_dvec3() - offset) / scale).round();
        for (i, v) in raw.to_array().iter().enumerate() {
            rec[4 * i..4 * i + 4].copy_from_slice(&(*v as i32).to_le_bytes());
        }
        for i in 0..3 {
            let c = (p.color[i] as u16) << 8;
            rec[20 + 2 * i..22 + 2 * i].copy_from_slice(&c.to_le_bytes());
        }
        w.write_all(&rec)?;
    }
    w.flush()?;
    Ok(())
}
