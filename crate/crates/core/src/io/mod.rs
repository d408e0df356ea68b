//! Point ingestion: SIM and LAS readers, SIM writer, Morton ordering and
//! batched loading.

pub mod las;
pub mod morton;
pub mod sim;
pub mod source;

use std::path::{Path, PathBuf};

use glam::Vec3;
use thiserror::Error;

use crate::octree::CubeBounds;

pub use source::{BatchLoader, BatchSource, SourceSpec};

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a LAS file (missing LASF signature)")]
    BadMagic,
    #[error("unsupported LAS point format {0}; only formats 2, 3, 7 and 8 carry RGB")]
    UnsupportedFormat(u8),
    #[error("LAZ-compressed input is not supported; decompress to LAS first (for example with laszip)")]
    LazUnsupported,
    #[error("truncated {0}")]
    Truncated(&'static str),
    #[error("file contains no points")]
    EmptyFile,
    #[error("cannot tell the point format of {0}; expected .sim or .las")]
    UnknownFormat(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Sim,
    Las,
}

impl Format {
    /// Picks the format from the file extension; `.laz` is rejected.
    pub fn detect(path: &Path) -> Result<Self, IoError> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        match ext.as_deref() {
            Some("sim") | Some("bin") => Ok(Format::Sim),
            Some("las") => Ok(Format::Las),
            Some("laz") => Err(IoError::LazUnsupported),
            _ => Err(IoError::UnknownFormat(path.to_path_buf())),
        }
    }
}

/// Root cube of a point file: the LAS header box, or a full SIM pre-scan.
pub fn discover_bounds(path: &Path, format: Format) -> Result<CubeBounds, IoError> {
    match format {
        Format::Las => {
            let header = las::las_open(path)?;
            if header.point_count == 0 {
                return Err(IoError::EmptyFile);
            }
            Ok(CubeBounds::cubify(header.min, header.max))
        }
        Format::Sim => {
            let (min, max) = sim::scan_extent(path)?.ok_or(IoError::EmptyFile)?;
            Ok(CubeBounds::cubify(min, max))
        }
    }
}

/// Axis-aligned extent of finite points, `None` when there are none.
pub fn extent<'a>(points: impl IntoIterator<Item = &'a crate::Point>) -> Option<(Vec3, Vec3)> {
    points
        .into_iter()
        .filter(|p| p.is_finite())
        .fold(None, |acc, p| match acc {
            None => Some((p.position, p.position)),
            Some((lo, hi)) => Some((lo.min(p.position), hi.max(p.position))),
        })
}
