//! Batched reading with OS caching bypassed where possible.

use std::fs::File;
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, Receiver, TryRecvError};
use std::sync::{Arc, Once};
use std::thread::JoinHandle;

use super::las::{las_open, LasDecoder, LasHeaderInfo};
use super::{sim, Format, IoError};
use crate::octree::CubeBounds;
use crate::update::Batch;

const DIRECT_ALIGN: usize = 4096;

static CACHED_READ_WARNING: Once = Once::new();

fn warn_cached() {
    CACHED_READ_WARNING.call_once(|| {
        log::warn!("unbuffered reads unavailable; load throughput may include page-cache effects");
    });
}

/// Positioned reads, with `O_DIRECT` on Linux and a buffered fallback.
#[derive(Debug)]
pub struct SpanReader {
    file: File,
    path: PathBuf,
    direct: bool,
}

impl SpanReader {
    pub fn open(path: &Path) -> Result<Self, IoError> {
        #[cfg(target_os = "linux")]
        {
            use std::os::unix::fs::OpenOptionsExt;
            if let Ok(file) = std::fs::OpenOptions::new()
                .read(true)
                .custom_flags(libc::O_DIRECT)
                .open(path)
            {
                return Ok(Self {
                    file,
                    path: path.to_path_buf(),
                    direct: true,
                });
            }
        }
        let file = File::open(path)?;
        warn_cached();
        Ok(Self {
            file,
            path: path.to_path_buf(),
            direct: false,
        })
    }

    pub fn is_direct(&self) -> bool {
        self.direct
    }

    pub fn len(&self) -> Result<u64, IoError> {
        Ok(self.file.metadata()?.len())
    }

    /// Reads exactly `len` bytes at `offset`.
    pub fn read_span(&mut self, offset: u64, len: usize) -> Result<Vec<u8>, IoError> {
        if self.direct {
            match self.read_direct(offset, len) {
                Err(IoError::Io(e)) if e.raw_os_error() == Some(libc::EINVAL) => {
                    self.file = File::open(&self.path)?;
                    self.direct = false;
                    warn_cached();
                }
                other => return other,
            }
        }
        let mut buf = vec![0u8; len];
        fill_at(&self.file, &mut buf, offset)?;
        Ok(buf)
    }

    fn read_direct(&self, offset: u64, len: usize) -> Result<Vec<u8>, IoError> {
        let start = offset - offset % DIRECT_ALIGN as u64;
        let lead = (offset - start) as usize;
        let span = (lead + len).next_multiple_of(DIRECT_ALIGN);
        let mut raw = vec![0u8; span + DIRECT_ALIGN];
        let shift = raw.as_ptr().align_offset(DIRECT_ALIGN);
        let buf = &mut raw[shift..shift + span];
        let mut filled = 0;
        while filled < lead + len {
            let n = self.file.read_at(&mut buf[filled..], start + filled as u64)?;
            if n == 0 {
                break;
            }
            filled += n;
        }
        if filled < lead + len {
            return Err(IoError::Truncated("point data"));
        }
        Ok(buf[lead..lead + len].to_vec())
    }
}

fn fill_at(file: &File, buf: &mut [u8], offset: u64) -> Result<(), IoError> {
    file.read_exact_at(buf, offset).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            IoError::Truncated("point data")
        } else {
            IoError::Io(e)
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Decoder {
    Sim,
    Las(LasDecoder),
}

/// Everything needed to read any record range of a point file.
#[derive(Debug, Clone)]
pub struct SourceSpec {
    path: PathBuf,
    format: Format,
    data_offset: u64,
    record_len: usize,
    records: u64,
    trailing_bytes: u64,
    decoder: Decoder,
    bounds: CubeBounds,
    las: Option<LasHeaderInfo>,
}

impl SourceSpec {
    /// Opens a SIM or LAS file. Root bounds come from `bounds`, else the LAS
    /// header or a SIM pre-scan.
    pub fn open(path: &Path, bounds: Option<CubeBounds>) -> Result<Self, IoError> {
        let format = Format::detect(path)?;
        let file_len = std::fs::metadata(path)?.len();
        match format {
            Format::Sim => {
                let records = file_len / sim::RECORD_BYTES as u64;
                let bounds = match bounds {
                    Some(b) => b,
                    None => super::discover_bounds(path, format)?,
                };
                Ok(Self {
                    path: path.to_path_buf(),
                    format,
                    data_offset: 0,
                    record_len: sim::RECORD_BYTES,
                    records,
                    trailing_bytes: file_len % sim::RECORD_BYTES as u64,
                    decoder: Decoder::Sim,
                    bounds,
                    las: None,
                })
            }
            Format::Las => {
                let header = las_open(path)?;
                let bounds = match bounds {
                    Some(b) => b,
                    None if header.point_count == 0 => return Err(IoError::EmptyFile),
                    None => CubeBounds::cubify(header.min, header.max),
                };
                let mut decoder = LasDecoder::new(&header, 8);
                let available = file_len.saturating_sub(header.data_offset as u64) / header.record_length as u64;
                let probe = available.min(header.point_count).min(1024) as usize;
                if probe > 0 {
                    let mut reader = SpanReader::open(path)?;
                    let sample = reader.read_span(header.data_offset as u64, probe * decoder.record_length)?;
                    decoder.color_shift = decoder.detect_color_shift(&sample);
                }
                Ok(Self {
                    path: path.to_path_buf(),
                    format,
                    data_offset: header.data_offset as u64,
                    record_len: header.record_length as usize,
                    records: header.point_count,
                    trailing_bytes: 0,
                    decoder: Decoder::Las(decoder),
                    bounds,
                    las: Some(header),
                })
            }
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn format(&self) -> Format {
        self.format
    }

    pub fn bounds(&self) -> &CubeBounds {
        &self.bounds
    }

    pub fn records(&self) -> u64 {
        self.records
    }

    pub fn las_header(&self) -> Option<&LasHeaderInfo> {
        self.las.as_ref()
    }

    /// Bytes of point data, the basis for GB/s figures.
    pub fn data_bytes(&self) -> u64 {
        self.records * self.record_len as u64
    }

    /// A trailing partial record counts as a batch so that reading it fails.
    pub fn batch_count(&self, batch_size: usize) -> u64 {
        let n = self.records.div_ceil(batch_size as u64);
        if n == 0 && self.trailing_bytes > 0 { 1 } else { n }
    }

    /// Decodes batch number `index`.
    pub fn read_batch_at(&self, reader: &mut SpanReader, index: u64, batch_size: usize) -> Result<Batch, IoError> {
        let first = index * batch_size as u64;
        let end = (first + batch_size as u64).min(self.records);
        if end == self.records && self.trailing_bytes > 0 {
            return Err(IoError::Truncated("SIM record"));
        }
        let n = (end - first) as usize;
        let bytes = reader.read_span(self.data_offset + first * self.record_len as u64, n * self.record_len)?;
        let points = match &self.decoder {
            Decoder::Sim => sim::decode(&bytes),
            Decoder::Las(d) => d.decode(&bytes),
        };
        Ok(Batch { points, source_offset: first })
    }
}

/// Sequential batch reader.
#[derive(Debug)]
pub struct BatchSource {
    spec: Arc<SourceSpec>,
    reader: SpanReader,
    next: u64,
    batch_size: usize,
}

impl BatchSource {
    pub fn open(path: &Path, bounds: Option<CubeBounds>, batch_size: usize) -> Result<Self, IoError> {
        Self::from_spec(Arc::new(SourceSpec::open(path, bounds)?), batch_size)
    }

    pub fn from_spec(spec: Arc<SourceSpec>, batch_size: usize) -> Result<Self, IoError> {
        assert!(batch_size > 0);
        let reader = SpanReader::open(spec.path())?;
        Ok(Self {
            spec,
            reader,
            next: 0,
            batch_size,
        })
    }

    pub fn spec(&self) -> &SourceSpec {
        &self.spec
    }

    pub fn bounds(&self) -> &CubeBounds {
        self.spec.bounds()
    }

    /// Next batch in file order, `None` at end of stream.
    pub fn read_batch(&mut self) -> Result<Option<Batch>, IoError> {
        if self.next >= self.spec.batch_count(self.batch_size) {
            return Ok(None);
        }
        let batch = self.spec.read_batch_at(&mut self.reader, self.next, self.batch_size)?;
        self.next += 1;
        Ok(Some(batch))
    }
}

/// Result of a non-blocking poll of a [`BatchLoader`].
#[derive(Debug)]
pub enum Poll {
    Ready(Result<Batch, IoError>),
    Pending,
    Done,
}

/// Background readers feeding a bounded queue.
///
/// Worker `w` reads batches `w, w + W, w + 2W, ...`; the consumer visits the
/// workers round-robin, so batches come out in file order.
pub struct BatchLoader {
    receivers: Vec<Receiver<Result<Batch, IoError>>>,
    workers: Vec<JoinHandle<()>>,
    next: u64,
    total: u64,
}

impl BatchLoader {
    /// `capacity` is the total number of decoded batches allowed in flight.
    pub fn spawn(spec: Arc<SourceSpec>, batch_size: usize, workers: usize, capacity: usize) -> Self {
        let total = spec.batch_count(batch_size);
        let workers_n = workers.clamp(1, total.max(1) as usize);
        let per_worker = (capacity / workers_n).max(1);
        let mut receivers = Vec::new();
        let mut handles = Vec::new();
        for w in 0..workers_n {
            let (tx, rx) = sync_channel(per_worker);
            let spec = spec.clone();
            handles.push(std::thread::spawn(move || {
                let mut reader = match SpanReader::open(spec.path()) {
                    Ok(r) => r,
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        return;
                    }
                };
                let mut index = w as u64;
                while index < total {
                    let result = spec.read_batch_at(&mut reader, index, batch_size);
                    let failed = result.is_err();
                    if tx.send(result).is_err() || failed {
                        return;
                    }
                    index += workers_n as u64;
                }
            }));
            receivers.push(rx);
        }
        Self {
            receivers,
            workers: handles,
            next: 0,
            total,
        }
    }

    pub fn total_batches(&self) -> u64 {
        self.total
    }

    pub fn is_done(&self) -> bool {
        self.next >= self.total
    }

    fn take(&mut self, item: Result<Batch, IoError>) -> Result<Batch, IoError> {
        self.next = if item.is_ok() { self.next + 1 } else { self.total };
        item
    }

    fn worker_lost() -> IoError {
        IoError::Io(std::io::Error::other("batch loader worker exited early"))
    }

    /// Blocks for the next batch in file order.
    pub fn recv(&mut self) -> Option<Result<Batch, IoError>> {
        if self.is_done() {
            return None;
        }
        let rx = &self.receivers[(self.next % self.receivers.len() as u64) as usize];
        let item = rx.recv().unwrap_or_else(|_| Err(Self::worker_lost()));
        Some(self.take(item))
    }

    pub fn poll(&mut self) -> Poll {
        if self.is_done() {
            return Poll::Done;
        }
        let rx = &self.receivers[(self.next % self.receivers.len() as u64) as usize];
        match rx.try_recv() {
            Ok(item) => Poll::Ready(self.take(item)),
            Err(TryRecvError::Empty) => Poll::Pending,
            Err(TryRecvError::Disconnected) => Poll::Ready(self.take(Err(Self::worker_lost()))),
        }
    }
}

impl Iterator for BatchLoader {
    type Item = Result<Batch, IoError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.recv()
    }
}

impl Drop for BatchLoader {
    fn drop(&mut self) {
        self.receivers.clear();
        for h in self.workers.drain(..) {
            let _ = h.join();
        }
    }
}
