//! Persistent arena and fixed-size chunk pool.
//!
//! All octree growth is served from a single pre-reserved [`Arena`]: occupancy
//! grids and point/voxel chunks. Memory is word addressed (`AtomicU64`) so that
//! concurrent passes can write disjoint slots without locks or `unsafe` at the
//! call sites.

use std::ptr::NonNull;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;

use thiserror::Error;

use crate::octree::Point;

const WORD: usize = std::mem::size_of::<u64>();

/// Bytes per chunk header: next link + occupied counter.
pub const CHUNK_HEADER_BYTES: usize = 16;
/// Bytes per point or voxel record.
pub const SAMPLE_BYTES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("arena exhausted: requested {requested} bytes at offset {offset} of {capacity}")]
pub struct OutOfArena {
    pub requested: usize,
    pub offset: usize,
    pub capacity: usize,
}

/// A byte range inside the arena. Offsets are stable for the arena's lifetime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Region {
    pub offset: usize,
    pub len: usize,
}

impl Region {
    fn word_range(&self) -> std::ops::Range<usize> {
        let start = self.offset / WORD;
        start..start + self.len.div_ceil(WORD)
    }
}

/// Bump allocator over one zero-initialized reservation.
///
/// The reservation is made with `alloc_zeroed`, which on most platforms maps
/// pages lazily, so a large capacity costs nothing until it is touched.
pub struct Arena {
    base: NonNull<AtomicU64>,
    words: usize,
    capacity: usize,
    offset: AtomicUsize,
    high_water: AtomicUsize,
}

// SAFETY: the buffer is only ever accessed through `&[AtomicU64]`.
unsafe impl Send for Arena {}
unsafe impl Sync for Arena {}

impl Arena {
    /// Reserves `capacity` bytes (rounded down to whole words). Pages are
    /// mapped on first touch, so large reservations are cheap.
    pub fn new(capacity: usize) -> Self {
        let words = capacity / WORD;
        let base = if words == 0 {
            NonNull::dangling()
        } else {
            // SAFETY: anonymous private mapping with no address hint; the
            // kernel hands out zeroed, page-aligned memory, and zeroed bytes
            // are valid AtomicU64 values.
            let ptr = unsafe {
                libc::mmap(
                    std::ptr::null_mut(),
                    words * WORD,
                    libc::PROT_READ | libc::PROT_WRITE,
                    libc::MAP_PRIVATE | libc::MAP_ANONYMOUS | libc::MAP_NORESERVE,
                    -1,
                    0,
                )
            };
            if ptr == libc::MAP_FAILED {
                panic!("cannot reserve {} bytes for the arena: {}", words * WORD, std::io::Error::last_os_error());
            }
            NonNull::new(ptr as *mut AtomicU64).expect("mmap returned null")
        };
        Self {
            base,
            words,
            capacity: words * WORD,
            offset: AtomicUsize::new(0),
            high_water: AtomicUsize::new(0),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn offset(&self) -> usize {
        self.offset.load(Ordering::Acquire)
    }

    pub fn high_water_mark(&self) -> usize {
        self.high_water.load(Ordering::Acquire)
    }

    fn memory(&self) -> &[AtomicU64] {
        // SAFETY: `base` points to `words` initialized atomics (or is dangling with 0 words).
        unsafe { std::slice::from_raw_parts(self.base.as_ptr(), self.words) }
    }

    /// Allocates `size` zeroed bytes aligned to `align`.
    ///
    /// Alignment below one word is raised to one word and sizes are padded to
    /// whole words.
    pub fn alloc(&self, size: usize, align: usize) -> Result<Region, OutOfArena> {
        assert!(size > 0, "zero-sized arena allocation");
        assert!(align.is_power_of_two(), "alignment must be a power of two");
        let align = align.max(WORD);
        let padded = size.next_multiple_of(WORD);
        let mut start = 0;
        self.offset
            .fetch_update(Ordering::AcqRel, Ordering::Acquire, |current| {
                start = current.next_multiple_of(align);
                start
                    .checked_add(padded)
                    .filter(|end| *end <= self.capacity)
            })
            .map_err(|current| OutOfArena {
                requested: size,
                offset: current,
                capacity: self.capacity,
            })?;
        self.high_water.fetch_max(start + padded, Ordering::AcqRel);
        Ok(Region { offset: start, len: size })
    }

    /// Word view of a region previously returned by [`Arena::alloc`].
    pub fn words(&self, region: Region) -> &[AtomicU64] {
        &self.memory()[region.word_range()]
    }

    /// Copies out the bytes of a region.
    pub fn read_bytes(&self, region: Region) -> Vec<u8> {
        let mut out: Vec<u8> = self
            .words(region)
            .iter()
            .flat_map(|w| w.load(Ordering::Relaxed).to_le_bytes())
            .collect();
        out.truncate(region.len);
        out
    }

    /// Discards every allocation and zeroes the used prefix.
    pub fn reset(&mut self) {
        let used = self.offset.load(Ordering::Acquire).div_ceil(WORD);
        for w in &self.memory()[..used] {
            w.store(0, Ordering::Relaxed);
        }
        self.offset.store(0, Ordering::Release);
    }
}

impl Drop for Arena {
    fn drop(&mut self) {
        if self.words > 0 {
            // SAFETY: mapped in `new` with this length and not shared.
            unsafe { libc::munmap(self.base.as_ptr() as *mut libc::c_void, self.words * WORD) };
        }
    }
}

impl std::fmt::Debug for Arena {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Arena")
            .field("capacity", &self.capacity)
            .field("offset", &self.offset())
            .finish()
    }
}

/// Arena byte offset of a chunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChunkHandle(pub u64);

/// Borrowed view of one chunk.
///
/// Layout in words: `[next+1, occupied, sample0.lo, sample0.hi, ...]`; a zero
/// link word means "no next chunk".
#[derive(Clone, Copy)]
pub struct ChunkRef<'a> {
    words: &'a [AtomicU64],
}

impl<'a> ChunkRef<'a> {
    pub fn capacity(&self) -> usize {
        (self.words.len() - 2) / 2
    }

    pub fn next(&self) -> Option<ChunkHandle> {
        match self.words[0].load(Ordering::Relaxed) {
            0 => None,
            v => Some(ChunkHandle(v - 1)),
        }
    }

    pub fn set_next(&self, next: Option<ChunkHandle>) {
        self.words[0].store(next.map_or(0, |h| h.0 + 1), Ordering::Relaxed);
    }

    pub fn occupied(&self) -> usize {
        self.words[1].load(Ordering::Relaxed) as usize
    }

    pub(crate) fn reset_occupied(&self) {
        self.words[1].store(0, Ordering::Relaxed);
    }

    pub(crate) fn bump_occupied(&self) {
        self.words[1].fetch_add(1, Ordering::Relaxed);
    }

    pub fn read(&self, slot: usize) -> Point {
        let lo = self.words[2 + 2 * slot].load(Ordering::Relaxed);
        let hi = self.words[3 + 2 * slot].load(Ordering::Relaxed);
        Point::from_words(lo, hi)
    }

    /// Writes a sample. Callers guarantee that no other writer targets `slot`.
    pub fn write(&self, slot: usize, point: &Point) {
        let (lo, hi) = point.to_words();
        self.words[2 + 2 * slot].store(lo, Ordering::Relaxed);
        self.words[3 + 2 * slot].store(hi, Ordering::Relaxed);
    }

    /// The first `occupied()` samples.
    pub fn samples(&self) -> impl Iterator<Item = Point> + 'a {
        let this = *self;
        (0..this.occupied()).map(move |i| this.read(i))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct PoolStats {
    pub allocated_total: u64,
    pub released_total: u64,
    pub free: usize,
}

/// Free list of released chunks on top of arena allocation.
///
/// Acquisition pops the most recently released chunk first and only touches
/// the arena when the list is empty.
#[derive(Debug)]
pub struct ChunkPool {
    capacity: usize,
    free: Mutex<Vec<ChunkHandle>>,
    allocated: AtomicU64,
    released: AtomicU64,
}

impl ChunkPool {
    pub fn new(chunk_capacity: usize) -> Self {
        assert!(chunk_capacity > 0, "chunk capacity must be positive");
        Self {
            capacity: chunk_capacity,
            free: Mutex::new(Vec::new()),
            allocated: AtomicU64::new(0),
            released: AtomicU64::new(0),
        }
    }

    pub fn chunk_capacity(&self) -> usize {
        self.capacity
    }

    /// Bytes of arena memory per chunk, header included.
    pub fn chunk_bytes(&self) -> usize {
        CHUNK_HEADER_BYTES + SAMPLE_BYTES * self.capacity
    }

    pub fn acquire(&self, arena: &Arena) -> Result<ChunkHandle, OutOfArena> {
        let reused = self.free.lock().unwrap().pop();
        let handle = match reused {
            Some(h) => h,
            None => {
                let region = arena.alloc(self.chunk_bytes(), 16)?;
                self.allocated.fetch_add(1, Ordering::AcqRel);
                ChunkHandle(region.offset as u64)
            }
        };
        let chunk = self.chunk(arena, handle);
        chunk.set_next(None);
        chunk.reset_occupied();
        Ok(handle)
    }

    /// Releases every chunk reachable from `head`; returns how many.
    pub fn release(&self, arena: &Arena, head: Option<ChunkHandle>) -> usize {
        let mut released = Vec::new();
        let mut cursor = head;
        while let Some(h) = cursor {
            let chunk = self.chunk(arena, h);
            cursor = chunk.next();
            chunk.reset_occupied();
            chunk.set_next(None);
            released.push(h);
        }
        let n = released.len();
        if n > 0 {
            self.free.lock().unwrap().extend(released);
            self.released.fetch_add(n as u64, Ordering::AcqRel);
        }
        n
    }

    pub fn chunk<'a>(&self, arena: &'a Arena, handle: ChunkHandle) -> ChunkRef<'a> {
        let region = Region {
            offset: handle.0 as usize,
            len: self.chunk_bytes(),
        };
        ChunkRef {
            words: arena.words(region),
        }
    }

    pub fn free_len(&self) -> usize {
        self.free.lock().unwrap().len()
    }

    pub fn allocated_total(&self) -> u64 {
        self.allocated.load(Ordering::Acquire)
    }

    pub fn released_total(&self) -> u64 {
        self.released.load(Ordering::Acquire)
    }

    pub fn stats(&self) -> PoolStats {
        PoolStats {
            allocated_total: self.allocated_total(),
            released_total: self.released_total(),
            free: self.free_len(),
        }
    }
}
