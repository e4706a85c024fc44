//! Fixed-size page stores and per-query page accounting.
//!
//! Two stores back an index: one holds projected records
//! `(id: u32, coords: m × f64, original offset: u64)` and the other holds
//! the original vectors as raw little-endian `f64`. Every read goes through
//! [`PageStore::page`], which records the page in the caller's tally.

use std::cell::RefCell;
use std::collections::HashSet;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::vector::PointId;
use crate::Scalar;

pub const DEFAULT_PAGE_SIZE: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StoreKind {
    Projected,
    Original,
}

/// Distinct pages touched by one query.
#[derive(Debug, Default)]
pub struct PageTally {
    seen: RefCell<HashSet<(StoreKind, u32)>>,
}

impl PageTally {
    pub fn new() -> Self {
        Self::default()
    }

    fn record(&self, kind: StoreKind, page: u32) -> bool {
        self.seen.borrow_mut().insert((kind, page))
    }

    pub fn total(&self) -> usize {
        self.seen.borrow().len()
    }

    pub fn count(&self, kind: StoreKind) -> usize {
        self.seen.borrow().iter().filter(|(k, _)| *k == kind).count()
    }

    pub fn pages(&self, kind: StoreKind) -> Vec<u32> {
        let mut v: Vec<u32> = self
            .seen
            .borrow()
            .iter()
            .filter(|(k, _)| *k == kind)
            .map(|(_, p)| *p)
            .collect();
        v.sort_unstable();
        v
    }
}

#[derive(Debug)]
pub struct PageStore {
    kind: StoreKind,
    page_size: usize,
    data: Vec<u8>,
    fetches: AtomicU64,
}

impl Clone for PageStore {
    fn clone(&self) -> Self {
        Self {
            kind: self.kind,
            page_size: self.page_size,
            data: self.data.clone(),
            fetches: AtomicU64::new(self.fetches.load(Ordering::Relaxed)),
        }
    }
}

impl PageStore {
    /// Wraps `data`, padding it to a whole number of pages.
    pub fn new(kind: StoreKind, page_size: usize, mut data: Vec<u8>) -> Self {
        let rem = data.len() % page_size;
        if rem != 0 {
            data.resize(data.len() + page_size - rem, 0);
        }
        Self {
            kind,
            page_size,
            data,
            fetches: AtomicU64::new(0),
        }
    }

    pub fn kind(&self) -> StoreKind {
        self.kind
    }

    pub fn page_size(&self) -> usize {
        self.page_size
    }

    pub fn page_count(&self) -> usize {
        self.data.len() / self.page_size
    }

    pub fn bytes(&self) -> &[u8] {
        &self.data
    }

    /// Lifetime number of page reads, including repeats within a query.
    pub fn fetch_count(&self) -> u64 {
        self.fetches.load(Ordering::Relaxed)
    }

    pub fn page(&self, page: u32, tally: &PageTally) -> &[u8] {
        self.fetches.fetch_add(1, Ordering::Relaxed);
        tally.record(self.kind, page);
        let start = page as usize * self.page_size;
        &self.data[start..start + self.page_size]
    }

    /// Reads `len` bytes at `offset`, fetching every page the range covers.
    pub fn read(&self, offset: u64, len: usize, tally: &PageTally) -> Vec<u8> {
        let mut out = Vec::with_capacity(len);
        let mut pos = offset as usize;
        let end = pos + len;
        while pos < end {
            let page = pos / self.page_size;
            let in_page = pos % self.page_size;
            let take = (self.page_size - in_page).min(end - pos);
            let bytes = self.page(page as u32, tally);
            out.extend_from_slice(&bytes[in_page..in_page + take]);
            pos += take;
        }
        out
    }

    /// Bytes at `offset` without counting a page access.
    pub(crate) fn peek(&self, offset: u64, len: usize) -> &[u8] {
        &self.data[offset as usize..offset as usize + len]
    }
}

/// Placement of projected records: `per_page` fixed-size records per page,
/// never straddling a page boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordLayout {
    pub m: usize,
    pub record_size: usize,
    pub per_page: usize,
    pub page_size: usize,
}

impl RecordLayout {
    pub fn new(m: usize, page_size: usize) -> Option<Self> {
        let record_size = 4 + 8 * m + 8;
        let per_page = page_size / record_size;
        (per_page > 0).then_some(Self {
            m,
            record_size,
            per_page,
            page_size,
        })
    }

    pub fn page_of(&self, record: u32) -> u32 {
        record / self.per_page as u32
    }

    pub fn offset_of(&self, record: u32) -> usize {
        let r = record as usize;
        (r / self.per_page) * self.page_size + (r % self.per_page) * self.record_size
    }

    pub fn bytes_for(&self, records: usize) -> usize {
        records.div_ceil(self.per_page) * self.page_size
    }

    pub fn encode<T: Scalar>(&self, out: &mut [u8], id: PointId, coords: &[T], original_offset: u64) {
        debug_assert_eq!(out.len(), self.record_size);
        out[..4].copy_from_slice(&id.to_le_bytes());
        for (i, x) in coords.iter().enumerate() {
            let at = 4 + 8 * i;
            out[at..at + 8].copy_from_slice(&x.as_f64().to_le_bytes());
        }
        let at = 4 + 8 * self.m;
        out[at..at + 8].copy_from_slice(&original_offset.to_le_bytes());
    }

    pub fn decode<T: Scalar>(&self, rec: &[u8], coords: &mut Vec<T>) -> (PointId, u64) {
        let id = u32::from_le_bytes(rec[..4].try_into().unwrap());
        coords.clear();
        for i in 0..self.m {
            let at = 4 + 8 * i;
            coords.push(T::lit(f64::from_le_bytes(rec[at..at + 8].try_into().unwrap())));
        }
        let at = 4 + 8 * self.m;
        (id, u64::from_le_bytes(rec[at..at + 8].try_into().unwrap()))
    }
}

/// Placement of original vectors. Vectors that fit in a page never straddle
/// one; larger vectors start on a page boundary and span whole pages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VectorLayout {
    pub vector_bytes: usize,
    pub page_size: usize,
}

impl VectorLayout {
    pub fn new(d: usize, page_size: usize) -> Self {
        Self {
            vector_bytes: 8 * d,
            page_size,
        }
    }

    pub fn offset_of(&self, slot: usize) -> u64 {
        if self.vector_bytes <= self.page_size {
            let per_page = self.page_size / self.vector_bytes;
            ((slot / per_page) * self.page_size + (slot % per_page) * self.vector_bytes) as u64
        } else {
            (slot * self.vector_bytes.div_ceil(self.page_size) * self.page_size) as u64
        }
    }

    pub fn bytes_for(&self, slots: usize) -> usize {
        if slots == 0 {
            return 0;
        }
        let last_end = self.offset_of(slots - 1) as usize + self.vector_bytes;
        last_end.div_ceil(self.page_size) * self.page_size
    }

    pub fn encode<T: Scalar>(out: &mut [u8], v: &[T]) {
        for (chunk, x) in out.chunks_exact_mut(8).zip(v) {
            chunk.copy_from_slice(&x.as_f64().to_le_bytes());
        }
    }

    pub fn decode<T: Scalar>(bytes: &[u8]) -> Vec<T> {
        bytes
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap())))
            .collect()
    }
}
