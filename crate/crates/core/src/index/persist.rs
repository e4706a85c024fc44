//! Binary index files.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "PMIP" u16:version
//! u32:d u32:m u32:n u32:kp u32:n_key u32:ksp f64:epsilon u64:stride u32:page_size u64:seed
//! matrix      m·d × f64
//! norms       n × (f64 sq_l2, f64 l1)
//! groups      u32 count, each: u32 bits, u32 len, len × (u32 id, f64 l1)
//! partitions  u32 count, each: u32 id, f64 radius, m × f64 reference
//! keys        u32 count, each: u64 key, u32 subs,
//!             each sub: f64 radius, m × f64 pivot, u32 first_record, u32 len, len × u32 id
//! projected   u64 pages, pages·page_size bytes
//! original    u64 pages
//! ```
//!
//! The original-vector pages live in a sidecar file `<path>.vec`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::pages::{PageStore, RecordLayout, StoreKind, VectorLayout};
use super::{IDistanceIndex, IndexParams, Partition, SubPartition};
use crate::error::{format_err, Result};
use crate::projection::ProjectionMatrix;
use crate::quick_probe::{BinaryCode, CodeGroup, CodeGroups};
use crate::vector::{NormTable, PointId};
use crate::Scalar;

pub const MAGIC: &[u8; 4] = b"PMIP";
pub const FORMAT_VERSION: u16 = 1;

/// Path of the original-vector file that accompanies `path`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".vec");
    PathBuf::from(s)
}

struct Writer(Vec<u8>);

impl Writer {
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn scalars<T: Scalar>(&mut self, v: &[T]) {
        for x in v {
            self.f64(x.as_f64());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        match self.pos.checked_add(len) {
            Some(end) if end <= self.buf.len() => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            _ => format_err(format!("index file truncated while reading {what} at byte {}", self.pos)),
        }
    }
    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn scalar<T: Scalar>(&mut self, what: &str) -> Result<T> {
        let v = self.f64(what)?;
        if !v.is_finite() {
            return format_err(format!("non-finite value in {what}"));
        }
        Ok(T::lit(v))
    }
    fn scalars<T: Scalar>(&mut self, count: usize, what: &str) -> Result<Vec<T>> {
        // bound the allocation by what is actually left
        if count.saturating_mul(8) > self.buf.len() - self.pos {
            return format_err(format!("index file truncated while reading {what}"));
        }
        (0..count).map(|_| self.scalar(what)).collect()
    }
    fn count(&mut self, elem_bytes: usize, what: &str) -> Result<usize> {
        let c = self.u32(what)? as usize;
        if c.saturating_mul(elem_bytes) > self.buf.len() - self.pos {
            return format_err(format!("{what} count {c} exceeds the remaining file"));
        }
        Ok(c)
    }
}

/// Writes the index to `path` and its original vectors to the sidecar.
pub fn save_index<T: Scalar>(index: &IDistanceIndex<T>, path: &Path) -> Result<()> {
    let p = &index.params;
    let m = index.projected_dim();
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u16(FORMAT_VERSION);
    for v in [index.d, m, index.n, p.kp, p.n_key, p.ksp] {
        w.u32(v as u32);
    }
    w.f64(p.epsilon.as_f64());
    w.u64(p.stride);
    w.u32(p.page_size as u32);
    w.u64(p.seed);

    w.scalars(index.matrix.entries());
    for i in 0..index.n {
        w.f64(index.norms.sq_l2[i].as_f64());
        w.f64(index.norms.l1[i].as_f64());
    }

    w.u32(index.groups.groups.len() as u32);
    for g in &index.groups.groups {
        w.u32(g.code.bits);
        w.u32(g.members.len() as u32);
        for (id, l1) in g.members.iter().zip(&g.member_l1) {
            w.u32(*id);
            w.f64(l1.as_f64());
        }
    }

    w.u32(index.partitions.len() as u32);
    for part in &index.partitions {
        w.u32(part.id);
        w.f64(part.radius.as_f64());
        w.scalars(&part.reference);
    }

    w.u32(index.keys.len() as u32);
    for (key, subs) in &index.keys {
        w.u64(*key);
        w.u32(subs.len() as u32);
        for sub in subs {
            w.f64(sub.radius.as_f64());
            w.scalars(&sub.pivot);
            w.u32(sub.first_record);
            w.u32(sub.members.len() as u32);
            for id in &sub.members {
                w.u32(*id);
            }
        }
    }

    w.u64(index.projected_store.page_count() as u64);
    w.0.extend_from_slice(index.projected_store.bytes());
    w.u64(index.original_store.page_count() as u64);

    fs::write(path, &w.0)?;
    fs::write(sidecar_path(path), index.original_store.bytes())?;
    Ok(())
}

/// Reads an index written by [`save_index`].
pub fn load_index<T: Scalar>(path: &Path) -> Result<IDistanceIndex<T>> {
    let buf = fs::read(path)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return format_err("not an index file (bad magic)");
    }
    let version = r.u16("version")?;
    if version != FORMAT_VERSION {
        return format_err(format!("unsupported index version {version}"));
    }
    let d = r.u32("header")? as usize;
    let m = r.u32("header")? as usize;
    let n = r.u32("header")? as usize;
    let kp = r.u32("header")? as usize;
    let n_key = r.u32("header")? as usize;
    let ksp = r.u32("header")? as usize;
    let epsilon: T = r.scalar("header")?;
    let stride = r.u64("header")?;
    let page_size = r.u32("header")? as usize;
    let seed = r.u64("header")?;
    if d == 0 || m == 0 || m > 32 || n == 0 || n_key == 0 || page_size == 0 || !(epsilon > T::zero()) {
        return format_err("index header holds an impossible parameter");
    }
    let layout = RecordLayout::new(m, page_size)
        .ok_or_else(|| crate::Error::Format("page size too small for a record".into()))?;
    let vector_layout = VectorLayout::new(d, page_size);

    let entries = r.scalars(m.saturating_mul(d), "projection matrix")?;
    let matrix = ProjectionMatrix::from_parts(d, m, seed, entries);
    let mut sq_l2 = Vec::with_capacity(n);
    let mut l1 = Vec::with_capacity(n);
    let mut max_sq_l2 = T::neg_infinity();
    let mut max_sq_l2_id = 0;
    for i in 0..n {
        let s: T = r.scalar("norms")?;
        if s > max_sq_l2 {
            max_sq_l2 = s;
            max_sq_l2_id = i as PointId;
        }
        sq_l2.push(s);
        l1.push(r.scalar("norms")?);
    }
    let norms = NormTable {
        sq_l2,
        l1,
        max_sq_l2,
        max_sq_l2_id,
    };

    let gcount = r.count(8, "code groups")?;
    let mut groups = Vec::with_capacity(gcount);
    for _ in 0..gcount {
        let bits = r.u32("code groups")?;
        let len = r.count(12, "group members")?;
        let mut members = Vec::with_capacity(len);
        let mut member_l1 = Vec::with_capacity(len);
        for _ in 0..len {
            let id = r.u32("group members")?;
            if id as usize >= n {
                return format_err(format!("group member id {id} out of range"));
            }
            members.push(id);
            member_l1.push(r.scalar("group members")?);
        }
        groups.push(CodeGroup {
            code: BinaryCode {
                bits,
                width: m as u8,
            },
            members,
            member_l1,
        });
    }
    let groups = CodeGroups { m, groups };
    if groups.total_members() != n {
        return format_err("code groups do not cover every point");
    }

    let pcount = r.count(12, "partitions")?;
    let mut partitions = Vec::with_capacity(pcount);
    for _ in 0..pcount {
        let id = r.u32("partitions")?;
        let radius = r.scalar("partitions")?;
        let reference = r.scalars(m, "partitions")?;
        partitions.push(Partition { id, reference, radius });
    }

    let kcount = r.count(12, "key table")?;
    let mut keys = BTreeMap::new();
    let mut record_of = vec![u32::MAX; n];
    for _ in 0..kcount {
        let key = r.u64("key table")?;
        let scount = r.count(16, "sub-partitions")?;
        let mut subs = Vec::with_capacity(scount);
        for _ in 0..scount {
            let radius = r.scalar("sub-partitions")?;
            let pivot = r.scalars(m, "sub-partitions")?;
            let first_record = r.u32("sub-partitions")?;
            let len = r.count(4, "sub-partition members")?;
            let mut members = Vec::with_capacity(len);
            for j in 0..len {
                let id = r.u32("sub-partition members")?;
                let rec = first_record as usize + j;
                if id as usize >= n || rec >= n || record_of[id as usize] != u32::MAX {
                    return format_err(format!("sub-partition member {id} is out of range or repeated"));
                }
                record_of[id as usize] = rec as u32;
                members.push(id);
            }
            subs.push(SubPartition {
                pivot,
                radius,
                members,
                first_record,
            });
        }
        if keys.insert(key, subs).is_some() {
            return format_err(format!("duplicate key {key}"));
        }
    }
    if record_of.contains(&u32::MAX) {
        return format_err("key table does not cover every point");
    }

    let proj_pages = r.u64("projected pages")? as usize;
    if proj_pages != layout.bytes_for(n) / page_size {
        return format_err("projected page count does not match the point count");
    }
    let proj_bytes = r.take(proj_pages * page_size, "projected pages")?.to_vec();
    let orig_pages = r.u64("original page count")? as usize;
    if r.pos != buf.len() {
        return format_err(format!("{} trailing bytes after the index", buf.len() - r.pos));
    }
    let orig_bytes = fs::read(sidecar_path(path))?;
    if orig_pages != vector_layout.bytes_for(n) / page_size || orig_bytes.len() != orig_pages * page_size {
        return format_err("original-vector file size does not match the index");
    }

    Ok(IDistanceIndex {
        d,
        n,
        params: IndexParams {
            kp,
            n_key,
            ksp,
            epsilon,
            stride,
            page_size,
            seed,
        },
        matrix,
        norms,
        groups,
        partitions,
        keys,
        layout,
        vector_layout,
        projected_store: PageStore::new(StoreKind::Projected, page_size, proj_bytes),
        original_store: PageStore::new(StoreKind::Original, page_size, orig_bytes),
        record_of,
    })
}
