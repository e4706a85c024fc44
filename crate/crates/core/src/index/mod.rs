//! Partitioned iDistance over the projected space.
//!
//! Build clusters the projected points into `k_p` partitions around
//! reference points, cuts each partition into rings of width `ε`, keys each
//! ring as `i·C + ⌊dist/ε⌋` in an ordered map, and splits every ring into
//! up to `k_sp` sub-partitions by k-means. Sub-partition members are laid
//! out contiguously in a paged record store; the original vectors live in a
//! second paged store in the same order. Range search walks only the keys
//! and sub-partitions whose shells can intersect the query sphere.

pub mod kmeans;
pub mod pages;
mod persist;

use std::collections::BTreeMap;
use std::ops::Bound;

pub use kmeans::{kmeans, KMeans};
pub use pages::{PageStore, PageTally, RecordLayout, StoreKind, VectorLayout, DEFAULT_PAGE_SIZE};
pub use persist::{load_index, save_index, sidecar_path, FORMAT_VERSION, MAGIC};

use crate::error::{invalid, Result};
use crate::projection::{optimized_dimension, ProjectedDataset, ProjectionMatrix, MAX_PROJECTED_DIM};
use crate::quick_probe::{build_code_groups, CodeGroups};
use crate::vector::{dist, Dataset, NormTable, PointId};
use crate::Scalar;

/// Build parameters. `None` fields are derived from the data.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexConfig<T: Scalar> {
    /// Projected dimension; `None` selects [`optimized_dimension`].
    pub m: Option<usize>,
    pub kp: usize,
    pub n_key: usize,
    pub ksp: usize,
    /// Ring width; `None` uses the mean partition radius over `n_key`.
    pub epsilon: Option<T>,
    pub page_size: usize,
    pub seed: u64,
}

impl<T: Scalar> Default for IndexConfig<T> {
    fn default() -> Self {
        Self {
            m: None,
            kp: 5,
            n_key: 40,
            ksp: 10,
            epsilon: None,
            page_size: DEFAULT_PAGE_SIZE,
            seed: 0,
        }
    }
}

impl<T: Scalar> IndexConfig<T> {
    /// Target fraction of points per sub-partition, `1/(k_p·N_key·k_sp)`.
    pub fn selectivity(&self) -> f64 {
        1.0 / (self.kp as f64 * self.n_key as f64 * self.ksp as f64)
    }

    fn validate(&self) -> Result<()> {
        if self.kp == 0 || self.n_key == 0 || self.ksp == 0 {
            return invalid("k_p, N_key and k_sp must all be positive");
        }
        if let Some(m) = self.m {
            if m == 0 || m > MAX_PROJECTED_DIM {
                return invalid(format!("projected dimension must be in 1..={MAX_PROJECTED_DIM}"));
            }
        }
        if let Some(eps) = self.epsilon {
            if !(eps > T::zero() && eps.is_finite()) {
                return invalid(format!("epsilon must be positive, got {eps}"));
            }
        }
        if self.page_size == 0 || self.page_size > u32::MAX as usize {
            return invalid("page size out of range");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition<T: Scalar> {
    pub id: u32,
    pub reference: Vec<T>,
    pub radius: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubPartition<T: Scalar> {
    pub pivot: Vec<T>,
    pub radius: T,
    /// Ascending ids; stored as records `first_record..first_record + len`.
    pub members: Vec<PointId>,
    pub first_record: u32,
}

impl<T: Scalar> SubPartition<T> {
    /// `(first page, page count)` in the projected store.
    pub fn page_span(&self, layout: &RecordLayout) -> (u32, u32) {
        let first = layout.page_of(self.first_record);
        let last = layout.page_of(self.first_record + self.members.len() as u32 - 1);
        (first, last - first + 1)
    }
}

/// A point found by a range search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate<T: Scalar> {
    pub id: PointId,
    /// Distance between the projected point and the projected query.
    pub dist: T,
    /// Byte offset of the original vector in the original-vector store.
    pub original_offset: u64,
}

/// Key spacing `C`: the smallest power of ten at least `10·N_key`.
pub fn key_stride(n_key: usize) -> u64 {
    let target = 10 * n_key as u64;
    let mut c = 1u64;
    while c < target {
        c *= 10;
    }
    c
}

/// Ring index `⌊dist/ε⌋`, with everything past the last ring clamped into it.
pub fn ring_of<T: Scalar>(dist: T, epsilon: T, n_key: usize) -> u64 {
    let last = n_key as u64 - 1;
    let ratio = (dist / epsilon).floor();
    if !(ratio >= T::zero()) {
        return 0;
    }
    if ratio >= T::lit(last as f64) {
        return last;
    }
    ratio.to_u64().unwrap_or(last).min(last)
}

/// `⌊i·C + dist/ε⌋` with the outer-ring clamp.
pub fn index_key<T: Scalar>(partition_id: u32, dist: T, epsilon: T, stride: u64, n_key: usize) -> u64 {
    partition_id as u64 * stride + ring_of(dist, epsilon, n_key)
}

/// Mean partition radius over `N_key`; `1` when every radius is zero.
pub fn compute_epsilon<T: Scalar>(partitions: &[Partition<T>], n_key: usize) -> T {
    if partitions.is_empty() {
        return T::one();
    }
    let mean = partitions.iter().map(|p| p.radius).sum::<T>() / T::lit(partitions.len() as f64);
    if mean > T::zero() {
        mean / T::lit(n_key as f64)
    } else {
        T::one()
    }
}

fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Parameters actually used by a built index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexParams<T: Scalar> {
    pub kp: usize,
    pub n_key: usize,
    pub ksp: usize,
    pub epsilon: T,
    pub stride: u64,
    pub page_size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct IDistanceIndex<T: Scalar> {
    pub(crate) d: usize,
    pub(crate) n: usize,
    pub(crate) params: IndexParams<T>,
    pub(crate) matrix: ProjectionMatrix<T>,
    pub(crate) norms: NormTable<T>,
    pub(crate) groups: CodeGroups<T>,
    pub(crate) partitions: Vec<Partition<T>>,
    pub(crate) keys: BTreeMap<u64, Vec<SubPartition<T>>>,
    pub(crate) layout: RecordLayout,
    pub(crate) vector_layout: VectorLayout,
    pub(crate) projected_store: PageStore,
    pub(crate) original_store: PageStore,
    /// Record position of every id.
    pub(crate) record_of: Vec<u32>,
}

impl<T: Scalar> IDistanceIndex<T> {
    pub fn build(dataset: &Dataset<T>, cfg: &IndexConfig<T>) -> Result<Self> {
        cfg.validate()?;
        let n = dataset.len();
        if n == 0 {
            return invalid("cannot index an empty dataset");
        }
        let m = cfg.m.unwrap_or_else(|| optimized_dimension(n as u64));
        let layout = RecordLayout::new(m, cfg.page_size).ok_or_else(|| {
            crate::Error::InvalidArgument(format!(
                "page size {} cannot hold one {m}-dimensional record",
                cfg.page_size
            ))
        })?;
        let matrix = ProjectionMatrix::new(dataset.dim(), m, cfg.seed)?;
        let projected = ProjectedDataset::project(&matrix, dataset)?;
        let norms = dataset.norms().clone();
        let groups = build_code_groups(&projected, &norms)?;

        // partitions
        let kp = cfg.kp.min(n);
        let top = kmeans(projected.coords(), m, kp, derive_seed(cfg.seed, 1))?;
        let mut partitions: Vec<Partition<T>> = (0..kp)
            .map(|c| Partition {
                id: c as u32,
                reference: top.centroid(c).to_vec(),
                radius: T::zero(),
            })
            .collect();
        let mut ref_dist = vec![T::zero(); n];
        for (i, p) in projected.points().enumerate() {
            let part = &mut partitions[top.assignment[i]];
            let d = dist(p, &part.reference);
            ref_dist[i] = d;
            if d > part.radius {
                part.radius = d;
            }
        }

        let epsilon = cfg.epsilon.unwrap_or_else(|| compute_epsilon(&partitions, cfg.n_key));
        let stride = key_stride(cfg.n_key);

        // rings
        let mut rings: BTreeMap<u64, Vec<PointId>> = BTreeMap::new();
        for i in 0..n {
            let key = index_key(top.assignment[i] as u32, ref_dist[i], epsilon, stride, cfg.n_key);
            rings.entry(key).or_default().push(i as PointId);
        }

        // sub-partitions and record layout
        let mut keys: BTreeMap<u64, Vec<SubPartition<T>>> = BTreeMap::new();
        let mut next_record = 0u32;
        let mut order: Vec<PointId> = Vec::with_capacity(n);
        for (key, members) in rings {
            let mut pts = Vec::with_capacity(members.len() * m);
            for &id in &members {
                pts.extend_from_slice(projected.point(id));
            }
            let k = cfg.ksp.min(members.len());
            let sub = kmeans(&pts, m, k, derive_seed(cfg.seed, key + 2))?;
            let mut subs = Vec::with_capacity(k);
            for c in 0..k {
                let ids: Vec<PointId> = members
                    .iter()
                    .zip(&sub.assignment)
                    .filter(|(_, a)| **a == c)
                    .map(|(id, _)| *id)
                    .collect();
                if ids.is_empty() {
                    continue;
                }
                let pivot = sub.centroid(c).to_vec();
                let radius = ids
                    .iter()
                    .map(|&id| dist(projected.point(id), &pivot))
                    .fold(T::zero(), T::max);
                subs.push(SubPartition {
                    pivot,
                    radius,
                    first_record: next_record,
                    members: ids.clone(),
                });
                next_record += ids.len() as u32;
                order.extend(ids);
            }
            keys.insert(key, subs);
        }
        debug_assert_eq!(order.len(), n);

        let vector_layout = VectorLayout::new(dataset.dim(), cfg.page_size);
        let mut proj_bytes = vec![0u8; layout.bytes_for(n)];
        let mut orig_bytes = vec![0u8; vector_layout.bytes_for(n)];
        let mut record_of = vec![0u32; n];
        for (slot, &id) in order.iter().enumerate() {
            let off = vector_layout.offset_of(slot);
            let vb = vector_layout.vector_bytes;
            VectorLayout::encode(&mut orig_bytes[off as usize..off as usize + vb], dataset.point(id));
            let at = layout.offset_of(slot as u32);
            layout.encode(
                &mut proj_bytes[at..at + layout.record_size],
                id,
                projected.point(id),
                off,
            );
            record_of[id as usize] = slot as u32;
        }

        Ok(Self {
            d: dataset.dim(),
            n,
            params: IndexParams {
                kp: cfg.kp,
                n_key: cfg.n_key,
                ksp: cfg.ksp,
                epsilon,
                stride,
                page_size: cfg.page_size,
                seed: cfg.seed,
            },
            matrix,
            norms,
            groups,
            partitions,
            keys,
            layout,
            vector_layout,
            projected_store: PageStore::new(StoreKind::Projected, cfg.page_size, proj_bytes),
            original_store: PageStore::new(StoreKind::Original, cfg.page_size, orig_bytes),
            record_of,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn projected_dim(&self) -> usize {
        self.matrix.projected_dim()
    }

    pub fn params(&self) -> &IndexParams<T> {
        &self.params
    }

    pub fn matrix(&self) -> &ProjectionMatrix<T> {
        &self.matrix
    }

    pub fn norms(&self) -> &NormTable<T> {
        &self.norms
    }

    pub fn code_groups(&self) -> &CodeGroups<T> {
        &self.groups
    }

    pub fn partitions(&self) -> &[Partition<T>] {
        &self.partitions
    }

    pub fn keys(&self) -> &BTreeMap<u64, Vec<SubPartition<T>>> {
        &self.keys
    }

    pub fn record_layout(&self) -> &RecordLayout {
        &self.layout
    }

    pub fn projected_store(&self) -> &PageStore {
        &self.projected_store
    }

    pub fn original_store(&self) -> &PageStore {
        &self.original_store
    }

    pub fn sub_partition_count(&self) -> usize {
        self.keys.values().map(Vec::len).sum()
    }

    fn slack(&self, scale: T) -> T {
        T::epsilon() * T::lit(64.0) * (T::one() + scale)
    }

    /// Loads the projected record of `id`, counting its page.
    pub fn fetch_projected(&self, id: PointId, tally: &PageTally) -> Result<(Vec<T>, u64)> {
        let Some(&record) = self.record_of.get(id as usize) else {
            return invalid(format!("point id {id} out of range"));
        };
        let page = self.projected_store.page(self.layout.page_of(record), tally);
        let at = self.layout.offset_of(record) % self.layout.page_size;
        let mut coords = Vec::with_capacity(self.layout.m);
        let (_, off) = self.layout.decode(&page[at..at + self.layout.record_size], &mut coords);
        Ok((coords, off))
    }

    /// Loads an original vector by store offset, counting every page it spans.
    pub fn fetch_original(&self, offset: u64, tally: &PageTally) -> Vec<T> {
        let bytes = self.original_store.read(offset, self.vector_layout.vector_bytes, tally);
        VectorLayout::decode(&bytes)
    }

    /// Original vector of `id` without page accounting.
    pub fn original_vector(&self, id: PointId) -> Result<Vec<T>> {
        let Some(&record) = self.record_of.get(id as usize) else {
            return invalid(format!("point id {id} out of range"));
        };
        let off = self.vector_layout.offset_of(record as usize);
        Ok(VectorLayout::decode(self.original_store.peek(off, self.vector_layout.vector_bytes)))
    }

    /// Rebuilds the indexed dataset from the original-vector store.
    pub fn to_dataset(&self) -> Result<Dataset<T>> {
        let mut coords = Vec::with_capacity(self.n * self.d);
        for id in 0..self.n as PointId {
            coords.extend(self.original_vector(id)?);
        }
        Dataset::from_flat(self.d, coords)
    }

    /// Every point whose projection lies within `r` of `pq`, ascending by
    /// `(distance, id)`. Pages are charged to `tally`.
    pub fn range_search(&self, pq: &[T], r: T, tally: &PageTally) -> Result<Vec<Candidate<T>>> {
        if pq.len() != self.projected_dim() {
            return invalid(format!(
                "query projection has dimension {} but the index uses {}",
                pq.len(),
                self.projected_dim()
            ));
        }
        if !(r >= T::zero()) {
            return invalid(format!("search radius must be non-negative, got {r}"));
        }
        let p = &self.params;
        let mut out = Vec::new();
        let mut coords = Vec::with_capacity(self.layout.m);
        for part in &self.partitions {
            let dq = dist(pq, &part.reference);
            let slack = self.slack(dq + r + part.radius);
            if dq - r > part.radius + slack {
                continue;
            }
            let lo = ring_of((dq - r - slack).max(T::zero()), p.epsilon, p.n_key);
            let hi = ring_of(dq + r + slack, p.epsilon, p.n_key);
            let base = part.id as u64 * p.stride;
            let range = (Bound::Included(base + lo), Bound::Included(base + hi));
            for subs in self.keys.range(range).map(|(_, v)| v) {
                for sub in subs {
                    let dp = dist(pq, &sub.pivot);
                    if dp > sub.radius + r + self.slack(dp + r + sub.radius) {
                        continue;
                    }
                    self.scan_sub_partition(sub, pq, r, tally, &mut coords, &mut out);
                }
            }
        }
        out.sort_by(|a, b| a.dist.partial_cmp(&b.dist).unwrap().then(a.id.cmp(&b.id)));
        Ok(out)
    }

    fn scan_sub_partition(
        &self,
        sub: &SubPartition<T>,
        pq: &[T],
        r: T,
        tally: &PageTally,
        coords: &mut Vec<T>,
        out: &mut Vec<Candidate<T>>,
    ) {
        let rs = self.layout.record_size;
        let mut current: Option<(u32, &[u8])> = None;
        for rec in sub.first_record..sub.first_record + sub.members.len() as u32 {
            let page_no = self.layout.page_of(rec);
            let page = match current {
                Some((p, bytes)) if p == page_no => bytes,
                _ => {
                    let bytes = self.projected_store.page(page_no, tally);
                    current = Some((page_no, bytes));
                    bytes
                }
            };
            let at = self.layout.offset_of(rec) % self.layout.page_size;
            let (id, off) = self.layout.decode(&page[at..at + rs], coords);
            let d = dist(coords, pq);
            if d <= r {
                out.push(Candidate {
                    id,
                    dist: d,
                    original_offset: off,
                });
            }
        }
    }

    /// Streams every point in ascending projected distance from `pq`.
    pub fn incremental_nn<'a>(&'a self, pq: &'a [T], tally: &'a PageTally) -> IncrementalNn<'a, T> {
        IncrementalNn {
            index: self,
            pq,
            tally,
            radius: self.params.epsilon,
            emitted: vec![false; self.n],
            emitted_count: 0,
            buffer: Vec::new(),
            cursor: 0,
            error: None,
        }
    }
}

/// Iterator over all points by ascending `(projected distance, id)`, driven
/// by range searches with radius `ε, 2ε, 4ε, …`.
pub struct IncrementalNn<'a, T: Scalar> {
    index: &'a IDistanceIndex<T>,
    pq: &'a [T],
    tally: &'a PageTally,
    radius: T,
    emitted: Vec<bool>,
    emitted_count: usize,
    buffer: Vec<Candidate<T>>,
    cursor: usize,
    error: Option<crate::Error>,
}

impl<T: Scalar> IncrementalNn<'_, T> {
    /// Radius of the most recent range search.
    pub fn confirmed_radius(&self) -> T {
        self.radius
    }

    pub fn take_error(&mut self) -> Option<crate::Error> {
        self.error.take()
    }
}

impl<T: Scalar> Iterator for IncrementalNn<'_, T> {
    type Item = Candidate<T>;

    fn next(&mut self) -> Option<Candidate<T>> {
        loop {
            if self.cursor < self.buffer.len() {
                let c = self.buffer[self.cursor];
                self.cursor += 1;
                return Some(c);
            }
            if self.emitted_count == self.index.n || self.error.is_some() {
                return None;
            }
            let found = match self.index.range_search(self.pq, self.radius, self.tally) {
                Ok(found) => found,
                Err(e) => {
                    self.error = Some(e);
                    return None;
                }
            };
            self.buffer.clear();
            self.cursor = 0;
            for c in found {
                if !self.emitted[c.id as usize] {
                    self.emitted[c.id as usize] = true;
                    self.emitted_count += 1;
                    self.buffer.push(c);
                }
            }
            if self.emitted_count < self.index.n {
                self.radius = self.radius + self.radius;
                if !self.radius.is_finite() {
                    self.radius = T::max_value();
                }
            }
        }
    }
}

/// Shorthand for [`IDistanceIndex::build`].
pub fn build_index<T: Scalar>(dataset: &Dataset<T>, cfg: &IndexConfig<T>) -> Result<IDistanceIndex<T>> {
    IDistanceIndex::build(dataset, cfg)
}
