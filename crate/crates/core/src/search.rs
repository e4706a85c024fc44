//! Query execution: the incremental-NN search, the probe-radius range
//! search with `r′` compensation, and the exact brute-force oracle.
//!
//! Both searches track the `k` best inner products seen so far and test the
//! stopping rules against the `k`-th best once `min(k, n)` candidates exist.

use std::time::Instant;

use serde::Serialize;

use crate::conditions::QueryContext;
use crate::error::{invalid, Result};
use crate::index::{Candidate, IDistanceIndex, PageTally, StoreKind};
use crate::quick_probe::quick_probe;
use crate::vector::{dot, Dataset, PointId};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    ConditionA,
    ConditionB,
    /// Every point was verified; the answer is exact.
    Exhausted,
    /// The range search was widened to `r′` and the annulus scanned.
    RPrimeExpanded,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::ConditionA => "condition_a",
            Termination::ConditionB => "condition_b",
            Termination::Exhausted => "exhausted",
            Termination::RPrimeExpanded => "r_prime_expanded",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult<T: Scalar> {
    /// Ids by descending inner product, ascending id on ties.
    pub ids: Vec<PointId>,
    pub ips: Vec<T>,
    pub projected_pages: usize,
    pub original_pages: usize,
    /// Original vectors whose inner product was computed.
    pub candidates: usize,
    pub cpu_us: f64,
    pub total_us: f64,
    pub termination: Termination,
    /// Radius the range search started from (probe search only).
    pub initial_radius: Option<T>,
    /// Largest radius searched (probe search only).
    pub final_radius: Option<T>,
}

impl<T: Scalar> QueryResult<T> {
    pub fn pages(&self) -> usize {
        self.projected_pages + self.original_pages
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// The `k` largest inner products seen, kept sorted.
#[derive(Debug, Clone)]
pub struct TopK<T: Scalar> {
    k: usize,
    items: Vec<(T, PointId)>,
}

impl<T: Scalar> TopK<T> {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    fn before(a: &(T, PointId), b: &(T, PointId)) -> bool {
        a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
    }

    /// Offers a point; returns whether it entered the top `k`.
    pub fn push(&mut self, ip: T, id: PointId) -> bool {
        let item = (ip, id);
        if self.items.len() == self.k && !Self::before(&item, self.items.last().unwrap()) {
            return false;
        }
        let at = self.items.partition_point(|x| Self::before(x, &item));
        self.items.insert(at, item);
        self.items.truncate(self.k);
        true
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// The smallest kept inner product.
    pub fn last_ip(&self) -> Option<T> {
        self.items.last().map(|x| x.0)
    }

    pub fn into_parts(self) -> (Vec<PointId>, Vec<T>) {
        self.items.into_iter().map(|(ip, id)| (id, ip)).unzip()
    }
}

/// Thread CPU time in microseconds.
fn thread_cpu_us() -> f64 {
    let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
    // SAFETY: ts is a valid out-pointer for the duration of the call
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_THREAD_CPUTIME_ID, &mut ts) };
    if rc != 0 {
        return 0.0;
    }
    ts.tv_sec as f64 * 1e6 + ts.tv_nsec as f64 / 1e3
}

struct Clock {
    wall: Instant,
    cpu: f64,
}

impl Clock {
    fn start() -> Self {
        Self {
            wall: Instant::now(),
            cpu: thread_cpu_us(),
        }
    }

    fn elapsed(&self) -> (f64, f64) {
        ((thread_cpu_us() - self.cpu).max(0.0), self.wall.elapsed().as_secs_f64() * 1e6)
    }
}

/// Exact top-`k` by inner product over the whole dataset.
pub fn brute_force_mip<T: Scalar>(dataset: &Dataset<T>, q: &[T], k: usize) -> Result<QueryResult<T>> {
    if dataset.is_empty() {
        return invalid("cannot search an empty dataset");
    }
    if k == 0 {
        return invalid("k must be at least 1");
    }
    if q.len() != dataset.dim() {
        return invalid(format!(
            "query has dimension {} but the dataset has {}",
            q.len(),
            dataset.dim()
        ));
    }
    let clock = Clock::start();
    let mut top = TopK::new(k.min(dataset.len()));
    for (i, p) in dataset.points().enumerate() {
        top.push(dot(p, q), i as PointId);
    }
    let (ids, ips) = top.into_parts();
    let (cpu_us, total_us) = clock.elapsed();
    Ok(QueryResult {
        ids,
        ips,
        projected_pages: 0,
        original_pages: 0,
        candidates: dataset.len(),
        cpu_us,
        total_us,
        termination: Termination::Exhausted,
        initial_radius: None,
        final_radius: None,
    })
}

fn check_context<T: Scalar>(index: &IDistanceIndex<T>, ctx: &QueryContext<T>) -> Result<()> {
    if ctx.q.len() != index.dim() {
        return invalid(format!(
            "query has dimension {} but the index holds {}-dimensional points",
            ctx.q.len(),
            index.dim()
        ));
    }
    if ctx.m != index.projected_dim() || ctx.matrix_seed != index.matrix().seed() {
        return invalid("query context was built with a different projection than the index");
    }
    if ctx.max_sq_norm != index.norms().max_sq_l2 {
        return invalid("query context carries a different maximum norm than the index");
    }
    Ok(())
}

/// Per-query verification state.
struct Scan<'a, T: Scalar> {
    index: &'a IDistanceIndex<T>,
    ctx: &'a QueryContext<T>,
    tally: &'a PageTally,
    top: TopK<T>,
    k_eff: usize,
    visited: Vec<bool>,
    seen: usize,
}

impl<'a, T: Scalar> Scan<'a, T> {
    fn new(index: &'a IDistanceIndex<T>, ctx: &'a QueryContext<T>, tally: &'a PageTally) -> Self {
        let k_eff = ctx.k.min(index.len());
        Self {
            index,
            ctx,
            tally,
            top: TopK::new(k_eff),
            k_eff,
            visited: vec![false; index.len()],
            seen: 0,
        }
    }

    /// Fetches and scores a candidate once; returns whether the top-k changed.
    fn verify(&mut self, c: &Candidate<T>) -> bool {
        if std::mem::replace(&mut self.visited[c.id as usize], true) {
            return false;
        }
        self.seen += 1;
        let v = self.index.fetch_original(c.original_offset, self.tally);
        self.top.push(dot(&v, &self.ctx.q), c.id)
    }

    /// The `k`-th best inner product once `k` candidates exist.
    fn kth(&self) -> Option<T> {
        (self.top.len() == self.k_eff).then(|| self.top.last_ip()).flatten()
    }

    fn finish(
        self,
        clock: Clock,
        termination: Termination,
        initial_radius: Option<T>,
        final_radius: Option<T>,
    ) -> QueryResult<T> {
        let (ids, ips) = self.top.into_parts();
        let (cpu_us, total_us) = clock.elapsed();
        QueryResult {
            ids,
            ips,
            projected_pages: self.tally.count(StoreKind::Projected),
            original_pages: self.tally.count(StoreKind::Original),
            candidates: self.seen,
            cpu_us,
            total_us,
            termination,
            initial_radius,
            final_radius,
        }
    }
}

/// Visits points by ascending projected distance, stopping at the first
/// point after which Condition A or Condition B holds for the `k`-th best.
pub fn mip_search_i<T: Scalar>(index: &IDistanceIndex<T>, ctx: &QueryContext<T>) -> Result<QueryResult<T>> {
    check_context(index, ctx)?;
    let clock = Clock::start();
    let tally = PageTally::new();
    let mut scan = Scan::new(index, ctx, &tally);
    let mut nn = index.incremental_nn(&ctx.pq, &tally);
    let mut termination = Termination::Exhausted;
    for c in nn.by_ref() {
        scan.verify(&c);
        if let Some(kth) = scan.kth() {
            if ctx.condition_a(kth) {
                termination = Termination::ConditionA;
                break;
            }
            if ctx.condition_b(c.dist * c.dist, kth)? {
                termination = Termination::ConditionB;
                break;
            }
        }
    }
    if let Some(e) = nn.take_error() {
        return Err(e);
    }
    Ok(scan.finish(clock, termination, None, None))
}

/// Quick-Probe fixes the initial radius, then proceeds as
/// [`mip_search_ii_with_radius`].
pub fn mip_search_ii<T: Scalar>(index: &IDistanceIndex<T>, ctx: &QueryContext<T>) -> Result<QueryResult<T>> {
    check_context(index, ctx)?;
    let clock = Clock::start();
    let tally = PageTally::new();
    let scan = Scan::new(index, ctx, &tally);
    let probe = quick_probe(index.code_groups(), ctx, |id| {
        index.fetch_projected(id, &tally).map(|(coords, _)| coords)
    })?;
    search_ii(scan, clock, probe.radius)
}

/// Range search from a caller-chosen starting radius: scan everything within
/// `r` (doubling `r` until at least `k` points are inside), stopping early when
/// Condition A holds after an improvement; then either accept via Condition B
/// at `r` or widen to `r′` and scan the annulus.
pub fn mip_search_ii_with_radius<T: Scalar>(
    index: &IDistanceIndex<T>,
    ctx: &QueryContext<T>,
    r: T,
) -> Result<QueryResult<T>> {
    check_context(index, ctx)?;
    if !(r >= T::zero() && r.is_finite()) {
        return invalid(format!("starting radius must be finite and non-negative, got {r}"));
    }
    let tally = PageTally::new();
    search_ii(Scan::new(index, ctx, &tally), Clock::start(), r)
}

fn search_ii<T: Scalar>(mut scan: Scan<'_, T>, clock: Clock, start: T) -> Result<QueryResult<T>> {
    let index = scan.index;
    let ctx = scan.ctx;
    let n = index.len();
    let mut r = start;
    let mut found = index.range_search(&ctx.pq, r, scan.tally)?;
    while found.len() < scan.k_eff {
        r = (r + r).max(index.params().epsilon);
        found = index.range_search(&ctx.pq, r, scan.tally)?;
    }

    for c in &found {
        if scan.verify(c) {
            if let Some(kth) = scan.kth() {
                if ctx.condition_a(kth) {
                    return Ok(scan.finish(clock, Termination::ConditionA, Some(start), Some(r)));
                }
            }
        }
    }
    if scan.seen == n {
        return Ok(scan.finish(clock, Termination::Exhausted, Some(start), Some(r)));
    }
    let kth = scan.kth().expect("at least k candidates verified");
    if ctx.condition_b(r * r, kth)? {
        return Ok(scan.finish(clock, Termination::ConditionB, Some(start), Some(r)));
    }

    let wide = ctx.extended_radius(kth)?;
    let annulus = index.range_search(&ctx.pq, wide, scan.tally)?;
    for c in annulus.iter().filter(|c| c.dist > r) {
        if scan.verify(c) {
            if let Some(kth) = scan.kth() {
                if ctx.condition_a(kth) {
                    return Ok(scan.finish(clock, Termination::ConditionA, Some(start), Some(wide)));
                }
            }
        }
    }
    let end = if scan.seen == n {
        Termination::Exhausted
    } else {
        Termination::RPrimeExpanded
    };
    Ok(scan.finish(clock, end, Some(start), Some(wide.max(r))))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    I,
    II,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::I => "i",
            Variant::II => "ii",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "i" | "1" => Ok(Variant::I),
            "ii" | "2" => Ok(Variant::II),
            _ => invalid(format!("unknown search variant '{s}' (expected i or ii)")),
        }
    }
}

/// Builds the query context from the index and runs `variant`.
pub fn search<T: Scalar>(
    index: &IDistanceIndex<T>,
    q: &[T],
    c: T,
    p: T,
    k: usize,
    variant: Variant,
) -> Result<QueryResult<T>> {
    let ctx = QueryContext::new(index.matrix(), index.norms().max_sq_l2, q, c, p, k)?;
    match variant {
        Variant::I => mip_search_i(index, &ctx),
        Variant::II => mip_search_ii(index, &ctx),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::{build_index, IndexConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gaussian(n: usize, d: usize, seed: u64) -> Dataset<f64> {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coords = (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect();
        Dataset::from_flat(d, coords).unwrap()
    }

    fn ctx_for(index: &IDistanceIndex<f64>, q: &[f64], c: f64, p: f64, k: usize) -> QueryContext<f64> {
        QueryContext::new(index.matrix(), index.norms().max_sq_l2, q, c, p, k).unwrap()
    }

    #[test]
    fn top_k_ordering() {
        let mut t = TopK::new(3);
        assert!(t.push(1.0, 5));
        assert!(t.push(3.0, 2));
        assert!(t.push(1.0, 1));
        assert!(!t.push(1.0, 9));
        assert!(t.push(2.0, 7));
        assert_eq!(t.into_parts(), (vec![2, 7, 1], vec![3.0, 2.0, 1.0]));
    }

    #[test]
    fn brute_force_examples() {
        let d = Dataset::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let r = brute_force_mip(&d, &[1.0, 0.0], 1).unwrap();
        assert_eq!((r.ids, r.ips), (vec![0], vec![1.0]));
        let all = brute_force_mip(&d, &[1.0, 2.0], 5).unwrap();
        assert_eq!(all.ids, vec![1, 0]);
        assert!(brute_force_mip(&d, &[1.0], 1).is_err());
        assert!(brute_force_mip(&d, &[1.0, 0.0], 0).is_err());
    }

    #[test]
    fn brute_force_matches_full_sort() {
        let data = gaussian(500, 7, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let q: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut all: Vec<(f64, u32)> = data
                .points()
                .enumerate()
                .map(|(i, p)| (p.iter().zip(&q).map(|(a, b)| a * b).sum(), i as u32))
                .collect();
            all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let got = brute_force_mip(&data, &q, 10).unwrap();
            assert_eq!(got.ids, all[..10].iter().map(|x| x.1).collect::<Vec<_>>());
        }
    }

    #[test]
    fn condition_a_fires_on_first_neighbour() {
        // the query equals the max-norm point, which is also the argmax
        let mut rows = vec![[10.0, 0.0, 0.0, 0.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..99 {
            rows.push([(); 4].map(|_| rng.random_range(-0.1..0.1)));
        }
        let data = Dataset::from_rows(&rows).unwrap();
        let index = build_index(&data, &IndexConfig { m: Some(4), ..IndexConfig::default() }).unwrap();
        let ctx = ctx_for(&index, &rows[0], 0.9, 0.5, 1);
        // 100 + 100 - 2·100/0.9 < 0
        assert!(ctx.condition_a(100.0));
        let r = mip_search_i(&index, &ctx).unwrap();
        assert_eq!(r.termination, Termination::ConditionA);
        assert_eq!(r.candidates, 1);
        assert_eq!(r.ids, vec![0]);
        let r2 = mip_search_ii(&index, &ctx).unwrap();
        assert_eq!(r2.ids, vec![0]);
        assert_eq!(r2.termination, Termination::ConditionA);
    }

    #[test]
    fn strict_parameters_exhaust_and_are_exact() {
        let data = gaussian(30, 6, 4);
        let index = build_index(&data, &IndexConfig { m: Some(2), ..IndexConfig::default() }).unwrap();
        let q = [0.0, 0.0, 0.0, 0.0, 0.0, 0.01];
        let ctx = ctx_for(&index, &q, 0.99, 0.99, 3);
        let r = mip_search_i(&index, &ctx).unwrap();
        let exact = brute_force_mip(&data, &q, 3).unwrap();
        assert_eq!(r.termination, Termination::Exhausted);
        assert_eq!(r.candidates, 30);
        assert_eq!((r.ids, r.ips), (exact.ids, exact.ips));
    }

    #[test]
    fn tiny_p_stops_early() {
        let data = gaussian(2000, 20, 5);
        let index = build_index(&data, &IndexConfig::default()).unwrap();
        let q = gaussian(1, 20, 6);
        let ctx = ctx_for(&index, q.point(0), 0.9, 1e-6, 5);
        let r = mip_search_i(&index, &ctx).unwrap();
        assert_eq!(r.termination, Termination::ConditionB);
        assert!(r.candidates <= 10, "{} candidates", r.candidates);
    }

    #[test]
    fn single_point_search_ii_exhausts() {
        let data = Dataset::from_rows(&[[1.0, -2.0, 0.5]]).unwrap();
        let index = build_index(&data, &IndexConfig::default()).unwrap();
        let ctx = ctx_for(&index, &[0.3, 0.3, 0.3], 0.9, 0.7, 4);
        let r = mip_search_ii(&index, &ctx).unwrap();
        assert_eq!(r.termination, Termination::Exhausted);
        assert_eq!(r.ids, vec![0]);
    }

    #[test]
    fn covering_probe_radius_returns_exact_top_1() {
        let data = gaussian(400, 10, 7);
        let index = build_index(&data, &IndexConfig { m: Some(5), ..IndexConfig::default() }).unwrap();
        let q = gaussian(1, 10, 8);
        let q = q.point(0);
        let ctx = ctx_for(&index, q, 0.9, 0.7, 1);
        let exact = brute_force_mip(&data, q, 1).unwrap();
        let target = index.matrix().project(data.point(exact.ids[0])).unwrap();
        let radius = crate::vector::dist(&target, &ctx.pq);
        let r = mip_search_ii_with_radius(&index, &ctx, radius).unwrap();
        assert_eq!(r.ids, exact.ids);
    }

    #[test]
    fn results_are_well_formed() {
        let data = gaussian(1500, 16, 9);
        let index = build_index(&data, &IndexConfig::default()).unwrap();
        let queries = gaussian(10, 16, 10);
        for q in queries.points() {
            for variant in [Variant::I, Variant::II] {
                let r = search(&index, q, 0.8, 0.6, 12, variant).unwrap();
                assert_eq!(r.ids.len(), 12);
                assert!(r.ips.windows(2).all(|w| w[0] >= w[1]));
                let mut ids = r.ids.clone();
                ids.sort();
                ids.dedup();
                assert_eq!(ids.len(), 12);
                for (id, ip) in r.ids.iter().zip(&r.ips) {
                    assert_eq!(*ip, dot(data.point(*id), q));
                }
                assert!(r.candidates >= 12);
                assert!(r.original_pages >= 1 && r.projected_pages >= 1);
            }
        }
    }

    #[test]
    fn search_ii_postcondition() {
        let data = gaussian(1500, 16, 11);
        let index = build_index(&data, &IndexConfig::default()).unwrap();
        let queries = gaussian(30, 16, 12);
        for q in queries.points() {
            let ctx = ctx_for(&index, q, 0.9, 0.7, 5);
            let r = mip_search_ii(&index, &ctx).unwrap();
            let kth = *r.ips.last().unwrap();
            let radius = r.final_radius.unwrap();
            let ok = match r.termination {
                Termination::Exhausted => true,
                _ => ctx.condition_a(kth) || ctx.condition_b(radius * radius, kth).unwrap(),
            };
            assert!(ok, "{:?}", r.termination);
        }
    }

    #[test]
    fn fixed_radius_candidates_grow_with_p() {
        let data = gaussian(2000, 24, 13);
        let index = build_index(&data, &IndexConfig::default()).unwrap();
        let queries = gaussian(20, 24, 14);
        for q in queries.points() {
            let probe = mip_search_ii(&index, &ctx_for(&index, q, 0.9, 0.5, 3)).unwrap();
            let start = probe.initial_radius.unwrap();
            let mut prev = 0;
            for p in [0.1, 0.3, 0.5, 0.7, 0.9, 0.99] {
                let r = mip_search_ii_with_radius(&index, &ctx_for(&index, q, 0.9, p, 3), start).unwrap();
                assert!(r.candidates >= prev, "p={p}: {} < {prev}", r.candidates);
                prev = r.candidates;
            }
        }
    }

    #[test]
    fn condition_a_is_sound_on_small_instances() {
        let mut fired = 0;
        for seed in 0..40 {
            let data = gaussian(150, 8, 100 + seed);
            let index = build_index(&data, &IndexConfig { seed, ..IndexConfig::default() }).unwrap();
            // queries aligned with a large-norm point make Condition A reachable
            let q: Vec<f64> = data.point(index.norms().max_sq_l2_id).iter().map(|x| x * 1.3).collect();
            let exact = brute_force_mip(&data, &q, 1).unwrap().ips[0];
            for variant in [Variant::I, Variant::II] {
                let r = search(&index, &q, 0.8, 0.9, 1, variant).unwrap();
                if r.termination == Termination::ConditionA {
                    fired += 1;
                    assert!(r.ips[0] >= 0.8 * exact);
                }
            }
        }
        assert!(fired > 0);
    }

    #[test]
    fn mismatched_context_is_rejected() {
        let data = gaussian(100, 6, 15);
        let index = build_index(&data, &IndexConfig { seed: 1, ..IndexConfig::default() }).unwrap();
        let other = crate::projection::ProjectionMatrix::new(6, index.projected_dim(), 2).unwrap();
        let ctx = QueryContext::new(&other, index.norms().max_sq_l2, data.point(0), 0.9, 0.5, 1).unwrap();
        assert!(matches!(mip_search_i(&index, &ctx), Err(crate::Error::InvalidArgument(_))));
        assert!(matches!(mip_search_ii(&index, &ctx), Err(crate::Error::InvalidArgument(_))));
        assert!("iii".parse::<Variant>().is_err());
        assert_eq!("II".parse::<Variant>().unwrap(), Variant::II);
    }
}
