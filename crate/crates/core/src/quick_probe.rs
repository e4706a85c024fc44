//! Sign codes over projected points and the probe-point search that fixes
//! the initial range-search radius.
//!
//! Points sharing a sign code form a group, kept sorted by the 1-norm of the
//! original vector. At query time groups are visited in ascending order of
//! their projected-distance lower bound; the first group whose
//! smallest-1-norm member passes Test A supplies the probe point.

use std::cmp::Ordering;

use crate::conditions::QueryContext;
use crate::error::{invalid, Result};
use crate::projection::ProjectedDataset;
use crate::vector::{dist, NormTable, PointId};
use crate::Scalar;

/// `m`-bit sign pattern; bit `i` is set iff coordinate `i` is non-negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BinaryCode {
    pub bits: u32,
    pub width: u8,
}

impl BinaryCode {
    pub fn bit(&self, i: usize) -> bool {
        self.bits >> i & 1 == 1
    }
}

pub fn binary_code<T: Scalar>(pp: &[T]) -> BinaryCode {
    assert!(pp.len() <= 32, "binary codes hold at most 32 bits");
    let mut bits = 0u32;
    for (i, x) in pp.iter().enumerate() {
        if *x >= T::zero() {
            bits |= 1 << i;
        }
    }
    BinaryCode {
        bits,
        width: pp.len() as u8,
    }
}

/// Lower bound on `dis(P(o), pq)` for any `o` whose code is `code`:
/// `(1/√m)·Σ (codeᵢ ⊕ c(pq)ᵢ)·|pqᵢ|`.
pub fn group_lower_bound<T: Scalar>(code: BinaryCode, pq: &[T]) -> T {
    debug_assert_eq!(code.width as usize, pq.len());
    let query = binary_code(pq);
    let diff = code.bits ^ query.bits;
    let mut acc = T::zero();
    for (i, x) in pq.iter().enumerate() {
        if diff >> i & 1 == 1 {
            acc += x.abs();
        }
    }
    acc / T::lit(pq.len() as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodeGroup<T: Scalar> {
    pub code: BinaryCode,
    /// Ascending by 1-norm, ties by id.
    pub members: Vec<PointId>,
    /// 1-norms aligned with `members`.
    pub member_l1: Vec<T>,
}

impl<T: Scalar> CodeGroup<T> {
    pub fn min_l1(&self) -> T {
        self.member_l1[0]
    }

    pub fn first(&self) -> PointId {
        self.members[0]
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Non-empty code groups ordered by code value.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeGroups<T: Scalar> {
    pub m: usize,
    pub groups: Vec<CodeGroup<T>>,
}

impl<T: Scalar> CodeGroups<T> {
    pub fn total_members(&self) -> usize {
        self.groups.iter().map(CodeGroup::len).sum()
    }
}

pub fn build_code_groups<T: Scalar>(
    projected: &ProjectedDataset<T>,
    norms: &NormTable<T>,
) -> Result<CodeGroups<T>> {
    if projected.len() != norms.len() {
        return invalid(format!(
            "projected set has {} points but the norm table has {}",
            projected.len(),
            norms.len()
        ));
    }
    let mut keyed: Vec<(u32, T, PointId)> = projected
        .points()
        .enumerate()
        .map(|(i, p)| (binary_code(p).bits, norms.l1[i], i as PointId))
        .collect();
    keyed.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then(a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal))
            .then(a.2.cmp(&b.2))
    });
    let width = projected.dim() as u8;
    let mut groups: Vec<CodeGroup<T>> = Vec::new();
    for (bits, l1, id) in keyed {
        match groups.last_mut() {
            Some(g) if g.code.bits == bits => {
                g.members.push(id);
                g.member_l1.push(l1);
            }
            _ => groups.push(CodeGroup {
                code: BinaryCode { bits, width },
                members: vec![id],
                member_l1: vec![l1],
            }),
        }
    }
    Ok(CodeGroups {
        m: projected.dim(),
        groups,
    })
}

/// Probe point chosen from the groups, before its projection is fetched.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeChoice<T: Scalar> {
    pub id: PointId,
    /// `LB² / (c·(‖o‖₁ + ‖q‖₁)²)` recorded for the chosen point.
    pub value: T,
    pub passed_test_a: bool,
    pub groups_scanned: usize,
}

/// Probe point together with the range-search radius it determines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe<T: Scalar> {
    pub id: PointId,
    pub radius: T,
    pub passed_test_a: bool,
    pub groups_scanned: usize,
}

/// Group indices in visiting order: ascending lower bound, then code value.
pub fn groups_by_lower_bound<T: Scalar>(groups: &CodeGroups<T>, pq: &[T]) -> Vec<(T, usize)> {
    let mut order: Vec<(T, usize)> = groups
        .groups
        .iter()
        .enumerate()
        .map(|(i, g)| (group_lower_bound(g.code, pq), i))
        .collect();
    // groups are stored by ascending code, so index order is code order
    order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
    order
}

/// Selects the probe point without touching any stored point.
pub fn select_probe<T: Scalar>(groups: &CodeGroups<T>, ctx: &QueryContext<T>) -> Result<ProbeChoice<T>> {
    if groups.groups.is_empty() {
        return invalid("quick probe needs at least one code group");
    }
    let mut best: Option<(PointId, T)> = None;
    let order = groups_by_lower_bound(groups, &ctx.pq);
    for (scanned, (lb, gi)) in order.iter().enumerate() {
        let g = &groups.groups[*gi];
        if ctx.test_a(*lb, g.min_l1()) {
            return Ok(ProbeChoice {
                id: g.first(),
                value: ctx.probe_value(*lb, g.min_l1()),
                passed_test_a: true,
                groups_scanned: scanned + 1,
            });
        }
        let value = ctx.probe_value(*lb, g.min_l1());
        if best.is_none_or(|(_, v)| value >= v) {
            best = Some((g.first(), value));
        }
    }
    let (id, value) = best.expect("at least one group visited");
    Ok(ProbeChoice {
        id,
        value,
        passed_test_a: false,
        groups_scanned: order.len(),
    })
}

/// Runs the probe and measures the radius `dis(P(probe), pq)`, loading the
/// probe's projected coordinates through `fetch`.
pub fn quick_probe<T, F>(groups: &CodeGroups<T>, ctx: &QueryContext<T>, fetch: F) -> Result<Probe<T>>
where
    T: Scalar,
    F: FnOnce(PointId) -> Result<Vec<T>>,
{
    let choice = select_probe(groups, ctx)?;
    let projected = fetch(choice.id)?;
    Ok(Probe {
        id: choice.id,
        radius: dist(&projected, &ctx.pq),
        passed_test_a: choice.passed_test_a,
        groups_scanned: choice.groups_scanned,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::ProjectionMatrix;
    use crate::vector::{l2_distance, Dataset};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn code_examples() {
        let c = binary_code(&[0.5, -1.2, 0.0, -3.0]);
        assert_eq!((c.bit(0), c.bit(1), c.bit(2), c.bit(3)), (true, false, true, false));
        assert_eq!(binary_code(&[-1.0, -2.0, -0.1]).bits, 0);
        let v = [0.3, -0.7, 2.0, -0.01];
        let doubled: Vec<f64> = v.iter().map(|x| 2.0 * x).collect();
        assert_eq!(binary_code(&v), binary_code(&doubled));
    }

    #[test]
    fn lower_bound_examples() {
        let pq = [1.0, -2.0];
        assert_eq!(group_lower_bound(binary_code(&pq), &pq), 0.0);
        // pq code has bit0 = 1, bit1 = 0; the group with bit0 = 0, bit1 = 1 differs in both
        let other = BinaryCode { bits: 0b10, width: 2 };
        let lb = group_lower_bound(other, &pq);
        assert!((lb - 3.0 / 2f64.sqrt()).abs() < 1e-12);
        assert!((lb - 2.1213).abs() < 1e-4);
    }

    #[test]
    fn lower_bound_never_exceeds_projected_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let m = rng.random_range(1..12);
            let po: Vec<f64> = (0..m).map(|_| rng.random_range(-5.0..5.0)).collect();
            let pq: Vec<f64> = (0..m).map(|_| rng.random_range(-5.0..5.0)).collect();
            let lb = group_lower_bound(binary_code(&po), &pq);
            assert!(lb <= l2_distance(&po, &pq).unwrap() + 1e-9);
        }
    }

    fn random_groups(n: usize, m: usize, seed: u64) -> (Dataset<f64>, ProjectedDataset<f64>, CodeGroups<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..10).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let ds = Dataset::from_rows(&rows).unwrap();
        let mat = ProjectionMatrix::new(10, m, seed).unwrap();
        let proj = ProjectedDataset::project(&mat, &ds).unwrap();
        let groups = build_code_groups(&proj, ds.norms()).unwrap();
        (ds, proj, groups)
    }

    #[test]
    fn single_point_single_group() {
        let (_, _, g) = random_groups(1, 4, 1);
        assert_eq!(g.groups.len(), 1);
        assert_eq!(g.groups[0].members, vec![0]);
    }

    #[test]
    fn identical_projections_share_a_group() {
        let ds = Dataset::<f64>::from_rows(&[[2.0, 2.0], [1.0, 1.0], [-1.0, -1.0]]).unwrap();
        let mat = ProjectionMatrix::new(2, 3, 5).unwrap();
        let proj = ProjectedDataset::project(&mat, &ds).unwrap();
        let groups = build_code_groups(&proj, ds.norms()).unwrap();
        let g = groups.groups.iter().find(|g| g.members.contains(&0)).unwrap();
        assert_eq!(g.members, vec![1, 0]);
        assert_eq!(g.min_l1(), 2.0);
    }

    #[test]
    fn grouping_matches_naive_regroup() {
        let (ds, proj, groups) = random_groups(1000, 6, 9);
        assert_eq!(groups.total_members(), 1000);
        let mut seen = vec![0u32; 1000];
        for g in &groups.groups {
            let mut expect: Vec<PointId> = (0..1000u32)
                .filter(|&i| binary_code(proj.point(i)).bits == g.code.bits)
                .collect();
            expect.sort_by(|a, b| {
                ds.norms().l1[*a as usize]
                    .partial_cmp(&ds.norms().l1[*b as usize])
                    .unwrap()
                    .then(a.cmp(b))
            });
            assert_eq!(g.members, expect);
            assert_eq!(g.min_l1(), ds.norms().l1[expect[0] as usize]);
            for &id in &g.members {
                seen[id as usize] += 1;
            }
        }
        assert!(seen.iter().all(|&s| s == 1));
        assert!(groups.groups.windows(2).all(|w| w[0].code.bits < w[1].code.bits));
    }

    fn context(ds: &Dataset<f64>, m: usize, seed: u64, q: &[f64], c: f64, p: f64) -> QueryContext<f64> {
        let mat = ProjectionMatrix::new(ds.dim(), m, seed).unwrap();
        QueryContext::new(&mat, ds.norms().max_sq_l2, q, c, p, 1).unwrap()
    }

    #[test]
    fn first_group_returned_when_bound_is_huge() {
        let groups = CodeGroups {
            m: 2,
            groups: vec![
                CodeGroup { code: BinaryCode { bits: 0b00, width: 2 }, members: vec![4, 2], member_l1: vec![1e-3, 5.0] },
                CodeGroup { code: BinaryCode { bits: 0b01, width: 2 }, members: vec![7], member_l1: vec![1e-3] },
            ],
        };
        let mut ctx = crate::conditions::tests::ctx(2, 1.0, 1.0, 1e-3, 0.9, 0.9);
        ctx.pq = vec![1e3, 1e3];
        let probe = quick_probe(&groups, &ctx, |id| {
            assert_eq!(id, 7);
            Ok(vec![1.0, -1.0])
        })
        .unwrap();
        assert!(probe.passed_test_a);
        assert_eq!(probe.groups_scanned, 1);
        assert_eq!(probe.id, 7);
        assert!((probe.radius - l2_distance(&[1.0, -1.0], &ctx.pq).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn fallback_picks_largest_recorded_value() {
        let (ds, _, groups) = random_groups(500, 6, 21);
        let q: Vec<f64> = ds.point(3).to_vec();
        // p close to 1 makes Test A fail everywhere
        let ctx = context(&ds, 6, 21, &q, 0.9, 0.999_999);
        let choice = select_probe(&groups, &ctx).unwrap();
        assert!(!choice.passed_test_a);
        let mut best = (f64::MIN, 0);
        for (lb, gi) in groups_by_lower_bound(&groups, &ctx.pq) {
            let g = &groups.groups[gi];
            let s = g.min_l1() + ctx.l1_norm_q;
            let v = lb * lb / (0.9 * s * s);
            assert!(ctx.chi_square().cdf(v) < 0.999_999);
            if v >= best.0 {
                best = (v, g.first());
            }
        }
        assert_eq!(choice.id, best.1);
    }

    #[test]
    fn zero_lower_bound_group_is_skipped() {
        let (ds, proj, groups) = random_groups(300, 4, 5);
        let q: Vec<f64> = ds.point(0).to_vec();
        let ctx = context(&ds, 4, 5, &q, 0.9, 0.5);
        let own = binary_code(&ctx.pq);
        let order = groups_by_lower_bound(&groups, &ctx.pq);
        let (lb0, g0) = order[0];
        assert_eq!(groups.groups[g0].code.bits, own.bits);
        assert_eq!(lb0, 0.0);
        assert!(!ctx.test_a(lb0, groups.groups[g0].min_l1()));
        let choice = select_probe(&groups, &ctx).unwrap();
        if choice.passed_test_a {
            assert!(choice.groups_scanned > 1);
        }
        let again = quick_probe(&groups, &ctx, |id| Ok(proj.point(id).to_vec())).unwrap();
        assert_eq!(again.id, choice.id);
    }

    #[test]
    fn empty_groups_rejected() {
        let ds = Dataset::from_rows(&[[1.0, 1.0]]).unwrap();
        let ctx = context(&ds, 2, 0, &[1.0, 0.0], 0.9, 0.5);
        let empty = CodeGroups::<f64> { m: 2, groups: vec![] };
        assert!(select_probe(&empty, &ctx).is_err());
    }
}
