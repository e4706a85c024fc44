//! Answer-quality metrics against the exact top-k.

use std::collections::HashSet;

use crate::search::QueryResult;
use crate::Scalar;

/// Mean over ranks of `returned_ip / exact_ip`. `None` when any exact inner
/// product is non-positive or the lists are empty.
pub fn overall_ratio<T: Scalar>(returned: &QueryResult<T>, exact: &QueryResult<T>) -> Option<f64> {
    ratio_of(&returned.ips, &exact.ips)
}

/// [`overall_ratio`] over raw rank-ordered inner products.
pub fn ratio_of<T: Scalar>(returned: &[T], exact: &[T]) -> Option<f64> {
    let k = exact.len();
    if k == 0 || returned.len() < k || exact.iter().any(|e| *e <= T::zero()) {
        return None;
    }
    let sum: f64 = returned
        .iter()
        .zip(exact)
        .map(|(r, e)| r.as_f64() / e.as_f64())
        .sum();
    Some(sum / k as f64)
}

/// `|returned ∩ exact| / k` with `k` the exact list length.
pub fn recall<T: Scalar>(returned: &QueryResult<T>, exact: &QueryResult<T>) -> f64 {
    recall_of(&returned.ids, &exact.ids)
}

pub fn recall_of(returned: &[u32], exact: &[u32]) -> f64 {
    if exact.is_empty() {
        return 1.0;
    }
    let want: HashSet<u32> = exact.iter().copied().collect();
    let hit = returned.iter().collect::<HashSet<_>>().into_iter().filter(|id| want.contains(id)).count();
    hit as f64 / exact.len() as f64
}
