//! Lloyd's k-means with k-means++ seeding, deterministic for a given seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::vector::sq_dist;
use crate::Scalar;

pub const MAX_ITERATIONS: usize = 100;
pub const RELATIVE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans<T: Scalar> {
    pub dim: usize,
    /// `k × dim`, row-major.
    pub centroids: Vec<T>,
    pub assignment: Vec<usize>,
    pub inertia: T,
    pub iterations: usize,
}

impl<T: Scalar> KMeans<T> {
    pub fn k(&self) -> usize {
        self.centroids.len() / self.dim
    }

    pub fn centroid(&self, c: usize) -> &[T] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }
}

fn nearest<T: Scalar>(p: &[T], centroids: &[T], dim: usize) -> (usize, T) {
    let mut best = (0, T::infinity());
    for (c, cent) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(p, cent);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn seed_plus_plus<T: Scalar>(points: &[T], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    let n = points.len() / dim;
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = row(first).to_vec();
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(row(i), row(first)).as_f64()).collect();
    while centroids.len() < k * dim {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, w) in d2.iter().enumerate() {
                if *w <= 0.0 {
                    continue;
                }
                pick = Some(i);
                if target < *w {
                    break;
                }
                target -= w;
            }
            pick.expect("positive total weight")
        } else {
            // only duplicates remain
            chosen.iter().position(|c| !c).expect("k <= n")
        };
        chosen[pick] = true;
        centroids.extend_from_slice(row(pick));
        for (i, w) in d2.iter_mut().enumerate() {
            *w = w.min(sq_dist(row(i), row(pick)).as_f64());
        }
    }
    centroids
}

/// Clusters `points` (row-major, `dim` columns) into `k` groups.
pub fn kmeans<T: Scalar>(points: &[T], dim: usize, k: usize, seed: u64) -> Result<KMeans<T>> {
    if dim == 0 || points.len() % dim != 0 {
        return invalid("point buffer does not match the dimension");
    }
    let n = points.len() / dim;
    if k == 0 {
        return invalid("k-means needs k >= 1");
    }
    if k > n {
        return invalid(format!("k-means asked for {k} clusters over {n} points"));
    }
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_plus_plus(points, dim, k, &mut rng);
    let mut assignment = vec![0usize; n];
    let mut dists = vec![T::zero(); n];
    let mut prev_inertia = T::infinity();
    let mut inertia = T::zero();
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        inertia = T::zero();
        for i in 0..n {
            let (c, d) = nearest(row(i), &centroids, dim);
            assignment[i] = c;
            dists[i] = d;
            inertia += d;
        }
        let converged = inertia == T::zero()
            || (prev_inertia.is_finite()
                && (prev_inertia - inertia).abs() <= T::lit(RELATIVE_TOLERANCE) * prev_inertia);
        if converged {
            break;
        }
        prev_inertia = inertia;

        let mut sums = vec![T::zero(); k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assignment[i];
            counts[c] += 1;
            for (s, x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(row(i)) {
                *s += *x;
            }
        }
        let mut taken = vec![false; n];
        for c in 0..k {
            if counts[c] > 0 {
                let inv = T::one() / T::lit(counts[c] as f64);
                for (dst, s) in centroids[c * dim..(c + 1) * dim].iter_mut().zip(&sums[c * dim..]) {
                    *dst = *s * inv;
                }
            } else {
                // re-seed an empty cluster at the worst-fit point
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .fold(None, |best: Option<usize>, i| match best {
                        Some(b) if dists[b] >= dists[i] => Some(b),
                        _ => Some(i),
                    })
                    .expect("k <= n");
                taken[far] = true;
                dists[far] = T::zero();
                centroids[c * dim..(c + 1) * dim].copy_from_slice(row(far));
            }
        }
    }

    Ok(KMeans {
        dim,
        centroids,
        assignment,
        inertia,
        iterations,
    })
}
