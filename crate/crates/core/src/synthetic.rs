//! Seeded Gaussian-mixture datasets for tests and benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{invalid, Result};
use crate::vector::Dataset;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    pub n: usize,
    pub d: usize,
    pub clusters: usize,
    /// Standard deviation of cluster centres around the origin.
    pub centre_spread: f64,
    /// Standard deviation of points around their centre.
    pub cluster_spread: f64,
    /// Added to every coordinate so inner products tend to be positive.
    pub offset: f64,
    pub seed: u64,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        Self {
            n: 10_000,
            d: 100,
            clusters: 20,
            centre_spread: 1.0,
            cluster_spread: 0.5,
            offset: 0.3,
            seed: 0,
        }
    }
}

pub fn gaussian_mixture<T: Scalar>(spec: &MixtureSpec) -> Result<Dataset<T>> {
    if spec.n == 0 || spec.d == 0 || spec.clusters == 0 {
        return invalid("mixture needs n, d and cluster count all positive");
    }
    let centre = Normal::new(spec.offset, spec.centre_spread)
        .map_err(|e| crate::Error::InvalidArgument(e.to_string()))?;
    if !(spec.cluster_spread >= 0.0 && spec.cluster_spread.is_finite()) {
        return invalid("cluster spread must be finite and non-negative");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centres: Vec<f64> = (0..spec.clusters * spec.d).map(|_| centre.sample(&mut rng)).collect();
    let mut coords = Vec::with_capacity(spec.n * spec.d);
    for _ in 0..spec.n {
        let c = rng.random_range(0..spec.clusters);
        for j in 0..spec.d {
            let z: f64 = StandardNormal.sample(&mut rng);
            coords.push(T::lit(centres[c * spec.d + j] + spec.cluster_spread * z));
        }
    }
    Dataset::from_flat(spec.d, coords)
}
