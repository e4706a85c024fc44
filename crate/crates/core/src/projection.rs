//! 2-stable (Gaussian) random projection and the projected-dimension selector.

use crate::error::{invalid, Result};
use crate::vector::{dot, Dataset, PointId};
use crate::Scalar;

/// Largest projected dimension considered by [`optimized_dimension`].
pub const MAX_PROJECTED_DIM: usize = 30;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform in (0, 1], keyed only by `(seed, counter)`.
#[inline]
fn keyed_unit(seed: u64, counter: u64) -> f64 {
    let bits = mix64(mix64(seed).wrapping_add(mix64(counter ^ 0x5851_f42d_4c95_7f2d)));
    ((bits >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64)
}

/// Standard-normal draw for matrix entry `(row, col)`; independent of the
/// order in which entries are generated.
pub fn gaussian_entry(seed: u64, d: usize, row: usize, col: usize) -> f64 {
    let e = (row as u64) * (d as u64) + col as u64;
    let u1 = keyed_unit(seed, 2 * e);
    let u2 = keyed_unit(seed, 2 * e + 1);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// `m` rows of `d` i.i.d. standard-normal entries, reproducible from `seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix<T: Scalar> {
    d: usize,
    m: usize,
    seed: u64,
    rows: Vec<T>,
}

impl<T: Scalar> ProjectionMatrix<T> {
    pub fn new(d: usize, m: usize, seed: u64) -> Result<Self> {
        if d == 0 || m == 0 {
            return invalid(format!("projection needs d >= 1 and m >= 1 (got d={d}, m={m})"));
        }
        if m > 32 {
            return invalid(format!("projected dimension {m} exceeds the 32-bit code width"));
        }
        let mut rows = Vec::with_capacity(m * d);
        for r in 0..m {
            for c in 0..d {
                rows.push(T::lit(gaussian_entry(seed, d, r, c)));
            }
        }
        Ok(Self { d, m, seed, rows })
    }

    /// Rebuilds a matrix from stored entries (used when loading an index).
    pub(crate) fn from_parts(d: usize, m: usize, seed: u64, rows: Vec<T>) -> Self {
        debug_assert_eq!(rows.len(), d * m);
        Self { d, m, seed, rows }
    }

    pub fn original_dim(&self) -> usize {
        self.d
    }

    pub fn projected_dim(&self) -> usize {
        self.m
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.rows[i * self.d..(i + 1) * self.d]
    }

    pub(crate) fn entries(&self) -> &[T] {
        &self.rows
    }

    pub fn project(&self, point: &[T]) -> Result<Vec<T>> {
        if point.len() != self.d {
            return invalid(format!(
                "cannot project a {}-dimensional point with a {}-dimensional matrix",
                point.len(),
                self.d
            ));
        }
        let mut out = Vec::with_capacity(self.m);
        self.project_into(point, &mut out);
        Ok(out)
    }

    pub(crate) fn project_into(&self, point: &[T], out: &mut Vec<T>) {
        out.extend(self.rows.chunks_exact(self.d).map(|r| dot(r, point)));
    }
}

/// Shorthand for [`ProjectionMatrix::new`].
pub fn make_projection_matrix<T: Scalar>(d: usize, m: usize, seed: u64) -> Result<ProjectionMatrix<T>> {
    ProjectionMatrix::new(d, m, seed)
}

/// Every point of a dataset mapped through one projection matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedDataset<T: Scalar> {
    m: usize,
    matrix_seed: u64,
    coords: Vec<T>,
}

impl<T: Scalar> ProjectedDataset<T> {
    pub fn project(matrix: &ProjectionMatrix<T>, dataset: &Dataset<T>) -> Result<Self> {
        if dataset.dim() != matrix.original_dim() {
            return invalid(format!(
                "dataset dimension {} does not match matrix dimension {}",
                dataset.dim(),
                matrix.original_dim()
            ));
        }
        let mut coords = Vec::with_capacity(dataset.len() * matrix.projected_dim());
        for p in dataset.points() {
            matrix.project_into(p, &mut coords);
        }
        Ok(Self {
            m: matrix.projected_dim(),
            matrix_seed: matrix.seed(),
            coords,
        })
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn matrix_seed(&self) -> u64 {
        self.matrix_seed
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.m
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, id: PointId) -> &[T] {
        let s = id as usize * self.m;
        &self.coords[s..s + self.m]
    }

    /// Row-major coordinates.
    pub fn coords(&self) -> &[T] {
        &self.coords
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[T]> + '_ {
        self.coords.chunks_exact(self.m)
    }
}

/// Projected dimension minimising `f(m) = 2^m (m + 1) + n / 2^m` over
/// `m ∈ [1, 30]`; ties go to the smaller `m`.
pub fn optimized_dimension(n: u64) -> usize {
    let n = n.max(1) as f64;
    let cost = |m: usize| {
        let g = (1u64 << m) as f64;
        g * (m as f64 + 1.0) + n / g
    };
    let mut best = 1;
    let mut best_cost = cost(1);
    for m in 2..=MAX_PROJECTED_DIM {
        let c = cost(m);
        if c < best_cost {
            best = m;
            best_cost = c;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vector::sq_dist;
    use proptest::prelude::*;

    #[test]
    fn same_seed_same_matrix() {
        let a = ProjectionMatrix::<f64>::new(300, 6, 42).unwrap();
        let b = ProjectionMatrix::<f64>::new(300, 6, 42).unwrap();
        assert_eq!(a, b);
        let c = ProjectionMatrix::<f64>::new(300, 6, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn entries_do_not_depend_on_shape_order() {
        // entry (r, c) is keyed by its linear position only
        let a = ProjectionMatrix::<f64>::new(10, 3, 5).unwrap();
        assert_eq!(a.row(2)[7], gaussian_entry(5, 10, 2, 7));
    }

    #[test]
    fn rejects_zero_dims() {
        assert!(ProjectionMatrix::<f64>::new(0, 3, 1).is_err());
        assert!(ProjectionMatrix::<f64>::new(3, 0, 1).is_err());
    }

    #[test]
    fn entry_moments() {
        let mat = ProjectionMatrix::<f64>::new(100_000, 10, 9).unwrap();
        let n = mat.entries().len() as f64;
        let mean = mat.entries().iter().sum::<f64>() / n;
        let var = mat.entries().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn rows_are_uncorrelated() {
        let mat = ProjectionMatrix::<f64>::new(10_000, 4, 3).unwrap();
        for i in 0..4 {
            for j in (i + 1)..4 {
                let (a, b) = (mat.row(i), mat.row(j));
                let n = a.len() as f64;
                let ma = a.iter().sum::<f64>() / n;
                let mb = b.iter().sum::<f64>() / n;
                let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
                let sa = (a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / n).sqrt();
                let sb = (b.iter().map(|x| (x - mb).powi(2)).sum::<f64>() / n).sqrt();
                assert!((cov / (sa * sb)).abs() < 0.05);
            }
        }
    }

    #[test]
    fn zero_vector_projects_to_zero() {
        let mat = ProjectionMatrix::<f64>::new(7, 3, 1).unwrap();
        assert_eq!(mat.project(&[0.0; 7]).unwrap(), vec![0.0; 3]);
        assert!(mat.project(&[0.0; 6]).is_err());
    }

    #[test]
    fn projected_difference_is_normal_with_distance_variance() {
        // f(o) - f(q) over fresh matrices ~ N(0, dis²(o, q))
        let o: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        let q: Vec<f64> = (0..20).map(|i| (i as f64 * 0.11).cos()).collect();
        let d2 = sq_dist(&o, &q);
        let samples: Vec<f64> = (0..2000u64)
            .map(|s| {
                let mat = ProjectionMatrix::<f64>::new(20, 1, 1000 + s).unwrap();
                mat.project(&o).unwrap()[0] - mat.project(&q).unwrap()[0]
            })
            .collect();
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!((var / d2 - 1.0).abs() < 0.1, "var {var} vs {d2}");
        // normality: skewness and excess kurtosis near zero
        let sd = var.sqrt();
        let skew = samples.iter().map(|x| ((x - mean) / sd).powi(3)).sum::<f64>() / n;
        let kurt = samples.iter().map(|x| ((x - mean) / sd).powi(4)).sum::<f64>() / n - 3.0;
        assert!(skew.abs() < 0.2, "skew {skew}");
        assert!(kurt.abs() < 0.4, "kurtosis {kurt}");
    }

    #[test]
    fn optimized_dimension_reported_settings() {
        assert_eq!(optimized_dimension(17_770), 6);
        assert_eq!(optimized_dimension(624_961), 8);
        assert_eq!(optimized_dimension(31_420), 6);
        assert_eq!(optimized_dimension(11_164_866), 10);
    }

    #[test]
    fn optimized_dimension_brute_force() {
        fn oracle(n: u64) -> usize {
            // f(m) * 2^30 is an exact integer for m <= 30
            let scaled = |m: u32| -> u128 {
                ((1u128 << m) * (m as u128 + 1) << 30) + ((n as u128) << (30 - m))
            };
            (1..=30u32).min_by_key(|&m| (scaled(m), m)).unwrap() as usize
        }
        assert_eq!(oracle(16), 1);
        assert_eq!(optimized_dimension(16), 1);
        for n in [1u64, 2, 3, 50, 64, 100, 1000, 5000, 10_000, 123_456, 1 << 20] {
            assert_eq!(optimized_dimension(n), oracle(n), "n={n}");
        }
    }

    #[test]
    fn optimized_dimension_monotone_over_powers_of_two() {
        let mut prev = 0;
        for j in 0..40 {
            let m = optimized_dimension(1u64 << j);
            assert!(m >= prev);
            prev = m;
        }
    }

    proptest! {
        #[test]
        fn projection_is_linear(
            a in prop::collection::vec(-10.0f64..10.0, 12),
            b in prop::collection::vec(-10.0f64..10.0, 12),
            alpha in -3.0f64..3.0,
            beta in -3.0f64..3.0,
            seed in any::<u64>(),
        ) {
            let mat = ProjectionMatrix::<f64>::new(12, 5, seed).unwrap();
            let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| alpha * x + beta * y).collect();
            let pa = mat.project(&a).unwrap();
            let pb = mat.project(&b).unwrap();
            let pc = mat.project(&combo).unwrap();
            for i in 0..5 {
                let expect = alpha * pa[i] + beta * pb[i];
                let scale = (alpha * pa[i]).abs() + (beta * pb[i]).abs();
                prop_assert!((pc[i] - expect).abs() <= 1e-9 * scale.max(1.0));
            }
        }
    }
}
