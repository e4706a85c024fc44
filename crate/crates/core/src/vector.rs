//! Dense vectors, the two distance primitives, and the dataset container.
//!
//! All sums accumulate strictly left to right so that results are
//! reproducible bit for bit across runs and platforms.

use std::ops::Deref;

use crate::error::{invalid, Result};
use crate::Scalar;

/// Dense identifier of a point inside a [`Dataset`]; ids are `0..n`.
pub type PointId = u32;

/// A finite, non-empty dense vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector<T: Scalar> {
    coords: Vec<T>,
}

impl<T: Scalar> Vector<T> {
    pub fn new(coords: Vec<T>) -> Result<Self> {
        if coords.is_empty() {
            return invalid("vector must have at least one coordinate");
        }
        if let Some(i) = coords.iter().position(|x| !x.is_finite()) {
            return invalid(format!("coordinate {i} is not finite"));
        }
        Ok(Self { coords })
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        Self::new(vec![T::zero(); dim])
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.coords
    }

    pub fn into_inner(self) -> Vec<T> {
        self.coords
    }
}

impl<T: Scalar> Deref for Vector<T> {
    type Target = [T];

    fn deref(&self) -> &[T] {
        &self.coords
    }
}

impl<T: Scalar> AsRef<[T]> for Vector<T> {
    fn as_ref(&self) -> &[T] {
        &self.coords
    }
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return invalid(format!("dimension mismatch: {a} vs {b}"));
    }
    Ok(())
}

/// `Σ aᵢbᵢ`, accumulated left to right.
pub fn inner_product<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    check_dims(a.len(), b.len())?;
    Ok(dot(a, b))
}

/// Euclidean distance `√Σ(aᵢ−bᵢ)²`.
pub fn l2_distance<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    check_dims(a.len(), b.len())?;
    Ok(sq_dist(a, b).sqrt())
}

/// Squared Euclidean distance.
pub fn sq_l2_distance<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    check_dims(a.len(), b.len())?;
    Ok(sq_dist(a, b))
}

// Unchecked kernels for callers that already validated dimensions.

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b) {
        acc += *x * *y;
    }
    acc
}

#[inline]
pub(crate) fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b) {
        let diff = *x - *y;
        acc += diff * diff;
    }
    acc
}

#[inline]
pub(crate) fn dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    sq_dist(a, b).sqrt()
}

pub(crate) fn l1_norm<T: Scalar>(a: &[T]) -> T {
    let mut acc = T::zero();
    for x in a {
        acc += x.abs();
    }
    acc
}

/// Per-point squared 2-norms and 1-norms plus the maximum squared norm.
#[derive(Debug, Clone, PartialEq)]
pub struct NormTable<T: Scalar> {
    pub sq_l2: Vec<T>,
    pub l1: Vec<T>,
    pub max_sq_l2: T,
    /// Lowest id attaining `max_sq_l2`.
    pub max_sq_l2_id: PointId,
}

impl<T: Scalar> NormTable<T> {
    /// Builds the table over `n = coords.len() / dim` row-major points.
    pub fn build(coords: &[T], dim: usize) -> Result<Self> {
        if dim == 0 {
            return invalid("dimension must be positive");
        }
        if coords.is_empty() {
            return invalid("cannot build norms of an empty dataset");
        }
        if coords.len() % dim != 0 {
            return invalid("coordinate buffer is not a multiple of the dimension");
        }
        let n = coords.len() / dim;
        let mut sq_l2 = Vec::with_capacity(n);
        let mut l1 = Vec::with_capacity(n);
        let mut max_sq_l2 = T::neg_infinity();
        let mut max_sq_l2_id = 0;
        for (i, row) in coords.chunks_exact(dim).enumerate() {
            let sq = dot(row, row);
            // strict > keeps the lowest id on ties
            if sq > max_sq_l2 {
                max_sq_l2 = sq;
                max_sq_l2_id = i as PointId;
            }
            sq_l2.push(sq);
            l1.push(l1_norm(row));
        }
        Ok(Self {
            sq_l2,
            l1,
            max_sq_l2,
            max_sq_l2_id,
        })
    }

    pub fn len(&self) -> usize {
        self.sq_l2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sq_l2.is_empty()
    }
}

/// `n` points of a common dimension `d`, stored row-major, with ids `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T: Scalar> {
    dim: usize,
    coords: Vec<T>,
    norms: NormTable<T>,
}

impl<T: Scalar> Dataset<T> {
    pub fn from_flat(dim: usize, coords: Vec<T>) -> Result<Self> {
        if let Some(i) = coords.iter().position(|x| !x.is_finite()) {
            return invalid(format!(
                "point {} has a non-finite coordinate",
                i / dim.max(1)
            ));
        }
        if coords.len() / dim.max(1) > PointId::MAX as usize {
            return invalid("too many points for 32-bit ids");
        }
        let norms = NormTable::build(&coords, dim)?;
        Ok(Self { dim, coords, norms })
    }

    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return invalid("cannot build an empty dataset");
        };
        let dim = first.as_ref().len();
        let mut coords = Vec::with_capacity(dim * rows.len());
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return invalid(format!(
                    "point {i} has dimension {} but expected {dim}",
                    r.len()
                ));
            }
            coords.extend_from_slice(r);
        }
        Self::from_flat(dim, coords)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, id: PointId) -> &[T] {
        let start = id as usize * self.dim;
        &self.coords[start..start + self.dim]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[T]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[T] {
        &self.coords
    }

    pub fn norms(&self) -> &NormTable<T> {
        &self.norms
    }

    /// Keeps the listed points, re-numbering them densely in the given order.
    pub fn subset(&self, ids: &[PointId]) -> Result<Self> {
        let mut coords = Vec::with_capacity(ids.len() * self.dim);
        for &id in ids {
            if id as usize >= self.len() {
                return invalid(format!("point id {id} out of range"));
            }
            coords.extend_from_slice(self.point(id));
        }
        Self::from_flat(self.dim, coords)
    }
}

/// Standalone form of [`NormTable::build`] over a dataset.
pub fn build_norm_table<T: Scalar>(dataset: &Dataset<T>) -> Result<NormTable<T>> {
    NormTable::build(dataset.coords(), dataset.dim())
}
