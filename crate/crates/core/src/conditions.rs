//! Stopping rules for the search: the deterministic norm bound (Condition A),
//! the chi-square bound (Condition B), the group test used by Quick-Probe
//! (Test A), and the compensation radius `r′`.

use crate::chi_square::ChiSquare;
use crate::error::{contract, invalid, Result};
use crate::projection::ProjectionMatrix;
use crate::vector::{dot, l1_norm};
use crate::Scalar;

/// Everything the conditions need to know about one query.
#[derive(Debug, Clone)]
pub struct QueryContext<T: Scalar> {
    pub q: Vec<T>,
    pub pq: Vec<T>,
    pub sq_norm_q: T,
    pub l1_norm_q: T,
    /// Approximation ratio, `0 < c < 1`.
    pub c: T,
    /// Guaranteed probability, `0 < p < 1`.
    pub p: T,
    pub k: usize,
    /// `‖o_M‖²`, the largest squared norm in the dataset.
    pub max_sq_norm: T,
    pub m: usize,
    pub matrix_seed: u64,
    chi: ChiSquare,
}

impl<T: Scalar> QueryContext<T> {
    pub fn new(
        matrix: &ProjectionMatrix<T>,
        max_sq_norm: T,
        q: &[T],
        c: T,
        p: T,
        k: usize,
    ) -> Result<Self> {
        if !(c > T::zero() && c < T::one()) {
            return invalid(format!("approximation ratio c={c} must lie in (0, 1)"));
        }
        if !(p > T::zero() && p < T::one()) {
            return invalid(format!("probability p={p} must lie in (0, 1)"));
        }
        if k == 0 {
            return invalid("k must be at least 1");
        }
        if q.iter().any(|x| !x.is_finite()) {
            return invalid("query has a non-finite coordinate");
        }
        let pq = matrix.project(q)?;
        Ok(Self {
            sq_norm_q: dot(q, q),
            l1_norm_q: l1_norm(q),
            q: q.to_vec(),
            pq,
            c,
            p,
            k,
            max_sq_norm,
            m: matrix.projected_dim(),
            matrix_seed: matrix.seed(),
            chi: ChiSquare::new(matrix.projected_dim() as u32)?,
        })
    }

    pub fn chi_square(&self) -> ChiSquare {
        self.chi
    }

    /// `‖o_M‖² + ‖q‖² − 2·ip/c`.
    pub fn denominator(&self, ip: T) -> T {
        self.max_sq_norm + self.sq_norm_q - (ip + ip) / self.c
    }

    /// Condition A: the seen point with inner product `ip` certifies a
    /// c-approximate answer deterministically.
    pub fn condition_a(&self, ip: T) -> bool {
        self.denominator(ip) <= T::zero()
    }

    /// Condition B: `Ψ_m(proj_dist_sq / D) ≥ p` with `D` from `ip_max`.
    /// Requires Condition A to be false for `ip_max`.
    pub fn condition_b(&self, proj_dist_sq: T, ip_max: T) -> Result<bool> {
        let denom = self.denominator(ip_max);
        if denom <= T::zero() {
            return contract("condition B evaluated while condition A holds");
        }
        Ok(self.chi.cdf(proj_dist_sq / denom) >= self.p)
    }

    /// Test A for a code group with lower bound `lb` whose smallest member
    /// 1-norm is `min_l1`.
    pub fn test_a(&self, lb: T, min_l1: T) -> bool {
        let ratio = self.probe_value(lb, min_l1);
        ratio.is_infinite() || self.chi.cdf(ratio) >= self.p
    }

    /// `LB² / (c·(‖o‖₁ + ‖q‖₁)²)`; `+∞` when both 1-norms are zero.
    pub fn probe_value(&self, lb: T, l1: T) -> T {
        let s = l1 + self.l1_norm_q;
        if s <= T::zero() {
            return T::infinity();
        }
        lb * lb / (self.c * s * s)
    }

    /// `r′ = √(Ψ_m⁻¹(p)·D)`.
    pub fn extended_radius(&self, ip_max: T) -> Result<T> {
        let denom = self.denominator(ip_max);
        if denom <= T::zero() {
            return contract("extended radius requested while condition A holds");
        }
        let mut r = (self.chi.inv_cdf(self.p)? * denom).sqrt();
        // round outward so that Condition B holds at r′ itself
        let step = T::one() + T::epsilon() * T::lit(4.0);
        for _ in 0..64 {
            if self.chi.cdf(r * r / denom) >= self.p {
                break;
            }
            r = r * step;
        }
        Ok(r)
    }
}

pub fn condition_a<T: Scalar>(ctx: &QueryContext<T>, ip: T) -> bool {
    ctx.condition_a(ip)
}

pub fn condition_b<T: Scalar>(ctx: &QueryContext<T>, proj_dist_sq: T, ip_max: T) -> Result<bool> {
    ctx.condition_b(proj_dist_sq, ip_max)
}

pub fn test_a<T: Scalar>(ctx: &QueryContext<T>, lb: T, min_l1: T) -> bool {
    ctx.test_a(lb, min_l1)
}

pub fn extended_radius<T: Scalar>(ctx: &QueryContext<T>, ip_max: T) -> Result<T> {
    ctx.extended_radius(ip_max)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::Error;
    use proptest::prelude::*;

    /// Context with hand-set norms over an `m`-dimensional identity-free matrix.
    pub(crate) fn ctx(m: usize, max_sq: f64, sq_q: f64, l1_q: f64, c: f64, p: f64) -> QueryContext<f64> {
        let matrix = ProjectionMatrix::new(1, m, 0).unwrap();
        let mut ctx = QueryContext::new(&matrix, max_sq, &[1.0], c, p, 1).unwrap();
        ctx.sq_norm_q = sq_q;
        ctx.l1_norm_q = l1_q;
        ctx
    }

    #[test]
    fn condition_a_examples() {
        let x = ctx(6, 1.0, 1.0, 1.0, 0.9, 0.5);
        assert!(x.condition_a(0.95));
        assert!(!x.condition_a(0.8));
        // boundary ip = c(‖o_M‖² + ‖q‖²)/2, chosen exactly representable
        let y = ctx(6, 1.0, 1.0, 1.0, 0.5, 0.5);
        assert!(y.condition_a(0.5));
    }

    #[test]
    fn condition_b_examples() {
        // D = 4 + 1 - 2·0.9/0.9 = 3; Ψ₂(6/3) = 1 - e⁻¹ ≈ 0.632
        let x = ctx(2, 4.0, 1.0, 1.0, 0.9, 0.6);
        assert!((x.denominator(0.9) - 3.0).abs() < 1e-12);
        assert!(x.condition_b(6.0, 0.9).unwrap());
        let y = ctx(2, 4.0, 1.0, 1.0, 0.9, 0.7);
        assert!(!y.condition_b(6.0, 0.9).unwrap());
        assert!(!x.condition_b(0.0, 0.9).unwrap());
    }

    #[test]
    fn condition_b_rejects_nonpositive_denominator() {
        let x = ctx(2, 1.0, 1.0, 1.0, 0.9, 0.6);
        assert!(matches!(x.condition_b(1.0, 0.95), Err(Error::ContractViolation(_))));
        assert!(matches!(x.extended_radius(0.95), Err(Error::ContractViolation(_))));
    }

    #[test]
    fn test_a_examples() {
        let x = ctx(2, 1.0, 1.0, 1.5, 0.9, 0.5);
        assert!(!x.test_a(0.0, 2.0));
        // lb² = 2 ln2 · c · (min_l1 + ‖q‖₁)² sits on Ψ₂⁻¹(0.5)
        let lb = (2.0 * std::f64::consts::LN_2 * 0.9 * 3.5f64.powi(2)).sqrt() * (1.0 + 1e-12);
        assert!(x.test_a(lb, 2.0));
        assert!(x.test_a(1e9, 1.0));
        let z = ctx(2, 1.0, 1.0, 0.0, 0.9, 0.99);
        assert!(z.test_a(0.0, 0.0));
    }

    #[test]
    fn extended_radius_examples() {
        // Ψ₂⁻¹(1 - e⁻¹) = 2, D = 3
        let p = 1.0 - (-1.0f64).exp();
        let x = ctx(2, 4.0, 1.0, 1.0, 0.9, p);
        assert!((x.extended_radius(0.9).unwrap() - 6f64.sqrt()).abs() < 1e-8);
        let tiny = ctx(2, 4.0, 1.0, 1.0, 0.9, 1e-12);
        assert!(tiny.extended_radius(0.9).unwrap() < 1e-5);
        let mut prev = 0.0;
        for i in 1..100 {
            let r = ctx(6, 4.0, 1.0, 1.0, 0.9, i as f64 / 100.0).extended_radius(0.9).unwrap();
            assert!(r > prev);
            prev = r;
        }
    }

    #[test]
    fn context_validation() {
        let matrix = ProjectionMatrix::<f64>::new(3, 2, 0).unwrap();
        let q = [1.0, 2.0, 3.0];
        assert!(QueryContext::new(&matrix, 1.0, &q, 1.0, 0.5, 1).is_err());
        assert!(QueryContext::new(&matrix, 1.0, &q, 0.9, 0.0, 1).is_err());
        assert!(QueryContext::new(&matrix, 1.0, &q, 0.9, 0.5, 0).is_err());
        assert!(QueryContext::new(&matrix, 1.0, &q[..2], 0.9, 0.5, 1).is_err());
        let ok = QueryContext::new(&matrix, 1.0, &q, 0.9, 0.5, 3).unwrap();
        assert_eq!(ok.sq_norm_q, 14.0);
        assert_eq!(ok.l1_norm_q, 6.0);
        assert_eq!(ok.pq, matrix.project(&q).unwrap());
    }

    proptest! {
        #[test]
        fn condition_b_monotone(
            m in 1usize..12,
            d1 in 0.0f64..50.0,
            d2 in 0.0f64..50.0,
            p1 in 0.01f64..0.99,
            p2 in 0.01f64..0.99,
        ) {
            let (dlo, dhi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            let (plo, phi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
            let a = ctx(m, 5.0, 2.0, 1.0, 0.8, plo);
            if a.condition_b(dlo, 0.5).unwrap() {
                prop_assert!(a.condition_b(dhi, 0.5).unwrap());
            }
            let b = ctx(m, 5.0, 2.0, 1.0, 0.8, phi);
            if b.condition_b(dlo, 0.5).unwrap() {
                prop_assert!(a.condition_b(dlo, 0.5).unwrap());
            }
        }

        #[test]
        fn extended_radius_is_condition_b_boundary(
            m in 1usize..12,
            p in 0.05f64..0.95,
            ip in -2.0f64..1.0,
        ) {
            let x = ctx(m, 5.0, 2.0, 1.0, 0.8, p);
            let r = x.extended_radius(ip).unwrap();
            let value = x.chi_square().cdf(r * r / x.denominator(ip));
            prop_assert!((value - p).abs() <= 1e-9);
        }
    }
}
