//! Generalized inverse Gaussian fixtures: derivative zero counts by exact
//! Sturm counting on the log-derivative recurrence.
//!
//! With density proportional to `x^(lambda-1) exp(-(chi/x + psi x))` on
//! (0, ∞), every derivative factors as `f^(n) = f * P_n(x) / x^(2n)` where
//! `P_1 = -psi x^2 + (lambda-1) x + chi` and
//! `P_(n+1) = x^2 P_n' - 2n x P_n + P_n P_1`. Since f is positive, the zeros
//! of the n-th derivative are the positive roots of `P_n`, counted exactly
//! over the rationals.

use num_rational::BigRational;
use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rational::{rational_from_f64, IntPoly, SturmChain};
use crate::shape::{classification_from_counts, OrderRecord, ShapeReport};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GigParams {
    pub lambda: f64,
    pub chi: f64,
    pub psi: f64,
}

impl GigParams {
    pub fn new(lambda: f64, chi: f64, psi: f64) -> Result<Self> {
        let p = GigParams { lambda, chi, psi };
        p.validate()?;
        Ok(p)
    }

    /// Admissible parameter domain: chi > 0, psi > 0 with any lambda;
    /// chi = 0 needs lambda > 0; psi = 0 needs lambda < 0.
    pub fn validate(&self) -> Result<()> {
        let bad = || Error::GigDomain {
            lambda: self.lambda,
            chi: self.chi,
            psi: self.psi,
        };
        if !(self.chi >= 0.0 && self.psi >= 0.0) {
            return Err(bad());
        }
        match (self.chi > 0.0, self.psi > 0.0) {
            (true, true) => Ok(()),
            (false, true) if self.lambda > 0.0 => Ok(()),
            (true, false) if self.lambda < 0.0 => Ok(()),
            _ => Err(bad()),
        }
    }

    /// All derivatives vanish at 0+ exactly when chi > 0 (the essential
    /// singularity of exp(-chi/x) kills every power).
    pub fn vanishes_at_zero(&self) -> bool {
        self.chi > 0.0
    }
}

fn poly_mul(a: &[BigRational], b: &[BigRational]) -> Vec<BigRational> {
    let mut out = vec![BigRational::zero(); a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        if x.is_zero() {
            continue;
        }
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Numerator polynomial `P_n` of the n-th log-derivative factor.
fn numerator_poly(p: &GigParams, order: u32) -> Vec<BigRational> {
    let lambda = rational_from_f64(p.lambda);
    let chi = rational_from_f64(p.chi);
    let psi = rational_from_f64(p.psi);
    let one = BigRational::from_integer(1.into());
    // P1 = chi + (lambda - 1) x - psi x^2, ascending
    let p1 = vec![chi, &lambda - &one, -psi];
    let mut pn = p1.clone();
    for n in 1..order {
        // P_(n+1) = x^2 P_n' - 2n x P_n + P_n P_1
        let mut next = vec![BigRational::zero(); pn.len() + 2];
        for (j, c) in pn.iter().enumerate() {
            if j >= 1 {
                // x^2 * d/dx: j c_j x^(j+1)
                next[j + 1] += BigRational::from_integer(j.into()) * c;
            }
            next[j + 1] -= BigRational::from_integer((2 * n).into()) * c;
        }
        for (j, c) in poly_mul(&pn, &p1).into_iter().enumerate() {
            next[j] += c;
        }
        while next.len() > 1 && next.last().map(Zero::is_zero).unwrap_or(false) {
            next.pop();
        }
        pn = next;
    }
    pn
}

/// Exact count of the zeros of the n-th derivative of the GIG density on
/// (0, ∞). The count is certified by construction (integer Sturm chain).
pub fn gig_derivative_zeros(p: &GigParams, order: u32) -> Result<(usize, bool)> {
    p.validate()?;
    if order == 0 {
        return Ok((0, true));
    }
    let mut pn = numerator_poly(p, order);
    // roots at x = 0 are outside (0, ∞): strip trailing powers of x
    let leading_zeros = pn.iter().take_while(|c| c.is_zero()).count();
    pn.drain(..leading_zeros);
    if pn.is_empty() || pn.iter().all(Zero::is_zero) {
        return Ok((0, true));
    }
    let chain = SturmChain::new(IntPoly::from_rationals(&pn));
    Ok((chain.count_positive(), true))
}

/// Shape classification of a GIG fixture through the exact zero counts.
pub fn classify_gig(p: &GigParams, max_order: u32) -> Result<ShapeReport> {
    if max_order < 2 {
        return Err(Error::Unsupported("classification needs max_order >= 2".into()));
    }
    let mut orders = Vec::with_capacity(max_order as usize);
    let mut counts = Vec::with_capacity(max_order as usize);
    for order in 1..=max_order {
        let (count, certified) = gig_derivative_zeros(p, order)?;
        counts.push(count);
        orders.push(OrderRecord {
            order,
            zero_count: count,
            certified,
            zeros: Vec::new(),
            pattern: None,
        });
    }
    let endpoints = if p.vanishes_at_zero() {
        max_order as usize
    } else {
        0
    };
    let classification = classification_from_counts(&counts, true, endpoints);
    Ok(ShapeReport {
        orders,
        classification,
        max_order_checked: max_order,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shape::Classification;

    #[test]
    fn acceptance_triples_have_bell_counts() {
        for (chi, psi, lambda) in [(1.0, 1.0, 0.5), (2.0, 0.5, -1.0), (0.5, 2.0, 1.5)] {
            let p = GigParams::new(lambda, chi, psi).unwrap();
            for n in 1..=6u32 {
                let (count, certified) = gig_derivative_zeros(&p, n).unwrap();
                assert!(certified);
                assert_eq!(count, n as usize, "chi={chi} psi={psi} lambda={lambda} n={n}");
            }
        }
    }

    #[test]
    fn gamma_case_is_monotone() {
        let p = GigParams::new(0.5, 0.0, 1.0).unwrap();
        let (count, certified) = gig_derivative_zeros(&p, 1).unwrap();
        assert!(certified);
        assert_eq!(count, 0);
        let report = classify_gig(&p, 4).unwrap();
        assert_eq!(report.classification, Classification::Monotone);
    }

    #[test]
    fn chi_positive_classifies_bell() {
        let p = GigParams::new(0.5, 1.0, 1.0).unwrap();
        let report = classify_gig(&p, 6).unwrap();
        assert_eq!(report.classification, Classification::Bell(6));
    }

    #[test]
    fn second_order_count_from_quartic() {
        let p = GigParams::new(0.5, 1.0, 1.0).unwrap();
        let (count, _) = gig_derivative_zeros(&p, 2).unwrap();
        assert_eq!(count, 2);
    }

    #[test]
    fn domain_validation() {
        assert!(GigParams::new(0.5, 0.0, 0.0).is_err());
        assert!(GigParams::new(-0.5, 0.0, 1.0).is_err());
        assert!(GigParams::new(0.5, -1.0, 1.0).is_err());
        assert!(GigParams::new(-2.0, 1.0, 0.0).is_ok());
    }

    #[test]
    fn randomized_chi_positive_sweep() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        for _ in 0..20 {
            let p = GigParams::new(
                rng.random_range(-2.0..2.0),
                10f64.powf(rng.random_range(-1.0..0.7)),
                10f64.powf(rng.random_range(-1.0..0.7)),
            )
            .unwrap();
            for n in 1..=6u32 {
                let (count, _) = gig_derivative_zeros(&p, n).unwrap();
                assert_eq!(count, n as usize, "params {p:?} n={n}");
            }
        }
    }
}
