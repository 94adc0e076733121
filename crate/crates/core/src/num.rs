//! Shared numeric plumbing: double-double arithmetic, compensated summation,
//! and the scalar abstraction for precision-selectable polynomial recursions.

use num_rational::BigRational;
use num_traits::ToPrimitive;
use twofloat::TwoFloat;

/// Extended-precision scalar (roughly 106-bit significand).
pub type Dd = TwoFloat;

pub fn dd(x: f64) -> Dd {
    TwoFloat::from(x)
}

pub fn dd_to_f64(x: Dd) -> f64 {
    f64::from(x)
}

/// Neumaier-compensated sum. Returns the sum and a crude noise estimate
/// (machine epsilon times the sum of magnitudes).
pub fn neumaier_sum<I: IntoIterator<Item = f64>>(xs: I) -> (f64, f64) {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    let mut mag = 0.0f64;
    for x in xs {
        mag += x.abs();
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    (sum + comp, mag * f64::EPSILON)
}

/// Scalar abstraction over f64 / double-double / exact rational, enough for
/// the positive-coefficient polynomial recursions used in this crate.
pub trait Scalar: Clone {
    fn zero() -> Self;
    fn one() -> Self;
    fn from_rational(r: &BigRational) -> Self;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn as_f64(&self) -> f64;
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn from_rational(r: &BigRational) -> Self {
        ToPrimitive::to_f64(r).unwrap_or(f64::NAN)
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn as_f64(&self) -> f64 {
        *self
    }
}

impl Scalar for Dd {
    fn zero() -> Self {
        TwoFloat::from(0.0)
    }
    fn one() -> Self {
        TwoFloat::from(1.0)
    }
    fn from_rational(r: &BigRational) -> Self {
        let hi = ToPrimitive::to_f64(r).unwrap_or(f64::NAN);
        if !hi.is_finite() {
            return TwoFloat::from(hi);
        }
        let resid = r - BigRational::from_float(hi).expect("finite");
        let lo = ToPrimitive::to_f64(&resid).unwrap_or(0.0);
        TwoFloat::new_add(hi, lo)
    }
    fn add(&self, o: &Self) -> Self {
        *self + *o
    }
    fn sub(&self, o: &Self) -> Self {
        *self - *o
    }
    fn mul(&self, o: &Self) -> Self {
        *self * *o
    }
    fn as_f64(&self) -> f64 {
        f64::from(*self)
    }
}

impl Scalar for BigRational {
    fn zero() -> Self {
        num_traits::Zero::zero()
    }
    fn one() -> Self {
        num_traits::One::one()
    }
    fn from_rational(r: &BigRational) -> Self {
        r.clone()
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn as_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

/// Full-precision reciprocal. twofloat's `TwoFloat / TwoFloat` operator loses
/// the low word (its residual `1 - b*th` is formed without FMA), so divisions
/// between double-doubles go through one Newton step on the correctly-rounded
/// scalar reciprocal instead.
pub fn dd_recip(y: Dd) -> Dd {
    let r0 = TwoFloat::new_div(1.0, y.hi());
    let resid = 1.0 - y * r0;
    r0 + r0 * resid
}

/// Full-precision quotient of double-doubles.
pub fn dd_div(a: Dd, b: Dd) -> Dd {
    a * dd_recip(b)
}

/// Horner evaluation of a polynomial (ascending coefficients) in dd.
pub fn horner_dd(coeffs: &[f64], x: Dd) -> Dd {
    let mut acc = TwoFloat::from(0.0);
    for &c in coeffs.iter().rev() {
        acc = acc * x + c;
    }
    acc
}

// ln 2 split into two limbs.
const LN2_HI: f64 = 0.693_147_180_559_945_3;
const LN2_LO: f64 = 2.319_046_813_846_299_6e-17;

/// e^(-y) for y >= 0 in full double-double precision (twofloat's own exp is
/// only ~1e-12 accurate). Argument reduction y = k ln2 + r, Taylor on r,
/// exact scaling by 2^(-k).
pub fn dd_exp_neg(y: Dd) -> Dd {
    debug_assert!(y.hi() >= 0.0);
    if y.hi() > 745.0 {
        return TwoFloat::from(0.0);
    }
    if y.hi() == 0.0 {
        return TwoFloat::from(1.0);
    }
    let k = (y.hi() / std::f64::consts::LN_2).round();
    // r = k ln2 - y  (so e^{-y} = 2^{-k} e^{r}), |r| <= ln2/2
    let r = TwoFloat::new_mul(k, LN2_HI) + TwoFloat::new_mul(k, LN2_LO) - y;
    let mut term = TwoFloat::from(1.0);
    let mut acc = TwoFloat::from(1.0);
    for p in 1..40 {
        term = term * r / (p as f64);
        acc += term;
        if term.hi().abs() < 1e-35 {
            break;
        }
    }
    // scaling by a power of two is exact outside the subnormal range
    let scale = 2f64.powi((-k as i32).max(-1074));
    TwoFloat::new_add(acc.hi() * scale, acc.lo() * scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neumaier_recovers_cancelled_tail() {
        let xs = [1e16, 1.0, -1e16, 1.0];
        let (s, _) = neumaier_sum(xs.iter().copied());
        assert_eq!(s, 2.0);
    }

    #[test]
    fn dd_from_rational_is_two_limbed() {
        let r = BigRational::new(1.into(), 3.into());
        let x = <Dd as Scalar>::from_rational(&r);
        // low word recovers the sub-ulp residual of 1/3
        let back = x - 1.0 / 3.0;
        assert!(f64::from(back).abs() < 3e-17);
        assert!(f64::from(back).abs() > 0.0);
        // x * 3 - 1 should vanish to dd precision
        let probe = x * 3.0 - 1.0;
        assert!(f64::from(probe).abs() < 1e-30);
    }

    #[test]
    fn dd_div_recovers_low_word() {
        let q = dd_div(dd(1.0), dd(3.0));
        let probe = q * 3.0 - 1.0;
        assert!(f64::from(probe).abs() < 1e-30, "{:e}", f64::from(probe));
    }

    #[test]
    fn dd_alternating_series_reaches_dd_precision() {
        // e^(-24) via the alternating Taylor series: 17 orders of cancellation
        let tau = dd(24.0);
        let mut term = dd(1.0);
        let mut acc = dd(0.0);
        for p in 0..220 {
            acc = acc + term;
            term = -(term * tau) / (p as f64 + 1.0);
        }
        let expect = f64::from(dd_exp_neg(dd(24.0)));
        let rel = (f64::from(acc) - expect).abs() / expect;
        assert!(rel < 1e-11, "rel={rel:e}");
    }

    #[test]
    fn dd_exp_neg_matches_reference_values() {
        // two-limb references from 60-digit arithmetic
        let cases = [
            (0.5f64, 0.6065306597126334, -6.593178415491414e-19),
            (2.0, 0.1353352832366127, -1.042381423288669e-17),
            (10.0, 4.5399929762484854e-05, -2.637554055327531e-21),
            (100.0, 3.720075976020836e-44, -1.5705024907732008e-60),
        ];
        for (x, hi, lo) in cases {
            let got = dd_exp_neg(dd(x));
            let rel = f64::from(got - TwoFloat::new_add(hi, lo)).abs() / hi;
            assert!(rel < 1e-28, "x={x}: rel={rel:e}");
        }
    }

    #[test]
    fn dd_exp_neg_functional_identities() {
        for &(a, b) in &[(0.3, 1.9), (5.0, 7.25), (20.0, 13.5)] {
            let lhs = dd_exp_neg(dd(a) + dd(b));
            let rhs = dd_exp_neg(dd(a)) * dd_exp_neg(dd(b));
            let rel = f64::from(lhs - rhs).abs() / f64::from(rhs);
            assert!(rel < 1e-29, "a={a} b={b}: rel={rel:e}");
        }
    }
}
