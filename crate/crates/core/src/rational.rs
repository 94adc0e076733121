//! Exact-arithmetic helpers: decimal parsing, integer polynomials, and Sturm
//! chains over the integers for certified real-root counting.

use num_bigint::{BigInt, Sign};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use crate::error::ValidationError;

/// Parse a plain decimal string (optional sign, optional fraction, optional
/// exponent) into an exact rational.
pub fn parse_decimal(s: &str) -> Result<BigRational, ValidationError> {
    let bad = || ValidationError::BadDecimal(s.to_string());
    let t = s.trim();
    if t.is_empty() {
        return Err(bad());
    }
    let (mant, exp10) = match t.find(['e', 'E']) {
        Some(i) => {
            let e: i64 = t[i + 1..].parse().map_err(|_| bad())?;
            (&t[..i], e)
        }
        None => (t, 0),
    };
    let (mant, frac_digits) = match mant.find('.') {
        Some(i) => {
            let int_part = &mant[..i];
            let frac_part = &mant[i + 1..];
            if frac_part.is_empty() && int_part.is_empty() {
                return Err(bad());
            }
            (format!("{int_part}{frac_part}"), frac_part.len() as i64)
        }
        None => (mant.to_string(), 0),
    };
    let digits: BigInt = mant.parse().map_err(|_| bad())?;
    let net = exp10 - frac_digits;
    let ten = BigInt::from(10);
    Ok(if net >= 0 {
        BigRational::from_integer(digits * ten.pow(net as u32))
    } else {
        BigRational::new(digits, ten.pow((-net) as u32))
    })
}

/// Exact conversion of a finite f64 into a rational.
pub fn rational_from_f64(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite input")
}

/// Decompose a finite f64 into (mantissa, 2-exponent) with `x = m * 2^e`.
fn dyadic_parts(x: f64) -> (BigInt, i64) {
    assert!(x.is_finite());
    if x == 0.0 {
        return (BigInt::zero(), 0);
    }
    let bits = x.to_bits();
    let sign = if bits >> 63 == 0 { 1 } else { -1 };
    let exponent = ((bits >> 52) & 0x7ff) as i64;
    let fraction = bits & 0xf_ffff_ffff_ffff;
    let (m, e) = if exponent == 0 {
        (fraction, -1074)
    } else {
        (fraction | (1 << 52), exponent - 1075)
    };
    (BigInt::from(sign) * BigInt::from(m), e)
}

/// Dense integer polynomial, ascending coefficients, no trailing zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct IntPoly(pub Vec<BigInt>);

impl IntPoly {
    pub fn new(mut coeffs: Vec<BigInt>) -> Self {
        while coeffs.len() > 1 && coeffs.last().map(Zero::is_zero).unwrap_or(false) {
            coeffs.pop();
        }
        IntPoly(coeffs)
    }

    /// Clear denominators of rational coefficients into an integer polynomial
    /// (same roots).
    pub fn from_rationals(coeffs: &[BigRational]) -> Self {
        let mut l = BigInt::one();
        for c in coeffs {
            let d = c.denom();
            l = &l / l.gcd(d) * d;
        }
        IntPoly::new(coeffs.iter().map(|c| (c * &l).to_integer()).collect())
    }

    pub fn degree(&self) -> usize {
        self.0.len().saturating_sub(1)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(Zero::is_zero)
    }

    pub fn is_constant(&self) -> bool {
        self.degree() == 0
    }

    pub fn derivative(&self) -> Self {
        if self.0.len() <= 1 {
            return IntPoly(vec![BigInt::zero()]);
        }
        IntPoly::new(
            self.0[1..]
                .iter()
                .enumerate()
                .map(|(i, c)| c * BigInt::from(i + 1))
                .collect(),
        )
    }

    /// Divide by the gcd of the coefficients (and normalize leading sign up).
    fn primitive(mut self) -> Self {
        let mut g = BigInt::zero();
        for c in &self.0 {
            g = g.gcd(c);
        }
        if !g.is_zero() && !g.is_one() {
            for c in &mut self.0 {
                *c = &*c / &g;
            }
        }
        self
    }

    /// Sign of p(x) at an exactly-representable (dyadic) point.
    pub fn sign_at(&self, x: f64) -> i8 {
        let (m, e) = dyadic_parts(x);
        let d = self.degree() as i64;
        let shift = if e < 0 { -e * d } else { 0 };
        let mut acc = BigInt::zero();
        let mut mp = BigInt::one();
        for (j, c) in self.0.iter().enumerate() {
            let expo = (e * j as i64 + shift) as u64;
            acc += c * &mp * (BigInt::one() << expo);
            if j + 1 < self.0.len() {
                mp *= &m;
            }
        }
        match acc.sign() {
            Sign::Plus => 1,
            Sign::Minus => -1,
            Sign::NoSign => 0,
        }
    }

    pub fn sign_at_zero(&self) -> i8 {
        match self.0.first().map(|c| c.sign()) {
            Some(Sign::Plus) => 1,
            Some(Sign::Minus) => -1,
            _ => 0,
        }
    }

    pub fn sign_at_pos_inf(&self) -> i8 {
        match self.0.last().map(|c| c.sign()) {
            Some(Sign::Plus) => 1,
            Some(Sign::Minus) => -1,
            _ => 0,
        }
    }

    /// Exact polynomial remainder scaled by a positive constant (sign-safe for
    /// Sturm chains): returns `rem(|lc(b)|^(da-db+1) * a, b)` made primitive.
    fn pseudo_rem(&self, b: &IntPoly) -> IntPoly {
        let da = self.degree();
        let db = b.degree();
        assert!(db <= da && !b.is_zero());
        let lc = b.0[db].abs();
        let steps = da - db + 1;
        let mut r: Vec<BigInt> = self.0.iter().map(|c| c * lc.pow(steps as u32)).collect();
        // synthetic division by b, exact because of the pre-scaling
        for k in (db..=da).rev() {
            if r[k].is_zero() {
                continue;
            }
            let q = &r[k] / &b.0[db];
            for j in 0..db {
                let delta = &q * &b.0[j];
                r[k - db + j] -= delta;
            }
            r[k] = BigInt::zero();
        }
        IntPoly::new(r).primitive()
    }
}

/// Normalized f64 mirror of an integer polynomial (coefficients divided by
/// the largest magnitude), for cheap guarded sign evaluation.
fn mirror(p: &IntPoly) -> Vec<f64> {
    let mut max = BigInt::zero();
    for c in &p.0 {
        let a = c.abs();
        if a > max {
            max = a;
        }
    }
    if max.is_zero() {
        return vec![0.0; p.0.len()];
    }
    p.0.iter()
        .map(|c| {
            num_traits::ToPrimitive::to_f64(&BigRational::new(c.clone(), max.clone()))
                .unwrap_or(0.0)
        })
        .collect()
}

/// Sign of the mirrored polynomial at x when the rounded Horner evaluation
/// provably dominates its accumulated error; 0 when uncertain.
fn guarded_sign(mirror: &[f64], x: f64) -> i8 {
    let mut acc = 0.0f64;
    let mut mag = 0.0f64;
    let ax = x.abs();
    for &c in mirror.iter().rev() {
        acc = acc * x + c;
        mag = mag * ax + c.abs();
    }
    // Horner rounding plus mirror-coefficient rounding
    let err = mag * f64::EPSILON * (2 * mirror.len() + 3) as f64 + f64::MIN_POSITIVE;
    if acc.abs() > 16.0 * err {
        if acc > 0.0 {
            1
        } else {
            -1
        }
    } else {
        0
    }
}

/// Sturm chain of a square-free reduction of the input polynomial.
pub struct SturmChain {
    chain: Vec<IntPoly>,
    mirrors: Vec<Vec<f64>>,
    /// True when the input had a repeated root (chain built for p / gcd(p, p')).
    pub reduced: bool,
}

impl SturmChain {
    pub fn new(p: IntPoly) -> Self {
        let p = p.primitive();
        let mut chain = vec![p.clone(), p.derivative().primitive()];
        loop {
            let n = chain.len();
            if chain[n - 1].is_zero() || chain[n - 1].is_constant() {
                break;
            }
            let mut r = chain[n - 2].pseudo_rem(&chain[n - 1]);
            for c in &mut r.0 {
                *c = -std::mem::take(c);
            }
            if r.is_zero() {
                break;
            }
            chain.push(r);
        }
        // Nontrivial terminal gcd: rerun on the square-free part.
        let last = chain.last().unwrap();
        if !last.is_constant() && chain.len() > 1 {
            let g = last.clone();
            let sq_free = exact_div(&chain[0], &g);
            let mut inner = SturmChain::new(sq_free);
            inner.reduced = true;
            return inner;
        }
        let mirrors = chain.iter().map(mirror).collect();
        SturmChain {
            chain,
            mirrors,
            reduced: false,
        }
    }

    fn variations<F: Fn(&IntPoly, &[f64]) -> i8>(&self, sign_of: F) -> usize {
        let mut count = 0;
        let mut prev = 0i8;
        for (p, m) in self.chain.iter().zip(&self.mirrors) {
            let s = sign_of(p, m);
            if s == 0 {
                continue;
            }
            if prev != 0 && s != prev {
                count += 1;
            }
            prev = s;
        }
        count
    }

    fn variations_at(&self, x: f64) -> usize {
        self.variations(|p, m| {
            let fast = guarded_sign(m, x);
            if fast != 0 {
                fast
            } else {
                p.sign_at(x)
            }
        })
    }

    /// Number of distinct real roots in (a, b] for dyadic endpoints a < b.
    pub fn count_in(&self, a: f64, b: f64) -> usize {
        self.variations_at(a) - self.variations_at(b)
    }

    /// Number of distinct real roots in (0, +inf).
    pub fn count_positive(&self) -> usize {
        self.variations(|p, _| p.sign_at_zero()) - self.variations(|p, _| p.sign_at_pos_inf())
    }

    /// Sign of the square-free polynomial at a dyadic point (guarded fast
    /// path, exact fallback).
    pub fn sign_of_poly(&self, x: f64) -> i8 {
        let fast = guarded_sign(&self.mirrors[0], x);
        if fast != 0 {
            fast
        } else {
            self.chain[0].sign_at(x)
        }
    }

    pub fn poly(&self) -> &IntPoly {
        &self.chain[0]
    }
}

/// Exact division a / b for integer polynomials known to divide evenly
/// (up to a rational constant); result made primitive.
fn exact_div(a: &IntPoly, b: &IntPoly) -> IntPoly {
    let da = a.degree();
    let db = b.degree();
    assert!(db <= da);
    let steps = da - db + 1;
    let lc = b.0[db].abs();
    let mut r: Vec<BigInt> = a.0.iter().map(|c| c * lc.pow(steps as u32)).collect();
    let mut q = vec![BigInt::zero(); da - db + 1];
    for k in (db..=da).rev() {
        let qq = &r[k] / &b.0[db];
        q[k - db] = qq.clone();
        for j in 0..=db {
            let delta = &qq * &b.0[j];
            r[k - db + j] -= delta;
        }
    }
    IntPoly::new(q).primitive()
}
