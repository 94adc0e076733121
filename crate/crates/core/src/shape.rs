//! Certified zero counts and sign patterns of density derivatives, and the
//! shape classification they imply.
//!
//! Exponential sums form a Descartes system: the number of real zeros
//! (with multiplicity, over the whole line) is at most the number of sign
//! changes in the coefficient sequence ordered by rate. Subtracting the
//! multiplicity of the zero at t = 0 (the count of leading vanishing moments)
//! gives a rigorous upper bound on (0, ∞). A geometric grid scan with
//! bisection refinement provides the matching lower bound; a count is
//! *certified* exactly when the two coincide.

use serde::Serialize;

use crate::density::ExpSumDensity;
use crate::error::{Error, Result};
use crate::tolerances;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Sign {
    Plus,
    Minus,
    Zero,
}

impl Sign {
    fn ch(self) -> char {
        match self {
            Sign::Plus => '+',
            Sign::Minus => '-',
            Sign::Zero => '0',
        }
    }

    fn of(x: i8) -> Sign {
        match x.cmp(&0) {
            std::cmp::Ordering::Greater => Sign::Plus,
            std::cmp::Ordering::Less => Sign::Minus,
            std::cmp::Ordering::Equal => Sign::Zero,
        }
    }
}

/// Ordered signs of a function on [0, +∞], endpoint limits included; no two
/// consecutive symbols agree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SignPattern(Vec<Sign>);

impl SignPattern {
    fn push(&mut self, s: Sign) {
        if self.0.last() != Some(&s) {
            self.0.push(s);
        }
    }

    pub fn symbols(&self) -> &[Sign] {
        &self.0
    }
}

impl std::fmt::Display for SignPattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for s in &self.0 {
            write!(f, "{}", s.ch())?;
        }
        Ok(())
    }
}

/// Result of zero counting on (0, ∞).
#[derive(Debug, Clone, Serialize)]
pub struct ZeroCount {
    pub count: usize,
    pub zeros: Vec<f64>,
    pub certified: bool,
    /// Descartes-type upper bound: coefficient sign changes minus the
    /// multiplicity of the zero at the origin.
    pub upper_bound: usize,
}

fn lambert_w(a: f64) -> f64 {
    // solve w e^w = a for a >= 0
    if a <= 0.0 {
        return 0.0;
    }
    let mut w = if a < 1.0 { a } else { a.ln().max(1e-12) };
    for _ in 0..20 {
        let ew = w.exp();
        let f = w * ew - a;
        w -= f / (ew * (1.0 + w));
        if w < 0.0 {
            w = 1e-12;
        }
    }
    w
}

struct ScanOutcome {
    zeros: Vec<f64>,
    degenerate: bool,
}

/// One pass over a geometric grid: locate certain sign changes and refine
/// each bracket by bisection.
fn scan_grid(d: &ExpSumDensity, lo: f64, hi: f64, points: usize) -> ScanOutcome {
    let grid = crate::density::geometric_grid(lo, hi, points);
    let mut zeros = Vec::new();
    let mut degenerate = false;
    let mut last_sign = 0i8;
    let mut last_t = lo;
    let mut ambiguous_run = false;
    for &t in &grid {
        let (v, noise) = d.eval_with_noise(t);
        let s = if v.abs() > tolerances::SIGN_NOISE_FACTOR * noise {
            if v > 0.0 {
                1
            } else {
                -1
            }
        } else {
            0
        };
        if s == 0 {
            ambiguous_run = true;
            continue;
        }
        if last_sign != 0 && s != last_sign {
            zeros.push(refine_zero(d, last_t, t));
        } else if last_sign != 0 && ambiguous_run {
            // tiny values between same-signed neighbours: possible touch point
            degenerate = true;
        }
        ambiguous_run = false;
        last_sign = s;
        last_t = t;
    }
    ScanOutcome { zeros, degenerate }
}

fn refine_zero(d: &ExpSumDensity, mut lo: f64, mut hi: f64) -> f64 {
    let s_lo = if d.eval(lo) > 0.0 { 1.0 } else { -1.0 };
    for _ in 0..200 {
        if hi - lo <= tolerances::ZERO_LOCATION_ABS {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if !(lo < mid && mid < hi) {
            break;
        }
        if d.eval(mid) * s_lo > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Certified zero count of an exponential sum on (0, ∞).
pub fn count_zeros_expsum(d: &ExpSumDensity) -> ZeroCount {
    let sign_changes = d.coefficient_sign_changes();
    let vanishing = d.vanishing_moments();
    let upper = sign_changes.saturating_sub(vanishing);
    if upper == 0 {
        return ZeroCount {
            count: 0,
            zeros: Vec::new(),
            certified: true,
            upper_bound: 0,
        };
    }

    // scan window: the slowest mode sets the large-t scale, tightened and
    // extended by the rigorous no-zero bounds on both sides
    let abs_sum: f64 = d.terms().iter().map(|t| t.0.abs()).sum();
    let b_max = d.terms().last().unwrap().1;
    let b_min = d.terms()[0].1;
    let scale = 1.0 / b_min;

    // no zeros beyond: first term dominates
    let tail = abs_sum - d.terms()[0].0.abs();
    let t_plus = if d.terms().len() >= 2 && d.terms()[0].0 != 0.0 {
        let gap = d.terms()[1].1 - b_min;
        ((tail / d.terms()[0].0.abs()).ln() / gap).max(0.0)
    } else {
        0.0
    };
    // no zeros below: leading Taylor term dominates
    let s = d.scaled_moment_magnitude(vanishing);
    let a = (vanishing as f64 + 1.0) * s / abs_sum;
    let t_minus = lambert_w(a) / b_max;

    let mut lo = if t_minus > 0.0 && t_minus.is_finite() {
        0.9 * t_minus
    } else {
        tolerances::SCAN_LO_MEANS / b_max
    };
    let mut hi = (tolerances::SCAN_HI_MEANS * scale).max(1.1 * t_plus);
    let mut points = tolerances::SCAN_GRID_INITIAL;
    let best;
    loop {
        let outcome = scan_grid(d, lo, hi, points);
        let done = outcome.zeros.len() == upper && !outcome.degenerate;
        let count = outcome.zeros.len();
        if done || points >= tolerances::SCAN_GRID_MAX {
            best = outcome;
            break;
        }
        points *= 2;
        if count < upper {
            lo = (lo / 16.0).max(f64::MIN_POSITIVE);
            hi *= 4.0;
        }
    }
    let outcome = best;
    let certified = outcome.zeros.len() == upper && !outcome.degenerate;
    ZeroCount {
        count: outcome.zeros.len(),
        zeros: outcome.zeros,
        certified,
        upper_bound: upper,
    }
}

/// Sign pattern of a certified exponential sum on [0, +∞]: endpoint limits
/// from the coefficient sums (never from numeric evaluation), interior signs
/// alternating across the certified zeros.
pub fn sign_pattern(d: &ExpSumDensity) -> Result<SignPattern> {
    let zc = count_zeros_expsum(d);
    sign_pattern_counted(d, &zc)
}

pub fn sign_pattern_counted(d: &ExpSumDensity, zc: &ZeroCount) -> Result<SignPattern> {
    if !zc.certified {
        return Err(Error::Uncertified {
            order: d.derivative_order(),
        });
    }
    let near_zero = d.sign_near_zero();
    if near_zero == 0 {
        return Err(Error::Numerical(
            "all moments vanish; degenerate exponential sum".into(),
        ));
    }
    let mut pattern = SignPattern(Vec::new());
    if d.vanishing_moments() >= 1 {
        pattern.push(Sign::Zero);
    }
    let mut sign = near_zero;
    pattern.push(Sign::of(sign));
    for _ in 0..zc.count {
        pattern.push(Sign::Zero);
        sign = -sign;
        pattern.push(Sign::of(sign));
    }
    // consistency: the t→∞ sign is that of the smallest-rate coefficient
    let tail = if d.terms()[0].0 > 0.0 { 1i8 } else { -1 };
    if tail != sign {
        return Err(Error::Numerical(format!(
            "sign pattern inconsistent: alternation ends {sign:+} but tail coefficient gives {tail:+}"
        )));
    }
    pattern.push(Sign::Zero);
    Ok(pattern)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "order")]
pub enum Classification {
    /// Certified n-th derivative vanishing exactly n times for every
    /// 1 <= n <= N, with all endpoint limits zero.
    Bell(u32),
    /// Exactly one zero of every derivative order checked: concave then
    /// convex, the one-interior-atom shape.
    Whale,
    /// Certified count equal to n for every order n <= i <= N.
    NShape(u32),
    /// No derivative zeros at all (completely monotone).
    Monotone,
    Unknown,
}

#[derive(Debug, Clone, Serialize)]
pub struct OrderRecord {
    pub order: u32,
    pub zero_count: usize,
    pub certified: bool,
    pub zeros: Vec<f64>,
    pub pattern: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ShapeReport {
    pub orders: Vec<OrderRecord>,
    pub classification: Classification,
    pub max_order_checked: u32,
}

/// The classification ladder shared by the exponential-sum and the
/// closed-form fixture paths.
pub(crate) fn classification_from_counts(
    counts: &[usize],
    all_certified: bool,
    endpoints_vanish_to: usize,
) -> Classification {
    if !all_certified || counts.is_empty() {
        return Classification::Unknown;
    }
    let max_order = counts.len();
    if counts.iter().all(|&c| c == 0) {
        return Classification::Monotone;
    }
    let bell_ladder = counts.iter().enumerate().all(|(i, &c)| c == i + 1);
    if bell_ladder && endpoints_vanish_to >= max_order {
        return Classification::Bell(max_order as u32);
    }
    let n = counts[max_order - 1];
    if n >= 1 && counts.iter().enumerate().all(|(i, &c)| i + 1 < n || c == n) {
        return if n == 1 {
            Classification::Whale
        } else {
            Classification::NShape(n as u32)
        };
    }
    Classification::Unknown
}

fn rolle_consistent(lower: &OrderRecord, lower_vanishes_at_zero: bool, upper: &OrderRecord) -> bool {
    // between consecutive zeros of f^(i) lies a zero of f^(i+1); the endpoint
    // intervals count when f^(i) vanishes there (always at +inf).
    let mut anchors = Vec::with_capacity(lower.zeros.len() + 2);
    if lower_vanishes_at_zero {
        anchors.push(0.0);
    }
    anchors.extend_from_slice(&lower.zeros);
    anchors.push(f64::INFINITY);
    for w in anchors.windows(2) {
        if !upper.zeros.iter().any(|&z| z > w[0] && z < w[1]) {
            return false;
        }
    }
    true
}

/// Count zeros of every derivative up to `max_order`, certify, and classify.
pub fn classify(density: &ExpSumDensity, max_order: u32) -> Result<ShapeReport> {
    if max_order < 2 {
        return Err(Error::Unsupported("classification needs max_order >= 2".into()));
    }
    if density.derivative_order() != 0 {
        return Err(Error::Unsupported("classification starts from an order-0 density".into()));
    }
    let base_vanishing = density.vanishing_moments();
    let mut orders = Vec::with_capacity(max_order as usize);
    let mut counts = Vec::with_capacity(max_order as usize);
    let mut all_certified = true;
    for order in 1..=max_order {
        let df = density.derivative(order);
        let zc = count_zeros_expsum(&df);
        let pattern = if zc.certified {
            sign_pattern_counted(&df, &zc).ok().map(|p| p.to_string())
        } else {
            None
        };
        all_certified &= zc.certified;
        counts.push(zc.count);
        orders.push(OrderRecord {
            order,
            zero_count: zc.count,
            certified: zc.certified,
            zeros: zc.zeros,
            pattern,
        });
    }
    if all_certified {
        for i in 0..orders.len() - 1 {
            let vanishes = base_vanishing > (i + 1) as usize;
            if !rolle_consistent(&orders[i], vanishes, &orders[i + 1]) {
                return Err(Error::Numerical(format!(
                    "Rolle consistency violated between orders {} and {}",
                    i + 1,
                    i + 2
                )));
            }
        }
    }
    let classification =
        classification_from_counts(&counts, all_certified, base_vanishing.saturating_sub(1));
    Ok(ShapeReport {
        orders,
        classification,
        max_order_checked: max_order,
    })
}
