//! Hitting densities as finite exponential sums, exactly.
//!
//! The absorption-time density of the embedded chain is `sum c_i e^(-b_i t)`
//! over the eigenvalues of the killed generator. Coefficients come from
//! cofactor partial fractions of the resolvent (equivalent to the eigenvector
//! expansion of the start state's absorption flux, but computed through the
//! tridiagonal characteristic-polynomial recurrence, which stays exact on the
//! rational backend). Differentiation, integration and moments are termwise;
//! evaluation switches between a scaled Taylor series (small t, where direct
//! summation cancels catastrophically) and direct double-double summation.

use std::sync::OnceLock;

use num_rational::BigRational;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::krein::propagate_psi;
use crate::mc::{build_chain, ChainSpec};
use crate::num::{dd, dd_div, dd_exp_neg, neumaier_sum, Dd, Scalar};
use crate::rational::rational_from_f64;
use crate::spectra::{
    check_collisions, dirichlet_eigenrates, generator_eigenrates, real_roots, RateSet, RateSource,
    STURM_DEGREE_MAX,
};
use crate::string::{AtomicString, Precision};
use crate::tolerances;
use crate::tridiag;

const EPS_DD: f64 = 1e-31;
/// Relative accuracy of the double-double exponential.
const EPS_EXP: f64 = 1e-29;
/// Residual uncertainty of the double-double coefficient computations.
const EPS_COEFF: f64 = 1e-27;
/// Switch from the Taylor path to direct summation at b_max * t = TAU_SWITCH.
const TAU_SWITCH: f64 = 25.0;
const MAX_TAYLOR_MOMENTS: usize = 192;

/// A finite exponential sum `sum c_i e^(-b_i t)`, rates strictly increasing.
/// `derivative_order` 0 is a probability density.
#[derive(Debug, Clone, Serialize)]
pub struct ExpSumDensity {
    terms: Vec<(f64, f64)>,
    derivative_order: u32,
    // coefficients at full working precision; the f64 view is for reports
    #[serde(skip)]
    coeffs_dd: Vec<Dd>,
    // multiplicity of the zero of the analytic continuation at t = 0, when
    // known structurally (states above the chain's start, minus the order)
    origin_multiplicity: Option<usize>,
    #[serde(skip)]
    moments: OnceLock<Vec<Dd>>,
}

impl ExpSumDensity {
    fn from_dd_terms(
        terms: Vec<(Dd, f64)>,
        derivative_order: u32,
        origin_multiplicity: Option<usize>,
    ) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::Numerical("empty exponential sum".into()));
        }
        let rates: Vec<f64> = terms.iter().map(|t| t.1).collect();
        if rates.iter().any(|&b| !(b > 0.0) || !b.is_finite()) {
            return Err(Error::Numerical(format!("nonpositive rate in {rates:?}")));
        }
        check_collisions(&rates)?;
        let coeffs_dd: Vec<Dd> = terms.iter().map(|t| t.0).collect();
        let terms = terms
            .into_iter()
            .map(|(c, b)| (f64::from(c), b))
            .collect();
        Ok(ExpSumDensity {
            terms,
            derivative_order,
            coeffs_dd,
            origin_multiplicity,
            moments: OnceLock::new(),
        })
    }

    fn order0_checked_dd(
        terms: Vec<(Dd, f64)>,
        origin_multiplicity: Option<usize>,
    ) -> Result<Self> {
        let d = Self::from_dd_terms(terms, 0, origin_multiplicity)?;
        let total = d.total_mass();
        if (total - 1.0).abs() > tolerances::NORMALIZATION_TOL {
            return Err(Error::Numerical(format!(
                "density integrates to {total}, not 1"
            )));
        }
        Ok(d)
    }

    /// Build an order-0 density from f64 terms, verifying it integrates to one.
    pub fn order0_checked(terms: Vec<(f64, f64)>) -> Result<Self> {
        Self::order0_checked_dd(terms.into_iter().map(|(c, b)| (dd(c), b)).collect(), None)
    }

    pub fn terms(&self) -> &[(f64, f64)] {
        &self.terms
    }

    pub fn rates(&self) -> Vec<f64> {
        self.terms.iter().map(|t| t.1).collect()
    }

    pub fn derivative_order(&self) -> u32 {
        self.derivative_order
    }

    /// `integral_0^inf` of the sum: `sum c_i / b_i` (in double-double).
    pub fn total_mass(&self) -> f64 {
        let mut acc = dd(0.0);
        for (c, &(_, b)) in self.coeffs_dd.iter().zip(&self.terms) {
            acc = acc + *c / b;
        }
        f64::from(acc)
    }

    /// Termwise n-th derivative: c -> c (-b)^n.
    pub fn derivative(&self, n: u32) -> ExpSumDensity {
        if n == 0 {
            return self.clone();
        }
        let coeffs_dd: Vec<Dd> = self
            .coeffs_dd
            .iter()
            .zip(&self.terms)
            .map(|(c, &(_, b))| {
                let mut out = *c;
                for _ in 0..n {
                    out = out * (-b);
                }
                out
            })
            .collect();
        let terms = coeffs_dd
            .iter()
            .zip(&self.terms)
            .map(|(c, &(_, b))| (f64::from(*c), b))
            .collect();
        ExpSumDensity {
            terms,
            derivative_order: self.derivative_order + n,
            coeffs_dd,
            origin_multiplicity: self
                .origin_multiplicity
                .map(|v| v.saturating_sub(n as usize)),
            moments: OnceLock::new(),
        }
    }

    fn b_max(&self) -> f64 {
        self.terms.last().unwrap().1
    }

    fn coeff_abs_sum(&self) -> f64 {
        self.terms.iter().map(|t| t.0.abs()).sum()
    }

    /// Moments of the scaled sum: `s_p = sum c_i (-b_i / b_max)^p`.
    fn scaled_moments(&self) -> &[Dd] {
        self.moments.get_or_init(|| {
            let bm = self.b_max();
            let mut pw: Vec<Dd> = self.terms.iter().map(|_| dd(1.0)).collect();
            let betas: Vec<Dd> = self.terms.iter().map(|&(_, b)| -(dd(b) / bm)).collect();
            let cs: Vec<Dd> = self.coeffs_dd.clone();
            let mut out = Vec::with_capacity(MAX_TAYLOR_MOMENTS);
            for _ in 0..MAX_TAYLOR_MOMENTS {
                let mut acc = dd(0.0);
                for (i, p) in pw.iter().enumerate() {
                    acc = acc + cs[i] * *p;
                }
                out.push(acc);
                for (p, beta) in pw.iter_mut().zip(betas.iter()) {
                    *p = *p * *beta;
                }
            }
            out
        })
    }

    /// Evaluate with a noise-floor estimate, in double-double internally.
    pub fn eval_with_noise(&self, t: f64) -> (f64, f64) {
        let (v, n) = self.eval_dd(t);
        (f64::from(v), n)
    }

    fn eval_dd(&self, t: f64) -> (Dd, f64) {
        assert!(t >= 0.0);
        let bm = self.b_max();
        let tau = bm * t;
        let abs_sum = self.coeff_abs_sum();
        // coefficient uncertainty propagates through the analytic function:
        // |delta f| <= EPS_COEFF * sum |c_i| e^(-b_i t)
        let suppressed_mag: f64 = self
            .terms
            .iter()
            .map(|&(c, b)| c.abs() * (-b * t).exp())
            .sum();
        let coeff_noise = EPS_COEFF * suppressed_mag;
        if tau <= TAU_SWITCH {
            // f(t) = sum_p s_p tau^p / p!  with s_p the scaled moments
            let s = self.scaled_moments();
            let taud = dd(tau);
            let mut term = dd(1.0);
            let mut acc = dd(0.0);
            for (p, sp) in s.iter().enumerate() {
                acc = acc + *sp * term;
                if p as f64 > tau
                    && f64::from(term).abs() * abs_sum
                        < 1e-40 * (f64::from(acc).abs() + abs_sum * 1e-250)
                {
                    break;
                }
                term = term * taud / (p as f64 + 1.0);
            }
            let noise = EPS_DD * abs_sum * tau.exp() + coeff_noise;
            (acc, noise)
        } else {
            let mut acc = dd(0.0);
            let mut mag = 0.0f64;
            for (c, &(cf, b)) in self.coeffs_dd.iter().zip(&self.terms) {
                let e = dd_exp_neg(dd(b) * dd(t));
                acc = acc + *c * e;
                mag += cf.abs() * f64::from(e);
            }
            (acc, (EPS_EXP + EPS_DD) * mag + coeff_noise)
        }
    }

    /// Point evaluation (compensated internally).
    pub fn eval(&self, t: f64) -> f64 {
        self.eval_with_noise(t).0
    }

    /// Distribution function `1 - sum (c_i / b_i) e^(-b_i t)` (order 0 only).
    pub fn cdf(&self, t: f64) -> f64 {
        assert_eq!(self.derivative_order, 0, "cdf needs an order-0 density");
        let (s, _) = neumaier_sum(self.terms.iter().map(|&(c, b)| c / b * (-b * t).exp()));
        (1.0 - s).clamp(0.0, 1.0)
    }

    /// k-th raw moment `sum c_i k! / b_i^(k+1)` (order 0 only).
    pub fn moment(&self, k: u32) -> f64 {
        assert_eq!(self.derivative_order, 0, "moments need an order-0 density");
        let mut acc = dd(0.0);
        let mut kfact = dd(1.0);
        for j in 1..=k {
            kfact = kfact * dd(j as f64);
        }
        for (c, &(_, b)) in self.coeffs_dd.iter().zip(&self.terms) {
            let mut bp = dd(b);
            for _ in 0..k {
                bp = bp * dd(b);
            }
            acc = acc + dd_div(*c * kfact, bp);
        }
        f64::from(acc)
    }

    pub fn mean(&self) -> f64 {
        self.moment(1)
    }

    pub fn variance(&self) -> f64 {
        let m1 = self.moment(1);
        self.moment(2) - m1 * m1
    }

    /// Relative residual of the endpoint identity `sum c_i (-b_i)^j = 0`
    /// (the exact finite form of the O(z^n) estimate at zero).
    pub fn moment_residual(&self, j: u32) -> f64 {
        let s = self.scaled_moments();
        let p = j as usize;
        assert!(p < s.len());
        let scale: f64 = self
            .terms
            .iter()
            .map(|&(c, b)| c.abs() * (b / self.b_max()).powi(j as i32))
            .sum();
        f64::from(s[p]).abs() / scale.max(f64::MIN_POSITIVE)
    }

    /// Multiplicity of the zero of the analytic continuation at t = 0: the
    /// structural count (states strictly above the chain's start, less the
    /// derivative order) when the density came from a chain, otherwise the
    /// number of leading moments that vanish within tolerance.
    pub fn vanishing_moments(&self) -> usize {
        if let Some(v) = self.origin_multiplicity {
            return v;
        }
        let cap = self.terms.len().saturating_sub(1);
        for j in 0..=cap {
            if self.moment_residual(j as u32) > tolerances::VANDERMONDE_REL {
                return j;
            }
        }
        cap + 1
    }

    /// Magnitude of the p-th scaled moment `|sum c_i (b_i/b_max)^p|`.
    pub fn scaled_moment_magnitude(&self, p: usize) -> f64 {
        let s = self.scaled_moments();
        if p >= s.len() {
            return 0.0;
        }
        f64::from(s[p]).abs()
    }

    /// Signed value of the first nonvanishing moment (the sign of the density
    /// just right of zero).
    pub fn sign_near_zero(&self) -> i8 {
        let v = self.vanishing_moments();
        let s = self.scaled_moments();
        if v >= s.len() {
            return 0;
        }
        let x = f64::from(s[v]);
        if x > 0.0 {
            1
        } else if x < 0.0 {
            -1
        } else {
            0
        }
    }

    /// Sign changes in the coefficient sequence ordered by increasing rate.
    pub fn coefficient_sign_changes(&self) -> usize {
        let mut changes = 0;
        let mut prev = 0i8;
        for &(c, _) in &self.terms {
            let s = if c > 0.0 {
                1
            } else if c < 0.0 {
                -1
            } else {
                0
            };
            if s == 0 {
                continue;
            }
            if prev != 0 && s != prev {
                changes += 1;
            }
            prev = s;
        }
        changes
    }
}

/// Geometric grid of n points on [lo, hi].
pub fn geometric_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && n >= 2);
    let ratio = (hi / lo).ln() / (n - 1) as f64;
    (0..n).map(|i| lo * (ratio * i as f64).exp()).collect()
}

/// The standard comparison grid for a density of the given mean.
pub fn comparison_grid(mean: f64) -> Vec<f64> {
    geometric_grid(
        tolerances::GRID_LO_MEANS * mean,
        tolerances::GRID_HI_MEANS * mean,
        tolerances::COMPARISON_GRID_POINTS,
    )
}

/// Hypoexponential density from distinct rates:
/// `c_i = b_i prod_(j != i) b_j / (b_j - b_i)`.
pub fn hypoexp_from_rates(rates: &RateSet) -> Result<ExpSumDensity> {
    let b = &rates.rates;
    if b.is_empty() {
        return Err(Error::Numerical("hypoexponential needs at least one rate".into()));
    }
    check_collisions(b)?;
    let mut terms = Vec::with_capacity(b.len());
    for i in 0..b.len() {
        // condition estimate and log-magnitude guard before the dd product
        let mut kappa = 1.0f64;
        let mut logmag = b[i].ln();
        for j in 0..b.len() {
            if j == i {
                continue;
            }
            kappa += b[j].abs() / (b[j] - b[i]).abs();
            logmag += (b[j] / (b[j] - b[i])).abs().ln();
        }
        if kappa > tolerances::CONDITION_MAX {
            return Err(Error::Numerical(format!(
                "partial-fraction weights too ill-conditioned (kappa = {kappa:e})"
            )));
        }
        if logmag.abs() > 600.0 {
            return Err(Error::Numerical(
                "partial-fraction weight magnitude out of floating range".into(),
            ));
        }
        let mut c = dd(b[i]);
        for j in 0..b.len() {
            if j == i {
                continue;
            }
            c = dd_div(c * dd(b[j]), dd(b[j]) - dd(b[i]));
        }
        terms.push((c, b[i]));
    }
    ExpSumDensity::order0_checked_dd(terms, Some(b.len() - 1))
}

/// Characteristic polynomials (leading principal minors) of `λI - Q` for a
/// birth-death chain, via the three-term recurrence, over a selectable scalar.
fn chain_minors<T: Scalar>(
    diag: &[BigRational],
    sub_super: &[BigRational],
    upto: usize,
) -> Vec<Vec<T>> {
    // theta_0 = 1, theta_k = (λ + diag_(k-1)) theta_(k-1) - sub_super_(k-2) theta_(k-2)
    let mut thetas: Vec<Vec<T>> = vec![vec![T::one()]];
    for k in 1..=upto {
        let d = T::from_rational(&diag[k - 1]);
        let prev = &thetas[k - 1];
        let mut next = vec![T::zero(); prev.len() + 1];
        for (i, c) in prev.iter().enumerate() {
            next[i + 1] = next[i + 1].add(c);
            next[i] = next[i].add(&d.mul(c));
        }
        if k >= 2 {
            let w = T::from_rational(&sub_super[k - 2]);
            for (i, c) in thetas[k - 2].iter().enumerate() {
                next[i] = next[i].sub(&w.mul(c));
            }
        }
        thetas.push(next);
    }
    thetas
}

/// Exact chain data (diagonal of -Q and products of paired off-diagonal
/// rates) from the exact atom data of a string.
fn exact_chain_data(s: &AtomicString) -> (Vec<BigRational>, Vec<BigRational>) {
    let atoms = s.exact_atoms();
    let n = atoms.len();
    let one = || BigRational::from_integer(1.into());
    let mut right = Vec::with_capacity(n);
    let mut left = vec![BigRational::from_integer(0.into())];
    for i in 0..n {
        let right_gap = if i + 1 < n {
            &atoms[i + 1].0 - &atoms[i].0
        } else {
            s.target_exact() - &atoms[i].0
        };
        right.push(one() / (&atoms[i].1 * right_gap));
        if i > 0 {
            let gap = &atoms[i].0 - &atoms[i - 1].0;
            left.push(one() / (&atoms[i].1 * gap));
        }
    }
    let diag: Vec<BigRational> = (0..n).map(|i| &left[i] + &right[i]).collect();
    let pair: Vec<BigRational> = (0..n - 1).map(|i| &right[i] * &left[i + 1]).collect();
    (diag, pair)
}

/// Density coefficients of the absorption time from the start state:
/// residues of the resolvent cofactor at the generator eigenvalues.
fn phasetype_coefficients(s: &AtomicString, chain: &ChainSpec, poles: &[f64]) -> Result<Vec<Dd>> {
    let n = chain.n_states();
    let i0 = chain.start_index;
    let (diag, pair) = exact_chain_data(s);
    let use_exact = n <= tolerances::RATIONAL_BACKEND_MAX_ATOMS;

    // numerator constant: product of up-rates from the start state
    let mut lead = dd(1.0);
    for j in i0..n {
        lead = lead * dd(chain.right_rate[j]);
    }

    // P_L(λ): characteristic polynomial of the block strictly below the start
    enum Minor {
        Exact(Vec<BigRational>),
        Float(Vec<Dd>),
    }
    let minor = if use_exact {
        Minor::Exact(chain_minors::<BigRational>(&diag, &pair, i0).pop().unwrap())
    } else {
        Minor::Float(chain_minors::<Dd>(&diag, &pair, i0).pop().unwrap())
    };
    let eval_minor = |x: f64| -> Dd {
        match &minor {
            Minor::Exact(cs) => {
                let xr = rational_from_f64(x);
                let mut acc = BigRational::from_integer(0.into());
                for c in cs.iter().rev() {
                    acc = acc * &xr + c;
                }
                <Dd as Scalar>::from_rational(&acc)
            }
            Minor::Float(cs) => {
                let mut acc = dd(0.0);
                for c in cs.iter().rev() {
                    acc = acc * dd(x) + *c;
                }
                acc
            }
        }
    };

    let mut coeffs = Vec::with_capacity(n);
    for k in 0..n {
        let mut denom = dd(1.0);
        let mut kappa = 1.0f64;
        for j in 0..n {
            if j == k {
                continue;
            }
            denom = denom * (dd(poles[j]) - dd(poles[k]));
            kappa += poles[j].abs() / (poles[j] - poles[k]).abs();
        }
        if kappa > tolerances::CONDITION_MAX {
            return Err(Error::Numerical(format!(
                "phase-type residues too ill-conditioned (kappa = {kappa:e})"
            )));
        }
        let gamma = dd_div(lead * eval_minor(-poles[k]), denom);
        coeffs.push(gamma);
    }
    Ok(coeffs)
}

fn chain_eigenrates(chain: &ChainSpec) -> Result<Vec<f64>> {
    let (diag, off) = chain.sym_neg_generator();
    let evs = tridiag::eigenvalues(&diag, &off);
    if evs.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::Eigen(format!("nonpositive eigenvalue in {evs:?}")));
    }
    check_collisions(&evs)?;
    Ok(evs)
}

/// Absorption-time density for a string whose start coincides with an atom
/// (one- or two-sided): spectral expansion over the killed-generator
/// eigenvalues.
pub fn phasetype_general(s: &AtomicString) -> Result<ExpSumDensity> {
    let s = s.translate_to_origin();
    if !s.has_start_atom() {
        return Err(Error::Unsupported(
            "phase-type expansion requires the start to coincide with an atom".into(),
        ));
    }
    let chain = build_chain(&s)?;
    let poles = chain_eigenrates(&chain)?;
    let coeffs = phasetype_coefficients(&s, &chain, &poles)?;
    let above = chain.states_above_start();
    ExpSumDensity::order0_checked_dd(coeffs.into_iter().zip(poles).collect(), Some(above))
}

/// The full hitting-time density of a string: hypoexponential over the
/// generator eigenvalues for one-sided strings (the chain starts at its
/// bottom state), phase-type expansion otherwise.
pub fn hitting_density(s: &AtomicString) -> Result<ExpSumDensity> {
    if s.is_one_sided() {
        hypoexp_from_rates(&generator_eigenrates(s)?)
    } else {
        phasetype_general(s)
    }
}

/// The exponential-factor / completely-monotone-factor split of the hitting
/// law.
///
/// The first factor is the hypoexponential over the Dirichlet rates (negated
/// roots of the Dirichlet polynomial at the target). The second factor is
/// what remains of the Laplace transform: a mixture of the full law's
/// exponentials, plus a point mass at zero exactly when the string has no
/// atom at the start. Nonnegativity of the mixture weights is the
/// complete-monotonicity certificate.
#[derive(Debug, Clone, Serialize)]
pub struct Factorization {
    pub mu1_rates: RateSet,
    /// (weight, rate) pairs of the mixture part of the second factor.
    pub mu2_mixture: Vec<(f64, f64)>,
    /// Weight of the point mass at zero (zero when the start carries an atom).
    pub mu2_atom_at_zero: f64,
    pub cm_certificate: bool,
    pub min_weight: f64,
    /// Signed deviation of the total mu2 weight from one.
    pub weight_sum_error: f64,
    // double-double copies of the weights; reconvolution cancels the
    // exponential factor's poles exactly and needs them beyond f64
    #[serde(skip)]
    mixture_dd: Vec<Dd>,
    #[serde(skip)]
    atom_dd: Dd,
}

impl Factorization {
    pub fn mu1_density(&self) -> Result<Option<ExpSumDensity>> {
        if self.mu1_rates.is_empty() {
            return Ok(None);
        }
        Ok(Some(hypoexp_from_rates(&self.mu1_rates)?))
    }

    /// The convolution of the two factors, as a pointwise evaluator; the
    /// direct test of the factorization.
    ///
    /// Expanding the convolution over the pole basis divides by cross-set
    /// rate gaps, which can sit below rounding when a mode localizes away
    /// from the boundary. Pointwise evaluation through the kernel
    /// `(e^(-at) - e^(-bt))/(b - a) = t e^(-at) phi1(-(b-a)t)` stays
    /// well-conditioned at every gap.
    pub fn reconvolved(&self) -> Result<ReconvolvedDensity> {
        Ok(ReconvolvedDensity {
            mu1: self.mu1_density()?,
            mixture: self
                .mu2_mixture
                .iter()
                .zip(&self.mixture_dd)
                .map(|(&(_, b), &wd)| (wd, b))
                .collect(),
            atom: self.atom_dd,
        })
    }
}

/// Pointwise evaluator for the convolution of the exponential factor with
/// the completely monotone mixture.
pub struct ReconvolvedDensity {
    mu1: Option<ExpSumDensity>,
    mixture: Vec<(Dd, f64)>,
    atom: Dd,
}

/// phi1(x) = (e^x - 1)/x, stable near zero.
fn phi1(x: Dd) -> Dd {
    if x.hi().abs() < 0.5 {
        let mut term = dd(1.0);
        let mut acc = dd(1.0);
        for p in 2..30 {
            term = term * x / (p as f64);
            acc += term;
            if term.hi().abs() < 1e-35 {
                break;
            }
        }
        acc
    } else if x.hi() > 0.0 {
        (dd_div(dd(1.0), dd_exp_neg(x)) - 1.0) / x
    } else {
        (dd_exp_neg(-x) - 1.0) / x
    }
}

impl ReconvolvedDensity {
    pub fn eval(&self, t: f64) -> f64 {
        let exp_mix: Vec<Dd> = self
            .mixture
            .iter()
            .map(|&(_, b)| dd_exp_neg(dd(b) * dd(t)))
            .collect();
        let Some(mu1) = &self.mu1 else {
            // point mass at zero cannot occur without an exponential factor
            let mut acc = dd(0.0);
            for (&(w, b), e) in self.mixture.iter().zip(&exp_mix) {
                acc = acc + w * b * *e;
            }
            return f64::from(acc);
        };
        let exp_mu1: Vec<Dd> = mu1
            .terms()
            .iter()
            .map(|&(_, a)| dd_exp_neg(dd(a) * dd(t)))
            .collect();
        let mut acc = self.atom * mu1.eval(t);
        for ((&(w, b), eb), _) in self.mixture.iter().zip(&exp_mix).zip(0..) {
            // mu1 * Exp(b) at t: sum_i c_i (e^(-a_i t) - e^(-b t)) / (b - a_i)
            let mut conv = dd(0.0);
            for ((c, &(_, a)), ea) in mu1.coeffs_dd.iter().zip(mu1.terms()).zip(&exp_mu1) {
                let x = (dd(a) - dd(b)) * t;
                let pair = if x.hi().abs() <= 1.0 {
                    // t e^(-at) phi1((a-b)t): kernel argument is the small gap
                    dd(t) * *ea * phi1(-x)
                } else {
                    dd_div(*ea - *eb, dd(b) - dd(a))
                };
                conv = conv + *c * pair;
            }
            acc = acc + w * b * conv;
        }
        f64::from(acc)
    }
}

/// Split the hitting law at the target into its exponential factor (rates
/// from the Dirichlet spectrum) and the completely monotone remainder.
pub fn yamazato_factorize(s: &AtomicString) -> Result<Factorization> {
    let s = s.translate_to_origin();
    let y = s.target();

    let psi = propagate_psi(&s, Precision::Auto)?.0;
    let psi_degree = psi.degree();
    let mu1_rates = if psi_degree == 0 {
        RateSet::empty(RateSource::PsiRoots)
    } else if psi_degree <= STURM_DEGREE_MAX {
        real_roots(&psi)?
    } else {
        dirichlet_eigenrates(&s)?
    };

    let chain = build_chain(&s)?;
    let n = chain.n_states();
    let i0 = chain.start_index;
    let poles = chain_eigenrates(&chain)?;

    let mut lead = dd(1.0);
    for j in i0..n {
        lead = lead * dd(chain.right_rate[j]);
    }

    let (diag, pair) = exact_chain_data(&s);
    let use_exact = n <= tolerances::RATIONAL_BACKEND_MAX_ATOMS;
    let minors_exact;
    let minors_float;
    if use_exact {
        minors_exact = Some(chain_minors::<BigRational>(&diag, &pair, i0));
        minors_float = None;
    } else {
        minors_exact = None;
        minors_float = Some(chain_minors::<Dd>(&diag, &pair, i0));
    }
    let eval_minor = |x: f64| -> Dd {
        if let Some(ms) = &minors_exact {
            let cs = ms.last().unwrap();
            let xr = rational_from_f64(x);
            let mut acc = BigRational::from_integer(0.into());
            for c in cs.iter().rev() {
                acc = acc * &xr + c;
            }
            <Dd as Scalar>::from_rational(&acc)
        } else {
            let cs = minors_float.as_ref().unwrap().last().unwrap();
            let mut acc = dd(0.0);
            for c in cs.iter().rev() {
                acc = acc * dd(x) + *c;
            }
            acc
        }
    };

    // Residues of LT_pi(λ) ψ(y, λ) / y at the poles of LT_pi.
    let mut mixture = Vec::with_capacity(n);
    let mut mixture_dd: Vec<Dd> = Vec::with_capacity(n);
    for k in 0..n {
        let mut denom = dd(1.0);
        let mut kappa = 1.0f64;
        for j in 0..n {
            if j == k {
                continue;
            }
            denom = denom * (dd(poles[j]) - dd(poles[k]));
            kappa += poles[j].abs() / (poles[j] - poles[k]).abs();
        }
        if kappa > tolerances::CONDITION_MAX {
            return Err(Error::Numerical(format!(
                "factorization residues too ill-conditioned (kappa = {kappa:e})"
            )));
        }
        let psi_at = psi.eval_best(-poles[k]);
        let residue = dd_div(lead * eval_minor(-poles[k]) * psi_at, denom * dd(y));
        let weight_dd = residue / poles[k];
        mixture.push((f64::from(weight_dd), poles[k]));
        mixture_dd.push(weight_dd);
    }

    // Point mass at zero: leading-coefficient ratio, nonzero only when the
    // transform is not strictly proper (no start atom).
    let atom_dd = if i0 + psi_degree == n {
        lead * dd(psi.leading_coeff()) / y
    } else {
        dd(0.0)
    };
    let atom_at_zero = f64::from(atom_dd);

    let weight_sum: f64 = mixture.iter().map(|t| t.0).sum::<f64>() + atom_at_zero;
    let min_weight = mixture
        .iter()
        .map(|t| t.0)
        .fold(f64::INFINITY, f64::min)
        .min(if atom_at_zero > 0.0 {
            atom_at_zero
        } else {
            f64::INFINITY
        });
    let cm_certificate = mixture.iter().all(|&(w, _)| w >= tolerances::MU2_WEIGHT_MIN)
        && atom_at_zero >= tolerances::MU2_WEIGHT_MIN;

    Ok(Factorization {
        mu1_rates,
        mu2_mixture: mixture,
        mu2_atom_at_zero: atom_at_zero,
        cm_certificate,
        min_weight,
        weight_sum_error: weight_sum - 1.0,
        mixture_dd,
        atom_dd,
    })
}

fn ln_factorial(n: usize) -> f64 {
    if n < 2 {
        return 0.0;
    }
    if n <= 128 {
        let mut acc = 0.0;
        for k in 2..=n {
            acc += (k as f64).ln();
        }
        return acc;
    }
    let x = n as f64;
    x * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI * x).ln() + 1.0 / (12.0 * x)
        - 1.0 / (360.0 * x * x * x)
}

/// Eigen-free evaluation of the absorption density by uniformization:
/// `f(t) = sum_j Pois(j; Λt) (P^j r)[start]` with `P = I + Q/Λ`. The Poisson
/// tail is truncated below [`tolerances::UNIFORMIZATION_TRUNC`].
pub fn uniformization_check(s: &AtomicString, t_grid: &[f64]) -> Result<Vec<f64>> {
    let s = s.translate_to_origin();
    if !s.has_start_atom() && !s.is_one_sided() {
        return Err(Error::Unsupported("start must be an atom".into()));
    }
    let chain = build_chain(&s)?;
    let n = chain.n_states();
    let i0 = chain.start_index;
    let lambda = (0..n)
        .map(|i| chain.total_rate(i))
        .fold(0.0f64, f64::max)
        * 1.0001;
    let rho = *chain.right_rate.last().unwrap();
    let tol = tolerances::UNIFORMIZATION_TRUNC;

    let mut out = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        assert!(t > 0.0);
        let lt = lambda * t;
        let j_max_f = lt + 40.0 * lt.sqrt().max(3.0) + 60.0;
        if j_max_f > 5e7 {
            return Err(Error::Numerical(format!(
                "uniformization horizon exceeded at t = {t} (Λt = {lt:.3e})"
            )));
        }
        let j_max = j_max_f as usize;
        // left truncation: skip the far left Poisson tail (mass < e^-72) so
        // the starting pmf never underflows even for large Λt
        let j_lo = ((lt - 12.0 * lt.sqrt() - 30.0).floor().max(0.0)) as usize;
        let ln_pmf_lo = -lt + (j_lo as f64) * lt.ln() - ln_factorial(j_lo);
        let mut pmf = ln_pmf_lo.exp();
        let mut v = vec![0.0f64; n];
        v[n - 1] = rho; // v = r
        let mut f = 0.0f64;
        let mut j = 0usize;
        loop {
            if j >= j_lo {
                f += pmf * v[i0];
                // remaining Poisson mass is dominated by the geometric series
                // with ratio lt/(j+2) once j exceeds the mode
                let ratio = lt / (j as f64 + 2.0);
                if ratio < 1.0 {
                    let tail = pmf * (lt / (j as f64 + 1.0)) / (1.0 - ratio);
                    if rho * tail < tol {
                        break;
                    }
                }
                pmf *= lt / (j as f64 + 1.0);
            }
            if j >= j_max {
                return Err(Error::Numerical(format!(
                    "uniformization failed to converge at t = {t}"
                )));
            }
            // v <- P v with P = I + Q/Λ, tridiagonal:
            // (P v)[i] = (1 - tot_i/Λ) v[i] + (right_i/Λ) v[i+1] + (left_i/Λ) v[i-1]
            let mut next = vec![0.0f64; n];
            for i in 0..n {
                let mut acc = (1.0 - chain.total_rate(i) / lambda) * v[i];
                if i + 1 < n {
                    acc += chain.right_rate[i] / lambda * v[i + 1];
                }
                if i > 0 {
                    acc += chain.left_rate[i] / lambda * v[i - 1];
                }
                next[i] = acc;
            }
            v = next;
            j += 1;
        }
        out.push(f);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn string(atoms: &[(f64, f64)], start: f64, target: f64) -> AtomicString {
        AtomicString::new(atoms, start, target).unwrap()
    }

    fn rate_set(rates: &[f64]) -> RateSet {
        RateSet::new(rates.to_vec(), RateSource::GeneratorEigen)
    }

    fn two_atom() -> AtomicString {
        string(&[(0.0, 1.0), (0.5, 1.0)], 0.0, 1.0)
    }

    #[test]
    fn single_exponential() {
        let d = hypoexp_from_rates(&rate_set(&[1.0])).unwrap();
        assert_eq!(d.terms(), &[(1.0, 1.0)]);
        assert!((d.eval(1.0) - (-1.0f64).exp()).abs() < 1e-14);
        assert!((d.cdf(2f64.ln()) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn two_rate_coefficients_match_closed_form() {
        let s5 = 5f64.sqrt();
        let d = hypoexp_from_rates(&rate_set(&[3.0 - s5, 3.0 + s5])).unwrap();
        let c = 2.0 / s5;
        assert!((d.terms()[0].0 - c).abs() < 1e-13);
        assert!((d.terms()[1].0 + c).abs() < 1e-13);
        // f(0+) = 0: one vanishing moment
        assert_eq!(d.vanishing_moments(), 1);
        assert!((d.mean() - 1.5).abs() < 1e-12);
        assert!((d.variance() - 1.75).abs() < 1e-12);
    }

    #[test]
    fn three_rate_density_matches_grid_convolution_oracle() {
        let d = hypoexp_from_rates(&rate_set(&[1.0, 2.0, 3.0])).unwrap();
        assert!(d.moment_residual(0) < 1e-14);
        assert!(d.moment_residual(1) < 1e-14);
        assert!((d.total_mass() - 1.0).abs() < 1e-12);

        // brute-force convolution of Exp(1), Exp(2), Exp(3) on a grid
        let h = 2e-4;
        let steps = (6.0 / h) as usize;
        let f12 = |w: f64| -> f64 {
            // closed-form single convolution as an intermediate is avoided;
            // trapezoid over u in [0, w]
            let m = ((w / h) as usize).max(1);
            let hw = w / m as f64;
            let g = |u: f64| (-u).exp() * 2.0 * (-2.0 * (w - u)).exp();
            let mut acc = 0.5 * (g(0.0) + g(w));
            for i in 1..m {
                acc += g(i as f64 * hw);
            }
            acc * hw
        };
        for t in [0.5f64, 1.0, 2.0] {
            let m = ((t / h) as usize).max(2).min(steps);
            let hw = t / m as f64;
            let g = |w: f64| f12(w) * 3.0 * (-3.0 * (t - w)).exp();
            let mut acc = 0.5 * (g(0.0) + g(t));
            for i in 1..m {
                acc += g(i as f64 * hw);
            }
            let oracle = acc * hw;
            let got = d.eval(t);
            assert!(
                (got - oracle).abs() < 1e-6,
                "t={t}: exact {got} vs grid oracle {oracle}"
            );
        }
    }

    #[test]
    fn coefficients_alternate_for_hypoexp() {
        let d = hypoexp_from_rates(&rate_set(&[0.5, 1.7, 3.1, 8.2])).unwrap();
        for (i, &(c, _)) in d.terms().iter().enumerate() {
            assert!(c * if i % 2 == 0 { 1.0 } else { -1.0 } > 0.0);
        }
        assert_eq!(d.coefficient_sign_changes(), 3);
    }

    #[test]
    fn duplicate_rates_error() {
        assert!(matches!(
            hypoexp_from_rates(&rate_set(&[1.0, 1.0])),
            Err(Error::RateCollision { .. })
        ));
    }

    #[test]
    fn derivative_examples() {
        let d = hypoexp_from_rates(&rate_set(&[1.0])).unwrap();
        let d1 = d.derivative(1);
        assert_eq!(d1.terms(), &[(-1.0, 1.0)]);

        let s5 = 5f64.sqrt();
        let whale = hypoexp_from_rates(&rate_set(&[3.0 - s5, 3.0 + s5])).unwrap();
        let f1 = whale.derivative(1);
        // f'(0+) = 4 exactly
        let f1_at_zero: f64 = f1.terms().iter().map(|t| t.0).sum();
        assert!((f1_at_zero - 4.0).abs() < 1e-12);
        assert!((f1.terms()[0].0 - (2.0 - 6.0 / s5)).abs() < 1e-12);
        assert!((f1.terms()[1].0 - (2.0 + 6.0 / s5)).abs() < 1e-12);

        let a = whale.derivative(1).derivative(1);
        let b = whale.derivative(2);
        assert_eq!(a.derivative_order(), 2);
        for (x, y) in a.terms().iter().zip(b.terms()) {
            assert!((x.0 - y.0).abs() <= 1e-15 * y.0.abs());
            assert_eq!(x.1, y.1);
        }
    }

    #[test]
    fn cdf_is_monotone_to_one() {
        let d = hypoexp_from_rates(&rate_set(&[0.7, 2.0, 9.0])).unwrap();
        let mut prev = 0.0;
        for &t in &geometric_grid(0.01, 50.0, 64) {
            let c = d.cdf(t);
            assert!(c >= prev - 1e-12);
            prev = c;
        }
        assert!((d.cdf(100.0) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn taylor_and_direct_evaluation_agree_in_overlap() {
        let s = crate::string::brownian_spec().discretized(24).unwrap();
        let d = hitting_density(&s).unwrap();
        let f10 = d.derivative(10);
        let bm = f10.terms().last().unwrap().1;
        // near the switch both routes agree within the reported noise floor,
        // and that floor is itself far below the value
        for tau in [20.0, 24.9, 25.1, 30.0, 40.0] {
            let t = tau / bm;
            let (v, noise) = f10.eval_with_noise(t);
            let mut acc = dd(0.0);
            for &(c, b) in f10.terms() {
                acc = acc + dd(c) * crate::num::dd_exp_neg(dd(b) * dd(t));
            }
            let direct = f64::from(acc);
            let budget = noise + 1e-9 * direct.abs();
            assert!(
                (v - direct).abs() <= budget,
                "tau={tau}: taylor {v} vs direct {direct}"
            );
            assert!(noise <= 1e-5 * v.abs().max(direct.abs()), "noisy at tau={tau}");
        }
        // the switch itself is seamless: values on both sides interpolate
        let t_lo = 24.999 / bm;
        let t_hi = 25.001 / bm;
        let a = f10.eval(t_lo);
        let b = f10.eval(t_hi);
        assert!((a - b).abs() <= 1e-3 * a.abs().max(b.abs()));
    }

    #[test]
    fn phasetype_matches_hypoexp_on_one_sided() {
        let st = string(&[(0.0, 0.8), (0.3, 1.5), (0.7, 0.4)], 0.0, 1.0);
        let a = phasetype_general(&st).unwrap();
        let b = hitting_density(&st).unwrap();
        for &t in &comparison_grid(a.mean()) {
            assert!((a.eval(t) - b.eval(t)).abs() < 1e-9, "t={t}");
        }
    }

    #[test]
    fn phasetype_single_state_is_exponential() {
        let st = string(&[(0.0, 1.0)], 0.0, 1.0);
        let d = phasetype_general(&st).unwrap();
        assert_eq!(d.terms().len(), 1);
        assert!((d.terms()[0].0 - 1.0).abs() < 1e-13);
        assert!((d.terms()[0].1 - 1.0).abs() < 1e-13);
    }

    #[test]
    fn phasetype_two_sided_three_state() {
        let st = string(&[(-0.5, 1.0), (0.0, 1.0), (0.5, 1.0)], 0.0, 1.0);
        let d = phasetype_general(&st).unwrap();
        assert_eq!(d.terms().len(), 3);
        // one state above the start: exactly one vanishing moment
        assert_eq!(d.vanishing_moments(), 1);
        assert!((d.mean() - 2.5).abs() < 1e-10);
        assert_eq!(d.coefficient_sign_changes(), 1);
        // against the independent uniformization oracle
        let grid = [0.2, 0.5, 1.0, 2.0, 5.0];
        let uni = uniformization_check(&st, &grid).unwrap();
        for (&t, &u) in grid.iter().zip(&uni) {
            assert!(
                (d.eval(t) - u).abs() < tolerances::UNIFORMIZATION_MATCH_ABS,
                "t={t}: {} vs {u}",
                d.eval(t)
            );
        }
    }

    #[test]
    fn uniformization_closed_forms() {
        let st = string(&[(0.0, 1.0)], 0.0, 1.0);
        let vals = uniformization_check(&st, &[1.0]).unwrap();
        assert!((vals[0] - (-1.0f64).exp()).abs() < 1e-10);

        let st = two_atom();
        let d = hitting_density(&st).unwrap();
        let mode = ((3.0 + 5f64.sqrt()) / (3.0 - 5f64.sqrt())).ln() / (2.0 * 5f64.sqrt());
        let vals = uniformization_check(&st, &[mode]).unwrap();
        assert!((vals[0] - d.eval(mode)).abs() < 1e-8);
    }

    #[test]
    fn uniformization_on_discretized_brownian() {
        let st = crate::string::brownian_spec().discretized(32).unwrap();
        let d = hitting_density(&st).unwrap();
        let vals = uniformization_check(&st, &[0.5]).unwrap();
        assert!(
            (vals[0] - d.eval(0.5)).abs() < tolerances::UNIFORMIZATION_MATCH_ABS,
            "{} vs {}",
            vals[0],
            d.eval(0.5)
        );
    }

    #[test]
    fn factorization_two_atom_worked_example() {
        let f = yamazato_factorize(&two_atom()).unwrap();
        assert_eq!(f.mu1_rates.len(), 1);
        assert!((f.mu1_rates.rates[0] - 4.0).abs() < 1e-12);
        assert_eq!(f.mu2_atom_at_zero, 0.0);
        assert!((f.mu2_mixture[0].0 - 0.947213595499958).abs() < 1e-12);
        assert!((f.mu2_mixture[1].0 - 0.052786404500042).abs() < 1e-12);
        assert!(f.cm_certificate);
        assert!(f.weight_sum_error.abs() < tolerances::MU2_WEIGHT_SUM_TOL);
        // mu1 mean + mu2 mean = full mean
        let mu2_mean: f64 = f.mu2_mixture.iter().map(|&(w, b)| w / b).sum();
        assert!((0.25 + mu2_mean - 1.5).abs() < 1e-12);
    }

    #[test]
    fn factorization_pure_start_atom() {
        let f = yamazato_factorize(&string(&[(0.0, 1.0)], 0.0, 1.0)).unwrap();
        assert!(f.mu1_rates.is_empty());
        assert_eq!(f.mu2_mixture.len(), 1);
        assert!((f.mu2_mixture[0].0 - 1.0).abs() < 1e-13);
        assert!((f.mu2_mixture[0].1 - 1.0).abs() < 1e-13);
        assert!(f.cm_certificate);
    }

    #[test]
    fn factorization_without_start_atom_has_atom_at_zero() {
        // law is Exp(2); exponential factor Exp(4); remainder = delta_0/2 + Exp(2)/2
        let f = yamazato_factorize(&string(&[(0.5, 1.0)], 0.0, 1.0)).unwrap();
        assert_eq!(f.mu1_rates.len(), 1);
        assert!((f.mu1_rates.rates[0] - 4.0).abs() < 1e-12);
        assert!((f.mu2_atom_at_zero - 0.5).abs() < 1e-13);
        assert_eq!(f.mu2_mixture.len(), 1);
        assert!((f.mu2_mixture[0].0 - 0.5).abs() < 1e-13);
        assert!((f.mu2_mixture[0].1 - 2.0).abs() < 1e-12);
        assert!(f.cm_certificate);
    }

    #[test]
    fn reconvolution_reproduces_direct_density() {
        for st in [
            two_atom(),
            string(&[(0.5, 1.0)], 0.0, 1.0),
            string(&[(0.0, 1.0)], 0.0, 1.0),
            string(&[(-0.5, 1.0), (0.0, 1.0), (0.5, 1.0)], 0.0, 1.0),
            string(&[(0.1, 0.4), (0.2, 2.5), (0.55, 1.1), (0.8, 0.2)], 0.0, 1.0),
        ] {
            let direct = hitting_density(&st).unwrap();
            let f = yamazato_factorize(&st).unwrap();
            let re = f.reconvolved().unwrap();
            let mut sup = 0.0f64;
            for &t in &comparison_grid(direct.mean()) {
                sup = sup.max((direct.eval(t) - re.eval(t)).abs());
            }
            assert!(
                sup <= tolerances::CONVOLUTION_SUP_ABS,
                "sup-norm {sup:e} for {:?}",
                st.atoms()
            );
        }
    }

    proptest! {
        #[test]
        fn vandermonde_identities_on_random_strings(n in 2usize..=10, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
            let mut xs: Vec<f64> = (0..n).map(|_| 10f64.powf(rng.random_range(-1.0..1.0))).collect();
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            xs.dedup_by(|a, b| (*a - *b).abs() < 1e-6 * b.abs());
            let atoms: Vec<(f64, f64)> = xs.iter().map(|&x| (x, 10f64.powf(rng.random_range(-1.0..1.0)))).collect();
            let target = xs.last().unwrap() * 1.3;
            let st = AtomicString::new(&atoms, xs[0], target).unwrap().translate_to_origin();
            let d = hitting_density(&st).unwrap();
            let m = d.terms().len();
            for j in 0..m.saturating_sub(1) {
                prop_assert!(d.moment_residual(j as u32) <= tolerances::VANDERMONDE_REL,
                    "moment {} residual {}", j, d.moment_residual(j as u32));
            }
            prop_assert_eq!(d.vanishing_moments(), m - 1);
        }
    }
}
