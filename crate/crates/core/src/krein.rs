//! Fundamental solutions of the string equation as polynomials in the
//! spectral variable.
//!
//! For an atomic measure the solution is piecewise linear in space, so
//! propagating it from the start to the target reduces to a (value, slope)
//! pair of polynomials in λ per segment: crossing an atom of mass m at
//! position t adds `λ · m · value(t)` to the slope. The Dirichlet solution
//! (value 0, slope 1 at the start) has degree equal to the number of interior
//! atoms; the Neumann companion (value 1, slope 0) picks up the start atom as
//! well, and its reciprocal at the target is the Laplace transform of the full
//! hitting law from the bottom of the string.

use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::num::{horner_dd, Dd, Scalar};
use crate::rational::rational_from_f64;
use crate::string::{AtomicString, Precision};
use crate::tolerances;

/// Which boundary data the polynomial was propagated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PolyKind {
    /// Dirichlet at the start: value 0, slope 1.
    Psi,
    /// Neumann at the start: value 1, slope 0.
    Phi,
}

/// A polynomial in the spectral variable λ with strictly positive
/// coefficients, ascending order.
#[derive(Debug, Clone, Serialize)]
pub struct LambdaPolynomial {
    pub kind: PolyKind,
    coeffs: Vec<f64>,
    #[serde(skip)]
    exact: Option<Vec<BigRational>>,
}

impl LambdaPolynomial {
    fn new(kind: PolyKind, coeffs: Vec<f64>, exact: Option<Vec<BigRational>>) -> Self {
        LambdaPolynomial {
            kind,
            coeffs,
            exact,
        }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn exact_coeffs(&self) -> Option<&[BigRational]> {
        self.exact.as_deref()
    }

    pub fn constant_term(&self) -> f64 {
        self.coeffs[0]
    }

    pub fn leading_coeff(&self) -> f64 {
        *self.coeffs.last().unwrap()
    }

    /// Evaluate at λ in double-double.
    pub fn eval_dd(&self, lambda: Dd) -> Dd {
        horner_dd(&self.coeffs, lambda)
    }

    /// Evaluate at a dyadic λ exactly when exact coefficients are available,
    /// in double-double otherwise.
    pub fn eval_best(&self, lambda: f64) -> Dd {
        match &self.exact {
            Some(exact) => {
                let x = rational_from_f64(lambda);
                let mut acc = <BigRational as Zero>::zero();
                for c in exact.iter().rev() {
                    acc = acc * &x + c;
                }
                <Dd as Scalar>::from_rational(&acc)
            }
            None => self.eval_dd(Dd::from(lambda)),
        }
    }
}

/// Per-atom record of the propagated value and outgoing slope.
#[derive(Debug, Clone, Serialize)]
pub struct TraceRecord {
    pub position: f64,
    pub value: LambdaPolynomial,
    pub right_slope: LambdaPolynomial,
}

/// The piecewise-linear-in-space structure of the solution along the string.
#[derive(Debug, Clone, Serialize)]
pub struct KreinTrace {
    pub records: Vec<TraceRecord>,
}

fn resolve(precision: Precision, n_atoms: usize) -> Result<Precision> {
    match precision {
        Precision::Auto => Ok(if n_atoms <= tolerances::RATIONAL_BACKEND_MAX_ATOMS {
            Precision::Rational
        } else {
            Precision::Extended
        }),
        Precision::Rational if n_atoms > tolerances::RATIONAL_BACKEND_MAX_ATOMS => {
            Err(Error::Unsupported(format!(
                "rational backend limited to {} atoms (got {n_atoms})",
                tolerances::RATIONAL_BACKEND_MAX_ATOMS
            )))
        }
        p => Ok(p),
    }
}

fn poly_axpy<T: Scalar>(dst: &mut Vec<T>, scale: &T, src: &[T]) {
    while dst.len() < src.len() {
        dst.push(T::zero());
    }
    for (d, s) in dst.iter_mut().zip(src.iter()) {
        *d = d.add(&scale.mul(s));
    }
}

/// One propagation pass. Atoms below the origin are skipped (the Dirichlet
/// solution never sees them; the caller rejects them for the Neumann one).
fn run<T: Scalar>(
    s: &AtomicString,
    dirichlet: bool,
) -> (Vec<f64>, Vec<(f64, Vec<T>, Vec<T>)>, Vec<T>) {
    let y = T::from_rational(s.target_exact());
    let zero = <BigRational as Zero>::zero();
    let mut value: Vec<T> = vec![if dirichlet { T::zero() } else { T::one() }];
    let mut slope: Vec<T> = vec![if dirichlet { T::one() } else { T::zero() }];
    let mut prev = T::zero();
    let mut records = Vec::new();
    let mut positions = Vec::new();
    for (x, m) in s.exact_atoms() {
        if *x < zero {
            continue;
        }
        let xt = T::from_rational(x);
        let mt = T::from_rational(m);
        let gap = xt.sub(&prev);
        poly_axpy(&mut value, &gap, &slope.clone());
        // slope += λ m value: shift by one power
        let mut bumped = vec![T::zero()];
        bumped.extend(value.iter().map(|c| mt.mul(c)));
        poly_axpy(&mut slope, &T::one(), &bumped);
        records.push((ToPrimitive::to_f64(x).unwrap_or(f64::NAN), value.clone(), slope.clone()));
        positions.push(ToPrimitive::to_f64(x).unwrap_or(f64::NAN));
        prev = xt;
    }
    let gap = y.sub(&prev);
    poly_axpy(&mut value, &gap, &slope.clone());
    (positions, records, value)
}

fn trim_zeros<T: Scalar>(v: &[T]) -> Vec<f64> {
    let mut out: Vec<f64> = v.iter().map(Scalar::as_f64).collect();
    while out.len() > 1 && out.last() == Some(&0.0) {
        out.pop();
    }
    out
}

fn trim_exact(v: &[BigRational]) -> Vec<BigRational> {
    let mut out = v.to_vec();
    while out.len() > 1 && out.last().map(Zero::is_zero).unwrap_or(false) {
        out.pop();
    }
    out
}

fn propagate(s: &AtomicString, precision: Precision, dirichlet: bool) -> Result<(LambdaPolynomial, KreinTrace)> {
    let s = s.translate_to_origin();
    let kind = if dirichlet { PolyKind::Psi } else { PolyKind::Phi };
    let backend = resolve(precision, s.atoms().len())?;
    let (final_poly, records) = match backend {
        Precision::Double => {
            let (pos, recs, fin) = run::<f64>(&s, dirichlet);
            let records = pos
                .iter()
                .zip(&recs)
                .map(|(&p, (_, v, sl))| TraceRecord {
                    position: p,
                    value: LambdaPolynomial::new(kind, trim_zeros(v), None),
                    right_slope: LambdaPolynomial::new(kind, trim_zeros(sl), None),
                })
                .collect();
            (LambdaPolynomial::new(kind, trim_zeros(&fin), None), records)
        }
        Precision::Extended => {
            let (pos, recs, fin) = run::<Dd>(&s, dirichlet);
            let records = pos
                .iter()
                .zip(&recs)
                .map(|(&p, (_, v, sl))| TraceRecord {
                    position: p,
                    value: LambdaPolynomial::new(kind, trim_zeros(v), None),
                    right_slope: LambdaPolynomial::new(kind, trim_zeros(sl), None),
                })
                .collect();
            (LambdaPolynomial::new(kind, trim_zeros(&fin), None), records)
        }
        Precision::Rational | Precision::Auto => {
            let (pos, recs, fin) = run::<BigRational>(&s, dirichlet);
            let records = pos
                .iter()
                .zip(&recs)
                .map(|(&p, (_, v, sl))| TraceRecord {
                    position: p,
                    value: LambdaPolynomial::new(kind, trim_zeros(v), Some(trim_exact(v))),
                    right_slope: LambdaPolynomial::new(kind, trim_zeros(sl), Some(trim_exact(sl))),
                })
                .collect();
            (
                LambdaPolynomial::new(kind, trim_zeros(&fin), Some(trim_exact(&fin))),
                records,
            )
        }
    };
    if final_poly.coeffs().iter().any(|&c| !(c > 0.0)) {
        return Err(Error::Numerical(format!(
            "{kind:?} propagation produced a nonpositive coefficient: {:?}",
            final_poly.coeffs()
        )));
    }
    Ok((final_poly, KreinTrace { records }))
}

/// Dirichlet solution at the target. Constant term is the start-to-target
/// distance; degree equals the interior atom count (an atom at the start is
/// annihilated by the zero boundary value).
pub fn propagate_psi(s: &AtomicString, precision: Precision) -> Result<(LambdaPolynomial, KreinTrace)> {
    let (p, trace) = propagate(s, precision, true)?;
    let expected = s.interior_count();
    if p.degree() != expected {
        return Err(Error::Numerical(format!(
            "psi degree {} does not match interior atom count {expected}",
            p.degree()
        )));
    }
    Ok((p, trace))
}

/// Neumann companion solution at the target. Requires a one-sided string; its
/// degree equals the number of atoms in [start, target).
pub fn propagate_phi(s: &AtomicString, precision: Precision) -> Result<(LambdaPolynomial, KreinTrace)> {
    if !s.is_one_sided() {
        return Err(Error::Unsupported(
            "phi propagation requires no mass below the start; two-sided strings go through the phase-type path".into(),
        ));
    }
    let (p, trace) = propagate(s, precision, false)?;
    let expected = s.window_count();
    if p.degree() != expected {
        return Err(Error::Numerical(format!(
            "phi degree {} does not match window atom count {expected}",
            p.degree()
        )));
    }
    Ok((p, trace))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MeanIdentities {
    /// Mean of the full hitting law: `sum (y - t) m` over atoms in [0, y).
    pub full_mean: f64,
    /// Mean of the exponential-factor convolution: `(1/y) sum t (y - t) m`
    /// over interior atoms, which equals the sum of reciprocal Dirichlet rates.
    pub mu1_mean: f64,
}

/// Closed-form first moments, cross-checked against the λ-linear coefficients
/// of the propagated polynomials.
pub fn mean_identities(s: &AtomicString) -> Result<MeanIdentities> {
    if !s.is_one_sided() {
        return Err(Error::Unsupported(
            "mean identities require a one-sided string".into(),
        ));
    }
    let s = s.translate_to_origin();
    let y = s.target_exact().clone();
    let mut full = <BigRational as Zero>::zero();
    let mut mu1 = <BigRational as Zero>::zero();
    for (x, m) in s.exact_atoms() {
        if x.is_negative() || *x >= y {
            continue;
        }
        full += m * (&y - x);
        mu1 += m * x * (&y - x);
    }
    mu1 /= &y;
    let full_mean = ToPrimitive::to_f64(&full).unwrap_or(f64::NAN);
    let mu1_mean = ToPrimitive::to_f64(&mu1).unwrap_or(f64::NAN);

    let (phi, _) = propagate_phi(&s, Precision::Auto)?;
    let phi_ratio = if phi.degree() >= 1 {
        phi.coeffs()[1] / phi.coeffs()[0]
    } else {
        0.0
    };
    let (psi, _) = propagate_psi(&s, Precision::Auto)?;
    let psi_ratio = if psi.degree() >= 1 {
        psi.coeffs()[1] / psi.coeffs()[0]
    } else {
        0.0
    };
    let tol = 1e-12;
    if (phi_ratio - full_mean).abs() > tol * full_mean.abs().max(1.0)
        || (psi_ratio - mu1_mean).abs() > tol * mu1_mean.abs().max(1.0)
    {
        return Err(Error::Numerical(format!(
            "mean identities disagree with polynomial coefficients: {full_mean} vs {phi_ratio}, {mu1_mean} vs {psi_ratio}"
        )));
    }
    Ok(MeanIdentities {
        full_mean,
        mu1_mean,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DegreeReport {
    pub psi_degree: usize,
    pub phi_degree: usize,
    pub interior_count: usize,
}

/// Structural degree law: the Dirichlet degree is the interior atom count,
/// the Neumann degree the window atom count. Verified against an actual
/// propagation whenever the string admits one.
pub fn degree_check(s: &AtomicString) -> Result<DegreeReport> {
    let interior = s.interior_count();
    let psi_degree = propagate_psi(s, Precision::Auto)?.0.degree();
    let phi_degree = if s.is_one_sided() {
        propagate_phi(s, Precision::Auto)?.0.degree()
    } else {
        s.window_count()
    };
    Ok(DegreeReport {
        psi_degree,
        phi_degree,
        interior_count: interior,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn string(atoms: &[(f64, f64)], start: f64, target: f64) -> AtomicString {
        AtomicString::new(atoms, start, target).unwrap()
    }

    #[test]
    fn psi_annihilates_start_atom() {
        let s = string(&[(0.0, 1.0)], 0.0, 1.0);
        let (psi, _) = propagate_psi(&s, Precision::Auto).unwrap();
        assert_eq!(psi.coeffs(), &[1.0]);
    }

    #[test]
    fn psi_single_interior_atom() {
        let s = string(&[(0.5, 1.0)], 0.0, 1.0);
        let (psi, _) = propagate_psi(&s, Precision::Auto).unwrap();
        assert_eq!(psi.coeffs(), &[1.0, 0.25]);

        let s = string(&[(0.0, 1.0), (0.5, 1.0)], 0.0, 1.0);
        let (psi, _) = propagate_psi(&s, Precision::Auto).unwrap();
        assert_eq!(psi.coeffs(), &[1.0, 0.25]);
    }

    #[test]
    fn phi_worked_examples() {
        let s = string(&[(0.0, 1.0)], 0.0, 1.0);
        let (phi, _) = propagate_phi(&s, Precision::Auto).unwrap();
        assert_eq!(phi.coeffs(), &[1.0, 1.0]);

        let s = string(&[(0.0, 1.0), (0.5, 1.0)], 0.0, 1.0);
        let (phi, _) = propagate_phi(&s, Precision::Auto).unwrap();
        assert_eq!(phi.coeffs(), &[1.0, 1.5, 0.25]);
    }

    #[test]
    fn phi_rejects_two_sided() {
        let s = string(&[(-0.5, 1.0), (0.0, 1.0)], 0.0, 1.0);
        assert!(propagate_phi(&s, Precision::Auto).is_err());
    }

    #[test]
    fn mean_identity_examples() {
        let s = string(&[(0.0, 1.0)], 0.0, 1.0);
        let m = mean_identities(&s).unwrap();
        assert_eq!(m.full_mean, 1.0);
        assert_eq!(m.mu1_mean, 0.0);

        let s = string(&[(0.0, 1.0), (0.5, 1.0)], 0.0, 1.0);
        let m = mean_identities(&s).unwrap();
        assert_eq!(m.full_mean, 1.5);
        assert_eq!(m.mu1_mean, 0.25);
    }

    #[test]
    fn brownian_discretization_mean_is_one_for_every_k() {
        for k in [1usize, 2, 8, 64] {
            let s = crate::string::brownian_spec().discretized(k).unwrap();
            let m = mean_identities(&s).unwrap();
            assert_eq!(m.full_mean, 1.0, "k={k}");
        }
    }

    #[test]
    fn degree_examples() {
        let s = string(&[(0.25, 1.0), (0.5, 1.0), (0.75, 1.0)], 0.0, 1.0);
        let d = degree_check(&s).unwrap();
        assert_eq!(d.psi_degree, 3);

        let s = string(&[(0.0, 5.0)], 0.0, 1.0);
        let d = degree_check(&s).unwrap();
        assert_eq!((d.psi_degree, d.phi_degree), (0, 1));

        let s = crate::string::brownian_spec().discretized(12).unwrap();
        assert_eq!(degree_check(&s).unwrap().psi_degree, 12);
    }

    #[test]
    fn trace_coefficients_nondecreasing_along_atoms() {
        let s = string(&[(0.1, 0.7), (0.4, 2.0), (0.8, 0.3)], 0.0, 1.0);
        for dirichlet in [true, false] {
            let (_, trace) = if dirichlet {
                propagate_psi(&s, Precision::Auto).unwrap()
            } else {
                propagate_phi(&s, Precision::Auto).unwrap()
            };
            for w in trace.records.windows(2) {
                for (i, c) in w[0].value.coeffs().iter().enumerate() {
                    assert!(w[1].value.coeffs()[i] >= *c);
                }
            }
        }
    }

    fn arb_string() -> impl Strategy<Value = AtomicString> {
        (2usize..=20, any::<u64>()).prop_map(|(n, seed)| {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
            let mut xs: Vec<f64> = (0..n)
                .map(|_| 10f64.powf(rng.random_range(-1.0..1.0)))
                .collect();
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            xs.dedup_by(|a, b| (*a - *b).abs() < 1e-9 * b.abs());
            let start_atom = rng.random_bool(0.5);
            let start = if start_atom { xs[0] } else { 0.0 };
            let target = xs.last().unwrap() * (1.0 + rng.random_range(0.05..0.5));
            let atoms: Vec<(f64, f64)> = xs
                .iter()
                .map(|&x| (x, 10f64.powf(rng.random_range(-1.0..1.0))))
                .collect();
            AtomicString::new(&atoms, start, target)
                .unwrap()
                .translate_to_origin()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1024))]

        #[test]
        fn degree_laws_hold(s in arb_string()) {
            let d = degree_check(&s).unwrap();
            prop_assert_eq!(d.psi_degree, s.interior_count());
            prop_assert_eq!(d.phi_degree, s.window_count());
            prop_assert_eq!(d.phi_degree - d.psi_degree, usize::from(s.has_start_atom()));
        }

        #[test]
        fn coefficients_strictly_positive(s in arb_string()) {
            let (psi, _) = propagate_psi(&s, Precision::Auto).unwrap();
            let (phi, _) = propagate_phi(&s, Precision::Auto).unwrap();
            prop_assert!(psi.coeffs().iter().all(|&c| c > 0.0));
            prop_assert!(phi.coeffs().iter().all(|&c| c > 0.0));
            prop_assert_eq!(phi.constant_term(), 1.0);
            prop_assert!((psi.constant_term() - s.target()).abs() < 1e-12 * s.target());
        }
    }

    proptest! {
        #[test]
        fn two_atom_closed_form(
            m0 in 0.1f64..10.0, m1 in 0.1f64..10.0,
            t1 in 0.1f64..0.9, yext in 0.1f64..2.0,
        ) {
            let y = t1 + yext;
            let s = string(&[(0.0, m0), (t1, m1)], 0.0, y);
            let (phi, _) = propagate_phi(&s, Precision::Auto).unwrap();
            let expect = [
                1.0,
                m0 * t1 + (m0 + m1) * (y - t1),
                m0 * m1 * t1 * (y - t1),
            ];
            for (a, b) in phi.coeffs().iter().zip(expect.iter()) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs());
            }
        }

        #[test]
        fn scaling_covariance(
            scale in 0.1f64..10.0, mass_scale in 0.1f64..10.0,
            t1 in 0.25f64..0.75,
        ) {
            // psi_scaled(s*y, λ) = s * psi(y, s*mu*λ) coefficientwise:
            // c_k -> s * (s*mu)^k * c_k
            let base = string(&[(0.0, 1.0), (t1, 2.0), (0.8, 0.5)], 0.0, 1.0);
            let scaled = string(
                &[(0.0, mass_scale), (t1 * scale, 2.0 * mass_scale), (0.8 * scale, 0.5 * mass_scale)],
                0.0,
                scale,
            );
            let (p0, _) = propagate_psi(&base, Precision::Auto).unwrap();
            let (p1, _) = propagate_psi(&scaled, Precision::Auto).unwrap();
            prop_assert_eq!(p0.degree(), p1.degree());
            for (k, (a, b)) in p0.coeffs().iter().zip(p1.coeffs().iter()).enumerate() {
                let predicted = scale * (scale * mass_scale).powi(k as i32) * a;
                prop_assert!((predicted - b).abs() <= 1e-10 * b.abs().max(1e-300),
                    "k={} predicted={} got={}", k, predicted, b);
            }
        }
    }
}
