//! Speed measures in natural scale: atomic strings, continuous pieces, and
//! the ingestion/validation layer.
//!
//! Positions and masses are carried both as f64 (for fast arithmetic) and as
//! exact rationals (decimal-string inputs stay exact; f64 inputs convert
//! exactly), so the rational propagation backend and translations never lose
//! information.

use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ValidationError};
use crate::rational::{parse_decimal, rational_from_f64};

/// Arithmetic backend for the polynomial recursions.
///
/// `Auto` selects the exact rational backend for strings of at most
/// [`tolerances::RATIONAL_BACKEND_MAX_ATOMS`] atoms and double-double above.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Double,
    Extended,
    Rational,
    #[default]
    Auto,
}

/// One atom of the speed measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Atom {
    pub position: f64,
    pub mass: f64,
}

/// A purely atomic speed measure together with the hitting problem
/// (start point, target level).
///
/// Invariants are established by the constructors: positions strictly
/// increasing, masses positive, target above start and above every atom, at
/// least one atom in `[start, target)`, and if mass lies strictly below the
/// start then the start itself is an atom.
#[derive(Debug, Clone)]
pub struct AtomicString {
    atoms: Vec<Atom>,
    exact: Vec<(BigRational, BigRational)>,
    start: f64,
    target: f64,
    start_exact: BigRational,
    target_exact: BigRational,
}

impl AtomicString {
    /// Construct from f64 data (converted exactly to rationals internally).
    pub fn new(atoms: &[(f64, f64)], start: f64, target: f64) -> Result<Self> {
        let exact: Vec<_> = atoms
            .iter()
            .map(|&(x, m)| (rational_from_f64(x), rational_from_f64(m)))
            .collect();
        Self::from_exact(exact, rational_from_f64(start), rational_from_f64(target))
    }

    /// Construct from exact rational data, enforcing all invariants.
    pub fn from_exact(
        exact: Vec<(BigRational, BigRational)>,
        start_exact: BigRational,
        target_exact: BigRational,
    ) -> Result<Self> {
        if exact.is_empty() {
            return Err(ValidationError::EmptyString.into());
        }
        if target_exact <= start_exact {
            return Err(ValidationError::TargetNotAboveStart {
                start: start_exact.to_f64().unwrap_or(f64::NAN),
                target: target_exact.to_f64().unwrap_or(f64::NAN),
            }
            .into());
        }
        for w in exact.windows(2) {
            if w[1].0 == w[0].0 {
                return Err(
                    ValidationError::DuplicatePosition(w[0].0.to_f64().unwrap_or(f64::NAN)).into(),
                );
            }
            if w[1].0 < w[0].0 {
                return Err(ValidationError::UnsortedAtoms(
                    w[1].0.to_f64().unwrap_or(f64::NAN),
                    w[0].0.to_f64().unwrap_or(f64::NAN),
                )
                .into());
            }
        }
        for (x, m) in &exact {
            if !m.is_positive() {
                return Err(ValidationError::NonpositiveMass {
                    position: x.to_f64().unwrap_or(f64::NAN),
                    mass: m.to_f64().unwrap_or(f64::NAN),
                }
                .into());
            }
            if *x >= target_exact {
                return Err(
                    ValidationError::TargetNotAboveAtoms(x.to_f64().unwrap_or(f64::NAN)).into(),
                );
            }
        }
        if !exact.iter().any(|(x, _)| *x >= start_exact) {
            return Err(ValidationError::NoMassInWindow.into());
        }
        let below = exact.iter().any(|(x, _)| *x < start_exact);
        if below && !exact.iter().any(|(x, _)| *x == start_exact) {
            return Err(ValidationError::StartNotAnAtom.into());
        }
        let atoms = exact
            .iter()
            .map(|(x, m)| Atom {
                position: x.to_f64().unwrap_or(f64::NAN),
                mass: m.to_f64().unwrap_or(f64::NAN),
            })
            .collect();
        Ok(AtomicString {
            atoms,
            exact,
            start: start_exact.to_f64().unwrap_or(f64::NAN),
            target: target_exact.to_f64().unwrap_or(f64::NAN),
            start_exact,
            target_exact,
        })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn exact_atoms(&self) -> &[(BigRational, BigRational)] {
        &self.exact
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn target(&self) -> f64 {
        self.target
    }

    pub fn start_exact(&self) -> &BigRational {
        &self.start_exact
    }

    pub fn target_exact(&self) -> &BigRational {
        &self.target_exact
    }

    /// Shift so that the start sits at the origin. The hitting law is
    /// invariant under this shift; the subtraction is exact (rational).
    pub fn translate_to_origin(&self) -> AtomicString {
        if self.start_exact.is_zero() {
            return self.clone();
        }
        let s = self.start_exact.clone();
        let exact = self
            .exact
            .iter()
            .map(|(x, m)| (x - &s, m.clone()))
            .collect();
        AtomicString::from_exact(exact, BigRational::zero(), &self.target_exact - &s)
            .expect("translation preserves invariants")
    }

    /// Number of atoms strictly inside the open interval.
    pub fn count_increase_points(&self, open_lower: f64, open_upper: f64) -> usize {
        self.atoms
            .iter()
            .filter(|a| a.position > open_lower && a.position < open_upper)
            .count()
    }

    /// Atoms strictly between start and target; the degree of the Dirichlet
    /// solution and the `n` of the finite-string shape dichotomy.
    pub fn interior_count(&self) -> usize {
        self.exact
            .iter()
            .filter(|(x, _)| *x > self.start_exact && *x < self.target_exact)
            .count()
    }

    /// Atoms in `[start, target)`.
    pub fn window_count(&self) -> usize {
        self.exact
            .iter()
            .filter(|(x, _)| *x >= self.start_exact)
            .count()
    }

    pub fn has_start_atom(&self) -> bool {
        self.exact.iter().any(|(x, _)| *x == self.start_exact)
    }

    /// True when no mass lies strictly below the start.
    pub fn is_one_sided(&self) -> bool {
        self.exact.iter().all(|(x, _)| *x >= self.start_exact)
    }

    /// Index of the atom the process starts in: the atom at `start`, or the
    /// leftmost atom when the start lies below all mass (the time change skips
    /// massless regions).
    pub fn start_index(&self) -> usize {
        self.exact
            .iter()
            .position(|(x, _)| *x == self.start_exact)
            .unwrap_or(0)
    }

    /// Mean hitting time `sum_t m_t * (target - max(start, t))`, valid for
    /// one- and two-sided strings (reflection below the leftmost atom).
    pub fn mean_hitting_time(&self) -> f64 {
        let mut acc = BigRational::zero();
        for (x, m) in &self.exact {
            let anchor = if *x > self.start_exact {
                x.clone()
            } else {
                self.start_exact.clone()
            };
            acc += m * (&self.target_exact - anchor);
        }
        acc.to_f64().unwrap_or(f64::NAN)
    }
}

/// A value that is either a JSON number (read through f64, converted exactly)
/// or a decimal string (parsed exactly).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum DecimalValue {
    Num(f64),
    Text(String),
}

impl DecimalValue {
    pub fn to_rational(&self) -> Result<BigRational> {
        match self {
            DecimalValue::Num(x) if x.is_finite() => Ok(rational_from_f64(*x)),
            DecimalValue::Num(x) => Err(ValidationError::BadDecimal(x.to_string()).into()),
            DecimalValue::Text(s) => Ok(parse_decimal(s)?),
        }
    }
}

impl From<f64> for DecimalValue {
    fn from(x: f64) -> Self {
        DecimalValue::Num(x)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AtomSpec {
    pub x: DecimalValue,
    pub m: DecimalValue,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DensityCells {
    Constant(DecimalValue),
    Cells(Vec<DecimalValue>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PieceSpec {
    pub from: DecimalValue,
    pub to: DecimalValue,
    pub density: DensityCells,
}

/// The absolutely continuous part of the measure on one interval, as a
/// piecewise-constant density over equal-width cells.
#[derive(Debug, Clone)]
pub struct ContinuousPiece {
    lower: BigRational,
    upper: BigRational,
    cells: Vec<BigRational>,
}

impl ContinuousPiece {
    pub fn new(lower: BigRational, upper: BigRational, cells: Vec<BigRational>) -> Result<Self> {
        if lower >= upper {
            return Err(ValidationError::BadPieceBounds {
                lower: lower.to_f64().unwrap_or(f64::NAN),
                upper: upper.to_f64().unwrap_or(f64::NAN),
            }
            .into());
        }
        if cells.is_empty()
            || cells.iter().any(|c| c.is_negative())
            || cells.iter().all(Zero::is_zero)
        {
            return Err(ValidationError::BadPieceDensity.into());
        }
        Ok(ContinuousPiece {
            lower,
            upper,
            cells,
        })
    }

    pub fn from_f64(lower: f64, upper: f64, cells: &[f64]) -> Result<Self> {
        Self::new(
            rational_from_f64(lower),
            rational_from_f64(upper),
            cells.iter().map(|&c| rational_from_f64(c)).collect(),
        )
    }

    pub fn lower(&self) -> f64 {
        self.lower.to_f64().unwrap_or(f64::NAN)
    }

    pub fn upper(&self) -> f64 {
        self.upper.to_f64().unwrap_or(f64::NAN)
    }

    /// Total mass of the piece, exactly.
    pub fn total_mass(&self) -> BigRational {
        let width = (&self.upper - &self.lower) / BigRational::from_integer(self.cells.len().into());
        self.cells.iter().map(|c| c * &width).sum()
    }

    /// Midpoint discretization into k atoms: each atom sits at the midpoint of
    /// one of k equal cells and carries that cell's exact mass.
    pub fn discretize_exact(&self, k: usize) -> Vec<(BigRational, BigRational)> {
        assert!(k >= 1);
        let kq = BigRational::from_integer(k.into());
        let width = (&self.upper - &self.lower) / &kq;
        let nc = self.cells.len();
        let ncq = BigRational::from_integer(nc.into());
        let cell_width = (&self.upper - &self.lower) / &ncq;
        let two = BigRational::from_integer(2.into());
        let mut out = Vec::with_capacity(k);
        for j in 0..k {
            let jq = BigRational::from_integer(j.into());
            let lo = &self.lower + &jq * &width;
            let hi = &lo + &width;
            let mid = (&lo + &hi) / &two;
            // integrate the piecewise-constant density over [lo, hi]
            let mut mass = BigRational::zero();
            for (i, dens) in self.cells.iter().enumerate() {
                if dens.is_zero() {
                    continue;
                }
                let c_lo = &self.lower + BigRational::from_integer(i.into()) * &cell_width;
                let c_hi = &c_lo + &cell_width;
                let a = if lo > c_lo { lo.clone() } else { c_lo };
                let b = if hi < c_hi { hi.clone() } else { c_hi };
                if b > a {
                    mass += dens * (b - a);
                }
            }
            out.push((mid, mass));
        }
        out
    }
}

/// Midpoint discretization, f64 view. Total mass is preserved exactly by the
/// rational computation underneath.
pub fn discretize(piece: &ContinuousPiece, k: usize) -> Vec<(f64, f64)> {
    piece
        .discretize_exact(k)
        .into_iter()
        .map(|(x, m)| (x.to_f64().unwrap_or(f64::NAN), m.to_f64().unwrap_or(f64::NAN)))
        .collect()
}

/// Ingestion form of a speed measure: atoms plus optional continuous pieces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StringSpec {
    #[serde(default)]
    pub atoms: Vec<AtomSpec>,
    #[serde(default)]
    pub pieces: Vec<PieceSpec>,
    pub start: DecimalValue,
    pub target: DecimalValue,
}

impl StringSpec {
    pub fn from_json(json: &str) -> Result<Self> {
        serde_json::from_str(json)
            .map_err(|e| ValidationError::BadDecimal(format!("malformed string spec: {e}")).into())
    }

    fn exact_atoms(&self) -> Result<Vec<(BigRational, BigRational)>> {
        self.atoms
            .iter()
            .map(|a| Ok((a.x.to_rational()?, a.m.to_rational()?)))
            .collect()
    }

    fn exact_pieces(&self) -> Result<Vec<ContinuousPiece>> {
        self.pieces
            .iter()
            .map(|p| {
                let cells = match &p.density {
                    DensityCells::Constant(v) => vec![v.to_rational()?],
                    DensityCells::Cells(vs) => {
                        vs.iter().map(|v| v.to_rational()).collect::<Result<_>>()?
                    }
                };
                ContinuousPiece::new(p.from.to_rational()?, p.to.to_rational()?, cells)
            })
            .collect()
    }

    /// Validate a purely atomic spec into a normalized (start at origin)
    /// atomic string. Specs with continuous pieces are rejected; those must go
    /// through [`StringSpec::discretized`].
    pub fn validate(&self) -> Result<AtomicString> {
        if !self.pieces.is_empty() {
            return Err(ValidationError::UndiscretizedPieces.into());
        }
        let s = AtomicString::from_exact(
            self.exact_atoms()?,
            self.start.to_rational()?,
            self.target.to_rational()?,
        )?;
        Ok(s.translate_to_origin())
    }

    /// Discretize every continuous piece into k midpoint atoms, merge with the
    /// explicit atoms, and validate. Returns a normalized string.
    pub fn discretized(&self, k: usize) -> Result<AtomicString> {
        let mut atoms = self.exact_atoms()?;
        for piece in self.exact_pieces()? {
            atoms.extend(piece.discretize_exact(k));
        }
        atoms.sort_by(|a, b| a.0.cmp(&b.0));
        let s = AtomicString::from_exact(
            atoms,
            self.start.to_rational()?,
            self.target.to_rational()?,
        )?;
        Ok(s.translate_to_origin())
    }

    pub fn has_pieces(&self) -> bool {
        !self.pieces.is_empty()
    }
}

/// Validate a spec into a normalized atomic string (see [`StringSpec::validate`]).
pub fn validate(spec: &StringSpec) -> Result<AtomicString> {
    spec.validate()
}

/// The standard Brownian test string: density 2 on (0, 1), target 1.
pub fn brownian_spec() -> StringSpec {
    StringSpec {
        atoms: vec![],
        pieces: vec![PieceSpec {
            from: 0.0.into(),
            to: 1.0.into(),
            density: DensityCells::Constant(2.0.into()),
        }],
        start: 0.0.into(),
        target: 1.0.into(),
    }
}
