//! Hitting times of one-dimensional generalized diffusions in natural scale.
//!
//! A speed measure with finitely many atoms between the start point and a
//! target level turns the diffusion into a birth-death chain, and the hitting
//! time of the target becomes a phase-type random variable whose density is a
//! finite exponential sum. This crate computes that density exactly, splits it
//! into the classical exponential-factor / completely-monotone-factor
//! convolution, and certifies the shape of the density (bell up to a given
//! order, whale, or n-shape) by exact zero counting. A seeded Markov-chain
//! simulator provides an independent stochastic oracle.
//!
//! Pipeline: [`string`] (speed-measure data model) → [`krein`] (fundamental
//! solutions as polynomials in the spectral variable) → [`spectra`]
//! (exponential rates, two independent routes) → [`density`] (exponential-sum
//! densities and the factorization) → [`shape`] (certified zero counts and
//! classification), with [`mc`] as the simulation oracle and [`report`] as the
//! machine-readable front end.

pub mod corpus;
pub mod density;
pub mod error;
pub mod gig;
pub mod krein;
pub mod mc;
pub mod num;
pub mod rational;
pub mod report;
pub mod shape;
pub mod spectra;
pub mod string;
pub mod tolerances;
pub mod tridiag;

pub use error::{Error, ErrorCategory, Result, ValidationError};
pub use string::{AtomicString, ContinuousPiece, Precision, StringSpec};
