//! Numeric tolerances used across the crate, in one place.

/// Relative tolerance for mass conservation in discretization.
pub const DISCRETIZE_MASS_REL: f64 = 1e-14;

/// Relative half-width target for isolated polynomial roots.
pub const ROOT_REFINE_REL: f64 = 1e-12;

/// Two rates closer than this (relative to the larger) abort the computation
/// instead of being merged; downstream partial fractions divide by rate gaps.
pub const RATE_COLLISION_REL: f64 = 1e-9;

/// Elementwise relative agreement required between polynomial roots and
/// generator eigenvalues.
pub const ORACLE_MATCH_REL: f64 = 1e-8;

/// Tolerance on `sum c_i / b_i = 1` for an order-0 exponential sum.
pub const NORMALIZATION_TOL: f64 = 1e-10;

/// Relative tolerance for the vanishing-moment identities
/// `sum c_i (-b_i)^j = 0`, `j <= #rates - 2`.
pub const VANDERMONDE_REL: f64 = 1e-9;

/// Mixture weights of the completely monotone factor must exceed this.
pub const MU2_WEIGHT_MIN: f64 = -1e-9;

/// Tolerance on the mixture weights of the completely monotone factor
/// summing to one.
pub const MU2_WEIGHT_SUM_TOL: f64 = 1e-10;

/// Sup-norm budget for the reconvolved density against the direct density.
pub const CONVOLUTION_SUP_ABS: f64 = 1e-8;

/// Absolute truncation error bound for uniformization.
pub const UNIFORMIZATION_TRUNC: f64 = 1e-10;

/// Required absolute agreement between uniformization and spectral evaluation.
pub const UNIFORMIZATION_MATCH_ABS: f64 = 1e-8;

/// Absolute tolerance in t for reported zero locations.
pub const ZERO_LOCATION_ABS: f64 = 1e-10;

/// Condition-number ceiling for partial-fraction weight computations; beyond
/// this the computation fails rather than returning silently cancelled values.
pub const CONDITION_MAX: f64 = 1e12;

/// Coefficient of the one-percent Kolmogorov-Smirnov critical value
/// `c / sqrt(n)`.
pub const KS_1PCT_COEF: f64 = 1.6276;

/// Number of points in the geometric evaluation grid for density comparisons.
pub const COMPARISON_GRID_POINTS: usize = 200;

/// Comparison grid spans `[GRID_LO_MEANS, GRID_HI_MEANS] * mean`.
pub const GRID_LO_MEANS: f64 = 0.01;
pub const GRID_HI_MEANS: f64 = 20.0;

/// Initial geometric scan grid size for zero counting, and its hard cap.
pub const SCAN_GRID_INITIAL: usize = 4096;
pub const SCAN_GRID_MAX: usize = 1 << 18;

/// Initial zero-scan window is `[SCAN_LO_MEANS, SCAN_HI_MEANS] * mean`.
pub const SCAN_LO_MEANS: f64 = 1e-4;
pub const SCAN_HI_MEANS: f64 = 50.0;

/// Signal must exceed the evaluation noise floor by this factor before its
/// sign is trusted during scanning.
pub const SIGN_NOISE_FACTOR: f64 = 64.0;

/// Atom count cap for the exact rational propagation backend.
pub const RATIONAL_BACKEND_MAX_ATOMS: usize = 16;

/// Fixed chunk size for reproducible parallel sampling.
pub const MC_CHUNK_SIZE: usize = 1 << 14;
