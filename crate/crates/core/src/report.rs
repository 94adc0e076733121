//! Machine-readable pipeline front end: run the full analysis on a string and
//! collect everything into serializable reports.

use serde::Serialize;

use crate::density::{
    comparison_grid, hitting_density, yamazato_factorize, ExpSumDensity, Factorization,
};
use crate::error::Result;
use crate::krein::{degree_check, mean_identities, propagate_phi, propagate_psi, DegreeReport};
use crate::shape::{classify, ShapeReport};
use crate::spectra::{check_interlacing, generator_eigenrates, real_roots, RateSet, STURM_DEGREE_MAX};
use crate::string::{AtomicString, Precision, StringSpec};
use crate::tolerances;

#[derive(Debug, Clone, Serialize)]
pub struct PolyReport {
    pub degree: usize,
    pub coeffs: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MeansReport {
    /// Mean hitting time from the exact sum over atoms.
    pub full_mean: f64,
    /// Mean of the exponential factor (sum of reciprocal Dirichlet rates);
    /// absent for two-sided strings.
    pub mu1_mean: Option<f64>,
    /// Mean and variance recomputed from the density, as a cross-check.
    pub density_mean: f64,
    pub density_variance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalyzeReport {
    pub atoms: Vec<(f64, f64)>,
    pub start: f64,
    pub target: f64,
    pub one_sided: bool,
    pub degrees: DegreeReport,
    pub psi: PolyReport,
    pub phi: Option<PolyReport>,
    pub full_rates: RateSet,
    /// Elementwise relative gap between the Neumann-polynomial roots and the
    /// generator eigenvalues (one-sided strings within the Sturm cap).
    pub oracle_max_rel_diff: Option<f64>,
    pub interlacing: Option<bool>,
    pub factorization: Factorization,
    /// Sup-norm distance between the reconvolved and the direct density on
    /// the comparison grid.
    pub reconvolution_sup_error: f64,
    pub means: MeansReport,
    pub density_terms: Vec<(f64, f64)>,
}

/// Run the analytic pipeline: polynomials, rates (both routes), factorization
/// with certificates, moments.
pub fn analyze(s: &AtomicString, precision: Precision) -> Result<AnalyzeReport> {
    let s = s.translate_to_origin();
    let (psi, _) = propagate_psi(&s, precision)?;
    let phi = if s.is_one_sided() {
        Some(propagate_phi(&s, precision)?.0)
    } else {
        None
    };
    let degrees = degree_check(&s)?;
    let density = hitting_density(&s)?;
    let full_rates = if s.is_one_sided() {
        generator_eigenrates(&s)?
    } else {
        RateSet::new(density.rates(), crate::spectra::RateSource::GeneratorEigen)
    };
    let oracle_max_rel_diff = match &phi {
        Some(p) if p.degree() <= STURM_DEGREE_MAX => {
            let roots = real_roots(p)?;
            Some(
                roots
                    .rates
                    .iter()
                    .zip(&full_rates.rates)
                    .map(|(a, b)| (a - b).abs() / b.abs())
                    .fold(0.0f64, f64::max),
            )
        }
        _ => None,
    };
    let factorization = yamazato_factorize(&s)?;
    let interlacing = if s.is_one_sided() {
        Some(check_interlacing(&factorization.mu1_rates, &full_rates).holds)
    } else {
        None
    };
    let reconv = factorization.reconvolved()?;
    let mean = density.mean();
    let mut sup = 0.0f64;
    for &t in &comparison_grid(mean) {
        sup = sup.max((density.eval(t) - reconv.eval(t)).abs());
    }
    let means = if s.is_one_sided() {
        let m = mean_identities(&s)?;
        MeansReport {
            full_mean: m.full_mean,
            mu1_mean: Some(m.mu1_mean),
            density_mean: mean,
            density_variance: density.variance(),
        }
    } else {
        MeansReport {
            full_mean: s.mean_hitting_time(),
            mu1_mean: None,
            density_mean: mean,
            density_variance: density.variance(),
        }
    };
    Ok(AnalyzeReport {
        atoms: s.atoms().iter().map(|a| (a.position, a.mass)).collect(),
        start: s.start(),
        target: s.target(),
        one_sided: s.is_one_sided(),
        degrees,
        psi: PolyReport {
            degree: psi.degree(),
            coeffs: psi.coeffs().to_vec(),
        },
        phi: phi.map(|p| PolyReport {
            degree: p.degree(),
            coeffs: p.coeffs().to_vec(),
        }),
        full_rates,
        oracle_max_rel_diff,
        interlacing,
        factorization,
        reconvolution_sup_error: sup,
        means,
        density_terms: density.terms().to_vec(),
    })
}

/// Shape classification of the hitting density of a string.
pub fn classify_string(s: &AtomicString, max_order: u32) -> Result<ShapeReport> {
    let density = hitting_density(&s.translate_to_origin())?;
    classify(&density, max_order)
}

/// One row of the density/derivative table: t, f(t), f'(t), ..., f^(N)(t).
#[derive(Debug, Clone, Serialize)]
pub struct DensityTable {
    pub max_order: u32,
    pub rows: Vec<Vec<f64>>,
}

pub fn density_table(d: &ExpSumDensity, max_order: u32, grid: &[f64]) -> DensityTable {
    let derivs: Vec<ExpSumDensity> = (1..=max_order).map(|n| d.derivative(n)).collect();
    let rows = grid
        .iter()
        .map(|&t| {
            let mut row = Vec::with_capacity(2 + derivs.len());
            row.push(t);
            row.push(d.eval(t));
            row.extend(derivs.iter().map(|f| f.eval(t)));
            row
        })
        .collect();
    DensityTable { max_order, rows }
}

/// Per-k row of the discretization convergence study.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergeRow {
    pub k: usize,
    pub smallest_rate: f64,
    pub full_mean: f64,
    pub zero_counts: Vec<usize>,
    pub all_certified: bool,
    /// Sup distance to the previous k's density on the comparison grid.
    pub sup_dist_prev: Option<f64>,
}

/// Discretize the continuous pieces at each k and track spectral and shape
/// convergence.
pub fn converge(spec: &StringSpec, k_list: &[usize], max_order: u32) -> Result<Vec<ConvergeRow>> {
    let mut rows: Vec<ConvergeRow> = Vec::with_capacity(k_list.len());
    let mut prev: Option<ExpSumDensity> = None;
    for &k in k_list {
        let s = spec.discretized(k)?;
        let rates = generator_eigenrates(&s)?;
        let density = hitting_density(&s)?;
        let report = classify(&density, max_order)?;
        let mean = mean_identities(&s)?.full_mean;
        let sup_dist_prev = prev.as_ref().map(|p| {
            let mut sup = 0.0f64;
            for &t in &comparison_grid(density.mean()) {
                sup = sup.max((density.eval(t) - p.eval(t)).abs());
            }
            sup
        });
        rows.push(ConvergeRow {
            k,
            smallest_rate: rates.rates[0],
            full_mean: mean,
            zero_counts: report.orders.iter().map(|r| r.zero_count).collect(),
            all_certified: report.orders.iter().all(|r| r.certified),
            sup_dist_prev,
        });
        prev = Some(density);
    }
    Ok(rows)
}

/// One row of a randomized-string property campaign.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub index: usize,
    pub n_atoms: usize,
    pub one_sided: bool,
    pub interlacing: Option<bool>,
    pub cm_certificate: bool,
    pub min_weight: f64,
    pub weight_sum_error: f64,
    pub reconvolution_sup_error: f64,
    pub max_vandermonde_residual: f64,
    pub unimodal: Option<bool>,
    pub pass: bool,
    pub error: Option<String>,
}

/// Run the per-string checks, turning failures into recorded rows instead of
/// aborting the campaign.
pub fn sweep_row(index: usize, s: &AtomicString) -> SweepRow {
    let run = || -> Result<SweepRow> {
        let report = analyze(s, Precision::Auto)?;
        let density = hitting_density(s)?;
        let m = density.terms().len();
        let mut vmax = 0.0f64;
        for j in 0..m.saturating_sub(1) {
            vmax = vmax.max(density.moment_residual(j as u32));
        }
        let unimodal = if m >= 2 {
            let zc = crate::shape::count_zeros_expsum(&density.derivative(1));
            Some(zc.certified && zc.count == 1)
        } else {
            None
        };
        let pass = report.factorization.cm_certificate
            && report.factorization.weight_sum_error.abs() <= tolerances::MU2_WEIGHT_SUM_TOL
            && report.reconvolution_sup_error <= tolerances::CONVOLUTION_SUP_ABS
            && report.interlacing.unwrap_or(true)
            && vmax <= tolerances::VANDERMONDE_REL
            && unimodal.unwrap_or(true)
            && report.oracle_max_rel_diff.unwrap_or(0.0) <= tolerances::ORACLE_MATCH_REL;
        Ok(SweepRow {
            index,
            n_atoms: s.atoms().len(),
            one_sided: s.is_one_sided(),
            interlacing: report.interlacing,
            cm_certificate: report.factorization.cm_certificate,
            min_weight: report.factorization.min_weight,
            weight_sum_error: report.factorization.weight_sum_error,
            reconvolution_sup_error: report.reconvolution_sup_error,
            max_vandermonde_residual: vmax,
            unimodal,
            pass,
            error: None,
        })
    };
    run().unwrap_or_else(|e| SweepRow {
        index,
        n_atoms: s.atoms().len(),
        one_sided: s.is_one_sided(),
        interlacing: None,
        cm_certificate: false,
        min_weight: f64::NAN,
        weight_sum_error: f64::NAN,
        reconvolution_sup_error: f64::NAN,
        max_vandermonde_residual: f64::NAN,
        unimodal: None,
        pass: false,
        error: Some(e.to_string()),
    })
}

/// Everything needed to reproduce a run bit-exactly.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub input: serde_json::Value,
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    pub k_list: Option<Vec<usize>>,
    pub max_order: Option<u32>,
    pub precision: Precision,
    pub chunk_size: usize,
    pub version: String,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, input: serde_json::Value) -> Self {
        Manifest {
            command: command.to_string(),
            input,
            seed: None,
            samples: None,
            k_list: None,
            max_order: None,
            precision: Precision::Auto,
            chunk_size: tolerances::MC_CHUNK_SIZE,
            version: env!("CARGO_PKG_VERSION").to_string(),
            outputs: Vec::new(),
        }
    }
}
