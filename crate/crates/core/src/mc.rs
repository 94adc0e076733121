//! Independent stochastic oracle: the gap diffusion restricted to its atoms
//! is a birth-death chain, simulated exactly by exponential holding times and
//! directional jump probabilities, with reproducible chunked seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::density::ExpSumDensity;
use crate::error::{Error, Result};
use crate::string::AtomicString;
use crate::tolerances;

/// The embedded chain of an atomic string: holding states at the atoms, an
/// absorbing target above, reflection below the leftmost atom.
#[derive(Debug, Clone, Serialize)]
pub struct ChainSpec {
    pub positions: Vec<f64>,
    pub masses: Vec<f64>,
    /// Rate to the left neighbour; entry 0 is zero (no state below).
    pub left_rate: Vec<f64>,
    /// Rate to the right neighbour; the last entry is the absorption rate
    /// into the target.
    pub right_rate: Vec<f64>,
    pub start_index: usize,
    pub target: f64,
}

impl ChainSpec {
    pub fn n_states(&self) -> usize {
        self.positions.len()
    }

    pub fn total_rate(&self, i: usize) -> f64 {
        self.left_rate[i] + self.right_rate[i]
    }

    /// Number of states strictly above the start state.
    pub fn states_above_start(&self) -> usize {
        self.n_states() - 1 - self.start_index
    }

    /// Symmetrization of the negated killed generator: similarity by
    /// diag(sqrt(m_i)) makes it a symmetric tridiagonal matrix with the same
    /// (real, positive) spectrum. Returns (diagonal, off-diagonal).
    pub fn sym_neg_generator(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n_states();
        let diag: Vec<f64> = (0..n).map(|i| self.total_rate(i)).collect();
        let off: Vec<f64> = (0..n - 1)
            .map(|i| {
                let gap = self.positions[i + 1] - self.positions[i];
                -1.0 / (gap * (self.masses[i] * self.masses[i + 1]).sqrt())
            })
            .collect();
        (diag, off)
    }
}

/// Build the chain: rate to a neighbour at distance g from a state of mass m
/// is 1/(m g); the target acts as the right neighbour of the last state.
pub fn build_chain(s: &AtomicString) -> Result<ChainSpec> {
    let atoms = s.atoms();
    let n = atoms.len();
    let mut left = vec![0.0; n];
    let mut right = vec![0.0; n];
    for i in 0..n {
        let right_gap = if i + 1 < n {
            atoms[i + 1].position - atoms[i].position
        } else {
            s.target() - atoms[i].position
        };
        right[i] = 1.0 / (atoms[i].mass * right_gap);
        if i > 0 {
            left[i] = 1.0 / (atoms[i].mass * (atoms[i].position - atoms[i - 1].position));
        }
        if !(right[i].is_finite() && left[i].is_finite()) {
            return Err(Error::Numerical(format!(
                "nonfinite chain rate at state {i} (gap too small)"
            )));
        }
    }
    Ok(ChainSpec {
        positions: atoms.iter().map(|a| a.position).collect(),
        masses: atoms.iter().map(|a| a.mass).collect(),
        left_rate: left,
        right_rate: right,
        start_index: s.start_index(),
        target: s.target(),
    })
}

/// A reproducible batch of absorption-time samples.
#[derive(Debug, Clone, Serialize)]
pub struct SampleSet {
    pub samples: Vec<f64>,
    pub seed: u64,
    pub count: usize,
    pub chunk_size: usize,
}

fn chunk_rng(seed: u64, chunk: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(chunk);
    rng
}

fn sample_one(c: &ChainSpec, rng: &mut ChaCha12Rng) -> f64 {
    let last = c.n_states() - 1;
    let mut state = c.start_index;
    let mut t = 0.0f64;
    loop {
        let left = c.left_rate[state];
        let total = left + c.right_rate[state];
        let u: f64 = rng.random();
        t += -(1.0 - u).ln() / total;
        let v: f64 = rng.random();
        if v * total < left {
            state -= 1;
        } else if state == last {
            return t;
        } else {
            state += 1;
        }
    }
}

/// Draw absorption times. Chunk i uses the stream derived from (seed, i) with
/// a fixed chunk size, so results are bit-identical for any worker count.
pub fn simulate_hitting(c: &ChainSpec, n_samples: usize, seed: u64) -> SampleSet {
    let chunk_size = tolerances::MC_CHUNK_SIZE;
    let n_chunks = n_samples.div_ceil(chunk_size);
    let chunks: Vec<Vec<f64>> = (0..n_chunks)
        .into_par_iter()
        .map(|ci| {
            let mut rng = chunk_rng(seed, ci as u64);
            let count = chunk_size.min(n_samples - ci * chunk_size);
            (0..count).map(|_| sample_one(c, &mut rng)).collect()
        })
        .collect();
    SampleSet {
        samples: chunks.concat(),
        seed,
        count: n_samples,
        chunk_size,
    }
}

/// Two-sided Kolmogorov-Smirnov statistic between the empirical distribution
/// of the samples and an analytic order-0 density.
pub fn ks_statistic(samples: &SampleSet, analytic: &ExpSumDensity) -> Result<f64> {
    if samples.samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    if analytic.derivative_order() != 0 {
        return Err(Error::Unsupported(
            "KS comparison requires an order-0 density".into(),
        ));
    }
    let mut xs = samples.samples.clone();
    xs.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        let f = analytic.cdf(x);
        d = d.max((f - i as f64 / n).abs());
        d = d.max((f - (i as f64 + 1.0) / n).abs());
    }
    Ok(d)
}

/// Asymptotic one-percent critical value for the two-sided KS test.
pub fn ks_critical_1pct(n: usize) -> f64 {
    tolerances::KS_1PCT_COEF / (n as f64).sqrt()
}
