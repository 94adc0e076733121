//! Seeded random-string corpora for property campaigns and acceptance runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::string::AtomicString;

fn log_uniform(rng: &mut ChaCha12Rng) -> f64 {
    10f64.powf(rng.random_range(-1.0..1.0))
}

fn distinct_positions(rng: &mut ChaCha12Rng, n: usize) -> Vec<f64> {
    loop {
        let mut xs: Vec<f64> = (0..n).map(|_| log_uniform(rng)).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let ok = xs.windows(2).all(|w| w[1] - w[0] > 1e-6 * w[1]);
        if ok {
            return xs;
        }
    }
}

/// One-sided strings: 2..=12 atoms at log-uniform positions in [0.1, 10] with
/// log-uniform masses, an atom at the start half the time, target a log-ish
/// margin above the top atom.
pub fn one_sided(count: usize, seed: u64) -> Vec<AtomicString> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = rng.random_range(2..=12);
            let xs = distinct_positions(&mut rng, n);
            let atoms: Vec<(f64, f64)> = xs.iter().map(|&x| (x, log_uniform(&mut rng))).collect();
            let start = if rng.random_bool(0.5) { xs[0] } else { 0.0 };
            let target = xs.last().unwrap() * (1.0 + rng.random_range(0.05..0.5));
            AtomicString::new(&atoms, start, target)
                .expect("generated string is valid")
                .translate_to_origin()
        })
        .collect()
}

/// Two-sided strings: the start sits on an interior atom with at least one
/// atom strictly below it and at least one strictly above.
pub fn two_sided(count: usize, seed: u64) -> Vec<AtomicString> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = rng.random_range(3..=12);
            let xs = distinct_positions(&mut rng, n);
            let atoms: Vec<(f64, f64)> = xs.iter().map(|&x| (x, log_uniform(&mut rng))).collect();
            let start_idx = rng.random_range(1..n - 1);
            let target = xs.last().unwrap() * (1.0 + rng.random_range(0.05..0.5));
            AtomicString::new(&atoms, xs[start_idx], target)
                .expect("generated string is valid")
                .translate_to_origin()
        })
        .collect()
}
