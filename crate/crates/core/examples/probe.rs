use bellshape::report::analyze;
use bellshape::string::Precision;
use std::time::Instant;
use rayon::prelude::*;

fn main() {
    let mut strings = bellshape::corpus::one_sided(1000, 0x5eed_0001);
    strings.extend(bellshape::corpus::two_sided(500, 0x5eed_0002));
    let t0 = Instant::now();
    let fails: usize = strings.par_iter().map(|s| analyze(s, Precision::Auto).is_err() as usize).sum();
    println!("analyzed in {:.2}s, failures {}", t0.elapsed().as_secs_f64(), fails);
}
