//! Weak error of SGD against its SDE on the 2-D quadratic benchmark.
//! Halving the learning rate should roughly halve the error.

use dsbp::analysis::{weak_error_vs_eta, QuadraticBenchmark};

fn main() -> dsbp::Result<()> {
    let study = weak_error_vs_eta(
        &QuadraticBenchmark::standard(),
        &[0.04, 0.02, 0.01],
        1.0,
        128,
        32,
        1,
    )?;
    println!("eta\terror\tstd_err");
    for p in &study.points {
        println!("{}\t{:.4e}\t{:.1e}", p.eta, p.error, p.std_err);
    }
    println!("ratios {:?}", study.ratios);
    Ok(())
}
