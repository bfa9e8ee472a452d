//! Power iteration with deflation against the Jacobi oracle on an
//! activation covariance.

use dsbp::linalg::{activation_covariance, jacobi_eig, power_iteration_topk};
use dsbp::DenseMatrix;

fn main() -> dsbp::Result<()> {
    let a = DenseMatrix::from_fn(64, 12, |i, j| {
        ((i * 7 + j * 13) % 17) as f64 / 17.0 + if j < 2 { 0.5 } else { 0.0 }
    });
    let c = activation_covariance(&a)?;
    let power = power_iteration_topk(&c, 4, 200, 7)?;
    let exact = jacobi_eig(&c)?;
    println!("i\tpower\tjacobi\tresidual");
    for i in 0..power.len() {
        println!(
            "{i}\t{:.10}\t{:.10}\t{:.2e}",
            power.values[i], exact.values[i], power.residuals[i]
        );
    }
    Ok(())
}
