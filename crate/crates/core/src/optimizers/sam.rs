use crate::linalg::{axpy, norm};
use crate::nn::hessian::Differentiable;
use crate::{Error, Result};

/// Gradient at `w + ρ·∇f/‖∇f‖`, the point SAM uses for its descent step.
/// With a zero gradient the perturbation is skipped.
pub fn sam_gradient<O: Differentiable + ?Sized>(obj: &O, rho: f64) -> Result<Vec<f64>> {
    if !(rho > 0.0) {
        return Err(Error::invalid(format!("SAM radius {rho} must be > 0")));
    }
    let mut w = obj.point();
    let g = obj.gradient_at(&w)?;
    let n = norm(&g);
    if n == 0.0 {
        return Ok(g);
    }
    axpy(&mut w, rho / n, &g);
    obj.gradient_at(&w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::hessian::Quadratic;

    #[test]
    fn quadratic_closed_form() {
        let diag = vec![1.0, 4.0, 9.0];
        let w = vec![0.3, -0.2, 0.05];
        let q = Quadratic::new(diag.clone(), w.clone());
        for rho in [0.01, 0.05, 0.5] {
            let got = sam_gradient(&q, rho).unwrap();
            let dw: Vec<f64> = diag.iter().zip(&w).map(|(d, x)| d * x).collect();
            let n = norm(&dw);
            // (I + ρD/‖Dw‖)·Dw
            for i in 0..3 {
                let want = dw[i] + rho * diag[i] * dw[i] / n;
                assert!((got[i] - want).abs() < 1e-8, "{rho} {i}");
            }
        }
    }

    #[test]
    fn zero_gradient_skips_perturbation() {
        let q = Quadratic::new(vec![1.0, 2.0], vec![0.0, 0.0]);
        assert_eq!(sam_gradient(&q, 0.05).unwrap(), vec![0.0, 0.0]);
        assert!(sam_gradient(&q, 0.0).is_err());
    }
}
