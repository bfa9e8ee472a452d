//! Weight updates as rotations of a layer's output space.

use crate::linalg::{norm, DenseMatrix, EigenPairs};
use crate::spectral::LayerSpectralState;
use crate::{Error, Result};

const SKEW_TOL: f64 = 1e-12;

/// Skew-symmetric generator
///
/// `Ω = Σᵢ λ̂ᵢ (eᵢ ĝᵢᵀ − ĝᵢ eᵢᵀ)`, `ĝᵢ = K eᵢ / ‖K eᵢ‖`, `K = W Gᵀ − G Wᵀ`,
///
/// with `λ̂ᵢ = λᵢ / Σⱼ λⱼ` over the basis. `K` is the rotational part of the
/// gradient, so each term is a plane rotation that decreases the loss to
/// first order along `dW/ds = −ΩW`. Terms with `K eᵢ = 0` are dropped.
pub fn lie_generator(w: &DenseMatrix, g: &DenseMatrix, basis: &EigenPairs) -> Result<DenseMatrix> {
    if w.shape() != g.shape() {
        return Err(Error::invalid(format!(
            "weight is {}x{} but gradient is {}x{}",
            w.rows(),
            w.cols(),
            g.rows(),
            g.cols()
        )));
    }
    let d = w.rows();
    if basis.dim() != d {
        return Err(Error::invalid(format!(
            "eigenvectors have length {} but the layer has {d} outputs",
            basis.dim()
        )));
    }
    let m = w.matmul_t(g)?;
    let skew = DenseMatrix::from_fn(d, d, |a, b| m[(a, b)] - m[(b, a)]);

    let total: f64 = basis.values.iter().map(|l| l.max(0.0)).sum();
    let mut terms: Vec<(f64, &[f64], Vec<f64>)> = Vec::with_capacity(basis.len());
    for (e, &lambda) in basis.vectors.iter().zip(&basis.values) {
        let weight = if total > 0.0 {
            lambda.max(0.0) / total
        } else {
            1.0 / basis.len() as f64
        };
        let mut h = skew.matvec(e)?;
        let n = norm(&h);
        if weight == 0.0 || n == 0.0 {
            continue;
        }
        h.iter_mut().for_each(|x| *x /= n);
        terms.push((weight, e, h));
    }

    let mut omega = DenseMatrix::zeros(d, d);
    for a in 0..d {
        for b in a + 1..d {
            let v: f64 = terms
                .iter()
                .map(|(c, e, h)| c * (e[a] * h[b] - h[a] * e[b]))
                .sum();
            omega[(a, b)] = v;
            omega[(b, a)] = -v;
        }
    }
    Ok(omega)
}

/// One classical RK4 step of `dW/ds = −ΩW` over `[0, h]` for constant `Ω`.
pub fn integrate_generator(omega: &DenseMatrix, w: &DenseMatrix, h: f64) -> Result<DenseMatrix> {
    let f = |x: &DenseMatrix| -> Result<DenseMatrix> { Ok(omega.matmul(x)?.scaled(-1.0)) };
    let k1 = f(w)?;
    let mut tmp = w.clone();
    tmp.add_scaled(&k1, h / 2.0)?;
    let k2 = f(&tmp)?;
    let mut tmp = w.clone();
    tmp.add_scaled(&k2, h / 2.0)?;
    let k3 = f(&tmp)?;
    let mut tmp = w.clone();
    tmp.add_scaled(&k3, h)?;
    let k4 = f(&tmp)?;
    let mut out = w.clone();
    out.add_scaled(&k1, h / 6.0)?;
    out.add_scaled(&k2, h / 3.0)?;
    out.add_scaled(&k3, h / 3.0)?;
    out.add_scaled(&k4, h / 6.0)?;
    Ok(out)
}

/// Rotates `w` by the generator built from the layer's eigenpairs and the
/// gradient, integrated over `[0, η]`.
pub fn lie_step(
    w: &DenseMatrix,
    state: &LayerSpectralState,
    g: &DenseMatrix,
    eta: f64,
) -> Result<DenseMatrix> {
    let basis = state
        .eigenpairs
        .as_ref()
        .ok_or_else(|| Error::Precondition("lie_step needs refreshed eigenpairs".into()))?;
    let omega = lie_generator(w, g, basis)?;
    let skew_err = skew_error(&omega);
    if skew_err > SKEW_TOL {
        return Err(Error::Precondition(format!(
            "generator is not skew-symmetric (max |Ω + Ωᵀ| = {skew_err:e})"
        )));
    }
    integrate_generator(&omega, w, eta)
}

/// `max |Ω_ab + Ω_ba|`.
fn skew_error(m: &DenseMatrix) -> f64 {
    let d = m.rows();
    let mut worst: f64 = 0.0;
    for a in 0..d {
        for b in a..d {
            worst = worst.max((m[(a, b)] + m[(b, a)]).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::test_support::{random_matrix, random_spd};
    use crate::linalg::{dot, power_iteration_topk};

    fn state_for(d: usize, k: usize, seed: u64) -> LayerSpectralState {
        let c = random_spd(d, seed);
        let mut s = LayerSpectralState::default();
        s.eigenpairs = Some(power_iteration_topk(&c, k, 300, seed).unwrap());
        s
    }

    #[test]
    fn zero_gradient_leaves_weights() {
        let w = random_matrix(5, 3, 1);
        let s = state_for(5, 3, 2);
        let out = lie_step(&w, &s, &DenseMatrix::zeros(5, 3), 0.1).unwrap();
        assert_eq!(out, w);
    }

    #[test]
    fn planar_rotation_matches_closed_form() {
        for &(theta, h) in &[(1.0, 0.05), (2.0, 0.05), (0.5, 0.01)] {
            let omega = DenseMatrix::from_rows(&[&[0.0, -theta], &[theta, 0.0]]);
            let w = random_matrix(2, 3, 4);
            let got = integrate_generator(&omega, &w, h).unwrap();
            // exp(−hΩ) is rotation by −hθ
            let (s, c) = (-h * theta).sin_cos();
            let rot = DenseMatrix::from_rows(&[&[c, -s], &[s, c]]);
            let want = rot.matmul(&w).unwrap();
            let err = got.sub(&want).unwrap().max_abs();
            let phi: f64 = h * theta;
            assert!(err <= phi.powi(5) / 60.0 * w.max_abs() * 3.0, "err {err:e}");
        }
    }

    #[test]
    fn rk4_norm_drift_is_small() {
        let w = random_matrix(6, 4, 8);
        for step in [0.02, 0.05, 0.1] {
            let raw = random_matrix(6, 6, 9);
            let skew = DenseMatrix::from_fn(6, 6, |a, b| raw[(a, b)] - raw[(b, a)]);
            let scale = step / skew.frobenius_norm();
            let omega = skew.scaled(scale);
            let out = integrate_generator(&omega, &w, 1.0).unwrap();
            let drift = (out.frobenius_norm() - w.frobenius_norm()).abs() / w.frobenius_norm();
            assert!(drift <= 1e-6, "step {step}: drift {drift:e}");
        }
    }

    #[test]
    fn generator_is_skew_and_descending() {
        for seed in 0..10 {
            let w = random_matrix(7, 5, seed);
            let g = random_matrix(7, 5, seed + 100);
            let s = state_for(7, 3, seed + 200);
            let omega = lie_generator(&w, &g, s.eigenpairs.as_ref().unwrap()).unwrap();
            assert!(skew_error(&omega) <= SKEW_TOL);
            // d/ds f(W − sΩW) at s = 0 is −⟨G, ΩW⟩
            let rate = -dot(g.as_slice(), omega.matmul(&w).unwrap().as_slice());
            assert!(rate <= 1e-12, "seed {seed}: rate {rate}");
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let s = state_for(4, 2, 0);
        let w = random_matrix(4, 3, 0);
        assert!(lie_step(&w, &s, &random_matrix(4, 2, 0), 0.1).is_err());
        let bad = random_matrix(5, 3, 0);
        assert!(lie_step(&bad, &s, &random_matrix(5, 3, 0), 0.1).is_err());
        assert!(lie_step(&w, &LayerSpectralState::new(), &w, 0.1).is_err());
    }
}
