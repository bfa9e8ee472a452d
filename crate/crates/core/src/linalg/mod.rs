//! Dense linear algebra: matrices, activation covariance, subspace
//! projection and symmetric eigensolvers.

mod eigen;
mod matrix;

pub use eigen::{
    align_sign, canonicalize_sign, jacobi_eig, power_iteration_topk, power_iteration_topk_warm,
    EigenPairs, JACOBI_MAX_DIM, SYMMETRY_TOL,
};
pub use matrix::{axpy, dot, norm, normalize, DenseMatrix};

use crate::{Error, Result};

/// `AᵀA` for an `n × d` activation matrix.
///
/// Only the upper triangle is accumulated and then mirrored, so the result is
/// exactly symmetric. Zero activations (dead ReLUs) are skipped.
pub fn activation_covariance(a: &DenseMatrix) -> Result<DenseMatrix> {
    let (n, d) = a.shape();
    if n == 0 || d == 0 {
        return Err(Error::invalid(format!(
            "activation_covariance: empty activation matrix {n}x{d}"
        )));
    }
    let mut c = DenseMatrix::zeros(d, d);
    for r in 0..n {
        let row = a.row(r);
        for i in 0..d {
            let ai = row[i];
            if ai == 0.0 {
                continue;
            }
            axpy(&mut c.row_mut(i)[i..], ai, &row[i..]);
        }
    }
    for i in 0..d {
        for j in 0..i {
            c[(i, j)] = c[(j, i)];
        }
    }
    Ok(c)
}

/// `P·G` with `P = Σᵢ eᵢeᵢᵀ`, projecting the output (row) dimension of `G`
/// onto the span of `basis`.
///
/// A basis that spans the whole output space makes `P` the identity and `G`
/// is returned unchanged.
pub fn project_onto_subspace(g: &DenseMatrix, basis: &EigenPairs) -> Result<DenseMatrix> {
    if basis.dim() != g.rows() {
        return Err(Error::invalid(format!(
            "project_onto_subspace: basis vectors have length {} but gradient has {} rows",
            basis.dim(),
            g.rows()
        )));
    }
    if basis.len() >= g.rows() {
        return Ok(g.clone());
    }
    let mut out = DenseMatrix::zeros(g.rows(), g.cols());
    for e in &basis.vectors {
        let coeff = g.vecmat(e)?;
        out.add_outer(1.0, e, &coeff)?;
    }
    Ok(out)
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use rand::Rng as _;

    pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = crate::rng::seeded(seed, 1000);
        DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    pub fn random_orthonormal(d: usize, seed: u64) -> Vec<Vec<f64>> {
        let m = random_matrix(d, d, seed);
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for i in 0..d {
            let mut v = m.row(i).to_vec();
            for _ in 0..2 {
                for b in &basis {
                    let c = dot(&v, b);
                    axpy(&mut v, -c, b);
                }
            }
            normalize(&mut v);
            basis.push(v);
        }
        basis
    }

    pub fn spd_with_spectrum(values: &[f64], seed: u64) -> DenseMatrix {
        let d = values.len();
        let q = random_orthonormal(d, seed);
        let mut c = DenseMatrix::zeros(d, d);
        for (v, &l) in q.iter().zip(values) {
            c.add_outer(l, v, v).unwrap();
        }
        for i in 0..d {
            for j in 0..i {
                let m = 0.5 * (c[(i, j)] + c[(j, i)]);
                c[(i, j)] = m;
                c[(j, i)] = m;
            }
        }
        c
    }

    pub fn random_spd(d: usize, seed: u64) -> DenseMatrix {
        let a = random_matrix(d + 3, d, seed);
        activation_covariance(&a).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;

    fn basis_of(vectors: Vec<Vec<f64>>) -> EigenPairs {
        let k = vectors.len();
        EigenPairs {
            vectors,
            values: vec![1.0; k],
            residuals: vec![0.0; k],
        }
    }

    #[test]
    fn covariance_simple_cases() {
        let c = activation_covariance(&DenseMatrix::identity(2)).unwrap();
        assert_eq!(c, DenseMatrix::identity(2));
        let a = DenseMatrix::from_rows(&[&[1.0, 0.0], &[0.0, 0.0]]);
        let c = activation_covariance(&a).unwrap();
        assert_eq!(c, DenseMatrix::from_rows(&[&[1.0, 0.0], &[0.0, 0.0]]));
    }

    #[test]
    fn covariance_matches_triple_loop() {
        let a = random_matrix(5, 3, 42);
        let c = activation_covariance(&a).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for r in 0..5 {
                    s += a[(r, i)] * a[(r, j)];
                }
                assert!((c[(i, j)] - s).abs() < 1e-12);
            }
        }
        assert!(c.is_symmetric(0.0));
        let spectrum = jacobi_eig(&c).unwrap();
        assert!(spectrum.values.iter().all(|&l| l >= -1e-10));
    }

    #[test]
    fn covariance_rejects_empty() {
        assert!(activation_covariance(&DenseMatrix::zeros(0, 3)).is_err());
        assert!(activation_covariance(&DenseMatrix::zeros(3, 0)).is_err());
    }

    #[test]
    fn complete_basis_projection_is_identity() {
        let g = random_matrix(4, 3, 1);
        let basis = basis_of(random_orthonormal(4, 2));
        let p = project_onto_subspace(&g, &basis).unwrap();
        assert!(p.sub(&g).unwrap().max_abs() <= 1e-10);
    }

    #[test]
    fn orthogonal_rows_project_to_zero() {
        // every column of G lies along e3; the basis spans e1, e2
        let g = DenseMatrix::from_rows(&[&[0.0, 0.0], &[0.0, 0.0], &[1.5, -2.0]]);
        let basis = basis_of(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);
        let p = project_onto_subspace(&g, &basis).unwrap();
        assert_eq!(p.max_abs(), 0.0);
    }

    #[test]
    fn projection_matches_explicit_sum() {
        let g = random_matrix(4, 3, 5);
        let q = random_orthonormal(4, 6);
        let basis = basis_of(q[..2].to_vec());
        let p = project_onto_subspace(&g, &basis).unwrap();
        for a in 0..4 {
            for b in 0..3 {
                let mut s = 0.0;
                for e in &basis.vectors {
                    let mut coeff = 0.0;
                    for r in 0..4 {
                        coeff += e[r] * g[(r, b)];
                    }
                    s += e[a] * coeff;
                }
                assert!((p[(a, b)] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn projection_dimension_mismatch() {
        let g = random_matrix(4, 3, 5);
        let basis = basis_of(vec![vec![1.0, 0.0, 0.0]]);
        assert!(project_onto_subspace(&g, &basis).is_err());
    }
}
