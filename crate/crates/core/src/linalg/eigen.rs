//! Symmetric eigensolvers: deflated power iteration for the leading pairs and
//! cyclic Jacobi for the full spectrum.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::matrix::{axpy, dot, norm, normalize, DenseMatrix};
use crate::rng;
use crate::{Error, Result};

/// Symmetry tolerance accepted by the solvers.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Largest matrix the Jacobi oracle accepts.
pub const JACOBI_MAX_DIM: usize = 512;

/// Orthonormal eigenvectors with eigenvalues in non-increasing order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenPairs {
    pub vectors: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    /// `‖Cv − λv‖` for each pair against the matrix they were computed from.
    pub residuals: Vec<f64>,
}

impl EigenPairs {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Ambient dimension of the vectors.
    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    pub fn top(&self) -> Option<(&[f64], f64)> {
        self.vectors.first().map(|v| (v.as_slice(), self.values[0]))
    }

    /// Keeps only the leading `k` pairs.
    pub fn truncated(&self, k: usize) -> EigenPairs {
        let k = k.min(self.len());
        EigenPairs {
            vectors: self.vectors[..k].to_vec(),
            values: self.values[..k].to_vec(),
            residuals: self.residuals[..k].to_vec(),
        }
    }

    /// Largest `|⟨vᵢ, vⱼ⟩|` over distinct pairs.
    pub fn max_overlap(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.vectors.len() {
            for j in i + 1..self.vectors.len() {
                worst = worst.max(dot(&self.vectors[i], &self.vectors[j]).abs());
            }
        }
        worst
    }

    fn sort_descending(&mut self) {
        let mut order: Vec<usize> = (0..self.values.len()).collect();
        order.sort_by(|&a, &b| self.values[b].total_cmp(&self.values[a]));
        self.vectors = order.iter().map(|&i| self.vectors[i].clone()).collect();
        self.values = order.iter().map(|&i| self.values[i]).collect();
        self.residuals = order.iter().map(|&i| self.residuals[i]).collect();
    }
}

/// Flips `v` so its largest-magnitude component is positive (first one wins
/// ties).
pub fn canonicalize_sign(v: &mut [f64]) {
    let mut best = 0usize;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Flips `v` to have non-negative inner product with `reference`.
pub fn align_sign(v: &mut [f64], reference: &[f64]) {
    if dot(v, reference) < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

fn check_symmetric(c: &DenseMatrix, what: &str) -> Result<()> {
    if !c.is_square() {
        return Err(Error::invalid(format!(
            "{what}: matrix is {}x{}, expected square",
            c.rows(),
            c.cols()
        )));
    }
    let asym = c.asymmetry();
    if asym > SYMMETRY_TOL * c.max_abs().max(1.0) {
        return Err(Error::invalid(format!(
            "{what}: matrix is not symmetric (max asymmetry {asym:.3e})"
        )));
    }
    if !c.all_finite() {
        return Err(Error::invalid(format!(
            "{what}: matrix has non-finite entries"
        )));
    }
    Ok(())
}

/// Top-`k` eigenpairs of a symmetric matrix by power iteration with Hotelling
/// deflation, starting from seeded random vectors.
pub fn power_iteration_topk(
    c: &DenseMatrix,
    k: usize,
    iters: usize,
    seed: u64,
) -> Result<EigenPairs> {
    power_iteration_topk_warm(c, k, iters, seed, None)
}

/// As [`power_iteration_topk`], but the `i`-th start vector is taken from
/// `previous` when it has a matching vector; signs then follow the previous
/// vectors instead of the largest-component rule.
pub fn power_iteration_topk_warm(
    c: &DenseMatrix,
    k: usize,
    iters: usize,
    seed: u64,
    previous: Option<&EigenPairs>,
) -> Result<EigenPairs> {
    check_symmetric(c, "power_iteration_topk")?;
    let d = c.rows();
    if k == 0 || k > d {
        return Err(Error::invalid(format!(
            "power_iteration_topk: k = {k} must be in 1..={d}"
        )));
    }
    if iters == 0 {
        return Err(Error::invalid("power_iteration_topk: iters must be >= 1"));
    }
    let previous = previous.filter(|p| p.dim() == d);

    let mut rng = rng::seeded(seed, rng::stream::POWER_ITERATION);
    let mut deflated = c.clone();
    let mut found: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut values = Vec::with_capacity(k);
    let mut residuals = Vec::with_capacity(k);
    let mut scratch = vec![0.0; d];

    for i in 0..k {
        // always draw so that warm starts do not shift later random vectors
        let mut random: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let warm = previous.and_then(|p| p.vectors.get(i));
        let mut v = match warm {
            Some(w) => w.clone(),
            None => std::mem::take(&mut random),
        };
        orthogonalize(&mut v, &found);
        if normalize(&mut v) == 0.0 {
            v = fallback_direction(d, &found);
        }

        for _ in 0..iters {
            sym_matvec_into(&deflated, &v, &mut scratch);
            orthogonalize(&mut scratch, &found);
            if normalize(&mut scratch) == 0.0 {
                // v lies in the (deflated) null space; it is already an eigenvector
                break;
            }
            v.copy_from_slice(&scratch);
        }

        match warm {
            Some(w) => align_sign(&mut v, w),
            None => canonicalize_sign(&mut v),
        }

        sym_matvec_into(c, &v, &mut scratch);
        let lambda = dot(&v, &scratch);
        axpy(&mut scratch, -lambda, &v);
        residuals.push(norm(&scratch));
        values.push(lambda);

        deflated.add_outer(-lambda, &v, &v)?;
        found.push(v);
    }

    let mut pairs = EigenPairs {
        vectors: found,
        values,
        residuals,
    };
    pairs.sort_descending();
    Ok(pairs)
}

fn sym_matvec_into(c: &DenseMatrix, v: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = dot(c.row(i), v);
    }
}

/// Removes the components of `v` along each (unit) vector in `basis`. Two
/// passes keep the result orthogonal to working precision.
fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for b in basis {
            let c = dot(v, b);
            axpy(v, -c, b);
        }
    }
}

fn fallback_direction(d: usize, basis: &[Vec<f64>]) -> Vec<f64> {
    for axis in 0..d {
        let mut e = vec![0.0; d];
        e[axis] = 1.0;
        orthogonalize(&mut e, basis);
        if normalize(&mut e) > 1e-6 {
            return e;
        }
    }
    unreachable!("fewer than d vectors cannot span R^d")
}

/// Full eigendecomposition by cyclic Jacobi rotations. Test oracle.
pub fn jacobi_eig(c: &DenseMatrix) -> Result<EigenPairs> {
    check_symmetric(c, "jacobi_eig")?;
    let n = c.rows();
    if n > JACOBI_MAX_DIM {
        return Err(Error::invalid(format!(
            "jacobi_eig: dimension {n} exceeds {JACOBI_MAX_DIM}"
        )));
    }
    let mut a = c.clone();
    // exact symmetrization so rotations stay consistent
    for i in 0..n {
        for j in i + 1..n {
            let m = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = m;
            a[(j, i)] = m;
        }
    }
    let mut v = DenseMatrix::identity(n);
    let scale = c.frobenius_norm().max(f64::MIN_POSITIVE);

    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let cs = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * cs;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = cs * akp - sn * akq;
                    a[(k, q)] = sn * akp + cs * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = cs * apk - sn * aqk;
                    a[(q, k)] = sn * apk + cs * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = cs * vkp - sn * vkq;
                    v[(k, q)] = sn * vkp + cs * vkq;
                }
            }
        }
    }

    let mut vectors = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    let mut residuals = Vec::with_capacity(n);
    let mut scratch = vec![0.0; n];
    for j in 0..n {
        let mut e = v.column(j);
        canonicalize_sign(&mut e);
        let lambda = a[(j, j)];
        sym_matvec_into(c, &e, &mut scratch);
        axpy(&mut scratch, -lambda, &e);
        residuals.push(norm(&scratch));
        values.push(lambda);
        vectors.push(e);
    }
    let mut pairs = EigenPairs {
        vectors,
        values,
        residuals,
    };
    pairs.sort_descending();
    Ok(pairs)
}
