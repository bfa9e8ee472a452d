use rand::Rng as _;
use rand_distr::StandardNormal;

use super::Dataset;
use crate::linalg::{normalize, DenseMatrix};
use crate::rng;
use crate::{Error, Result};

/// Isotropic Gaussian classes. Class means sit on seeded random unit
/// directions scaled by `separation`; noise has unit variance. Each feature is
/// then min-max rescaled into `[0, 1]` (constant features map to 0).
/// Examples are ordered class by class.
pub fn gaussian_blobs(
    seed: u64,
    n_per_class: usize,
    dims: usize,
    classes: usize,
    separation: f64,
) -> Result<Dataset> {
    if !(separation > 0.0) || dims == 0 || classes == 0 {
        return Err(Error::invalid(format!(
            "blobs need separation > 0, dims >= 1, classes >= 1 (got {separation}, {dims}, {classes})"
        )));
    }
    let mut rng = rng::seeded(seed, rng::stream::DATA);
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            let mut m: Vec<f64> = (0..dims).map(|_| rng.sample(StandardNormal)).collect();
            normalize(&mut m);
            m.iter_mut().for_each(|x| *x *= separation);
            m
        })
        .collect();
    let n = n_per_class * classes;
    let mut features = DenseMatrix::zeros(n, dims);
    let mut labels = Vec::with_capacity(n);
    for (c, mean) in means.iter().enumerate() {
        for i in 0..n_per_class {
            let row = features.row_mut(c * n_per_class + i);
            for (x, m) in row.iter_mut().zip(mean) {
                let z: f64 = rng.sample(StandardNormal);
                *x = m + z;
            }
            labels.push(c);
        }
    }
    for j in 0..dims {
        let col = features.column(j);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        for i in 0..n {
            let x = &mut features[(i, j)];
            *x = if span > 0.0 {
                ((*x - lo) / span).clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
    }
    Dataset::new(features, labels, classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Nearest-class-mean classifier on the rescaled features.
    fn nearest_mean_accuracy(ds: &Dataset) -> f64 {
        let d = ds.dim();
        let mut means = vec![vec![0.0; d]; ds.class_count];
        let mut counts = vec![0usize; ds.class_count];
        for (i, &l) in ds.labels.iter().enumerate() {
            counts[l] += 1;
            for (m, x) in means[l].iter_mut().zip(ds.features.row(i)) {
                *m += x;
            }
        }
        for (m, &c) in means.iter_mut().zip(&counts) {
            m.iter_mut().for_each(|x| *x /= c as f64);
        }
        let correct = ds
            .labels
            .iter()
            .enumerate()
            .filter(|&(i, &l)| {
                let x = ds.features.row(i);
                let dist =
                    |m: &Vec<f64>| -> f64 { m.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum() };
                (0..ds.class_count)
                    .min_by(|&a, &b| dist(&means[a]).total_cmp(&dist(&means[b])))
                    .unwrap()
                    == l
            })
            .count();
        correct as f64 / ds.len() as f64
    }

    #[test]
    fn well_separated_blobs_are_linearly_separable() {
        let ds = gaussian_blobs(5, 200, 2, 2, 10.0).unwrap();
        assert_eq!(ds.len(), 400);
        assert!(nearest_mean_accuracy(&ds) >= 0.99);
    }

    #[test]
    fn features_in_unit_box() {
        let ds = gaussian_blobs(1, 30, 5, 4, 3.0).unwrap();
        assert!(ds
            .features
            .as_slice()
            .iter()
            .all(|x| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn empty_and_deterministic() {
        assert!(gaussian_blobs(1, 0, 3, 2, 1.0).unwrap().is_empty());
        assert_eq!(
            gaussian_blobs(8, 10, 3, 3, 2.0).unwrap(),
            gaussian_blobs(8, 10, 3, 3, 2.0).unwrap()
        );
        assert!(gaussian_blobs(1, 10, 3, 2, 0.0).is_err());
    }
}
