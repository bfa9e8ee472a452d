//! Datasets and batch sources: IDX files, Gaussian blobs, drifting streams and
//! few-shot episodes.

mod episodes;
mod idx;
mod stream;
mod synthetic;

pub use episodes::{fewshot_episodes, EpisodeSampler, FewshotTask};
pub use idx::{load_idx, parse_idx_images, parse_idx_labels, write_idx};
pub use stream::{
    nonstationary_stream, rotate_features, BatchSource, DriftSchedule, EpochSampler,
    NonstationaryStream,
};
pub use synthetic::gaussian_blobs;

use rand::seq::SliceRandom;

use crate::linalg::DenseMatrix;
use crate::nn::Batch;
use crate::rng;
use crate::{Error, Result};

/// Labelled examples with features in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: DenseMatrix,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl Dataset {
    pub fn new(features: DenseMatrix, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::invalid(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        if let Some(bad) = features
            .as_slice()
            .iter()
            .find(|x| !(0.0..=1.0).contains(*x))
        {
            return Err(Error::invalid(format!(
                "feature value {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            features,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.features.row(i));
            labels.push(self.labels[i]);
        }
        Batch {
            inputs: DenseMatrix::from_vec(indices.len(), d, data).expect("shape"),
            labels,
        }
    }

    /// Every example as one batch.
    pub fn full_batch(&self) -> Batch {
        Batch {
            inputs: self.features.clone(),
            labels: self.labels.clone(),
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let b = self.batch(indices);
        Dataset {
            features: b.inputs,
            labels: b.labels,
            class_count: self.class_count,
        }
    }

    /// The first `n` examples (or all of them).
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// Seeded shuffle, then the first `test_count` examples become the test
    /// split.
    pub fn split(&self, test_count: usize, seed: u64) -> Result<(Dataset, Dataset)> {
        if test_count > self.len() {
            return Err(Error::invalid(format!(
                "cannot hold out {test_count} of {} examples",
                self.len()
            )));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut rng::seeded(seed, rng::stream::DATA));
        let (test, train) = idx.split_at(test_count);
        Ok((self.subset(train), self.subset(test)))
    }

    /// Example indices grouped by label.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.class_count];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }
}
