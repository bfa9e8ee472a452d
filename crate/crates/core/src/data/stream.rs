//! Mini-batch sources: per-epoch shuffled sampling and a drifting stream that
//! rotates the feature space segment by segment.

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::Dataset;
use crate::nn::Batch;
use crate::rng::{self, Rng};
use crate::{Error, Result};

/// Anything that hands out training batches.
pub trait BatchSource {
    fn next_batch(&mut self) -> Batch;
    /// Number of batches that make up one epoch.
    fn batches_per_epoch(&self) -> usize;
}

/// Draws mini-batches without replacement, reshuffling at every epoch. The
/// last batch of an epoch may be smaller.
#[derive(Debug, Clone)]
pub struct EpochSampler<'a> {
    data: &'a Dataset,
    batch_size: usize,
    rng: Rng,
    order: Vec<usize>,
    cursor: usize,
    epoch: usize,
}

impl<'a> EpochSampler<'a> {
    pub fn new(data: &'a Dataset, batch_size: usize, seed: u64) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::invalid(
                "cannot sample batches from an empty dataset",
            ));
        }
        if batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        let mut rng = rng::seeded(seed, rng::stream::BATCHES);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        Ok(Self {
            data,
            batch_size,
            rng,
            order,
            cursor: 0,
            epoch: 0,
        })
    }

    /// Epoch of the next batch.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn next_indices(&mut self) -> Vec<usize> {
        if self.cursor >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
            self.epoch += 1;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let idx = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        idx
    }
}

impl BatchSource for EpochSampler<'_> {
    fn next_batch(&mut self) -> Batch {
        let idx = self.next_indices();
        self.data.batch(&idx)
    }

    fn batches_per_epoch(&self) -> usize {
        self.data.len().div_ceil(self.batch_size)
    }
}

/// Piecewise-constant rotation angle: segment `s` covers iterations
/// `[s·segment_len, (s+1)·segment_len)` and uses `angles[s]` (radians). Past
/// the last listed segment the final angle persists.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftSchedule {
    pub segment_len: usize,
    pub angles: Vec<f64>,
}

impl DriftSchedule {
    pub fn new(segment_len: usize, angles: Vec<f64>) -> Result<Self> {
        if segment_len == 0 {
            return Err(Error::invalid("drift segment length must be at least 1"));
        }
        if angles.is_empty() || angles.iter().any(|a| !a.is_finite()) {
            return Err(Error::invalid("drift schedule needs finite angles"));
        }
        Ok(Self {
            segment_len,
            angles,
        })
    }

    /// Angle advancing by `step` every segment.
    pub fn advancing(segment_len: usize, step: f64, segments: usize) -> Result<Self> {
        Self::new(
            segment_len,
            (0..segments.max(1)).map(|s| s as f64 * step).collect(),
        )
    }

    pub fn segment_of(&self, iteration: usize) -> usize {
        iteration / self.segment_len
    }

    pub fn angle_at(&self, iteration: usize) -> f64 {
        let s = self.segment_of(iteration).min(self.angles.len() - 1);
        self.angles[s]
    }

    /// Whether the segment containing `iteration` has a different angle from
    /// the one before it.
    pub fn is_drifting(&self, iteration: usize) -> bool {
        let s = self.segment_of(iteration);
        if s == 0 || s >= self.angles.len() {
            return false;
        }
        self.angles[s] != self.angles[s - 1]
    }
}

/// Rotates features in the coordinate plane `(i, j)` by `theta` about the
/// origin, then maps the bounding box of the rotated unit square back onto
/// `[0, 1]²`. Other coordinates pass through.
pub fn rotate_features(x: &mut [f64], plane: (usize, usize), theta: f64) {
    let (i, j) = plane;
    let (s, c) = theta.sin_cos();
    let corners = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)];
    let (mut lo_u, mut hi_u, mut lo_v, mut hi_v) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for (a, b) in corners {
        let u = c * a - s * b;
        let v = s * a + c * b;
        lo_u = lo_u.min(u);
        hi_u = hi_u.max(u);
        lo_v = lo_v.min(v);
        hi_v = hi_v.max(v);
    }
    let (a, b) = (x[i], x[j]);
    let u = c * a - s * b;
    let v = s * a + c * b;
    x[i] = ((u - lo_u) / (hi_u - lo_u)).clamp(0.0, 1.0);
    x[j] = ((v - lo_v) / (hi_v - lo_v)).clamp(0.0, 1.0);
}

/// Batches from a base dataset whose feature space rotates per segment of a
/// [`DriftSchedule`].
#[derive(Debug, Clone)]
pub struct NonstationaryStream<'a> {
    sampler: EpochSampler<'a>,
    drift: DriftSchedule,
    plane: (usize, usize),
    iteration: usize,
}

impl NonstationaryStream<'_> {
    pub fn plane(&self) -> (usize, usize) {
        self.plane
    }

    pub fn schedule(&self) -> &DriftSchedule {
        &self.drift
    }

    /// Iteration index of the next batch.
    pub fn iteration(&self) -> usize {
        self.iteration
    }
}

impl BatchSource for NonstationaryStream<'_> {
    fn next_batch(&mut self) -> Batch {
        let mut batch = self.sampler.next_batch();
        let theta = self.drift.angle_at(self.iteration);
        if theta != 0.0 {
            for r in 0..batch.inputs.rows() {
                rotate_features(batch.inputs.row_mut(r), self.plane, theta);
            }
        }
        self.iteration += 1;
        batch
    }

    fn batches_per_epoch(&self) -> usize {
        self.sampler.batches_per_epoch()
    }
}

/// Batches of size `batch_size` from `base`, rotated in a seeded random
/// coordinate plane by the schedule's angle. With every angle zero the
/// batches equal those of [`EpochSampler`] with the same seed.
pub fn nonstationary_stream<'a>(
    base: &'a Dataset,
    drift: DriftSchedule,
    batch_size: usize,
    seed: u64,
) -> Result<NonstationaryStream<'a>> {
    if base.dim() < 2 {
        return Err(Error::invalid(
            "rotation needs at least two feature dimensions",
        ));
    }
    let mut rng = rng::seeded(seed, rng::stream::DIRECTIONS);
    let d = base.dim();
    let i = rng.random_range(0..d);
    let mut j = rng.random_range(0..d - 1);
    if j >= i {
        j += 1;
    }
    Ok(NonstationaryStream {
        sampler: EpochSampler::new(base, batch_size, seed)?,
        drift,
        plane: (i.min(j), i.max(j)),
        iteration: 0,
    })
}
