use rand::seq::{IndexedRandom, SliceRandom};

use super::Dataset;
use crate::nn::Batch;
use crate::rng::{self, Rng};
use crate::{Error, Result};

/// One N-way K-shot task. Labels in `support` and `query` are positions in
/// `classes`, which lists the original labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FewshotTask {
    pub support: Batch,
    pub query: Batch,
    pub classes: Vec<usize>,
    /// Original dataset indices, for disjointness checks.
    pub support_indices: Vec<usize>,
    pub query_indices: Vec<usize>,
}

/// Endless seeded stream of episodes.
#[derive(Debug, Clone)]
pub struct EpisodeSampler<'a> {
    base: &'a Dataset,
    n_way: usize,
    k_shot: usize,
    query_per_class: usize,
    by_class: Vec<Vec<usize>>,
    eligible: Vec<usize>,
    rng: Rng,
}

impl EpisodeSampler<'_> {
    pub fn n_way(&self) -> usize {
        self.n_way
    }

    pub fn sample(&mut self) -> FewshotTask {
        let mut classes: Vec<usize> = self
            .eligible
            .choose_multiple(&mut self.rng, self.n_way)
            .copied()
            .collect();
        classes.sort_unstable();
        let per_class = self.k_shot + self.query_per_class;
        let mut support_indices = Vec::with_capacity(self.n_way * self.k_shot);
        let mut query_indices = Vec::with_capacity(self.n_way * self.query_per_class);
        let mut support_labels = Vec::new();
        let mut query_labels = Vec::new();
        for (pos, &c) in classes.iter().enumerate() {
            let mut pool = self.by_class[c].clone();
            pool.shuffle(&mut self.rng);
            support_indices.extend_from_slice(&pool[..self.k_shot]);
            query_indices.extend_from_slice(&pool[self.k_shot..per_class]);
            support_labels.extend(std::iter::repeat_n(pos, self.k_shot));
            query_labels.extend(std::iter::repeat_n(pos, self.query_per_class));
        }
        let mut support = self.base.batch(&support_indices);
        support.labels = support_labels;
        let mut query = self.base.batch(&query_indices);
        query.labels = query_labels;
        FewshotTask {
            support,
            query,
            classes,
            support_indices,
            query_indices,
        }
    }
}

impl Iterator for EpisodeSampler<'_> {
    type Item = FewshotTask;

    fn next(&mut self) -> Option<FewshotTask> {
        Some(self.sample())
    }
}

pub fn fewshot_episodes(
    base: &Dataset,
    n_way: usize,
    k_shot: usize,
    query_per_class: usize,
    seed: u64,
) -> Result<EpisodeSampler<'_>> {
    if n_way == 0 || k_shot == 0 {
        return Err(Error::invalid("episodes need n_way >= 1 and k_shot >= 1"));
    }
    let by_class = base.indices_by_class();
    let eligible: Vec<usize> = by_class
        .iter()
        .enumerate()
        .filter(|(_, idx)| idx.len() >= k_shot + query_per_class)
        .map(|(c, _)| c)
        .collect();
    if eligible.len() < n_way {
        return Err(Error::invalid(format!(
            "{n_way}-way {k_shot}-shot episodes with {query_per_class} queries need {n_way} classes \
             with {} examples each, only {} qualify",
            k_shot + query_per_class,
            eligible.len()
        )));
    }
    Ok(EpisodeSampler {
        base,
        n_way,
        k_shot,
        query_per_class,
        by_class,
        eligible,
        rng: rng::seeded(seed, rng::stream::EPISODES),
    })
}
