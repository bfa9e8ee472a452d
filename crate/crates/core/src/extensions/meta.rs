use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::FewshotTask;
use crate::linalg::{dot, normalize, DenseMatrix, EigenPairs};
use crate::nn::hessian::top_hessian_eigenvalue;
use crate::nn::Network;
use crate::optimizers::DsbpConfig;
use crate::rng;
use crate::spectral::{dsbp_weight_update, sgd_step, LayerSpectralState};
use crate::{Error, Result};

/// Weight of the stored vector in each blend.
pub const BUFFER_MOMENTUM: f64 = 0.9;
/// Coefficient of `‖W − W_pre‖²_F` in the initialization regularizer.
pub const INIT_REG: f64 = 0.01;

/// Per-layer eigenvectors carried across tasks.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SpectralMemoryBuffer {
    pub layers: Vec<Vec<Vec<f64>>>,
}

impl SpectralMemoryBuffer {
    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Warm-start pairs for layer `l` (eigenvalues unknown, set to zero).
    pub fn warm_start(&self, l: usize) -> Option<EigenPairs> {
        let vectors = self.layers.get(l)?.clone();
        let n = vectors.len();
        Some(EigenPairs {
            vectors,
            values: vec![0.0; n],
            residuals: vec![0.0; n],
        })
    }
}

/// `e ← normalize(0.9·e + 0.1·s·e^{(t)})` per vector, with the sign `s` of
/// each fresh vector chosen to agree with the stored one. An empty buffer
/// is initialized from `fresh`.
pub fn meta_buffer_blend(
    buffer: &SpectralMemoryBuffer,
    fresh: &[EigenPairs],
) -> Result<SpectralMemoryBuffer> {
    if buffer.is_empty() {
        return Ok(SpectralMemoryBuffer {
            layers: fresh.iter().map(|p| p.vectors.clone()).collect(),
        });
    }
    if buffer.layers.len() != fresh.len() {
        return Err(Error::invalid(format!(
            "buffer has {} layers but {} were given",
            buffer.layers.len(),
            fresh.len()
        )));
    }
    let layers = buffer
        .layers
        .iter()
        .zip(fresh)
        .map(|(stored, new)| {
            if stored.len() != new.len() || new.dim() != stored.first().map_or(0, Vec::len) {
                return Err(Error::invalid(
                    "buffer and fresh eigenpairs differ in shape",
                ));
            }
            Ok(stored
                .iter()
                .zip(&new.vectors)
                .map(|(e, f)| {
                    let s = if dot(e, f) < 0.0 { -1.0 } else { 1.0 };
                    let mut v: Vec<f64> = e
                        .iter()
                        .zip(f)
                        .map(|(a, b)| BUFFER_MOMENTUM * a + (1.0 - BUFFER_MOMENTUM) * s * b)
                        .collect();
                    normalize(&mut v);
                    v
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(SpectralMemoryBuffer { layers })
}

/// Mean cosine `(1/k)Σ_m ⟨e_m^a, e_m^b⟩` over the leading `k` vectors of
/// every layer, after canonicalizing each pair's relative sign by the
/// largest-magnitude component of `a`'s vector.
pub fn task_similarity(a: &[EigenPairs], b: &[EigenPairs], k: usize) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() || k == 0 {
        return Err(Error::invalid(
            "task similarity needs matching non-empty layer lists and k >= 1",
        ));
    }
    let mut total = 0.0;
    for (pa, pb) in a.iter().zip(b) {
        if pa.len() < k || pb.len() < k || pa.dim() != pb.dim() {
            return Err(Error::invalid(format!(
                "task similarity needs {k} vectors of equal length per layer"
            )));
        }
        for (ea, eb) in pa.vectors.iter().zip(&pb.vectors).take(k) {
            let mut x = ea.clone();
            let mut y = eb.clone();
            crate::linalg::canonicalize_sign(&mut x);
            crate::linalg::canonicalize_sign(&mut y);
            total += dot(&x, &y);
        }
    }
    Ok(total / (k * a.len()) as f64)
}

/// Gradient `0.02·(W − W_pre)` of `0.01·‖W − W_pre‖²_F`.
pub fn init_regularizer_grad(w: &DenseMatrix, w_pre: &DenseMatrix) -> Result<DenseMatrix> {
    let mut d = w.sub(w_pre)?;
    d.scale(2.0 * INIT_REG);
    Ok(d)
}

pub fn init_regularizer_loss(w: &DenseMatrix, w_pre: &DenseMatrix) -> Result<f64> {
    let d = w.sub(w_pre)?;
    Ok(INIT_REG * d.frobenius_dot(&d))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaConfig {
    pub inner_steps: usize,
    pub outer_steps: usize,
    /// Fraction of the way the meta-weights move toward the adapted weights.
    pub outer_step_size: f64,
    /// Outer steps between Hessian estimates; 0 disables them.
    pub hessian_every: usize,
    pub n_way: usize,
    pub k_shot: usize,
    pub query_per_class: usize,
    pub eval_episodes: usize,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            inner_steps: 10,
            outer_steps: 200,
            outer_step_size: 0.1,
            hessian_every: 10,
            n_way: 5,
            k_shot: 5,
            query_per_class: 15,
            eval_episodes: 50,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.outer_step_size > 0.0 && self.outer_step_size <= 1.0) {
            return Err(Error::Config(format!(
                "outer_step_size = {} must lie in (0, 1]",
                self.outer_step_size
            )));
        }
        if self.n_way < 2 || self.k_shot == 0 || self.query_per_class == 0 {
            return Err(Error::Config(
                "episodes need n_way >= 2, k_shot >= 1, query_per_class >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Result of adapting one network to one task.
#[derive(Debug, Clone)]
pub struct Adaptation {
    pub net: Network,
    pub pairs: Vec<EigenPairs>,
    pub query_accuracy: f64,
    pub query_loss: f64,
}

/// `steps` DSBP iterations on the support set, each weight gradient
/// augmented by [`init_regularizer_grad`] toward the starting weights. The
/// spectral state is refreshed every step, warm-started from `warm`.
pub fn adapt(
    net: &Network,
    task: &FewshotTask,
    cfg: &DsbpConfig,
    steps: usize,
    warm: Option<&SpectralMemoryBuffer>,
) -> Result<Adaptation> {
    let mut adapted = net.clone();
    let mut states: Vec<LayerSpectralState> = (0..net.depth())
        .map(|l| {
            let mut s = LayerSpectralState::new();
            s.eigenpairs = warm.and_then(|b| b.warm_start(l));
            s
        })
        .collect();
    for t in 0..steps {
        adapted.forward(&task.support)?;
        {
            let acts = adapted
                .cached_activations()
                .expect("forward pass just cached");
            for (l, s) in states.iter_mut().enumerate() {
                let k = cfg.k.min(acts[l].cols());
                if s.eigenpairs.as_ref().is_some_and(|p| p.len() != k) {
                    s.eigenpairs = None;
                }
                let seed = rng::derive(rng::derive(cfg.seed, 0x9000 + l as u64), t as u64);
                s.refresh(&acts[l], k, cfg.power_iters, seed, t)?;
            }
        }
        let grads = adapted.backward(&task.support)?;
        for (l, g) in grads.iter().enumerate() {
            let mut gw = g.weight.clone();
            gw.add_scaled(
                &init_regularizer_grad(&adapted.layers()[l].weight, &net.layers()[l].weight)?,
                1.0,
            )?;
            let pairs = states[l].eigenpairs.as_ref().expect("refreshed above");
            let layer = adapted.layer_mut(l);
            dsbp_weight_update(&mut layer.weight, &gw, pairs, cfg.eta, cfg.beta)?;
            if cfg.train_biases {
                sgd_step(&mut layer.bias, &g.bias, cfg.eta);
            }
        }
    }
    let out = adapted.evaluate(&task.query)?;
    if !out.loss.is_finite() {
        return Err(Error::Diverged {
            iteration: steps,
            layer: adapted.depth() - 1,
            detail: "query loss is not finite after adaptation".into(),
        });
    }
    let pairs = if steps == 0 {
        Vec::new()
    } else {
        states
            .into_iter()
            .map(|s| s.eigenpairs.expect("refreshed"))
            .collect()
    };
    Ok(Adaptation {
        query_accuracy: out.accuracy(&task.query.labels),
        query_loss: out.loss,
        net: adapted,
        pairs,
    })
}

/// One outer step of the meta loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaStep {
    pub outer: usize,
    pub query_accuracy: f64,
    pub query_loss: f64,
    /// Similarity of this task's eigenvectors to the buffer before blending.
    pub similarity: Option<f64>,
    pub top_hessian: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct MetaOutcome {
    pub net: Network,
    pub buffer: SpectralMemoryBuffer,
    pub steps: Vec<MetaStep>,
}

/// First-order meta learning: for each task, adapt a copy of the
/// meta-weights with [`adapt`] and move the meta-weights a fraction
/// `outer_step_size` toward the adapted weights. The memory buffer is
/// blended with each task's eigenvectors and warm-starts the next task.
pub fn meta_train(
    net: Network,
    tasks: &mut dyn Iterator<Item = FewshotTask>,
    inner: &DsbpConfig,
    cfg: &MetaConfig,
) -> Result<MetaOutcome> {
    cfg.validate()?;
    inner.validate()?;
    let mut meta = net;
    let mut buffer = SpectralMemoryBuffer::default();
    let mut steps = Vec::with_capacity(cfg.outer_steps);
    for outer in 0..cfg.outer_steps {
        let task = tasks
            .next()
            .ok_or_else(|| Error::invalid(format!("task stream ended after {outer} tasks")))?;
        let warm = (!buffer.is_empty()).then_some(&buffer);
        let adapted = adapt(&meta, &task, inner, cfg.inner_steps, warm)?;
        let top_hessian = if cfg.hessian_every > 0 && outer % cfg.hessian_every == 0 {
            Some(
                top_hessian_eigenvalue(
                    &adapted.net,
                    &task.support,
                    20,
                    rng::derive(inner.seed, outer as u64),
                )?
                .value,
            )
        } else {
            None
        };
        let mut similarity = None;
        if !adapted.pairs.is_empty() {
            if !buffer.is_empty() {
                let stored: Vec<EigenPairs> = (0..buffer.layers.len())
                    .map(|l| buffer.warm_start(l).expect("layer exists"))
                    .collect();
                let k = adapted.pairs.iter().map(EigenPairs::len).min().unwrap_or(0);
                similarity = task_similarity(&stored, &adapted.pairs, k).ok();
            }
            buffer = meta_buffer_blend(&buffer, &adapted.pairs)?;
        }
        let (w, a) = (meta.flatten(), adapted.net.flatten());
        let moved: Vec<f64> = w
            .iter()
            .zip(&a)
            .map(|(x, y)| x + cfg.outer_step_size * (y - x))
            .collect();
        meta.set_flat(&moved)?;
        steps.push(MetaStep {
            outer,
            query_accuracy: adapted.query_accuracy,
            query_loss: adapted.query_loss,
            similarity,
            top_hessian,
        });
    }
    Ok(MetaOutcome {
        net: meta,
        buffer,
        steps,
    })
}

/// Paired evaluation of a meta-initialization against random initializations
/// given the same inner budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaComparison {
    pub meta_accuracy: Vec<f64>,
    pub scratch_accuracy: Vec<f64>,
    pub mean_difference: f64,
    /// 95% percentile bootstrap interval of the mean difference.
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Adapts both the meta-initialization (with its buffer) and a fresh random
/// network of the same shape to each task and compares query accuracy.
/// The scratch network for episode `i` is seeded from `(seed, i)`.
pub fn compare_with_scratch(
    outcome: &MetaOutcome,
    tasks: &mut dyn Iterator<Item = FewshotTask>,
    inner: &DsbpConfig,
    cfg: &MetaConfig,
    hidden: crate::nn::Activation,
    seed: u64,
) -> Result<MetaComparison> {
    let widths = outcome.net.widths();
    let mut meta_accuracy = Vec::with_capacity(cfg.eval_episodes);
    let mut scratch_accuracy = Vec::with_capacity(cfg.eval_episodes);
    for i in 0..cfg.eval_episodes {
        let task = tasks.next().ok_or_else(|| {
            Error::invalid(format!("task stream ended after {i} evaluation tasks"))
        })?;
        let warm = (!outcome.buffer.is_empty()).then_some(&outcome.buffer);
        meta_accuracy
            .push(adapt(&outcome.net, &task, inner, cfg.inner_steps, warm)?.query_accuracy);
        let scratch = Network::mlp(&widths, hidden, rng::derive(seed, i as u64))?;
        scratch_accuracy.push(adapt(&scratch, &task, inner, cfg.inner_steps, None)?.query_accuracy);
    }
    let diffs: Vec<f64> = meta_accuracy
        .iter()
        .zip(&scratch_accuracy)
        .map(|(m, s)| m - s)
        .collect();
    let (ci_low, ci_high) = bootstrap_mean_ci(&diffs, 2000, 0.95, seed)?;
    Ok(MetaComparison {
        mean_difference: diffs.iter().sum::<f64>() / diffs.len() as f64,
        meta_accuracy,
        scratch_accuracy,
        ci_low,
        ci_high,
    })
}

/// Percentile bootstrap interval for the mean.
pub fn bootstrap_mean_ci(
    samples: &[f64],
    resamples: usize,
    level: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    if samples.is_empty() || resamples == 0 || !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(
            "bootstrap needs samples, resamples >= 1 and level in (0, 1)",
        ));
    }
    let mut r = rng::seeded(seed, rng::stream::EPISODES + 100);
    let n = samples.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| samples[r.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let at = |q: f64| means[((q * resamples as f64).floor() as usize).min(resamples - 1)];
    Ok((at(tail), at(1.0 - tail)))
}
