//! Training loops: DSBP, plain SGD, SAM and the Lie-flow variant.
//!
//! All four share one loop over a [`BatchSource`] so that, for a given seed,
//! every method sees the same batches. Biases are always updated by plain
//! SGD; projection, shrinkage and pruning act on weight matrices only.

mod lie;
mod sam;

pub use lie::{integrate_generator, lie_generator, lie_step};
pub use sam::sam_gradient;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::analysis::{alignment_metric, perturbation_angle};
use crate::data::{BatchSource, Dataset, EpochSampler};
use crate::linalg::{
    activation_covariance, power_iteration_topk, project_onto_subspace, DenseMatrix,
};
use crate::metrics::MetricsRecord;
use crate::nn::hessian::{top_hessian_eigenvalue, Differentiable};
use crate::nn::{Batch, Network};
use crate::rng;
use crate::spectral::{
    apply_mask, dsbp_weight_update, layer_threshold_scale, reconstruction_error_ok, sgd_step,
    spectral_prune, IntervalController, LayerSpectralState, PruneSchedule, RECONSTRUCTION_BUDGET,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Dsbp,
    Sgd,
    Sam,
    Lie,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Dsbp, Method::Sgd, Method::Sam, Method::Lie];

    pub fn name(self) -> &'static str {
        match self {
            Method::Dsbp => "dsbp",
            Method::Sgd => "sgd",
            Method::Sam => "sam",
            Method::Lie => "lie",
        }
    }

    /// Methods that maintain per-layer spectral state.
    pub fn is_spectral(self) -> bool {
        matches!(self, Method::Dsbp | Method::Lie)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown method `{s}` (expected dsbp, sgd, sam or lie)"
                ))
            })
    }
}

/// Optimizer hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DsbpConfig {
    /// Learning rate η.
    pub eta: f64,
    /// Projection rank (capped at each layer's width).
    pub k: usize,
    /// Base refresh interval p₀.
    pub p0: usize,
    /// Base pruning threshold τ₀.
    pub tau0: f64,
    /// Sharpness shrinkage strength β.
    pub beta: f64,
    /// Interval sensitivity α to the top-eigenvalue variance.
    pub alpha: f64,
    /// Iteration budget T.
    pub total_iters: usize,
    pub power_iters: usize,
    pub seed: u64,
    pub baseline_kind: Method,
    pub batch_size: usize,
    pub prune: bool,
    /// Decay rate of the pruning threshold over the budget.
    pub prune_decay: f64,
    /// Iterations between pruning passes.
    pub prune_every: usize,
    /// Power iterations for the between-refresh λ₁ probe.
    pub probe_iters: usize,
    pub sam_rho: f64,
    pub train_biases: bool,
}

impl Default for DsbpConfig {
    fn default() -> Self {
        Self {
            eta: 0.01,
            k: 10,
            p0: 100,
            tau0: 0.01,
            beta: 0.1,
            alpha: 0.1,
            total_iters: 1000,
            power_iters: 50,
            seed: 0,
            baseline_kind: Method::Dsbp,
            batch_size: 64,
            prune: true,
            prune_decay: 0.1,
            prune_every: 100,
            probe_iters: 20,
            sam_rho: 0.05,
            train_biases: true,
        }
    }
}

impl DsbpConfig {
    pub fn with_method(&self, method: Method) -> Self {
        Self {
            baseline_kind: method,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            problems.push(format!("eta = {} must be finite and >= 0", self.eta));
        }
        for (name, v) in [
            ("k", self.k),
            ("p0", self.p0),
            ("power_iters", self.power_iters),
            ("batch_size", self.batch_size),
            ("prune_every", self.prune_every),
            ("probe_iters", self.probe_iters),
        ] {
            if v == 0 {
                problems.push(format!("{name} must be at least 1"));
            }
        }
        for (name, v) in [
            ("beta", self.beta),
            ("alpha", self.alpha),
            ("tau0", self.tau0),
            ("prune_decay", self.prune_decay),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                problems.push(format!("{name} = {v} must be finite and >= 0"));
            }
        }
        if self.prune && self.tau0 <= 0.0 {
            problems.push("pruning needs tau0 > 0".into());
        }
        if self.baseline_kind == Method::Sam && !(self.sam_rho > 0.0) {
            problems.push(format!("sam_rho = {} must be > 0", self.sam_rho));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// When to write a [`MetricsRecord`] and how much to spend on the Hessian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsCadence {
    /// Iterations between records; 0 logs once per epoch.
    pub log_every: usize,
    /// Iterations between Hessian estimates; 0 disables them.
    pub hessian_every: usize,
    pub hessian_iters: usize,
}

impl Default for MetricsCadence {
    fn default() -> Self {
        Self {
            log_every: 0,
            hessian_every: 200,
            hessian_iters: 20,
        }
    }
}

/// Read-only inputs for logging.
#[derive(Debug, Clone, Copy, Default)]
pub struct Monitor<'a> {
    pub test: Option<&'a Dataset>,
    pub hessian_batch: Option<&'a Batch>,
    pub cadence: MetricsCadence,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub method: Method,
    pub records: Vec<MetricsRecord>,
    /// Mini-batch loss at every iteration (before that iteration's update).
    pub losses: Vec<f64>,
    /// Per iteration, the refresh interval of each layer (spectral methods).
    pub intervals: Vec<Vec<usize>>,
    /// Hash of all parameters after every iteration.
    pub weight_hashes: Vec<u64>,
    pub net: Network,
    pub spectral: Vec<LayerSpectralState>,
    pub refreshes: usize,
    pub prune_passes: usize,
    pub vetoes: usize,
    /// One entry per layer per pruning pass.
    pub prune_events: Vec<PruneEvent>,
    pub epoch_wall_ms: Vec<f64>,
}

/// Outcome of pruning one layer in one pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneEvent {
    pub iteration: usize,
    pub layer: usize,
    pub threshold: f64,
    /// Fraction of entries the candidate mask removes.
    pub candidate_sparsity: f64,
    /// `‖W − W̃‖²_F` of the candidate.
    pub error: f64,
    /// `0.05·Σλ` for the layer.
    pub budget: f64,
    pub accepted: bool,
}

impl TrainReport {
    /// Fraction of exactly-zero weights per layer of the final network.
    pub fn final_sparsity(&self) -> Vec<f64> {
        weight_sparsity(&self.net)
    }
}

pub fn weight_sparsity(net: &Network) -> Vec<f64> {
    net.layers()
        .iter()
        .map(|l| {
            let w = l.weight.as_slice();
            w.iter().filter(|&&x| x == 0.0).count() as f64 / w.len() as f64
        })
        .collect()
}

/// FNV-1a over the bit patterns of every parameter.
pub fn param_hash(net: &Network) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for layer in net.layers() {
        for &x in layer.weight.as_slice().iter().chain(&layer.bias) {
            for b in x.to_bits().to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
    }
    h
}

pub fn train_dsbp(net: Network, data: &Dataset, cfg: &DsbpConfig) -> Result<TrainReport> {
    train_on(net, data, &cfg.with_method(Method::Dsbp))
}

pub fn train_sgd(net: Network, data: &Dataset, cfg: &DsbpConfig) -> Result<TrainReport> {
    train_on(net, data, &cfg.with_method(Method::Sgd))
}

pub fn train_sam(net: Network, data: &Dataset, cfg: &DsbpConfig, rho: f64) -> Result<TrainReport> {
    let cfg = DsbpConfig {
        sam_rho: rho,
        ..cfg.with_method(Method::Sam)
    };
    train_on(net, data, &cfg)
}

pub fn train_lie(net: Network, data: &Dataset, cfg: &DsbpConfig) -> Result<TrainReport> {
    train_on(net, data, &cfg.with_method(Method::Lie))
}

fn train_on(net: Network, data: &Dataset, cfg: &DsbpConfig) -> Result<TrainReport> {
    let mut source = EpochSampler::new(data, cfg.batch_size, cfg.seed)?;
    let monitor = Monitor {
        cadence: MetricsCadence {
            hessian_every: 0,
            ..MetricsCadence::default()
        },
        ..Monitor::default()
    };
    train(net, &mut source, cfg, &monitor)
}

/// Runs `cfg.total_iters` iterations of `cfg.baseline_kind`.
pub fn train(
    net: Network,
    source: &mut dyn BatchSource,
    cfg: &DsbpConfig,
    monitor: &Monitor<'_>,
) -> Result<TrainReport> {
    train_with_hook(net, source, cfg, monitor, &mut |_, _, _| Ok(()))
}

/// Called after every update with the network, the spectral states (empty
/// for non-spectral methods) and the iteration index.
pub type IterationHook<'h> =
    dyn FnMut(&mut Network, &[LayerSpectralState], usize) -> Result<()> + 'h;

/// As [`train`], running `hook` after each iteration's update.
pub fn train_with_hook(
    mut net: Network,
    source: &mut dyn BatchSource,
    cfg: &DsbpConfig,
    monitor: &Monitor<'_>,
    hook: &mut IterationHook<'_>,
) -> Result<TrainReport> {
    cfg.validate()?;
    let depth = net.depth();
    let bpe = source.batches_per_epoch().max(1);
    let ctrl = IntervalController::new(cfg.p0, cfg.alpha)?;
    let mut loop_state = SpectralLoop {
        ctrl,
        states: vec![LayerSpectralState::new(); depth],
        last_prune: None,
        refreshes: 0,
        prune_passes: 0,
        vetoes: 0,
        prune_events: Vec::new(),
    };
    let mut records = Vec::new();
    let mut losses = Vec::with_capacity(cfg.total_iters);
    let mut intervals = Vec::new();
    let mut weight_hashes = Vec::with_capacity(cfg.total_iters);
    let mut epoch_wall_ms = Vec::new();
    let start = Instant::now();
    let mut epoch_start = start;

    for t in 0..cfg.total_iters {
        let batch = source.next_batch();
        let loss = match cfg.baseline_kind {
            Method::Sgd => sgd_iteration(&mut net, &batch, cfg, t)?,
            Method::Sam => sam_iteration(&mut net, &batch, cfg, t)?,
            Method::Dsbp | Method::Lie => {
                let (loss, p) = loop_state.iteration(&mut net, &batch, cfg, t)?;
                intervals.push(p);
                loss
            }
        };
        let states: &[LayerSpectralState] = if cfg.baseline_kind.is_spectral() {
            &loop_state.states
        } else {
            &[]
        };
        hook(&mut net, states, t)?;
        losses.push(loss);
        weight_hashes.push(param_hash(&net));

        let done = t + 1;
        if done % bpe == 0 {
            let now = Instant::now();
            epoch_wall_ms.push(now.duration_since(epoch_start).as_secs_f64() * 1e3);
            epoch_start = now;
        }
        let log_now = done == cfg.total_iters
            || match monitor.cadence.log_every {
                0 => done % bpe == 0,
                n => done % n == 0,
            };
        if log_now {
            let mut rec = log_record(&net, &batch, &loop_state.states, cfg, monitor, done)?;
            rec.epoch = done.div_ceil(bpe);
            rec.train_loss = loss;
            rec.wall_ms = start.elapsed().as_secs_f64() * 1e3;
            records.push(rec);
        }
    }

    Ok(TrainReport {
        method: cfg.baseline_kind,
        records,
        losses,
        intervals,
        weight_hashes,
        net,
        spectral: loop_state.states,
        refreshes: loop_state.refreshes,
        prune_passes: loop_state.prune_passes,
        vetoes: loop_state.vetoes,
        prune_events: loop_state.prune_events,
        epoch_wall_ms,
    })
}

fn check_loss(loss: f64, net: &Network, t: usize) -> Result<()> {
    if loss.is_finite() {
        return Ok(());
    }
    let layer = net
        .layers()
        .iter()
        .position(|l| !l.weight.all_finite() || l.bias.iter().any(|b| !b.is_finite()))
        .unwrap_or(net.depth() - 1);
    Err(Error::Diverged {
        iteration: t,
        layer,
        detail: format!("loss is {loss}"),
    })
}

fn check_layer(net: &Network, l: usize, t: usize) -> Result<()> {
    let layer = &net.layers()[l];
    if layer.weight.all_finite() && layer.bias.iter().all(|b| b.is_finite()) {
        Ok(())
    } else {
        Err(Error::Diverged {
            iteration: t,
            layer: l,
            detail: "non-finite parameters after update".into(),
        })
    }
}

fn sgd_iteration(net: &mut Network, batch: &Batch, cfg: &DsbpConfig, t: usize) -> Result<f64> {
    let (out, grads) = net.loss_and_gradients(batch)?;
    check_loss(out.loss, net, t)?;
    for (l, g) in grads.iter().enumerate() {
        let layer = net.layer_mut(l);
        sgd_step(layer.weight.as_mut_slice(), g.weight.as_slice(), cfg.eta);
        if cfg.train_biases {
            sgd_step(&mut layer.bias, &g.bias, cfg.eta);
        }
        check_layer(net, l, t)?;
    }
    Ok(out.loss)
}

fn sam_iteration(net: &mut Network, batch: &Batch, cfg: &DsbpConfig, t: usize) -> Result<f64> {
    let (out, grads) = net.loss_and_gradients(batch)?;
    check_loss(out.loss, net, t)?;
    let flat = crate::nn::flatten_gradients(&grads);
    let gn = crate::linalg::norm(&flat);
    let grads = if gn > 0.0 {
        let mut w = net.flatten();
        crate::linalg::axpy(&mut w, cfg.sam_rho / gn, &flat);
        let mut probe = net.clone();
        probe.set_flat(&w)?;
        probe.loss_and_gradients(batch)?.1
    } else {
        grads
    };
    for (l, g) in grads.iter().enumerate() {
        let layer = net.layer_mut(l);
        sgd_step(layer.weight.as_mut_slice(), g.weight.as_slice(), cfg.eta);
        if cfg.train_biases {
            sgd_step(&mut layer.bias, &g.bias, cfg.eta);
        }
        check_layer(net, l, t)?;
    }
    Ok(out.loss)
}

struct SpectralLoop {
    ctrl: IntervalController,
    states: Vec<LayerSpectralState>,
    last_prune: Option<usize>,
    refreshes: usize,
    prune_passes: usize,
    vetoes: usize,
    prune_events: Vec<PruneEvent>,
}

fn power_seed(seed: u64, layer: usize, t: usize) -> u64 {
    rng::derive(rng::derive(seed, 0x7000 + layer as u64), t as u64)
}

impl SpectralLoop {
    /// One DSBP or Lie iteration. Returns the batch loss and the per-layer
    /// refresh intervals in force.
    fn iteration(
        &mut self,
        net: &mut Network,
        batch: &Batch,
        cfg: &DsbpConfig,
        t: usize,
    ) -> Result<(f64, Vec<usize>)> {
        let depth = net.depth();
        let mut out = net.forward(batch)?;
        check_loss(out.loss, net, t)?;

        let mut intervals = Vec::with_capacity(depth);
        {
            let acts = net.cached_activations().expect("forward pass just cached");
            for (l, state) in self.states.iter_mut().enumerate() {
                let p = self.ctrl.interval(&state.lambda_history());
                intervals.push(p);
                let seed = power_seed(cfg.seed, l, t);
                if state.age(t).is_none_or(|age| age >= p) {
                    let k = cfg.k.min(acts[l].cols());
                    state.refresh(&acts[l], k, cfg.power_iters, seed, t)?;
                    self.refreshes += 1;
                } else {
                    state.observe(&acts[l], cfg.probe_iters, seed)?;
                }
            }
        }

        if cfg.baseline_kind == Method::Dsbp
            && cfg.prune
            && self.last_prune.is_none_or(|p| t - p >= cfg.prune_every)
        {
            self.last_prune = Some(t);
            self.prune_passes += 1;
            if self.prune(net, cfg, t)? {
                out = net.forward(batch)?;
                check_loss(out.loss, net, t)?;
            }
        }

        let grads = net.backward(batch)?;
        for (l, g) in grads.iter().enumerate() {
            let state = &self.states[l];
            let pairs = state.eigenpairs.as_ref().expect("refreshed at t = 0");
            let layer = net.layer_mut(l);
            if cfg.baseline_kind == Method::Dsbp {
                let projected =
                    dsbp_weight_update(&mut layer.weight, &g.weight, pairs, cfg.eta, cfg.beta)?;
                debug_assert!(
                    projected.frobenius_norm() <= g.weight.frobenius_norm() * (1.0 + 1e-9) + 1e-300
                );
            } else {
                layer.weight = lie_step(&layer.weight, state, &g.weight, cfg.eta)?;
            }
            if cfg.train_biases {
                sgd_step(&mut layer.bias, &g.bias, cfg.eta);
            }
            if let Some(mask) = &state.mask {
                apply_mask(&mut layer.weight, mask);
            }
            check_layer(net, l, t)?;
        }
        Ok((out.loss, intervals))
    }

    /// Pruning pass over all layers. Returns whether any weight changed.
    fn prune(&mut self, net: &mut Network, cfg: &DsbpConfig, t: usize) -> Result<bool> {
        let max_init = self
            .states
            .iter()
            .filter_map(|s| s.initial_top)
            .fold(0.0, f64::max);
        if max_init <= 0.0 {
            return Ok(false);
        }
        let mut changed = false;
        for (l, state) in self.states.iter_mut().enumerate() {
            let base = layer_threshold_scale(cfg.tau0, state.initial_top.unwrap_or(0.0), max_init)?;
            if base <= 0.0 {
                continue;
            }
            let tau = PruneSchedule::new(base, cfg.prune_decay, cfg.total_iters)?.threshold(t)?;
            let pairs = state.eigenpairs.as_ref().expect("refreshed at t = 0");
            let w = &net.layers()[l].weight;
            let outcome = spectral_prune(w, pairs, tau)?;
            let accepted = reconstruction_error_ok(w, &outcome.weights, &[state.spectrum_total]);
            self.prune_events.push(PruneEvent {
                iteration: t,
                layer: l,
                threshold: tau,
                candidate_sparsity: outcome.sparsity,
                error: w
                    .sub(&outcome.weights)?
                    .frobenius_dot(&w.sub(&outcome.weights)?),
                budget: RECONSTRUCTION_BUDGET * state.spectrum_total,
                accepted,
            });
            if accepted {
                if outcome.weights != *w {
                    changed = true;
                    net.layer_mut(l).weight = outcome.weights;
                }
                state.mask = Some(outcome.mask);
            } else {
                self.vetoes += 1;
            }
        }
        Ok(changed)
    }
}

/// Diagnostics at a logging event, computed on the most recent batch with
/// the updated weights. The alignment and angle compare the top left
/// singular direction of layer 0's (projected) weight gradient with layer
/// 0's top activation eigenvector.
fn log_record(
    net: &Network,
    batch: &Batch,
    states: &[LayerSpectralState],
    cfg: &DsbpConfig,
    monitor: &Monitor<'_>,
    iteration: usize,
) -> Result<MetricsRecord> {
    let mut probe = net.clone();
    let (_, grads) = probe.loss_and_gradients(batch)?;
    let acts = probe
        .cached_activations()
        .expect("forward pass just cached");
    let seed = power_seed(cfg.seed, usize::MAX >> 1, iteration);

    let mut layer_lambda = Vec::with_capacity(acts.len());
    let mut e1 = None;
    for (l, a) in acts.iter().enumerate() {
        let pairs = power_iteration_topk(&activation_covariance(a)?, 1, cfg.power_iters, seed)?;
        layer_lambda.push(pairs.values[0]);
        if l == 0 {
            e1 = Some(pairs.vectors[0].clone());
        }
    }

    let mut g0 = grads[0].weight.clone();
    if cfg.baseline_kind.is_spectral() {
        if let Some(pairs) = states.first().and_then(|s| s.eigenpairs.as_ref()) {
            g0 = project_onto_subspace(&g0, pairs)?;
        }
    }
    let (alignment, angle_deg) = match (top_left_singular(&g0, cfg.power_iters, seed)?, e1) {
        (Some(u), Some(e)) => (
            alignment_metric(&u, &e).ok(),
            perturbation_angle(&u, &e).ok(),
        ),
        _ => (None, None),
    };

    let test_accuracy = match monitor.test {
        Some(ds) if !ds.is_empty() => {
            let b = ds.full_batch();
            Some(net.evaluate(&b)?.accuracy(&b.labels))
        }
        _ => None,
    };
    let cadence = monitor.cadence;
    let top_hessian = match monitor.hessian_batch {
        Some(hb)
            if cadence.hessian_every > 0 && iteration.is_multiple_of(cadence.hessian_every) =>
        {
            Some(
                top_hessian_eigenvalue(
                    net,
                    hb,
                    cadence.hessian_iters.max(10),
                    rng::derive(cfg.seed, iteration as u64),
                )?
                .value,
            )
        }
        _ => None,
    };

    Ok(MetricsRecord {
        iteration,
        test_accuracy,
        top_hessian,
        layer_lambda: Some(layer_lambda),
        alignment,
        angle_deg,
        sparsity: Some(weight_sparsity(net)),
        ..MetricsRecord::default()
    })
}

/// Unit top left singular vector of `g` (from `g·gᵀ`), or `None` for a zero
/// matrix.
fn top_left_singular(g: &DenseMatrix, iters: usize, seed: u64) -> Result<Option<Vec<f64>>> {
    if g.frobenius_norm() == 0.0 {
        return Ok(None);
    }
    let ggt = g.matmul_t(g)?;
    Ok(Some(
        power_iteration_topk(&ggt, 1, iters, seed)?.vectors[0].clone(),
    ))
}

/// Full-batch gradient descent on any differentiable objective, starting
/// from its current point. Returns the loss before each step and after the
/// last one.
pub fn gradient_descent<O: Differentiable + ?Sized>(
    obj: &O,
    eta: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    let mut w = obj.point();
    let mut losses = Vec::with_capacity(steps + 1);
    for _ in 0..steps {
        losses.push(obj.loss_at(&w)?);
        let g = obj.gradient_at(&w)?;
        sgd_step(&mut w, &g, eta);
    }
    losses.push(obj.loss_at(&w)?);
    Ok(losses)
}
