//! Euler–Maruyama simulation of the continuous-time model of DSBP,
//!
//! `dX = −(∇f + β·Σ_l ∇λ_l) dt + √η·Σ^{1/2} dB`,
//!
//! and the weak-error comparison against the discrete recursion.

use std::ops::Range;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::linalg::{activation_covariance, power_iteration_topk, project_onto_subspace};
use crate::nn::hessian::{top_hessian_eigenvalue_of, Differentiable, LayerBlock};
use crate::nn::{flatten_gradients, Batch, Network};
use crate::optimizers::DsbpConfig;
use crate::rng::{self, Rng};
use crate::{Error, Result};

/// Step for the second difference of gradients in the sharpness drift. With
/// ReLU the Hessian jumps across activation boundaries, so this also sets the
/// scale over which the third derivative is averaged.
const SHARPNESS_EPS: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffusionMode {
    /// Per-coordinate variance of projected mini-batch gradients.
    Diagonal,
    /// Deterministic flow.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdeConfig {
    /// Learning rate η scaling the diffusion.
    pub eta: f64,
    /// Simulated time.
    pub horizon: f64,
    pub steps: usize,
    pub noise_seed: u64,
    pub diffusion_mode: DiffusionMode,
    /// Steps between refreshes of the diffusion estimate and the sharpness
    /// directions.
    pub refresh_every: usize,
    /// Mini-batch gradients per diffusion estimate.
    pub gradient_samples: usize,
}

impl Default for SdeConfig {
    fn default() -> Self {
        Self {
            eta: 0.01,
            horizon: 1.0,
            steps: 128,
            noise_seed: 0,
            diffusion_mode: DiffusionMode::Diagonal,
            refresh_every: 10,
            gradient_samples: 8,
        }
    }
}

impl SdeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || !(self.horizon > 0.0) || !(self.eta >= 0.0) {
            return Err(Error::Config(format!(
                "sde needs steps >= 1, horizon > 0, eta >= 0 (got {}, {}, {})",
                self.steps, self.horizon, self.eta
            )));
        }
        if self.refresh_every == 0 || self.gradient_samples == 0 {
            return Err(Error::Config(
                "sde refresh_every and gradient_samples must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// A loss over a flat state vector together with its noise model.
pub trait SdeProblem {
    fn dim(&self) -> usize;
    fn initial(&self) -> Vec<f64>;
    fn loss_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
    /// Parameter blocks that each contribute a sharpness term.
    fn blocks(&self) -> Vec<Range<usize>> {
        Vec::new()
    }
    /// Diagonal of the gradient-noise covariance at `x`.
    fn noise_variance(&self, x: &[f64]) -> Result<Vec<f64>>;
}

/// `f(x) = ½ Σᵢ dᵢ xᵢ²` with additive Gaussian gradient noise of standard
/// deviation `noise_std`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticBenchmark {
    pub curvature: Vec<f64>,
    pub noise_std: Vec<f64>,
    pub x0: Vec<f64>,
}

impl QuadraticBenchmark {
    /// The two-dimensional benchmark used for the weak-order check.
    pub fn standard() -> Self {
        Self {
            curvature: vec![1.0, 2.5],
            noise_std: vec![1.0, 0.5],
            x0: vec![1.0, -1.0],
        }
    }

    pub fn loss(&self, x: &[f64]) -> f64 {
        0.5 * x
            .iter()
            .zip(&self.curvature)
            .map(|(v, d)| d * v * v)
            .sum::<f64>()
    }
}

impl SdeProblem for QuadraticBenchmark {
    fn dim(&self) -> usize {
        self.curvature.len()
    }

    fn initial(&self) -> Vec<f64> {
        self.x0.clone()
    }

    fn loss_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok((
            self.loss(x),
            x.iter().zip(&self.curvature).map(|(v, d)| d * v).collect(),
        ))
    }

    fn noise_variance(&self, _x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.noise_std.iter().map(|s| s * s).collect())
    }
}

/// Network loss over a dataset. The diffusion is the per-coordinate
/// variance of DSBP-projected mini-batch gradients around the full
/// gradient; the sharpness blocks are the weight matrices.
pub struct NetworkSde {
    template: Network,
    full: Batch,
    samples: Vec<Batch>,
    k: usize,
    power_iters: usize,
    seed: u64,
}

impl NetworkSde {
    pub fn new(
        net: Network,
        data: &Dataset,
        dsbp: &DsbpConfig,
        gradient_samples: usize,
    ) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::invalid("SDE needs a non-empty dataset"));
        }
        let mut sampler = crate::data::EpochSampler::new(data, dsbp.batch_size, dsbp.seed)?;
        let samples = (0..gradient_samples)
            .map(|_| crate::data::BatchSource::next_batch(&mut sampler))
            .collect();
        Ok(Self {
            template: net,
            full: data.full_batch(),
            samples,
            k: dsbp.k,
            power_iters: dsbp.power_iters,
            seed: dsbp.seed,
        })
    }

    fn at(&self, x: &[f64]) -> Result<Network> {
        let mut net = self.template.clone();
        net.set_flat(x)?;
        Ok(net)
    }

    fn projected_gradient(&self, x: &[f64], batch: &Batch) -> Result<Vec<f64>> {
        let mut net = self.at(x)?;
        let (_, mut grads) = net.loss_and_gradients(batch)?;
        let acts = net.cached_activations().expect("forward pass just cached");
        for (l, g) in grads.iter_mut().enumerate() {
            let k = self.k.min(acts[l].cols());
            let pairs = power_iteration_topk(
                &activation_covariance(&acts[l])?,
                k,
                self.power_iters,
                self.seed,
            )?;
            g.weight = project_onto_subspace(&g.weight, &pairs)?;
        }
        Ok(flatten_gradients(&grads))
    }
}

impl SdeProblem for NetworkSde {
    fn dim(&self) -> usize {
        self.template.param_count()
    }

    fn initial(&self) -> Vec<f64> {
        self.template.flatten()
    }

    fn loss_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut net = self.at(x)?;
        let (out, grads) = net.loss_and_gradients(&self.full)?;
        Ok((out.loss, flatten_gradients(&grads)))
    }

    fn blocks(&self) -> Vec<Range<usize>> {
        self.template
            .layer_offsets()
            .iter()
            .zip(self.template.layers())
            .map(|(&o, l)| o..o + l.weight.rows() * l.weight.cols())
            .collect()
    }

    fn noise_variance(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (_, full) = self.loss_and_gradient(x)?;
        let mut var = vec![0.0; full.len()];
        for b in &self.samples {
            let g = self.projected_gradient(x, b)?;
            for ((v, gi), fi) in var.iter_mut().zip(&g).zip(&full) {
                *v += (gi - fi) * (gi - fi);
            }
        }
        let n = self.samples.len() as f64;
        var.iter_mut().for_each(|v| *v /= n);
        Ok(var)
    }
}

/// Adapter presenting a problem at a fixed point as a [`Differentiable`].
struct AtPoint<'a, P: ?Sized> {
    problem: &'a P,
    x: &'a [f64],
}

impl<P: SdeProblem + ?Sized> Differentiable for AtPoint<'_, P> {
    fn dim(&self) -> usize {
        self.problem.dim()
    }

    fn point(&self) -> Vec<f64> {
        self.x.to_vec()
    }

    fn loss_at(&self, w: &[f64]) -> Result<f64> {
        Ok(self.problem.loss_and_gradient(w)?.0)
    }

    fn gradient_at(&self, w: &[f64]) -> Result<Vec<f64>> {
        Ok(self.problem.loss_and_gradient(w)?.1)
    }
}

/// Brownian motion sampled on `steps + 1` equally spaced times. For a
/// power-of-two step count the path is built by midpoint (Brownian-bridge)
/// refinement, so doubling `steps` refines the same path.
#[derive(Debug, Clone)]
pub struct BrownianPath {
    points: Vec<Vec<f64>>,
}

impl BrownianPath {
    pub fn new(dim: usize, horizon: f64, steps: usize, seed: u64) -> Self {
        let mut rng = rng::seeded(seed, rng::stream::NOISE);
        let draw =
            |rng: &mut Rng| -> Vec<f64> { (0..dim).map(|_| StandardNormal.sample(rng)).collect() };
        let dt = horizon / steps as f64;
        let mut points = vec![vec![0.0; dim]; steps + 1];
        if steps.is_power_of_two() {
            points[steps] = draw(&mut rng).iter().map(|z| horizon.sqrt() * z).collect();
            let mut stride = steps;
            while stride > 1 {
                let half = stride / 2;
                let sd = (stride as f64 * dt / 4.0).sqrt();
                for left in (0..steps).step_by(stride) {
                    let z = draw(&mut rng);
                    let mid: Vec<f64> = (0..dim)
                        .map(|j| 0.5 * (points[left][j] + points[left + stride][j]) + sd * z[j])
                        .collect();
                    points[left + half] = mid;
                }
                stride = half;
            }
        } else {
            for i in 1..=steps {
                let z = draw(&mut rng);
                points[i] = (0..dim)
                    .map(|j| points[i - 1][j] + dt.sqrt() * z[j])
                    .collect();
            }
        }
        Self { points }
    }

    pub fn steps(&self) -> usize {
        self.points.len() - 1
    }

    pub fn at(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn increment(&self, i: usize) -> Vec<f64> {
        self.points[i + 1]
            .iter()
            .zip(&self.points[i])
            .map(|(b, a)| b - a)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdePoint {
    pub time: f64,
    pub loss: f64,
    /// FNV-1a hash of the state's bit patterns.
    pub hash: u64,
}

fn state_hash(x: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in x {
        for b in v.to_bits().to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// `∇(vᵀ∇²f v)` with `v` held fixed, by a second difference of gradients.
fn sharpness_gradient<P: SdeProblem + ?Sized>(
    problem: &P,
    x: &[f64],
    g: &[f64],
    v: &[f64],
) -> Result<Vec<f64>> {
    let e = SHARPNESS_EPS;
    let plus: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + e * b).collect();
    let minus: Vec<f64> = x.iter().zip(v).map(|(a, b)| a - e * b).collect();
    let gp = problem.loss_and_gradient(&plus)?.1;
    let gm = problem.loss_and_gradient(&minus)?.1;
    Ok((0..x.len())
        .map(|i| (gp[i] + gm[i] - 2.0 * g[i]) / (e * e))
        .collect())
}

/// Euler–Maruyama integration of the sharpness-regularized SDE. Returns the
/// loss at every grid time, starting at `t = 0`.
pub fn simulate<P: SdeProblem + ?Sized>(
    problem: &P,
    cfg: &SdeConfig,
    beta: f64,
) -> Result<Vec<SdePoint>> {
    cfg.validate()?;
    let dim = problem.dim();
    let dt = cfg.horizon / cfg.steps as f64;
    let path = match cfg.diffusion_mode {
        DiffusionMode::Diagonal => Some(BrownianPath::new(
            dim,
            cfg.horizon,
            cfg.steps,
            cfg.noise_seed,
        )),
        DiffusionMode::Zero => None,
    };
    let blocks = if beta > 0.0 {
        problem.blocks()
    } else {
        Vec::new()
    };
    let mut x = problem.initial();
    let mut directions: Vec<Vec<f64>> = Vec::new();
    let mut scale: Vec<f64> = Vec::new();
    let mut out = Vec::with_capacity(cfg.steps + 1);

    for step in 0..cfg.steps {
        let (loss, g) = problem.loss_and_gradient(&x)?;
        if step == 0 {
            out.push(SdePoint {
                time: 0.0,
                loss,
                hash: state_hash(&x),
            });
        }
        if step % cfg.refresh_every == 0 {
            if path.is_some() {
                scale = problem
                    .noise_variance(&x)?
                    .iter()
                    .map(|v| (cfg.eta * v.max(0.0)).sqrt())
                    .collect();
            }
            directions.clear();
            let adapter = AtPoint { problem, x: &x };
            for (b, range) in blocks.iter().enumerate() {
                let block = LayerBlock::new(&adapter, range.clone())?;
                let seed = rng::derive(cfg.noise_seed, (step * blocks.len() + b) as u64);
                let top = top_hessian_eigenvalue_of(&block, 20, seed)?;
                let mut v = vec![0.0; dim];
                v[range.clone()].copy_from_slice(&top.vector);
                directions.push(v);
            }
        }

        let mut drift: Vec<f64> = g.iter().map(|gi| -gi).collect();
        for v in &directions {
            let s = sharpness_gradient(problem, &x, &g, v)?;
            for (d, si) in drift.iter_mut().zip(&s) {
                *d -= beta * si;
            }
        }
        for (xi, di) in x.iter_mut().zip(&drift) {
            *xi += di * dt;
        }
        if let Some(path) = &path {
            for ((xi, db), s) in x.iter_mut().zip(path.increment(step)).zip(&scale) {
                *xi += s * db;
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SdeDiverged { step });
        }
        let loss = problem.loss_and_gradient(&x)?.0;
        if !loss.is_finite() {
            return Err(Error::SdeDiverged { step });
        }
        out.push(SdePoint {
            time: (step + 1) as f64 * dt,
            loss,
            hash: state_hash(&x),
        });
    }
    Ok(out)
}

/// SDE simulation of a network trained by DSBP on `data`.
pub fn sde_simulate(
    net: Network,
    data: &Dataset,
    cfg: &SdeConfig,
    dsbp: &DsbpConfig,
) -> Result<Vec<SdePoint>> {
    let problem = NetworkSde::new(net, data, dsbp, cfg.gradient_samples)?;
    simulate(&problem, cfg, dsbp.beta)
}

/// Weak error of the discrete recursion at one learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakErrorPoint {
    pub eta: f64,
    /// `|E f(X_T) − E f(W_N)|`, estimated.
    pub error: f64,
    /// Standard error of the paired difference.
    pub std_err: f64,
    pub discrete_mean: f64,
    pub sde_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakErrorStudy {
    pub points: Vec<WeakErrorPoint>,
    /// `error(ηᵢ) / error(ηᵢ₊₁)`.
    pub ratios: Vec<f64>,
}

/// Monte-Carlo weak error between `W_{n+1} = W_n − η(∇f(W_n) + ξ_n)` and the
/// SDE `dX = −∇f dt + √η σ dB` at time `horizon`.
///
/// Each seed draws one Brownian path on a grid `substeps` times finer than η.
/// The SDE is integrated on that fine grid, and the discrete recursion uses
/// the same path's increments over each η step as its noise
/// (`η·ξ_n = √η·σ·ΔB_n`), so the two share their randomness and the paired
/// difference has small variance.
pub fn weak_error_vs_eta(
    bench: &QuadraticBenchmark,
    etas: &[f64],
    horizon: f64,
    seeds: usize,
    substeps: usize,
    base_seed: u64,
) -> Result<WeakErrorStudy> {
    if etas.len() < 2 {
        return Err(Error::invalid(
            "weak-error study needs at least two learning rates",
        ));
    }
    for w in etas.windows(2) {
        let r = w[1] / w[0];
        if (r - 0.5).abs() > 1e-12 && (r - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "each learning rate must halve (or repeat) the previous one, got {} then {}",
                w[0], w[1]
            )));
        }
    }
    if seeds < 2 || substeps == 0 {
        return Err(Error::invalid(
            "weak-error study needs >= 2 seeds and >= 1 substep",
        ));
    }
    let dim = bench.curvature.len();
    let mut points = Vec::with_capacity(etas.len());
    for &eta in etas {
        let n_steps = (horizon / eta).round() as usize;
        if n_steps == 0 || ((n_steps as f64) * eta - horizon).abs() > 1e-9 * horizon {
            return Err(Error::invalid(format!(
                "horizon {horizon} is not a multiple of eta {eta}"
            )));
        }
        let h = eta / substeps as f64;
        let mut diffs = Vec::with_capacity(seeds);
        let (mut sum_disc, mut sum_sde) = (0.0, 0.0);
        for s in 0..seeds {
            let mut rng = rng::seeded(rng::derive(base_seed, s as u64), rng::stream::NOISE);
            let mut w = bench.x0.clone();
            let mut x = bench.x0.clone();
            for _ in 0..n_steps {
                let mut db_total = vec![0.0; dim];
                for _ in 0..substeps {
                    for j in 0..dim {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        let db = h.sqrt() * z;
                        db_total[j] += db;
                        x[j] +=
                            -bench.curvature[j] * x[j] * h + eta.sqrt() * bench.noise_std[j] * db;
                    }
                }
                for j in 0..dim {
                    w[j] += -eta * bench.curvature[j] * w[j]
                        + eta.sqrt() * bench.noise_std[j] * db_total[j];
                }
            }
            let (fd, fs) = (bench.loss(&w), bench.loss(&x));
            sum_disc += fd;
            sum_sde += fs;
            diffs.push(fs - fd);
        }
        let n = seeds as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
        points.push(WeakErrorPoint {
            eta,
            error: mean.abs(),
            std_err: (var / n).sqrt(),
            discrete_mean: sum_disc / n,
            sde_mean: sum_sde / n,
        });
    }
    let ratios = points.windows(2).map(|p| p[0].error / p[1].error).collect();
    Ok(WeakErrorStudy { points, ratios })
}
