//! Per-layer spectral state and the DSBP building blocks: projected update
//! with rank-one sharpness shrinkage, adaptive refresh interval, and spectral
//! pruning with a reconstruction-error veto.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::linalg::{
    activation_covariance, power_iteration_topk_warm, project_onto_subspace, DenseMatrix,
    EigenPairs,
};
use crate::{Error, Result};

/// Number of top-eigenvalue samples kept for the variance estimate.
pub const HISTORY_WINDOW: usize = 10;

/// Pruning may remove at most this fraction of the activation spectrum mass,
/// measured as squared Frobenius change.
pub const RECONSTRUCTION_BUDGET: f64 = 0.05;

/// Top-k eigenpairs of one layer's activation covariance plus a sliding
/// window of its top eigenvalue.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LayerSpectralState {
    pub eigenpairs: Option<EigenPairs>,
    lambda_history: VecDeque<f64>,
    pub last_refresh_iter: Option<usize>,
    /// Trace of the covariance at the last refresh (sum of all eigenvalues).
    pub spectrum_total: f64,
    /// Top eigenvalue at the first refresh.
    pub initial_top: Option<f64>,
    /// Current pruning mask (row-major, `true` = kept).
    pub mask: Option<Vec<bool>>,
}

impl LayerSpectralState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn lambda_history(&self) -> Vec<f64> {
        self.lambda_history.iter().copied().collect()
    }

    pub fn record_top_eigenvalue(&mut self, lambda: f64) {
        if self.lambda_history.len() == HISTORY_WINDOW {
            self.lambda_history.pop_front();
        }
        self.lambda_history.push_back(lambda.max(0.0));
    }

    pub fn top(&self) -> Option<(&[f64], f64)> {
        self.eigenpairs.as_ref().and_then(EigenPairs::top)
    }

    /// Recomputes the covariance of `activations` (`n × d_l`) and its top-`k`
    /// eigenpairs, warm-started from the current pairs, and appends the new
    /// top eigenvalue to the history.
    pub fn refresh(
        &mut self,
        activations: &DenseMatrix,
        k: usize,
        iters: usize,
        seed: u64,
        iteration: usize,
    ) -> Result<()> {
        let cov = activation_covariance(activations)?;
        if k > cov.rows() {
            return Err(Error::invalid(format!(
                "k = {k} exceeds layer width {}",
                cov.rows()
            )));
        }
        let pairs = power_iteration_topk_warm(&cov, k, iters, seed, self.eigenpairs.as_ref())?;
        let top = pairs.values[0];
        self.spectrum_total = cov.trace();
        self.eigenpairs = Some(pairs);
        self.last_refresh_iter = Some(iteration);
        self.initial_top.get_or_insert(top);
        self.record_top_eigenvalue(top);
        Ok(())
    }

    /// Between refreshes: estimates only the top eigenvalue of the current
    /// activations (warm-started from `e₁`) and appends it to the history.
    /// The stored eigenvectors are left unchanged.
    pub fn observe(&mut self, activations: &DenseMatrix, iters: usize, seed: u64) -> Result<f64> {
        let cov = activation_covariance(activations)?;
        let warm = self.eigenpairs.as_ref().map(|p| p.truncated(1));
        let pairs = power_iteration_topk_warm(&cov, 1, iters, seed, warm.as_ref())?;
        let top = pairs.values[0];
        self.record_top_eigenvalue(top);
        Ok(top)
    }

    /// Iterations since the last refresh, or `None` if never refreshed.
    pub fn age(&self, iteration: usize) -> Option<usize> {
        self.last_refresh_iter.map(|r| iteration.saturating_sub(r))
    }
}

/// See [`LayerSpectralState::refresh`].
pub fn refresh_spectral_state(
    state: &mut LayerSpectralState,
    activations: &DenseMatrix,
    k: usize,
    iters: usize,
    seed: u64,
    iteration: usize,
) -> Result<()> {
    state.refresh(activations, k, iters, seed, iteration)
}

/// `w -= eta · g`, entrywise.
#[inline]
pub fn sgd_step(w: &mut [f64], g: &[f64], eta: f64) {
    debug_assert_eq!(w.len(), g.len());
    for (wi, gi) in w.iter_mut().zip(g) {
        *wi -= eta * gi;
    }
}

/// Shrinkage factor `min(β·λ₁, 1)` applied along `e₁`.
pub fn shrinkage_factor(beta: f64, lambda: f64) -> f64 {
    (beta * lambda).clamp(0.0, 1.0)
}

/// One DSBP step for a weight matrix:
///
/// `W ← W − η·P·G − s·e₁(e₁ᵀW)` with `s = min(β·λ₁, 1)`,
///
/// where `P` projects onto the span of `basis` and `(e₁, λ₁)` is its top
/// pair. The shrinkage uses `W` before the gradient step. Returns the
/// projected gradient.
pub fn dsbp_weight_update(
    w: &mut DenseMatrix,
    g: &DenseMatrix,
    basis: &EigenPairs,
    eta: f64,
    beta: f64,
) -> Result<DenseMatrix> {
    if w.shape() != g.shape() {
        return Err(Error::invalid(format!(
            "weight is {}x{} but gradient is {}x{}",
            w.rows(),
            w.cols(),
            g.rows(),
            g.cols()
        )));
    }
    if !(eta >= 0.0 && beta >= 0.0) {
        return Err(Error::invalid(format!(
            "learning rate {eta} and sharpness strength {beta} must be non-negative"
        )));
    }
    let projected = project_onto_subspace(g, basis)?;
    let shrink = match basis.top() {
        Some((e1, lambda)) if beta > 0.0 => {
            let s = shrinkage_factor(beta, lambda);
            Some((e1.to_vec(), s, w.vecmat(e1)?))
        }
        _ => None,
    };
    sgd_step(w.as_mut_slice(), projected.as_slice(), eta);
    if let Some((e1, s, component)) = shrink {
        w.add_outer(-s, &e1, &component)?;
    }
    Ok(projected)
}

/// Population variance of the samples (the `1/N` estimator, `N` = window
/// length once full).
pub fn window_variance(history: &[f64]) -> f64 {
    if history.len() < 2 {
        return 0.0;
    }
    let n = history.len() as f64;
    let mean = history.iter().sum::<f64>() / n;
    history.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

/// Refresh interval `p_t = ⌊p₀ / (1 + α·Var(λ₁))⌋`, at least 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalController {
    pub p0: usize,
    pub alpha: f64,
}

impl IntervalController {
    pub fn new(p0: usize, alpha: f64) -> Result<Self> {
        if p0 == 0 || !(alpha >= 0.0) {
            return Err(Error::invalid(format!(
                "interval controller needs p0 >= 1 and alpha >= 0 (got {p0}, {alpha})"
            )));
        }
        Ok(Self { p0, alpha })
    }

    pub fn interval_for_variance(&self, variance: f64) -> usize {
        let p = self.p0 as f64 / (1.0 + self.alpha * variance.max(0.0));
        (p.floor() as usize).clamp(1, self.p0)
    }

    pub fn interval(&self, history: &[f64]) -> usize {
        if history.len() < 2 {
            return self.p0;
        }
        self.interval_for_variance(window_variance(history))
    }
}

pub fn dynamic_interval(ctrl: &IntervalController, history: &[f64]) -> usize {
    ctrl.interval(history)
}

/// `τ_t = τ₀·exp(−β·t/T)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneSchedule {
    pub tau0: f64,
    pub beta: f64,
    pub horizon: usize,
}

impl PruneSchedule {
    pub fn new(tau0: f64, beta: f64, horizon: usize) -> Result<Self> {
        if !(tau0 > 0.0) || !(beta >= 0.0) || horizon == 0 {
            return Err(Error::invalid(format!(
                "prune schedule needs tau0 > 0, beta >= 0, horizon >= 1 (got {tau0}, {beta}, {horizon})"
            )));
        }
        Ok(Self {
            tau0,
            beta,
            horizon,
        })
    }

    pub fn threshold(&self, t: usize) -> Result<f64> {
        prune_threshold(self, t)
    }
}

pub fn prune_threshold(s: &PruneSchedule, t: usize) -> Result<f64> {
    if t > s.horizon {
        return Err(Error::invalid(format!(
            "iteration {t} is past the schedule horizon {}",
            s.horizon
        )));
    }
    Ok(s.tau0 * (-s.beta * t as f64 / s.horizon as f64).exp())
}

/// Per-layer base threshold `τ₀·λ_l / max_m λ_m` from the initial top
/// eigenvalues.
pub fn layer_threshold_scale(tau0: f64, lambda_l1_init: f64, lambda_max_init: f64) -> Result<f64> {
    if !(lambda_max_init > 0.0) {
        return Err(Error::invalid(format!(
            "maximum initial eigenvalue must be positive, got {lambda_max_init}"
        )));
    }
    Ok(tau0 * (lambda_l1_init.max(0.0) / lambda_max_init).min(1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneOutcome {
    pub weights: DenseMatrix,
    /// Row-major, `true` = kept.
    pub mask: Vec<bool>,
    /// Fraction of entries masked out.
    pub sparsity: f64,
}

/// Zeroes every entry of `w` whose top-k spectral reconstruction
/// `R = Σᵢ eᵢ(eᵢᵀW)` has magnitude below `tau`.
pub fn spectral_prune(w: &DenseMatrix, basis: &EigenPairs, tau: f64) -> Result<PruneOutcome> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::invalid(format!(
            "pruning threshold {tau} must be >= 0"
        )));
    }
    let recon = project_onto_subspace(w, basis)?;
    let mask: Vec<bool> = recon.as_slice().iter().map(|r| r.abs() >= tau).collect();
    let mut weights = w.clone();
    for (x, &keep) in weights.as_mut_slice().iter_mut().zip(&mask) {
        if !keep {
            *x = 0.0;
        }
    }
    let pruned = mask.iter().filter(|&&k| !k).count();
    let sparsity = if mask.is_empty() {
        0.0
    } else {
        pruned as f64 / mask.len() as f64
    };
    Ok(PruneOutcome {
        weights,
        mask,
        sparsity,
    })
}

/// `‖W − W̃‖²_F ≤ 0.05·Σλ`.
pub fn reconstruction_error_ok(w: &DenseMatrix, pruned: &DenseMatrix, eigvalues: &[f64]) -> bool {
    if w.shape() != pruned.shape() {
        return false;
    }
    let err = w
        .as_slice()
        .iter()
        .zip(pruned.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>();
    err <= RECONSTRUCTION_BUDGET * eigvalues.iter().sum::<f64>()
}

/// Zeroes masked-out entries in place.
pub fn apply_mask(w: &mut DenseMatrix, mask: &[bool]) {
    for (x, &keep) in w.as_mut_slice().iter_mut().zip(mask) {
        if !keep {
            *x = 0.0;
        }
    }
}

#[cfg(test)]
mod tests;
