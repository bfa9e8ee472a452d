use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Inputs of the curvature-aware PAC-Bayes bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// Empirical loss f_S.
    pub empirical_loss: f64,
    /// Parameter count d.
    pub dim: usize,
    /// Posterior scale σ.
    pub sigma: f64,
    /// Σ_l λ_{l,1}.
    pub sum_top_eigs: f64,
    /// Bound C on third derivatives.
    pub third_deriv_bound: f64,
    /// Bound L on the loss.
    pub loss_bound: f64,
    pub sample_count: usize,
    /// Confidence parameter δ.
    pub confidence: f64,
    /// ‖W‖.
    pub weight_norm: f64,
}

/// The four additive terms of the bound and their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    pub empirical: f64,
    /// `d·σ²/2 · Σλ`.
    pub curvature: f64,
    /// `C·d³·σ³/6`.
    pub third_order: f64,
    /// `L/(2√n) · √(d·ln(1 + ‖W‖²/(dσ²)) + 2·ln(1/δ))`.
    pub complexity: f64,
    pub total: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.sigma > 0.0, "sigma must be > 0"),
            (self.sample_count >= 1, "sample count must be >= 1"),
            (
                self.confidence > 0.0 && self.confidence < 1.0,
                "confidence must lie in (0, 1)",
            ),
            (self.loss_bound > 0.0, "loss bound L must be > 0"),
            (
                self.third_deriv_bound >= 0.0,
                "third-derivative bound C must be >= 0",
            ),
            (self.sum_top_eigs >= 0.0, "eigenvalue sum must be >= 0"),
            (self.weight_norm >= 0.0, "weight norm must be >= 0"),
            (
                self.empirical_loss.is_finite(),
                "empirical loss must be finite",
            ),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::invalid(msg));
            }
        }
        let finite = [
            self.sigma,
            self.sum_top_eigs,
            self.third_deriv_bound,
            self.loss_bound,
            self.weight_norm,
        ];
        if finite.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("bound inputs must be finite"));
        }
        Ok(())
    }
}

/// `f_D ≤ f_S + dσ²/2·Σλ + C·d³σ³/6 + L/(2√n)·√(d·ln(1 + ‖W‖²/(dσ²)) + 2·ln(1/δ))`.
pub fn pac_bayes_bound(b: &BoundInputs) -> Result<BoundTerms> {
    b.validate()?;
    let d = b.dim as f64;
    let n = b.sample_count as f64;
    let s2 = b.sigma * b.sigma;
    let curvature = d * s2 / 2.0 * b.sum_top_eigs;
    let third_order = b.third_deriv_bound * d.powi(3) * s2 * b.sigma / 6.0;
    let kl = if b.dim == 0 {
        0.0
    } else {
        d * (b.weight_norm * b.weight_norm / (d * s2)).ln_1p()
    };
    let complexity =
        b.loss_bound / (2.0 * n.sqrt()) * (kl + 2.0 * (1.0 / b.confidence).ln()).sqrt();
    Ok(BoundTerms {
        empirical: b.empirical_loss,
        curvature,
        third_order,
        complexity,
        total: b.empirical_loss + curvature + third_order + complexity,
    })
}
