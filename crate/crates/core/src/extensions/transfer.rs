use serde::{Deserialize, Serialize};

use crate::linalg::{dot, DenseMatrix, EigenPairs};
use crate::spectral::LayerSpectralState;
use crate::{Error, Result};

/// Vectors kept per layer in the anchor.
pub const ANCHOR_RANK: usize = 5;
/// Frobenius clip applied to each layer's correction.
pub const CORRECTION_CLIP: f64 = 1.0;

/// Pre-trained eigenvectors of one layer with their weights `λᵢ⁰/Σλⱼ⁰`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorLayer {
    pub vectors: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

/// Spectral snapshot of a pre-trained network used to regularize fine-tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferAnchor {
    pub layers: Vec<AnchorLayer>,
    pub clip: f64,
}

impl AnchorLayer {
    pub fn from_pairs(pairs: &EigenPairs, m: usize) -> Result<Self> {
        if pairs.is_empty() || m == 0 {
            return Err(Error::invalid("anchor needs at least one eigenpair"));
        }
        let top = pairs.truncated(m);
        let values: Vec<f64> = top.values.iter().map(|v| v.max(0.0)).collect();
        let total: f64 = values.iter().sum();
        let weights = if total > 0.0 {
            values.iter().map(|v| v / total).collect()
        } else {
            vec![1.0 / values.len() as f64; values.len()]
        };
        Ok(Self {
            vectors: top.vectors,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

impl TransferAnchor {
    /// Top `min(m, k_l)` pairs of every layer's refreshed spectral state.
    pub fn from_states(states: &[LayerSpectralState], m: usize) -> Result<Self> {
        let layers = states
            .iter()
            .enumerate()
            .map(|(l, s)| {
                let pairs = s.eigenpairs.as_ref().ok_or_else(|| {
                    Error::Precondition(format!("layer {l} has no spectral state"))
                })?;
                AnchorLayer::from_pairs(pairs, m)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            layers,
            clip: CORRECTION_CLIP,
        })
    }

    pub fn from_pairs(pairs: &[EigenPairs], m: usize) -> Result<Self> {
        Ok(Self {
            layers: pairs
                .iter()
                .map(|p| AnchorLayer::from_pairs(p, m))
                .collect::<Result<_>>()?,
            clip: CORRECTION_CLIP,
        })
    }

    /// `α_l = l/L` for the 0-based layer index `l`, counting layers from 1.
    pub fn layer_scale(&self, l: usize) -> f64 {
        (l + 1) as f64 / self.layers.len() as f64
    }
}

fn check_layer(anchor: &AnchorLayer, current: &EigenPairs, l: usize) -> Result<()> {
    if current.len() < anchor.len() {
        return Err(Error::invalid(format!(
            "layer {l}: anchor has {} vectors but current state has {}",
            anchor.len(),
            current.len()
        )));
    }
    let d = anchor.vectors[0].len();
    if current.dim() != d {
        return Err(Error::invalid(format!(
            "layer {l}: anchor vectors have length {d} but current vectors have {}",
            current.dim()
        )));
    }
    Ok(())
}

/// `Σ_l Σᵢ wᵢ·min_± ‖eᵢᵖʳᵉ − eᵢ‖²`, i.e. `Σ wᵢ(2 − 2|⟨eᵢᵖʳᵉ, eᵢ⟩|)` for unit
/// vectors.
pub fn alignment_loss(anchor: &TransferAnchor, current: &[EigenPairs]) -> Result<f64> {
    if anchor.layers.len() != current.len() {
        return Err(Error::invalid(format!(
            "anchor has {} layers but {} were given",
            anchor.layers.len(),
            current.len()
        )));
    }
    let mut total = 0.0;
    for (l, (a, c)) in anchor.layers.iter().zip(current).enumerate() {
        check_layer(a, c, l)?;
        for ((pre, w), fine) in a.vectors.iter().zip(&a.weights).zip(&c.vectors) {
            let d = dot(pre, fine).abs();
            let sq: f64 =
                pre.iter().map(|x| x * x).sum::<f64>() + fine.iter().map(|x| x * x).sum::<f64>();
            total += w * (sq - 2.0 * d).max(0.0);
        }
    }
    Ok(total)
}

/// Skew generator `Σᵢ wᵢ(eᵢᵖʳᵉ eᵢᵀ − eᵢ eᵢᵖʳᵉᵀ)` with each `eᵢ` sign-aligned to
/// its anchor vector.
pub fn transfer_generator(anchor: &AnchorLayer, current: &EigenPairs) -> Result<DenseMatrix> {
    check_layer(anchor, current, 0)?;
    let d = anchor.vectors[0].len();
    let mut gen = DenseMatrix::zeros(d, d);
    for ((pre, w), fine) in anchor
        .vectors
        .iter()
        .zip(&anchor.weights)
        .zip(&current.vectors)
    {
        let s = if dot(pre, fine) < 0.0 { -1.0 } else { 1.0 };
        let e: Vec<f64> = fine.iter().map(|x| s * x).collect();
        gen.add_outer(*w, pre, &e)?;
        gen.add_outer(-w, &e, pre)?;
    }
    Ok(gen)
}

/// `W ← W + clip_θ(strength·α_l·Ω·W)` where `Ω` is [`transfer_generator`]
/// and `clip_θ` rescales the correction to Frobenius norm at most `θ`.
pub fn transfer_correction(
    w: &DenseMatrix,
    anchor: &AnchorLayer,
    current: &EigenPairs,
    strength: f64,
    layer_scale: f64,
    clip: f64,
) -> Result<DenseMatrix> {
    if !(strength >= 0.0) {
        return Err(Error::invalid(format!(
            "transfer strength {strength} must be >= 0"
        )));
    }
    if w.rows() != anchor.vectors[0].len() {
        return Err(Error::invalid(format!(
            "weight has {} rows but anchor vectors have length {}",
            w.rows(),
            anchor.vectors[0].len()
        )));
    }
    let mut corr = transfer_generator(anchor, current)?.matmul(w)?;
    corr.scale(strength * layer_scale);
    let n = corr.frobenius_norm();
    if n > clip {
        corr.scale(clip / n);
    }
    let mut out = w.clone();
    out.add_scaled(&corr, 1.0)?;
    Ok(out)
}
