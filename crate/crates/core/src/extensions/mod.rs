//! Spectral transfer regularization and spectral meta learning.

mod meta;
mod transfer;

pub use meta::{
    adapt, bootstrap_mean_ci, compare_with_scratch, init_regularizer_grad, init_regularizer_loss,
    meta_buffer_blend, meta_train, task_similarity, Adaptation, MetaComparison, MetaConfig,
    MetaOutcome, MetaStep, SpectralMemoryBuffer, BUFFER_MOMENTUM, INIT_REG,
};
pub use transfer::{
    alignment_loss, transfer_correction, transfer_generator, AnchorLayer, TransferAnchor,
    ANCHOR_RANK, CORRECTION_CLIP,
};

use crate::data::BatchSource;
use crate::nn::Network;
use crate::optimizers::{train_with_hook, DsbpConfig, Monitor, TrainReport};
use crate::Result;

/// Fine-tunes `net` with DSBP, applying [`transfer_correction`] to every
/// layer after each update so that the current eigenvectors rotate back
/// toward the anchor. Returns the report and the alignment loss after
/// every iteration.
pub fn fine_tune_with_anchor(
    net: Network,
    source: &mut dyn BatchSource,
    cfg: &DsbpConfig,
    monitor: &Monitor<'_>,
    anchor: &TransferAnchor,
    strength: f64,
) -> Result<(TrainReport, Vec<f64>)> {
    let mut align = Vec::with_capacity(cfg.total_iters);
    let cfg = cfg.with_method(crate::Method::Dsbp);
    let report = train_with_hook(net, source, &cfg, monitor, &mut |net, states, _| {
        let current: Vec<_> = states
            .iter()
            .map(|s| {
                s.eigenpairs
                    .clone()
                    .expect("spectral state refreshed at t = 0")
            })
            .collect();
        for (l, (a, pairs)) in anchor.layers.iter().zip(&current).enumerate() {
            let scale = anchor.layer_scale(l);
            let w = transfer_correction(
                &net.layers()[l].weight,
                a,
                pairs,
                strength,
                scale,
                anchor.clip,
            )?;
            net.layer_mut(l).weight = w;
        }
        align.push(alignment_loss(anchor, &current)?);
        Ok(())
    })?;
    Ok((report, align))
}
