//! Pretrain on one blob task, then fine-tune on a shifted task while the
//! transfer correction pulls the eigenvectors back toward the anchor.

use dsbp::data::{gaussian_blobs, EpochSampler};
use dsbp::extensions::{fine_tune_with_anchor, TransferAnchor};
use dsbp::optimizers::{train_dsbp, Monitor};
use dsbp::{Activation, DsbpConfig, Network};

fn main() -> dsbp::Result<()> {
    let source = gaussian_blobs(1, 150, 8, 3, 4.0)?;
    let target = gaussian_blobs(2, 40, 8, 3, 4.0)?;
    let cfg = DsbpConfig {
        eta: 0.05,
        k: 4,
        total_iters: 600,
        batch_size: 32,
        prune: false,
        seed: 8,
        ..DsbpConfig::default()
    };
    let pre = train_dsbp(
        Network::mlp(&[8, 16, 3], Activation::Relu, 8)?,
        &source,
        &cfg,
    )?;
    let anchor = TransferAnchor::from_states(&pre.spectral, 2)?;
    let tune = DsbpConfig {
        total_iters: 200,
        ..cfg
    };
    for strength in [0.0, 0.5] {
        let mut batches = EpochSampler::new(&target, tune.batch_size, 9)?;
        let (report, align) = fine_tune_with_anchor(
            pre.net.clone(),
            &mut batches,
            &tune,
            &Monitor::default(),
            &anchor,
            strength,
        )?;
        let b = target.full_batch();
        let acc = report.net.evaluate(&b)?.accuracy(&b.labels);
        println!(
            "strength {strength}: target accuracy {acc:.3}, final alignment loss {:.4}",
            align.last().copied().unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
