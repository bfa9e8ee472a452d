//! Spectral pruning during training, with the reconstruction veto.

use dsbp::data::gaussian_blobs;
use dsbp::optimizers::train_dsbp;
use dsbp::{Activation, DsbpConfig, Network};

fn main() -> dsbp::Result<()> {
    let data = gaussian_blobs(9, 200, 10, 3, 4.0)?;
    let cfg = DsbpConfig {
        eta: 0.05,
        k: 3,
        tau0: 0.05,
        total_iters: 1000,
        prune_every: 200,
        batch_size: 32,
        seed: 4,
        ..DsbpConfig::default()
    };
    let report = train_dsbp(
        Network::mlp(&[10, 24, 3], Activation::Relu, 4)?,
        &data,
        &cfg,
    )?;
    println!("iter\tlayer\ttau\tcandidate\terror\tbudget\taccepted");
    for e in &report.prune_events {
        println!(
            "{}\t{}\t{:.3e}\t{:.3}\t{:.3e}\t{:.3e}\t{}",
            e.iteration, e.layer, e.threshold, e.candidate_sparsity, e.error, e.budget, e.accepted
        );
    }
    println!(
        "final sparsity {:?}, vetoes {}",
        report.final_sparsity(),
        report.vetoes
    );
    Ok(())
}
