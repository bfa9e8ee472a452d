//! DSBP, DSBP without shrinkage, and plain SGD on a Gaussian-blob toy
//! problem.

use dsbp::data::gaussian_blobs;
use dsbp::optimizers::{train_dsbp, train_sgd};
use dsbp::{Activation, DsbpConfig, Network};

fn main() -> dsbp::Result<()> {
    let data = gaussian_blobs(3, 200, 8, 4, 4.0)?;
    let (train, test) = data.split(200, 3)?;
    let cfg = DsbpConfig {
        eta: 0.05,
        k: 4,
        beta: 0.05,
        total_iters: 1500,
        batch_size: 32,
        prune: false,
        seed: 1,
        ..DsbpConfig::default()
    };
    let net = Network::mlp(&[8, 32, 4], Activation::Relu, 1)?;
    let batch = test.full_batch();
    for (name, report) in [
        ("dsbp", train_dsbp(net.clone(), &train, &cfg)?),
        (
            "dsbp beta=0",
            train_dsbp(
                net.clone(),
                &train,
                &DsbpConfig {
                    beta: 0.0,
                    ..cfg.clone()
                },
            )?,
        ),
        ("sgd", train_sgd(net, &train, &cfg)?),
    ] {
        let out = report.net.evaluate(&batch)?;
        println!(
            "{name}: test loss {:.4}, accuracy {:.3}, refreshes {}",
            out.loss,
            out.accuracy(&batch.labels),
            report.refreshes
        );
    }
    Ok(())
}
