//! PAC-Bayes bound terms for a trained toy network.

use dsbp::analysis::{pac_bayes_bound, BoundInputs};
use dsbp::data::gaussian_blobs;
use dsbp::nn::top_hessian_eigenvalue;
use dsbp::optimizers::train_dsbp;
use dsbp::{Activation, DsbpConfig, Network};

fn main() -> dsbp::Result<()> {
    let data = gaussian_blobs(5, 150, 6, 3, 5.0)?;
    let (train, test) = data.split(150, 5)?;
    let cfg = DsbpConfig {
        eta: 0.05,
        k: 4,
        total_iters: 800,
        batch_size: 32,
        prune: false,
        seed: 2,
        ..DsbpConfig::default()
    };
    let net = train_dsbp(
        Network::mlp(&[6, 16, 3], Activation::Relu, 2)?,
        &train,
        &cfg,
    )?
    .net;
    let batch = train.full_batch();
    let fit = net.evaluate(&batch)?;
    let lambda = top_hessian_eigenvalue(&net, &batch, 30, 2)?.value;
    let test_loss = net.evaluate(&test.full_batch())?.loss;
    println!("sigma\tbound\ttest_loss");
    for sigma in [0.001, 0.01, 0.1] {
        let terms = pac_bayes_bound(&BoundInputs {
            empirical_loss: fit.loss,
            dim: net.param_count(),
            sigma,
            sum_top_eigs: lambda.max(0.0),
            third_deriv_bound: 0.0,
            loss_bound: fit.sample_losses.iter().cloned().fold(0.0, f64::max),
            sample_count: train.len(),
            confidence: 0.05,
            weight_norm: net.weight_norm(),
        })?;
        println!("{sigma}\t{:.4}\t{test_loss:.4}", terms.total);
    }
    Ok(())
}
