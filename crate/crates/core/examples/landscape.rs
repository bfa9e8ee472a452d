//! A 2-D loss slice around a trained network along its spectral directions.

use dsbp::analysis::{landscape_directions, loss_landscape_slice};
use dsbp::data::gaussian_blobs;
use dsbp::optimizers::train_dsbp;
use dsbp::{Activation, DsbpConfig, Network};

fn main() -> dsbp::Result<()> {
    let data = gaussian_blobs(2, 100, 6, 3, 4.0)?;
    let cfg = DsbpConfig {
        eta: 0.05,
        k: 4,
        total_iters: 500,
        batch_size: 32,
        prune: false,
        seed: 6,
        ..DsbpConfig::default()
    };
    let net = train_dsbp(Network::mlp(&[6, 12, 3], Activation::Relu, 6)?, &data, &cfg)?.net;
    let batch = data.full_batch();
    let (d1, d2) = landscape_directions(&net, &batch, false, 6)?;
    let grid = loss_landscape_slice(&net, &batch, &d1, &d2, 1.0, 9)?;
    for i in 0..grid.grid() {
        let row: Vec<String> = (0..grid.grid())
            .map(|j| format!("{:6.3}", grid.at(i, j)))
            .collect();
        println!("{}", row.join(" "));
    }
    Ok(())
}
