//! Refresh intervals on a rotating stream: they shorten while the input
//! distribution moves.

use dsbp::data::{gaussian_blobs, nonstationary_stream, DriftSchedule};
use dsbp::optimizers::{train, Monitor};
use dsbp::{Activation, DsbpConfig, Network};

fn main() -> dsbp::Result<()> {
    let base = gaussian_blobs(4, 1000, 4, 4, 4.0)?;
    let quarter = std::f64::consts::FRAC_PI_2;
    let angles: Vec<f64> = (0..60)
        .map(|s| if (s / 2) % 2 == 1 { quarter } else { 0.0 })
        .collect();
    let drift = DriftSchedule::new(10, angles)?;
    let cfg = DsbpConfig {
        eta: 0.05,
        k: 8,
        batch_size: 256,
        total_iters: 600,
        alpha: 0.001,
        beta: 0.0,
        prune: false,
        seed: 2,
        ..DsbpConfig::default()
    };
    let mut stream = nonstationary_stream(&base, drift.clone(), cfg.batch_size, cfg.seed)?;
    let report = train(
        Network::mlp(&[4, 32, 4], Activation::Relu, 2)?,
        &mut stream,
        &cfg,
        &Monitor::default(),
    )?;
    let (mut moving, mut still) = (Vec::new(), Vec::new());
    for (t, p) in report.intervals.iter().enumerate() {
        let mean = p.iter().sum::<usize>() as f64 / p.len() as f64;
        if drift.is_drifting(t) {
            moving.push(mean)
        } else {
            still.push(mean)
        }
    }
    let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!(
        "mean interval while drifting {:.2}, while static {:.2}",
        avg(&moving),
        avg(&still)
    );
    Ok(())
}
