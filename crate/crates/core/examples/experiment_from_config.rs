//! Runs a config file through the harness, as `dsbp train` would.
//!
//! cargo run --release --example experiment_from_config -- configs/meta.toml

use std::path::PathBuf;

use dsbp::harness::{meta_experiment, sde_experiment, train_experiment, ExperimentConfig};

fn main() -> dsbp::Result<()> {
    let path = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "configs/sde.toml".into()),
    );
    let cfg = ExperimentConfig::load(&path)?;
    let out = PathBuf::from("out");
    match cfg.run.name.as_str() {
        "meta" => {
            let c = meta_experiment(&cfg, &out)?.comparison;
            println!(
                "meta - scratch = {:.4} [{:.4}, {:.4}]",
                c.mean_difference, c.ci_low, c.ci_high
            );
        }
        "sde" => {
            let r = sde_experiment(&cfg, &out, 1)?;
            println!("weak-order ratios {:?}", r.weak.ratios);
        }
        _ => {
            for (m, r) in train_experiment(&cfg, &out, 1)? {
                let s = r?;
                println!(
                    "{m}: test accuracy {:.4}, top Hessian eigenvalue {:.4}",
                    s.test_accuracy, s.top_hessian
                );
            }
        }
    }
    Ok(())
}
