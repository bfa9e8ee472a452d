use std::path::Path;

use dsbp::harness::cli::run_with;
use dsbp::metrics::parse_metrics;

const TINY: &str = r#"
[run]
name = "tiny"
methods = ["dsbp", "sgd"]
epochs = 2

[data]
kind = "blobs"
n_per_class = 20
dims = 4
classes = 3
separation = 4.0
test_count = 12

[model]
widths = [4, 6, 3]

[optimizer]
eta = 0.05
k = 3
batch_size = 8
prune_every = 4
seed = 9

[metrics]
hessian_every = 5
hessian_iters = 5
probe_examples = 16
landscape_grid = 3
"#;

fn call(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run_with(
        std::iter::once("dsbp").chain(args.iter().copied()),
        &mut out,
        &mut err,
    );
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("tiny.toml");
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn train_then_every_reader() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    let (code, stdout, err) = call(&["train", "--config", &cfg, "--out", out_s]);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains("dsbp\ttest_accuracy=") && stdout.contains("sgd\t"));

    let run = out.join("tiny");
    assert!(run.join("config.toml").is_file());
    for m in ["dsbp", "sgd"] {
        for f in [
            "metrics.tsv",
            "timing.tsv",
            "summary.toml",
            "network.json",
            "landscape.tsv",
        ] {
            assert!(run.join(m).join(f).is_file(), "{m}/{f}");
        }
        let records =
            parse_metrics(&std::fs::read_to_string(run.join(m).join("metrics.tsv")).unwrap())
                .unwrap();
        assert_eq!(records.len(), 2);
    }

    let (code, stdout, err) = call(&["plot-data", run.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains("alignment.tsv") && stdout.contains("landscape_dsbp.svg"));
    let landscape = std::fs::read_to_string(run.join("plots/landscape.tsv")).unwrap();
    // header plus a 3x3 grid per method
    assert_eq!(landscape.lines().count(), 1 + 2 * 9);

    let (code, stdout, _) = call(&["prune-report", run.join("dsbp").to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(stdout.lines().count() >= 3);

    let (code, stdout, _) = call(&["bound", run.join("dsbp").to_str().unwrap()]);
    assert_eq!(code, 0);
    let rows: Vec<&str> = stdout.lines().collect();
    assert_eq!(rows.len(), 5);
    assert!(rows[0].starts_with("sigma\tC\t"));
}

#[test]
fn seed_flag_changes_results_and_repeats_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let read = |sub: &str, seed: &str| {
        let out = dir.path().join(sub);
        let (code, _, err) = call(&[
            "train",
            "--config",
            &cfg,
            "--out",
            out.to_str().unwrap(),
            "--seed",
            seed,
        ]);
        assert_eq!(code, 0, "{err}");
        std::fs::read(out.join("tiny/dsbp/metrics.tsv")).unwrap()
    };
    let a = read("a", "1");
    assert_eq!(a, read("b", "1"));
    assert_ne!(a, read("c", "2"));
}

#[test]
fn threads_do_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let mut files = Vec::new();
    for threads in ["1", "2"] {
        let out = dir.path().join(threads);
        let (code, _, err) = call(&[
            "train",
            "--config",
            &cfg,
            "--out",
            out.to_str().unwrap(),
            "--threads",
            threads,
        ]);
        assert_eq!(code, 0, "{err}");
        files.push(std::fs::read(out.join("tiny/sgd/metrics.tsv")).unwrap());
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn config_and_path_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad_shape = TINY.replace("widths = [4, 6, 3]", "widths = [5, 6, 3]");
    let cfg = write_config(dir.path(), &bad_shape);
    let (code, _, err) = call(&[
        "train",
        "--config",
        &cfg,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 2, "{err}");

    let cfg = write_config(dir.path(), &TINY.replace("eta = 0.05", "eta = \"fast\""));
    let (code, _, err) = call(&["train", "--config", &cfg]);
    assert_eq!(code, 2);
    assert!(err.contains("eta"), "{err}");

    assert_eq!(call(&["plot-data", "no/such/run"]).0, 2);
    assert_eq!(call(&["bound", "no/such/summary.toml"]).0, 2);
    assert_eq!(call(&["prune-report", "no/such/dir"]).0, 2);
}

#[test]
fn bundled_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["mnist.toml", "stream.toml", "meta.toml", "sde.toml"] {
        let cfg = dsbp::harness::ExperimentConfig::load(&root.join(name)).unwrap();
        cfg.validate().unwrap();
    }
}
