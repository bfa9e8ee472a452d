//! `dsbp` command line.
//!
//! Exit codes: 0 on success, 2 for usage, config or input-path errors, 1 when
//! a run fails after starting.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use super::config::ExperimentConfig;
use super::plot::plot_data;
use super::run::{
    meta_experiment, prune_report, render_prune_report, sde_experiment, train_experiment,
    RunSummary,
};
use crate::metrics::fmt_g9;
use crate::Error;

#[derive(Debug, Parser)]
#[command(
    name = "dsbp",
    version,
    about = "Dynamic spectral backpropagation experiments"
)]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `optimizer.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root; defaults to `run.out_dir`, then `out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads across methods or noise seeds. 1 is the reference mode.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train every method listed in `run.methods`.
    Train,
    /// Spectral meta learning against a from-scratch baseline.
    Meta,
    /// Network SDE trajectories and the weak-order sweep.
    Sde,
    /// PAC-Bayes bound from a run's `summary.toml`.
    Bound {
        /// A method directory or its `summary.toml`.
        summary: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.1])]
        sigma: Vec<f64>,
        /// Third-derivative bound C.
        #[arg(long = "c", value_delimiter = ',', default_values_t = [0.0, 1.0])]
        c: Vec<f64>,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
    },
    /// Figure tables and SVGs from a run directory.
    PlotData { run_dir: PathBuf },
    /// Pruning statistics of a method directory.
    PruneReport { method_dir: PathBuf },
}

struct Failure {
    code: i32,
    message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

/// Config, path and format problems are the caller's to fix (2); anything
/// else happened while running (1).
fn classify(e: Error) -> Failure {
    let code = match e {
        Error::Config(_) | Error::Io { .. } | Error::Format { .. } => 2,
        _ => 1,
    };
    Failure {
        code,
        message: e.to_string(),
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| usage("this command needs --config <path>"))?;
    if !path.is_file() {
        return Err(usage(format!(
            "config file {} does not exist",
            path.display()
        )));
    }
    let mut cfg =
        ExperimentConfig::load(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    if let Some(seed) = cli.seed {
        cfg.optimizer.seed = seed;
    }
    Ok(cfg)
}

fn out_root(cli: &Cli, cfg: &ExperimentConfig) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.run.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn existing(path: &Path) -> Result<(), Failure> {
    if path.exists() {
        Ok(())
    } else {
        Err(usage(format!("{} does not exist", path.display())))
    }
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), Failure> {
    let threads = cli.threads.max(1);
    match &cli.command {
        Command::Train => {
            let cfg = load_config(cli)?;
            let root = out_root(cli, &cfg);
            let results = train_experiment(&cfg, &root, threads).map_err(classify)?;
            let mut failed = Vec::new();
            for (m, r) in results {
                match r {
                    Ok(s) => {
                        let _ = writeln!(
                            out,
                            "{m}\ttest_accuracy={}\ttest_loss={}\ttop_hessian={}\tsparsity={}",
                            fmt_g9(s.test_accuracy),
                            fmt_g9(s.test_loss),
                            fmt_g9(s.top_hessian),
                            s.sparsity
                                .iter()
                                .map(|&x| fmt_g9(x))
                                .collect::<Vec<_>>()
                                .join(";")
                        );
                    }
                    Err(e) => failed.push(format!("{m}: {e}")),
                }
            }
            let _ = writeln!(out, "outputs in {}", root.join(&cfg.run.name).display());
            if !failed.is_empty() {
                return Err(Failure {
                    code: 1,
                    message: failed.join("\n"),
                });
            }
        }
        Command::Meta => {
            let cfg = load_config(cli)?;
            let root = out_root(cli, &cfg);
            let r = meta_experiment(&cfg, &root).map_err(classify)?;
            let c = &r.comparison;
            let _ = writeln!(
                out,
                "mean_difference={}\tci95=[{}, {}]\tepisodes={}",
                fmt_g9(c.mean_difference),
                fmt_g9(c.ci_low),
                fmt_g9(c.ci_high),
                c.meta_accuracy.len()
            );
        }
        Command::Sde => {
            let cfg = load_config(cli)?;
            let root = out_root(cli, &cfg);
            let r = sde_experiment(&cfg, &root, threads).map_err(classify)?;
            let _ = writeln!(out, "eta\terror\tstd_err");
            for p in &r.weak.points {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}",
                    fmt_g9(p.eta),
                    fmt_g9(p.error),
                    fmt_g9(p.std_err)
                );
            }
            let ratios: Vec<String> = r.weak.ratios.iter().map(|&x| fmt_g9(x)).collect();
            let _ = writeln!(out, "ratios\t{}", ratios.join("\t"));
        }
        Command::Bound {
            summary,
            sigma,
            c,
            delta,
        } => {
            existing(summary)?;
            let path = if summary.is_dir() {
                summary.join("summary.toml")
            } else {
                summary.clone()
            };
            let s = RunSummary::load(&path).map_err(classify)?;
            let _ = writeln!(
                out,
                "sigma\tC\tempirical\tcurvature\tthird_order\tcomplexity\ttotal"
            );
            for &sg in sigma {
                for &cc in c {
                    let t = s.bound(sg, cc, *delta).map_err(|e| usage(e.to_string()))?;
                    let _ = writeln!(
                        out,
                        "{sg}\t{cc}\t{}\t{}\t{}\t{}\t{}",
                        t.empirical, t.curvature, t.third_order, t.complexity, t.total
                    );
                }
            }
        }
        Command::PlotData { run_dir } => {
            existing(run_dir)?;
            let files = plot_data(run_dir).map_err(classify)?;
            for p in files.tables.iter().chain(&files.figures) {
                let _ = writeln!(out, "{}", p.display());
            }
        }
        Command::PruneReport { method_dir } => {
            existing(method_dir)?;
            let rows = prune_report(method_dir).map_err(classify)?;
            let _ = write!(out, "{}", render_prune_report(&rows));
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let target: &mut dyn Write = if code == 0 { out } else { err };
            let _ = write!(target, "{}", e.render());
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

/// Entry point for the binary.
pub fn main() -> i32 {
    let (stdout, stderr) = (std::io::stdout(), std::io::stderr());
    run_with(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}

#[cfg(test)]
mod tests {
    use super::*;

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

    #[test]
    fn missing_config_names_the_path() {
        let (code, _, err) = call(&["train", "--config", "definitely/missing.toml"]);
        assert_eq!(code, 2);
        assert!(err.contains("definitely/missing.toml"), "{err}");
        let (code, _, err) = call(&["train"]);
        assert_eq!(code, 2);
        assert!(err.contains("--config"));
    }

    #[test]
    fn usage_errors_exit_2_and_help_exits_0() {
        assert_eq!(call(&["frobnicate"]).0, 2);
        assert_eq!(call(&["train", "--threads", "x"]).0, 2);
        let (code, out, _) = call(&["--help"]);
        assert_eq!(code, 0);
        assert!(out.contains("plot-data") && out.contains("prune-report"));
    }

    #[test]
    fn bad_config_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.toml");
        std::fs::write(&p, "[optimizer]\neta = 0.1\nbogus = 3\n").unwrap();
        let (code, _, err) = call(&["train", "--config", p.to_str().unwrap()]);
        assert_eq!(code, 2);
        assert!(err.contains("bogus") && err.contains("line 3"), "{err}");
    }
}
