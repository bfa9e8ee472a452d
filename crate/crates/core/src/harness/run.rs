//! Experiment execution and the files each run leaves behind.
//!
//! A `train` run writes `<out>/<name>/config.toml` and, per method,
//! `<out>/<name>/<method>/` containing:
//!
//! | file | contents |
//! |------|----------|
//! | `metrics.tsv` | [`render_metrics`] table |
//! | `timing.tsv` | wall-clock per record, then per epoch |
//! | `intervals.tsv` | `iteration`, `drifting` (0/1/NA), per-layer refresh interval |
//! | `prune_events.tsv` | one row per layer per pruning pass |
//! | `landscape.tsv` | `a`, `b`, `loss` over the final network's slice |
//! | `network.json` | final parameters |
//! | `summary.toml` | [`RunSummary`] |
//! | `FAILED` | error message; present only when the run failed |
//!
//! Everything except `timing.tsv` is a pure function of the config.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{DataSpec, ExperimentConfig};
use crate::analysis::{
    landscape_directions, loss_landscape_slice, pac_bayes_bound, simulate, weak_error_vs_eta,
    BoundInputs, BoundTerms, NetworkSde, QuadraticBenchmark, SdeConfig, WeakErrorStudy,
};
use crate::data::{
    fewshot_episodes, gaussian_blobs, load_idx, nonstationary_stream, BatchSource, Dataset,
    DriftSchedule, EpochSampler,
};
use crate::extensions::{compare_with_scratch, meta_train, MetaComparison, MetaStep};
use crate::metrics::{fmt_g9, render_metrics, render_timing, MISSING};
use crate::nn::hessian::{top_hessian_eigenvalue_of, LayerBlock, NetworkObjective};
use crate::nn::Network;
use crate::optimizers::{
    train, train_with_hook, weight_sparsity, Monitor, PruneEvent, TrainReport,
};
use crate::{rng, Error, Method, Result};

pub const FAILURE_MARKER: &str = "FAILED";

/// Final statistics of one trained network; the input to `dsbp bound`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: Method,
    pub seed: u64,
    pub iterations: usize,
    pub epochs: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
    pub param_count: usize,
    pub weight_norm: f64,
    /// Training examples n.
    pub sample_count: usize,
    /// Largest per-example loss over train and test sets.
    pub max_sample_loss: f64,
    /// Top Hessian eigenvalue of the whole network on the probe batch.
    pub top_hessian: f64,
    /// Top Hessian eigenvalue of each weight block on the probe batch.
    pub layer_top_hessian: Vec<f64>,
    pub sum_layer_top_hessian: f64,
    pub sparsity: Vec<f64>,
    pub refreshes: usize,
    pub prune_passes: usize,
    pub vetoes: usize,
}

impl RunSummary {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
    }

    /// Bound inputs with `f_S` the training loss, `L` the largest observed
    /// per-example loss and `Σλ` the sum of per-layer Hessian eigenvalues
    /// (negative estimates count as 0).
    pub fn bound_inputs(&self, sigma: f64, third_deriv_bound: f64, confidence: f64) -> BoundInputs {
        BoundInputs {
            empirical_loss: self.train_loss,
            dim: self.param_count,
            sigma,
            sum_top_eigs: self.layer_top_hessian.iter().map(|v| v.max(0.0)).sum(),
            third_deriv_bound,
            loss_bound: self.max_sample_loss,
            sample_count: self.sample_count,
            confidence,
            weight_norm: self.weight_norm,
        }
    }

    pub fn bound(&self, sigma: f64, third_deriv_bound: f64, confidence: f64) -> Result<BoundTerms> {
        pac_bayes_bound(&self.bound_inputs(sigma, third_deriv_bound, confidence))
    }
}

/// Train and test splits plus the drift schedule for stream data.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub train: Dataset,
    pub test: Dataset,
    pub drift: Option<DriftSchedule>,
}

pub fn load_data(spec: &DataSpec) -> Result<LoadedData> {
    match spec {
        DataSpec::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            limit,
        } => {
            let mut train = load_idx(train_images, train_labels)?;
            if let Some(n) = limit {
                train = train.head(*n);
            }
            let test = load_idx(test_images, test_labels)?;
            Ok(LoadedData {
                train,
                test,
                drift: None,
            })
        }
        DataSpec::Blobs {
            n_per_class,
            dims,
            classes,
            separation,
            test_count,
            seed,
        } => {
            let all = gaussian_blobs(*seed, *n_per_class, *dims, *classes, *separation)?;
            let (train, test) = all.split(*test_count, *seed)?;
            Ok(LoadedData {
                train,
                test,
                drift: None,
            })
        }
        DataSpec::Stream {
            n_per_class,
            dims,
            classes,
            separation,
            test_count,
            segment_len,
            angles,
            seed,
        } => {
            let all = gaussian_blobs(*seed, *n_per_class, *dims, *classes, *separation)?;
            let (train, test) = all.split(*test_count, *seed)?;
            let drift = DriftSchedule::new(*segment_len, angles.clone())?;
            Ok(LoadedData {
                train,
                test,
                drift: Some(drift),
            })
        }
    }
}

pub(crate) fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Runs `f` with `dir` as its output directory; on error the message is
/// written to `dir/FAILED` and whatever `f` already wrote is kept.
fn with_failure_marker<T>(dir: &Path, f: impl FnOnce() -> Result<T>) -> Result<T> {
    create_dir(dir)?;
    let marker = dir.join(FAILURE_MARKER);
    if marker.exists() {
        fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
    }
    let out = f();
    if let Err(e) = &out {
        write(&marker, &format!("{e}\n"))?;
    }
    out
}

pub fn render_prune_events(events: &[PruneEvent]) -> String {
    let mut out =
        String::from("iteration\tlayer\tthreshold\tcandidate_sparsity\terror\tbudget\taccepted\n");
    for e in events {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            e.iteration,
            e.layer,
            fmt_g9(e.threshold),
            fmt_g9(e.candidate_sparsity),
            fmt_g9(e.error),
            fmt_g9(e.budget),
            u8::from(e.accepted)
        );
    }
    out
}

fn render_intervals(report: &TrainReport, drift: Option<&DriftSchedule>) -> String {
    let mut out = String::from("iteration\tdrifting\tintervals\n");
    for (t, iv) in report.intervals.iter().enumerate() {
        let drifting = drift.map_or(MISSING.to_string(), |d| {
            u8::from(d.is_drifting(t)).to_string()
        });
        let iv: Vec<String> = iv.iter().map(usize::to_string).collect();
        let _ = writeln!(out, "{t}\t{drifting}\t{}", iv.join(";"));
    }
    out
}

/// Hessian probes on the first `probe_examples` training examples.
fn curvature(net: &Network, data: &Dataset, iters: usize, seed: u64) -> Result<(f64, Vec<f64>)> {
    let batch = data.full_batch();
    let obj = NetworkObjective { net, batch: &batch };
    let iters = iters.max(10);
    let full = top_hessian_eigenvalue_of(&obj, iters, seed)?.value;
    let mut layers = Vec::with_capacity(net.depth());
    for (l, (&o, layer)) in net.layer_offsets().iter().zip(net.layers()).enumerate() {
        let block = LayerBlock::new(&obj, o..o + layer.weight.rows() * layer.weight.cols())?;
        layers
            .push(top_hessian_eigenvalue_of(&block, iters, rng::derive(seed, l as u64 + 1))?.value);
    }
    Ok((full, layers))
}

/// Trains one method and writes its directory.
pub fn run_method(
    cfg: &ExperimentConfig,
    method: Method,
    data: &LoadedData,
    dir: &Path,
) -> Result<RunSummary> {
    with_failure_marker(dir, || run_method_inner(cfg, method, data, dir))
}

fn run_method_inner(
    cfg: &ExperimentConfig,
    method: Method,
    data: &LoadedData,
    dir: &Path,
) -> Result<RunSummary> {
    let mut dsbp = cfg.optimizer.with_method(method);
    let net = Network::mlp(&cfg.model.widths, cfg.model.hidden, dsbp.seed)?;
    let probe = data.train.head(cfg.metrics.probe_examples);
    let probe_batch = probe.full_batch();
    let monitor = Monitor {
        test: Some(&data.test),
        hessian_batch: Some(&probe_batch),
        cadence: cfg.metrics.cadence,
    };
    let mut source: Box<dyn BatchSource> = match &data.drift {
        Some(d) => Box::new(nonstationary_stream(
            &data.train,
            d.clone(),
            dsbp.batch_size,
            dsbp.seed,
        )?),
        None => Box::new(EpochSampler::new(&data.train, dsbp.batch_size, dsbp.seed)?),
    };
    if let Some(e) = cfg.run.epochs {
        dsbp.total_iters = e * source.batches_per_epoch();
    }
    let report = train(net, source.as_mut(), &dsbp, &monitor)?;

    write(&dir.join("metrics.tsv"), &render_metrics(&report.records))?;
    let mut timing = render_timing(&report.records);
    timing.push_str("\nepoch\twall_ms\n");
    for (e, ms) in report.epoch_wall_ms.iter().enumerate() {
        let _ = writeln!(timing, "{}\t{}", e + 1, fmt_g9(*ms));
    }
    write(&dir.join("timing.tsv"), &timing)?;
    write(
        &dir.join("intervals.tsv"),
        &render_intervals(&report, data.drift.as_ref()),
    )?;
    write(
        &dir.join("prune_events.tsv"),
        &render_prune_events(&report.prune_events),
    )?;
    let json = serde_json::to_string(&report.net).map_err(|e| Error::invalid(e.to_string()))?;
    write(&dir.join("network.json"), &json)?;

    let net = &report.net;
    let seed = rng::derive(dsbp.seed, 0x5EED);
    let (d1, d2) = landscape_directions(net, &probe_batch, cfg.metrics.landscape_random, seed)?;
    let grid = loss_landscape_slice(
        net,
        &probe_batch,
        &d1,
        &d2,
        cfg.metrics.landscape_span,
        cfg.metrics.landscape_grid,
    )?;
    let mut land = String::from("a\tb\tloss\n");
    for (a, b, loss) in grid.rows() {
        let _ = writeln!(land, "{}\t{}\t{}", fmt_g9(a), fmt_g9(b), fmt_g9(loss));
    }
    write(&dir.join("landscape.tsv"), &land)?;

    let train_out = net.evaluate(&data.train.full_batch())?;
    let test_out = net.evaluate(&data.test.full_batch())?;
    let max_sample_loss = train_out
        .sample_losses
        .iter()
        .chain(&test_out.sample_losses)
        .fold(0.0_f64, |m, &x| m.max(x));
    let (top_hessian, layer_top_hessian) =
        curvature(net, &probe, cfg.metrics.cadence.hessian_iters, seed)?;
    let summary = RunSummary {
        method,
        seed: dsbp.seed,
        iterations: dsbp.total_iters,
        epochs: report.records.last().map_or(0, |r| r.epoch),
        train_loss: train_out.loss,
        train_accuracy: train_out.accuracy(&data.train.labels),
        test_loss: test_out.loss,
        test_accuracy: test_out.accuracy(&data.test.labels),
        param_count: net.param_count(),
        weight_norm: net.weight_norm(),
        sample_count: data.train.len(),
        max_sample_loss,
        top_hessian,
        sum_layer_top_hessian: layer_top_hessian.iter().sum(),
        layer_top_hessian,
        sparsity: weight_sparsity(net),
        refreshes: report.refreshes,
        prune_passes: report.prune_passes,
        vetoes: report.vetoes,
    };
    let text = toml::to_string(&summary).map_err(|e| Error::invalid(e.to_string()))?;
    write(&dir.join("summary.toml"), &text)?;
    Ok(summary)
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))
}

/// Output directory of a run: `<out>/<run.name>`.
pub fn run_dir(cfg: &ExperimentConfig, out: &Path) -> PathBuf {
    out.join(&cfg.run.name)
}

/// Trains every configured method, `threads` at a time. Methods that fail
/// leave a `FAILED` marker; the others still complete.
pub fn train_experiment(
    cfg: &ExperimentConfig,
    out: &Path,
    threads: usize,
) -> Result<Vec<(Method, Result<RunSummary>)>> {
    cfg.validate()?;
    cfg.validate_shapes()?;
    let root = run_dir(cfg, out);
    create_dir(&root)?;
    write(&root.join("config.toml"), &cfg.to_toml_string()?)?;
    let data = load_data(&cfg.data)?;
    let pool = thread_pool(threads)?;
    Ok(pool.install(|| {
        cfg.run
            .methods
            .par_iter()
            .map(|&m| (m, run_method(cfg, m, &data, &root.join(m.name()))))
            .collect()
    }))
}

/// Sparsity and reconstruction statistics of one layer over a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerPruneReport {
    pub layer: usize,
    pub passes: usize,
    pub accepted: usize,
    pub vetoed: usize,
    /// Largest `error / budget` over accepted passes.
    pub max_accepted_ratio: f64,
    /// Accepted passes whose error exceeded the budget; always 0 unless the
    /// veto is broken.
    pub violations: usize,
    pub final_sparsity: f64,
}

pub fn parse_prune_events(text: &str, path: &Path) -> Result<Vec<PruneEvent>> {
    let bad = |line: usize, detail: &str| Error::Format {
        path: path.to_path_buf(),
        detail: format!("line {line}: {detail}"),
    };
    let mut lines = text.lines();
    if lines.next() != render_prune_events(&[]).lines().next() {
        return Err(bad(1, "unexpected header"));
    }
    let mut out = Vec::new();
    for (i, row) in lines.enumerate() {
        let f: Vec<&str> = row.split('\t').collect();
        if f.len() != 7 {
            return Err(bad(i + 2, "expected 7 fields"));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| bad(i + 2, &format!("`{s}` is not a number")))
        };
        let int = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| bad(i + 2, &format!("`{s}` is not an integer")))
        };
        out.push(PruneEvent {
            iteration: int(f[0])?,
            layer: int(f[1])?,
            threshold: num(f[2])?,
            candidate_sparsity: num(f[3])?,
            error: num(f[4])?,
            budget: num(f[5])?,
            accepted: int(f[6])? == 1,
        });
    }
    Ok(out)
}

/// Reads `prune_events.tsv` and `summary.toml` from a method directory.
pub fn prune_report(method_dir: &Path) -> Result<Vec<LayerPruneReport>> {
    let path = method_dir.join("prune_events.tsv");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let events = parse_prune_events(&text, &path)?;
    let summary = RunSummary::load(&method_dir.join("summary.toml"))?;
    Ok(summary
        .sparsity
        .iter()
        .enumerate()
        .map(|(l, &s)| {
            let mine: Vec<&PruneEvent> = events.iter().filter(|e| e.layer == l).collect();
            let accepted: Vec<&&PruneEvent> = mine.iter().filter(|e| e.accepted).collect();
            LayerPruneReport {
                layer: l,
                passes: mine.len(),
                accepted: accepted.len(),
                vetoed: mine.len() - accepted.len(),
                max_accepted_ratio: accepted
                    .iter()
                    .filter(|e| e.budget > 0.0)
                    .map(|e| e.error / e.budget)
                    .fold(0.0, f64::max),
                violations: accepted.iter().filter(|e| e.error > e.budget).count(),
                final_sparsity: s,
            }
        })
        .collect())
}

pub fn render_prune_report(rows: &[LayerPruneReport]) -> String {
    let mut out = String::from(
        "layer\tpasses\taccepted\tvetoed\tmax_accepted_ratio\tviolations\tfinal_sparsity\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.layer,
            r.passes,
            r.accepted,
            r.vetoed,
            fmt_g9(r.max_accepted_ratio),
            r.violations,
            fmt_g9(r.final_sparsity)
        );
    }
    out
}

/// Results of `dsbp sde`.
#[derive(Debug, Clone, PartialEq)]
pub struct SdeOutcome {
    /// Mean SDE loss over noise seeds at each grid time.
    pub sde_mean: Vec<(f64, f64)>,
    /// Full-data loss of discrete DSBP at the same times.
    pub discrete: Vec<(f64, f64)>,
    pub weak: WeakErrorStudy,
}

/// Simulates the network SDE for several noise seeds next to a discrete
/// DSBP run of matching length (`horizon/η` iterations), then runs the
/// weak-order sweep on the quadratic benchmark. Writes `sde.tsv`,
/// `discrete.tsv` and `weak_error.tsv` into `<out>/<name>/sde/`.
pub fn sde_experiment(cfg: &ExperimentConfig, out: &Path, threads: usize) -> Result<SdeOutcome> {
    cfg.validate()?;
    cfg.validate_shapes()?;
    let dir = run_dir(cfg, out).join("sde");
    let data = load_data(&cfg.data)?;
    with_failure_marker(&dir, || {
        let s = &cfg.sde;
        let dsbp = cfg.optimizer.with_method(Method::Dsbp);
        let net = Network::mlp(&cfg.model.widths, cfg.model.hidden, dsbp.seed)?;
        let problem = NetworkSde::new(net.clone(), &data.train, &dsbp, s.sim.gradient_samples)?;
        let pool = thread_pool(threads)?;
        let runs: Vec<Result<Vec<_>>> = pool.install(|| {
            (0..s.trajectories)
                .into_par_iter()
                .map(|i| {
                    let sim = SdeConfig {
                        noise_seed: rng::derive(s.sim.noise_seed, i as u64),
                        ..s.sim
                    };
                    simulate(&problem, &sim, dsbp.beta)
                })
                .collect()
        });
        let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
        let mut text = String::from("trajectory\ttime\tloss\n");
        for (i, run) in runs.iter().enumerate() {
            for p in run {
                let _ = writeln!(text, "{i}\t{}\t{}", fmt_g9(p.time), fmt_g9(p.loss));
            }
        }
        write(&dir.join("sde.tsv"), &text)?;
        let n = runs.len().max(1) as f64;
        let sde_mean: Vec<(f64, f64)> = (0..=s.sim.steps)
            .map(|j| {
                (
                    runs[0][j].time,
                    runs.iter().map(|r| r[j].loss).sum::<f64>() / n,
                )
            })
            .collect();

        let iters = (s.sim.horizon / s.sim.eta).round() as usize;
        let discrete_cfg = crate::optimizers::DsbpConfig {
            eta: s.sim.eta,
            total_iters: iters,
            ..dsbp.clone()
        };
        let full = data.train.full_batch();
        let every = (iters / s.sim.steps).max(1);
        let mut discrete = vec![(0.0, net.evaluate(&full)?.loss)];
        let mut sampler = EpochSampler::new(&data.train, dsbp.batch_size, dsbp.seed)?;
        train_with_hook(
            net,
            &mut sampler,
            &discrete_cfg,
            &Monitor::default(),
            &mut |net, _, t| {
                if (t + 1) % every == 0 {
                    discrete.push(((t + 1) as f64 * s.sim.eta, net.evaluate(&full)?.loss));
                }
                Ok(())
            },
        )?;
        let mut text = String::from("time\tloss\tsde_mean_loss\n");
        for &(t, loss) in &discrete {
            let nearest = sde_mean
                .iter()
                .min_by(|a, b| (a.0 - t).abs().total_cmp(&(b.0 - t).abs()))
                .map_or(f64::NAN, |p| p.1);
            let _ = writeln!(text, "{}\t{}\t{}", fmt_g9(t), fmt_g9(loss), fmt_g9(nearest));
        }
        write(&dir.join("discrete.tsv"), &text)?;

        let weak = weak_error_vs_eta(
            &QuadraticBenchmark::standard(),
            &s.etas,
            s.weak_horizon,
            s.weak_seeds,
            s.substeps,
            s.sim.noise_seed,
        )?;
        let mut text =
            String::from("eta\terror\tstd_err\tdiscrete_mean\tsde_mean\tratio_to_next\n");
        for (i, p) in weak.points.iter().enumerate() {
            let ratio = weak
                .ratios
                .get(i)
                .map_or(MISSING.to_string(), |&r| fmt_g9(r));
            let _ = writeln!(
                text,
                "{}\t{}\t{}\t{}\t{}\t{ratio}",
                fmt_g9(p.eta),
                fmt_g9(p.error),
                fmt_g9(p.std_err),
                fmt_g9(p.discrete_mean),
                fmt_g9(p.sde_mean)
            );
        }
        write(&dir.join("weak_error.tsv"), &text)?;
        Ok(SdeOutcome {
            sde_mean,
            discrete,
            weak,
        })
    })
}

/// Results of `dsbp meta`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaReport {
    pub steps: Vec<MetaStep>,
    pub comparison: MetaComparison,
}

/// Blob base with `base_classes` classes; meta-training and evaluation
/// episodes come from independent seeds. The model's first and last widths
/// are replaced by the base dimension and `n_way`.
pub fn meta_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<MetaReport> {
    cfg.validate()?;
    let dir = run_dir(cfg, out).join("meta");
    with_failure_marker(&dir, || {
        let m = &cfg.meta;
        let seed = cfg.optimizer.seed;
        let base = gaussian_blobs(
            seed,
            m.base_per_class,
            m.base_dims,
            m.base_classes,
            m.base_separation,
        )?;
        let mut widths = cfg.model.widths.clone();
        widths[0] = m.base_dims;
        *widths.last_mut().expect("validated widths") = m.meta.n_way;
        let net = Network::mlp(&widths, cfg.model.hidden, seed)?;
        let inner = cfg.optimizer.with_method(Method::Dsbp);
        let (n, k, q) = (m.meta.n_way, m.meta.k_shot, m.meta.query_per_class);
        let mut train_tasks = fewshot_episodes(&base, n, k, q, rng::derive(seed, 1))?;
        let outcome = meta_train(net, &mut train_tasks, &inner, &m.meta)?;
        let mut eval_tasks = fewshot_episodes(&base, n, k, q, rng::derive(seed, 2))?;
        let comparison = compare_with_scratch(
            &outcome,
            &mut eval_tasks,
            &inner,
            &m.meta,
            cfg.model.hidden,
            rng::derive(seed, 3),
        )?;

        let opt = |x: Option<f64>| x.map_or(MISSING.to_string(), fmt_g9);
        let mut text = String::from("outer\tquery_accuracy\tquery_loss\tsimilarity\ttop_hessian\n");
        for s in &outcome.steps {
            let _ = writeln!(
                text,
                "{}\t{}\t{}\t{}\t{}",
                s.outer,
                fmt_g9(s.query_accuracy),
                fmt_g9(s.query_loss),
                opt(s.similarity),
                opt(s.top_hessian)
            );
        }
        write(&dir.join("meta_steps.tsv"), &text)?;
        let mut text = String::from("episode\tmeta_accuracy\tscratch_accuracy\n");
        for (i, (a, b)) in comparison
            .meta_accuracy
            .iter()
            .zip(&comparison.scratch_accuracy)
            .enumerate()
        {
            let _ = writeln!(text, "{i}\t{}\t{}", fmt_g9(*a), fmt_g9(*b));
        }
        write(&dir.join("meta_eval.tsv"), &text)?;
        let text = format!(
            "mean_difference = {}\nci_low = {}\nci_high = {}\nepisodes = {}\n",
            comparison.mean_difference,
            comparison.ci_low,
            comparison.ci_high,
            comparison.meta_accuracy.len()
        );
        write(&dir.join("meta_summary.toml"), &text)?;
        Ok(MetaReport {
            steps: outcome.steps,
            comparison,
        })
    })
}
