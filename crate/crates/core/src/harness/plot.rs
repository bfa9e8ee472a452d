//! Figure inputs derived from a run directory.
//!
//! `plot_data(<out>/<name>)` reads every `<method>/metrics.tsv` and
//! `<method>/landscape.tsv` below the run directory and writes to
//! `<out>/<name>/plots/`:
//!
//! | table | columns |
//! |-------|---------|
//! | `alignment.tsv` | `method epoch iteration alignment`, one row per record |
//! | `hessian.tsv` | `method epoch iteration top_hessian`, records with an estimate |
//! | `variance.tsv` | `method iteration layer variance`, windowed over the records so far |
//! | `landscape.tsv` | `method a b loss` |
//! | `angles.tsv` | `method iteration angle_deg alignment`, records with an angle |
//!
//! plus one SVG per table (`landscape_<method>.svg` per method).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::run::{create_dir, write};
use crate::analysis::spectral_variance_per_layer;
use crate::metrics::{fmt_g9, parse_metrics, MetricsRecord, MISSING};
use crate::spectral::HISTORY_WINDOW;
use crate::{Error, Result};

/// Paths written by [`plot_data`].
#[derive(Debug, Clone, PartialEq)]
pub struct PlotFiles {
    pub tables: Vec<PathBuf>,
    pub figures: Vec<PathBuf>,
}

struct MethodRun {
    name: String,
    records: Vec<MetricsRecord>,
    landscape: Vec<(f64, f64, f64)>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_landscape(text: &str, path: &Path) -> Result<Vec<(f64, f64, f64)>> {
    text.lines()
        .skip(1)
        .enumerate()
        .map(|(i, row)| {
            let v: Vec<f64> = row.split('\t').filter_map(|s| s.parse().ok()).collect();
            match v[..] {
                [a, b, l] => Ok((a, b, l)),
                _ => Err(Error::Format {
                    path: path.to_path_buf(),
                    detail: format!("line {}: expected three numbers", i + 2),
                }),
            }
        })
        .collect()
}

fn load_runs(run_dir: &Path) -> Result<Vec<MethodRun>> {
    let entries = fs::read_dir(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("metrics.tsv").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Format {
            path: run_dir.to_path_buf(),
            detail: "no method directory with a metrics.tsv".into(),
        });
    }
    dirs.iter()
        .map(|d| {
            let mpath = d.join("metrics.tsv");
            let records = parse_metrics(&read(&mpath)?).map_err(|detail| Error::Format {
                path: mpath.clone(),
                detail,
            })?;
            let lpath = d.join("landscape.tsv");
            let landscape = if lpath.is_file() {
                parse_landscape(&read(&lpath)?, &lpath)?
            } else {
                Vec::new()
            };
            Ok(MethodRun {
                name: d
                    .file_name()
                    .expect("directory name")
                    .to_string_lossy()
                    .into_owned(),
                records,
                landscape,
            })
        })
        .collect()
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| MISSING.to_string(), fmt_g9)
}

/// Per-layer variance of the logged top eigenvalues over the trailing
/// window, at every record from the second on.
fn variance_rows(records: &[MetricsRecord]) -> Result<Vec<(usize, Vec<f64>)>> {
    let logged: Vec<(usize, &Vec<f64>)> = records
        .iter()
        .filter_map(|r| r.layer_lambda.as_ref().map(|l| (r.iteration, l)))
        .collect();
    let mut out = Vec::new();
    for end in 2..=logged.len() {
        let window = &logged[end.saturating_sub(HISTORY_WINDOW)..end];
        let layers = window[0].1.len();
        let histories: Vec<Vec<f64>> = (0..layers)
            .map(|l| window.iter().map(|(_, v)| v[l]).collect())
            .collect();
        out.push((logged[end - 1].0, spectral_variance_per_layer(&histories)?));
    }
    Ok(out)
}

pub fn plot_data(run_dir: &Path) -> Result<PlotFiles> {
    let runs = load_runs(run_dir)?;
    let dir = run_dir.join("plots");
    create_dir(&dir)?;
    let mut files = PlotFiles {
        tables: Vec::new(),
        figures: Vec::new(),
    };
    let emit = |name: &str, contents: String, files: &mut Vec<PathBuf>| -> Result<()> {
        let p = dir.join(name);
        write(&p, &contents)?;
        files.push(p);
        Ok(())
    };

    let mut align = String::from("method\tepoch\titeration\talignment\n");
    let mut hess = String::from("method\tepoch\titeration\ttop_hessian\n");
    let mut var = String::from("method\titeration\tlayer\tvariance\n");
    let mut land = String::from("method\ta\tb\tloss\n");
    let mut ang = String::from("method\titeration\tangle_deg\talignment\n");
    let (mut align_s, mut hess_s, mut var_s, mut ang_s) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for run in &runs {
        let m = &run.name;
        let mut a_pts = Vec::new();
        let mut h_pts = Vec::new();
        let mut g_pts = Vec::new();
        for r in &run.records {
            let _ = writeln!(
                align,
                "{m}\t{}\t{}\t{}",
                r.epoch,
                r.iteration,
                opt(r.alignment)
            );
            if let Some(a) = r.alignment {
                a_pts.push((r.epoch as f64, a));
            }
            if let Some(h) = r.top_hessian {
                let _ = writeln!(hess, "{m}\t{}\t{}\t{}", r.epoch, r.iteration, fmt_g9(h));
                h_pts.push((r.epoch as f64, h));
            }
            if let Some(g) = r.angle_deg {
                let _ = writeln!(
                    ang,
                    "{m}\t{}\t{}\t{}",
                    r.iteration,
                    fmt_g9(g),
                    opt(r.alignment)
                );
                g_pts.push((r.iteration as f64, g));
            }
        }
        let vrows = variance_rows(&run.records)?;
        let layers = vrows.first().map_or(0, |r| r.1.len());
        for (it, v) in &vrows {
            for (l, x) in v.iter().enumerate() {
                let _ = writeln!(var, "{m}\t{it}\t{l}\t{}", fmt_g9(*x));
            }
        }
        for l in 0..layers {
            var_s.push((
                format!("{m} layer {l}"),
                vrows.iter().map(|(it, v)| (*it as f64, v[l])).collect(),
            ));
        }
        for (a, b, loss) in &run.landscape {
            let _ = writeln!(
                land,
                "{m}\t{}\t{}\t{}",
                fmt_g9(*a),
                fmt_g9(*b),
                fmt_g9(*loss)
            );
        }
        align_s.push((m.clone(), a_pts));
        hess_s.push((m.clone(), h_pts));
        ang_s.push((m.clone(), g_pts));
    }
    emit("alignment.tsv", align, &mut files.tables)?;
    emit("hessian.tsv", hess, &mut files.tables)?;
    emit("variance.tsv", var, &mut files.tables)?;
    emit("landscape.tsv", land, &mut files.tables)?;
    emit("angles.tsv", ang, &mut files.tables)?;

    let figs = [
        (
            "alignment.svg",
            "Alignment",
            "epoch",
            "alignment",
            &align_s,
            false,
        ),
        (
            "hessian.svg",
            "Top Hessian eigenvalue",
            "epoch",
            "lambda_max",
            &hess_s,
            false,
        ),
        (
            "variance.svg",
            "Top eigenvalue variance",
            "iteration",
            "variance",
            &var_s,
            false,
        ),
        (
            "angles.svg",
            "Perturbation angle",
            "iteration",
            "degrees",
            &ang_s,
            true,
        ),
    ];
    for (name, title, x, y, series, scatter) in figs {
        emit(
            name,
            svg_chart(title, x, y, series, scatter),
            &mut files.figures,
        )?;
    }
    for run in &runs {
        if !run.landscape.is_empty() {
            let svg = svg_heatmap(&format!("Loss landscape ({})", run.name), &run.landscape);
            emit(
                &format!("landscape_{}.svg", run.name),
                svg,
                &mut files.figures,
            )?;
        }
    }
    Ok(files)
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn svg_open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    s
}

fn axes(s: &mut String, xlabel: &str, ylabel: &str, (x0, x1): (f64, f64), (y0, y1): (f64, f64)) {
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        s,
        r#"<path d="M{l} {t} L{l} {b} L{r} {b}" fill="none" stroke="black"/>"#
    );
    for (x, v, anchor) in [(l, x0, "start"), (r, x1, "end")] {
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{}" text-anchor="{anchor}">{}</text>"#,
            b + 16.0,
            fmt_g9(v)
        );
    }
    for (y, v) in [(b, y0), (t, y1)] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{y}" text-anchor="end">{}</text>"#,
            l - 4.0,
            fmt_g9(v)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (l + r) / 2.0,
        HEIGHT - 16.0,
        escape(xlabel)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        (t + b) / 2.0,
        (t + b) / 2.0,
        escape(ylabel)
    );
}

/// Line (or scatter) chart of named `(x, y)` series.
pub fn svg_chart(
    title: &str,
    xlabel: &str,
    ylabel: &str,
    series: &[(String, Vec<(f64, f64)>)],
    scatter: bool,
) -> String {
    let xr = range(series.iter().flat_map(|(_, p)| p.iter().map(|q| q.0)));
    let yr = range(series.iter().flat_map(|(_, p)| p.iter().map(|q| q.1)));
    let px = |x: f64| MARGIN + (x - xr.0) / (xr.1 - xr.0) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y - yr.0) / (yr.1 - yr.0) * (HEIGHT - 2.0 * MARGIN);
    let mut s = svg_open(title);
    axes(&mut s, xlabel, ylabel, xr, yr);
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<&(f64, f64)> = pts
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .collect();
        if scatter || pts.len() == 1 {
            for p in &pts {
                let _ = writeln!(
                    s,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#,
                    px(p.0),
                    py(p.1)
                );
            }
        } else if !pts.is_empty() {
            let d: Vec<String> = pts
                .iter()
                .map(|p| format!("{:.2},{:.2}", px(p.0), py(p.1)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                d.join(" ")
            );
        }
        let ly = MARGIN + 14.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{ly}" text-anchor="end" fill="{color}">{}</text>"#,
            WIDTH - MARGIN,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Square cells shaded from light (low loss) to dark (high loss).
pub fn svg_heatmap(title: &str, cells: &[(f64, f64, f64)]) -> String {
    let xr = range(cells.iter().map(|c| c.0));
    let yr = range(cells.iter().map(|c| c.1));
    let lr = range(cells.iter().map(|c| c.2));
    let g = (cells.len() as f64).sqrt().round().max(1.0);
    let (w, h) = ((WIDTH - 2.0 * MARGIN) / g, (HEIGHT - 2.0 * MARGIN) / g);
    let mut s = svg_open(title);
    for &(a, b, loss) in cells {
        let x = MARGIN + (a - xr.0) / (xr.1 - xr.0) * (WIDTH - 2.0 * MARGIN - w);
        let y = HEIGHT - MARGIN - h - (b - yr.0) / (yr.1 - yr.0) * (HEIGHT - 2.0 * MARGIN - h);
        let t = if loss.is_finite() {
            (loss - lr.0) / (lr.1 - lr.0)
        } else {
            1.0
        };
        let shade = (255.0 * (1.0 - t)).round() as u8;
        let _ = writeln!(
            s,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="rgb({shade},{shade},255)"/>"#
        );
    }
    axes(&mut s, "a", "b", xr, yr);
    s.push_str("</svg>\n");
    s
}
