//! Logged training quantities and their text rendering.

use std::fmt::Write as _;

/// One logging event. Missing values are `None` (rendered `NA`), never 0.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsRecord {
    pub iteration: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub test_accuracy: Option<f64>,
    pub top_hessian: Option<f64>,
    /// Top activation-covariance eigenvalue per layer.
    pub layer_lambda: Option<Vec<f64>>,
    pub alignment: Option<f64>,
    pub angle_deg: Option<f64>,
    /// Fraction of masked weights per layer.
    pub sparsity: Option<Vec<f64>>,
    /// Milliseconds since training started. Not part of the metrics file.
    pub wall_ms: f64,
}

pub const METRICS_HEADER: [&str; 9] = [
    "iteration",
    "epoch",
    "train_loss",
    "test_accuracy",
    "top_hessian",
    "layer_lambda",
    "alignment",
    "angle_deg",
    "sparsity",
];

pub const MISSING: &str = "NA";

/// Renders like C's `%.9g`: nine significant digits, trailing zeros removed,
/// scientific notation when the exponent is below −4 or at least 9.
pub fn fmt_g9(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.into();
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0" } else { "0" }.into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent digits");
    if !(-4..9).contains(&exp) {
        let m = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{m}e{sign}{:02}", exp.abs());
    }
    let decimals = (8 - exp) as usize;
    strip_zeros(&format!("{x:.decimals$}")).to_string()
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| MISSING.to_string(), fmt_g9)
}

fn list(xs: &Option<Vec<f64>>) -> String {
    match xs {
        Some(v) if !v.is_empty() => v.iter().map(|&x| fmt_g9(x)).collect::<Vec<_>>().join(";"),
        _ => MISSING.to_string(),
    }
}

/// Tab-separated metrics table, header first, newline-terminated rows.
pub fn render_metrics(records: &[MetricsRecord]) -> String {
    let mut out = METRICS_HEADER.join("\t");
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.iteration,
            r.epoch,
            fmt_g9(r.train_loss),
            opt(r.test_accuracy),
            opt(r.top_hessian),
            list(&r.layer_lambda),
            opt(r.alignment),
            opt(r.angle_deg),
            list(&r.sparsity),
        );
    }
    out
}

/// Wall-clock column kept apart from the metrics table.
pub fn render_timing(records: &[MetricsRecord]) -> String {
    let mut out = String::from("iteration\twall_ms\n");
    for r in records {
        let _ = writeln!(out, "{}\t{}", r.iteration, fmt_g9(r.wall_ms));
    }
    out
}

fn parse_field(s: &str, column: &str, line: usize) -> Result<Option<f64>, String> {
    if s == MISSING {
        return Ok(None);
    }
    s.parse::<f64>()
        .map(Some)
        .map_err(|_| format!("line {line}: column {column}: `{s}` is not a number"))
}

fn parse_list(s: &str, column: &str, line: usize) -> Result<Option<Vec<f64>>, String> {
    if s == MISSING {
        return Ok(None);
    }
    s.split(';')
        .map(|x| {
            parse_field(x, column, line)?
                .ok_or_else(|| format!("line {line}: NA inside {column} list"))
        })
        .collect::<Result<Vec<_>, _>>()
        .map(Some)
}

/// Inverse of [`render_metrics`]. `wall_ms` is left at 0.
pub fn parse_metrics(text: &str) -> Result<Vec<MetricsRecord>, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty metrics file")?;
    if header != METRICS_HEADER.join("\t") {
        return Err(format!("unexpected metrics header `{header}`"));
    }
    let mut out = Vec::new();
    for (i, row) in lines.enumerate() {
        let line = i + 2;
        let f: Vec<&str> = row.split('\t').collect();
        if f.len() != METRICS_HEADER.len() {
            return Err(format!(
                "line {line}: expected {} fields, found {}",
                METRICS_HEADER.len(),
                f.len()
            ));
        }
        let int = |s: &str, c: &str| {
            s.parse::<usize>()
                .map_err(|_| format!("line {line}: column {c}: `{s}`"))
        };
        out.push(MetricsRecord {
            iteration: int(f[0], "iteration")?,
            epoch: int(f[1], "epoch")?,
            train_loss: parse_field(f[2], "train_loss", line)?
                .ok_or(format!("line {line}: train_loss is NA"))?,
            test_accuracy: parse_field(f[3], "test_accuracy", line)?,
            top_hessian: parse_field(f[4], "top_hessian", line)?,
            layer_lambda: parse_list(f[5], "layer_lambda", line)?,
            alignment: parse_field(f[6], "alignment", line)?,
            angle_deg: parse_field(f[7], "angle_deg", line)?,
            sparsity: parse_list(f[8], "sparsity", line)?,
            wall_ms: 0.0,
        });
    }
    Ok(out)
}
