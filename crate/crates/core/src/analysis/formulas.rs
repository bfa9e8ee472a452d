use crate::linalg::{dot, norm};
use crate::spectral::{window_variance, HISTORY_WINDOW};
use crate::{Error, Result};

fn check_pair(g: &[f64], e: &[f64]) -> Result<(f64, f64)> {
    if g.len() != e.len() {
        return Err(Error::invalid(format!(
            "gradient has length {} but direction has {}",
            g.len(),
            e.len()
        )));
    }
    let (gn, en) = (norm(g), norm(e));
    if gn == 0.0 || !gn.is_finite() {
        return Err(Error::Precondition(
            "zero gradient: metric undefined".into(),
        ));
    }
    if en == 0.0 || !en.is_finite() {
        return Err(Error::Precondition(
            "zero direction: metric undefined".into(),
        ));
    }
    Ok((gn, en))
}

/// `1 − min_{s = ±1} ‖g/‖g‖ − s·e‖` for a unit `e`. Lies in `[1 − √2, 1]`
/// and equals 1 exactly when `g ∥ ±e`.
pub fn alignment_metric(g: &[f64], e: &[f64]) -> Result<f64> {
    let (gn, en) = check_pair(g, e)?;
    if (en - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!("direction norm {en} is not 1")));
    }
    // ‖ĝ − s·e‖² = 2 − 2s·ĝ·e, minimised by s = sign(ĝ·e)
    let c = (dot(g, e) / gn).abs().min(1.0);
    Ok(1.0 - (2.0 - 2.0 * c).max(0.0).sqrt())
}

/// Angle between `g` and `e` in degrees, in `[0, 180]`.
pub fn perturbation_angle(g: &[f64], e: &[f64]) -> Result<f64> {
    let (gn, en) = check_pair(g, e)?;
    let c = (dot(g, e) / (gn * en)).clamp(-1.0, 1.0);
    Ok(c.acos().to_degrees())
}

/// Windowed population variance of each layer's top-eigenvalue history, the
/// same quantity the refresh interval uses.
pub fn spectral_variance_per_layer(histories: &[Vec<f64>]) -> Result<Vec<f64>> {
    histories
        .iter()
        .enumerate()
        .map(|(l, h)| {
            if h.len() < 2 {
                return Err(Error::invalid(format!(
                    "layer {l} has {} eigenvalue samples, need at least 2",
                    h.len()
                )));
            }
            let window = &h[h.len().saturating_sub(HISTORY_WINDOW)..];
            Ok(window_variance(window))
        })
        .collect()
}
