use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg::{activation_covariance, axpy, dot, norm, normalize, power_iteration_topk};
use crate::nn::hessian::{Differentiable, NetworkObjective};
use crate::nn::{Batch, Network};
use crate::rng;
use crate::{Error, Result};

/// Losses on a `grid × grid` lattice over `[−span, span]²`. `losses` is
/// row-major with the first direction's coefficient varying slowest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeGrid {
    pub coords: Vec<f64>,
    pub losses: Vec<f64>,
}

impl LandscapeGrid {
    pub fn grid(&self) -> usize {
        self.coords.len()
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.losses[i * self.grid() + j]
    }

    /// `(a, b, loss)` rows.
    pub fn rows(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        let g = self.grid();
        (0..g * g).map(move |idx| (self.coords[idx / g], self.coords[idx % g], self.losses[idx]))
    }
}

/// Evenly spaced coefficients; for odd `grid` the middle one is exactly 0.
fn lattice(span: f64, grid: usize) -> Vec<f64> {
    if grid == 1 {
        return vec![0.0];
    }
    let m = (grid - 1) as f64;
    (0..grid).map(|i| span * (2.0 * i as f64 - m) / m).collect()
}

/// Loss at `w + a·dir1 + b·dir2` for each lattice point.
pub fn loss_landscape_slice_of<O: Differentiable + ?Sized>(
    obj: &O,
    dir1: &[f64],
    dir2: &[f64],
    span: f64,
    grid: usize,
) -> Result<LandscapeGrid> {
    let d = obj.dim();
    if dir1.len() != d || dir2.len() != d {
        return Err(Error::invalid(format!(
            "directions must have length {d}, got {} and {}",
            dir1.len(),
            dir2.len()
        )));
    }
    let (n1, n2, c) = (norm(dir1), norm(dir2), dot(dir1, dir2));
    if (n1 - 1.0).abs() > 1e-6 || (n2 - 1.0).abs() > 1e-6 || c.abs() > 1e-6 {
        return Err(Error::invalid(format!(
            "directions must be orthonormal (norms {n1}, {n2}, inner product {c})"
        )));
    }
    if grid == 0 || !(span >= 0.0) {
        return Err(Error::invalid("landscape needs grid >= 1 and span >= 0"));
    }
    let w = obj.point();
    let coords = lattice(span, grid);
    let mut losses = Vec::with_capacity(grid * grid);
    for &a in &coords {
        for &b in &coords {
            let mut p = w.clone();
            if a != 0.0 {
                axpy(&mut p, a, dir1);
            }
            if b != 0.0 {
                axpy(&mut p, b, dir2);
            }
            losses.push(obj.loss_at(&p)?);
        }
    }
    Ok(LandscapeGrid { coords, losses })
}

pub fn loss_landscape_slice(
    net: &Network,
    batch: &Batch,
    dir1: &[f64],
    dir2: &[f64],
    span: f64,
    grid: usize,
) -> Result<LandscapeGrid> {
    loss_landscape_slice_of(&NetworkObjective { net, batch }, dir1, dir2, span, grid)
}

/// Two orthonormal parameter-space directions for a landscape slice.
///
/// By default: `eᵢ·m̂ᵀ` placed in the final weight block, where `e₁, e₂` are
/// the top eigenvectors of the final layer's activation covariance on
/// `batch` and `m̂` is the normalized mean input to that layer. With
/// `random`, or when the final layer is too narrow or its mean input is
/// zero, two seeded Gaussian directions orthonormalized by Gram-Schmidt.
pub fn landscape_directions(
    net: &Network,
    batch: &Batch,
    random: bool,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let dim = net.param_count();
    if !random {
        if let Some(dirs) = spectral_directions(net, batch, seed)? {
            return Ok(dirs);
        }
    }
    let mut r = rng::seeded(seed, rng::stream::DIRECTIONS);
    let mut d1: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut r)).collect();
    let mut d2: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut r)).collect();
    normalize(&mut d1);
    let c = dot(&d1, &d2);
    axpy(&mut d2, -c, &d1);
    normalize(&mut d2);
    Ok((d1, d2))
}

fn spectral_directions(
    net: &Network,
    batch: &Batch,
    seed: u64,
) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
    let last = net.depth() - 1;
    let layer = &net.layers()[last];
    if layer.output_dim() < 2 {
        return Ok(None);
    }
    let mut probe = net.clone();
    probe.forward(batch)?;
    let acts = probe
        .cached_activations()
        .expect("forward pass just cached");
    let pairs = power_iteration_topk(&activation_covariance(&acts[last])?, 2, 200, seed)?;
    let mut mean = vec![0.0; layer.input_dim()];
    let inputs = if last == 0 {
        &batch.inputs
    } else {
        &acts[last - 1]
    };
    for i in 0..inputs.rows() {
        axpy(&mut mean, 1.0, inputs.row(i));
    }
    if normalize(&mut mean) == 0.0 {
        return Ok(None);
    }
    let offset = net.layer_offsets()[last];
    let embed = |e: &[f64]| {
        let mut v = vec![0.0; net.param_count()];
        for (a, &ea) in e.iter().enumerate() {
            for (b, &mb) in mean.iter().enumerate() {
                v[offset + a * mean.len() + b] = ea * mb;
            }
        }
        v
    };
    Ok(Some((embed(&pairs.vectors[0]), embed(&pairs.vectors[1]))))
}
