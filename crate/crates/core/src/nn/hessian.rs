//! Finite-difference Hessian-vector products and top Hessian eigenvalue.

use rand::Rng as _;

use super::{flatten_gradients, Batch, Network};
use crate::linalg::{axpy, dot, norm, normalize};
use crate::rng;
use crate::{Error, Result};

pub const DEFAULT_HVP_EPS: f64 = 1e-4;

/// A loss with gradients over a flat parameter vector.
pub trait Differentiable {
    fn dim(&self) -> usize;
    /// The current parameters.
    fn point(&self) -> Vec<f64>;
    fn loss_at(&self, w: &[f64]) -> Result<f64>;
    fn gradient_at(&self, w: &[f64]) -> Result<Vec<f64>>;

    /// Hessian-vector product at [`Differentiable::point`]. Callers go
    /// through [`hvp`], which checks the arguments.
    fn hvp_at(&self, v: &[f64], eps: f64) -> Result<Vec<f64>> {
        central_difference(&self.point(), v, eps, |w| self.gradient_at(w))
    }
}

fn central_difference(
    w: &[f64],
    v: &[f64],
    eps: f64,
    gradient: impl Fn(&[f64]) -> Result<Vec<f64>>,
) -> Result<Vec<f64>> {
    let mut plus = w.to_vec();
    axpy(&mut plus, eps, v);
    let mut minus = w.to_vec();
    axpy(&mut minus, -eps, v);
    let gp = gradient(&plus)?;
    let gm = gradient(&minus)?;
    Ok(gp
        .iter()
        .zip(&gm)
        .map(|(a, b)| (a - b) / (2.0 * eps))
        .collect())
}

/// Mean cross-entropy of a network on a fixed batch.
pub struct NetworkObjective<'a> {
    pub net: &'a Network,
    pub batch: &'a Batch,
}

impl Differentiable for NetworkObjective<'_> {
    fn dim(&self) -> usize {
        self.net.param_count()
    }

    fn point(&self) -> Vec<f64> {
        self.net.flatten()
    }

    fn loss_at(&self, w: &[f64]) -> Result<f64> {
        let mut probe = self.net.clone();
        probe.set_flat(w)?;
        Ok(probe.evaluate(self.batch)?.loss)
    }

    fn gradient_at(&self, w: &[f64]) -> Result<Vec<f64>> {
        let mut probe = self.net.clone();
        probe.set_flat(w)?;
        let (_, grads) = probe.loss_and_gradients(self.batch)?;
        Ok(flatten_gradients(&grads))
    }

    /// Both gradients keep the ReLU pattern of the current point. A step of
    /// ε that flips a unit would otherwise add its gradient jump divided by
    /// 2ε, which swamps the curvature whenever pre-activations sit near 0.
    fn hvp_at(&self, v: &[f64], eps: f64) -> Result<Vec<f64>> {
        let pattern = self.net.activation_pattern(self.batch)?;
        central_difference(&self.net.flatten(), v, eps, |w| {
            let mut probe = self.net.clone();
            probe.set_flat(w)?;
            Ok(flatten_gradients(
                &probe.gradients_with_pattern(self.batch, &pattern)?,
            ))
        })
    }
}

/// Restriction of an objective to a contiguous block of its parameters (for
/// instance one layer), all other parameters held at their current values.
pub struct LayerBlock<'a, O: Differentiable> {
    pub inner: &'a O,
    pub range: std::ops::Range<usize>,
    base: Vec<f64>,
}

impl<'a, O: Differentiable> LayerBlock<'a, O> {
    pub fn new(inner: &'a O, range: std::ops::Range<usize>) -> Result<Self> {
        if range.end > inner.dim() || range.is_empty() {
            return Err(Error::invalid(format!(
                "parameter block {range:?} outside 0..{}",
                inner.dim()
            )));
        }
        Ok(Self {
            base: inner.point(),
            inner,
            range,
        })
    }

    fn embed(&self, w: &[f64]) -> Vec<f64> {
        let mut full = self.base.clone();
        full[self.range.clone()].copy_from_slice(w);
        full
    }
}

impl<O: Differentiable> Differentiable for LayerBlock<'_, O> {
    fn dim(&self) -> usize {
        self.range.len()
    }

    fn point(&self) -> Vec<f64> {
        self.base[self.range.clone()].to_vec()
    }

    fn loss_at(&self, w: &[f64]) -> Result<f64> {
        self.inner.loss_at(&self.embed(w))
    }

    fn gradient_at(&self, w: &[f64]) -> Result<Vec<f64>> {
        let g = self.inner.gradient_at(&self.embed(w))?;
        Ok(g[self.range.clone()].to_vec())
    }

    fn hvp_at(&self, v: &[f64], eps: f64) -> Result<Vec<f64>> {
        let mut full = vec![0.0; self.base.len()];
        full[self.range.clone()].copy_from_slice(v);
        let h = self.inner.hvp_at(&full, eps)?;
        Ok(h[self.range.clone()].to_vec())
    }
}

/// `f(w) = ½ Σᵢ dᵢ (wᵢ − cᵢ)²`, a separable quadratic with known Hessian.
#[derive(Debug, Clone)]
pub struct Quadratic {
    pub diag: Vec<f64>,
    pub center: Vec<f64>,
    pub point: Vec<f64>,
}

impl Quadratic {
    pub fn new(diag: Vec<f64>, point: Vec<f64>) -> Self {
        let center = vec![0.0; diag.len()];
        Self {
            diag,
            center,
            point,
        }
    }
}

impl Differentiable for Quadratic {
    fn dim(&self) -> usize {
        self.diag.len()
    }

    fn point(&self) -> Vec<f64> {
        self.point.clone()
    }

    fn loss_at(&self, w: &[f64]) -> Result<f64> {
        Ok(0.5
            * w.iter()
                .zip(&self.center)
                .zip(&self.diag)
                .map(|((x, c), d)| d * (x - c) * (x - c))
                .sum::<f64>())
    }

    fn gradient_at(&self, w: &[f64]) -> Result<Vec<f64>> {
        Ok(w.iter()
            .zip(&self.center)
            .zip(&self.diag)
            .map(|((x, c), d)| d * (x - c))
            .collect())
    }
}

/// `(∇f(w + εv) − ∇f(w − εv)) / 2ε` at the objective's current point. For
/// networks both gradients hold the ReLU pattern of the current point fixed.
pub fn hvp<O: Differentiable + ?Sized>(obj: &O, v: &[f64], eps: f64) -> Result<Vec<f64>> {
    if v.len() != obj.dim() {
        return Err(Error::invalid(format!(
            "direction has length {} but objective has {} parameters",
            v.len(),
            obj.dim()
        )));
    }
    if norm(v) == 0.0 {
        return Err(Error::invalid(
            "Hessian-vector product along a zero direction",
        ));
    }
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::invalid(format!(
            "finite-difference step {eps} outside [1e-6, 1e-3]"
        )));
    }
    obj.hvp_at(v, eps)
}

/// Hessian-vector product of a network's batch loss along a unit direction.
pub fn hessian_vector_product(
    net: &Network,
    batch: &Batch,
    v: &[f64],
    eps: f64,
) -> Result<Vec<f64>> {
    let n = norm(v);
    if n == 0.0 {
        return Err(Error::invalid(
            "Hessian-vector product along a zero direction",
        ));
    }
    if (n - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("direction norm {n} is not 1")));
    }
    hvp(&NetworkObjective { net, batch }, v, eps)
}

/// Outcome of Hessian power iteration.
#[derive(Debug, Clone)]
pub struct HessianEigen {
    /// Largest-magnitude eigenvalue estimate (Rayleigh quotient).
    pub value: f64,
    pub vector: Vec<f64>,
    pub residual: f64,
    /// `residual ≤ 0.05·|value|`.
    pub converged: bool,
}

/// Power iteration on finite-difference Hessian-vector products.
pub fn top_hessian_eigenvalue_of<O: Differentiable + ?Sized>(
    obj: &O,
    iters: usize,
    seed: u64,
) -> Result<HessianEigen> {
    if iters < 10 {
        return Err(Error::invalid(format!(
            "Hessian power iteration needs at least 10 iterations, got {iters}"
        )));
    }
    let d = obj.dim();
    let mut rng = rng::seeded(seed, rng::stream::HESSIAN);
    let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect();
    normalize(&mut v);

    let mut hv = hvp(obj, &v, DEFAULT_HVP_EPS)?;
    let mut value = dot(&v, &hv);
    for _ in 1..iters {
        let mut next = hv.clone();
        if normalize(&mut next) == 0.0 {
            break;
        }
        v = next;
        hv = hvp(obj, &v, DEFAULT_HVP_EPS)?;
        value = dot(&v, &hv);
    }
    let mut r = hv.clone();
    axpy(&mut r, -value, &v);
    let residual = norm(&r);
    if residual > 0.05 * value.abs() {
        if let Some(better) = ritz_pair(obj, &v, &hv, r, residual)? {
            if better.residual < residual {
                return Ok(better);
            }
        }
    }
    Ok(HessianEigen {
        value,
        converged: residual <= 0.05 * value.abs(),
        vector: v,
        residual,
    })
}

/// Rayleigh-Ritz on `span{v, Hv}`. Power iteration stalls when two
/// eigenvalues of opposite sign share the top magnitude; that span holds
/// both, so the 2x2 problem separates them. Ties go to the positive one.
fn ritz_pair<O: Differentiable + ?Sized>(
    obj: &O,
    v: &[f64],
    hv: &[f64],
    r: Vec<f64>,
    r_norm: f64,
) -> Result<Option<HessianEigen>> {
    let u: Vec<f64> = r.iter().map(|x| x / r_norm).collect();
    let hu = hvp(obj, &u, DEFAULT_HVP_EPS)?;
    let a = dot(v, hv);
    let b = 0.5 * (dot(u.as_slice(), hv) + dot(v, &hu));
    let c = dot(&u, &hu);
    let mean = 0.5 * (a + c);
    let radius = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let (hi, lo) = (mean + radius, mean - radius);
    let theta = if lo.abs() > 1.05 * hi.abs() { lo } else { hi };
    // eigenvector of [[a, b], [b, c]] for theta
    let (mut x, mut y) = if b.abs() > 1e-300 {
        (b, theta - a)
    } else if (theta - a).abs() <= (theta - c).abs() {
        (1.0, 0.0)
    } else {
        (0.0, 1.0)
    };
    let n = (x * x + y * y).sqrt();
    if !(n > 0.0) || !theta.is_finite() {
        return Ok(None);
    }
    x /= n;
    y /= n;
    let vector: Vec<f64> = v.iter().zip(&u).map(|(p, q)| x * p + y * q).collect();
    let residual = hv
        .iter()
        .zip(&hu)
        .zip(&vector)
        .map(|((p, q), w)| {
            let e = x * p + y * q - theta * w;
            e * e
        })
        .sum::<f64>()
        .sqrt();
    Ok(Some(HessianEigen {
        value: theta,
        converged: residual <= 0.05 * theta.abs(),
        vector,
        residual,
    }))
}

/// Top Hessian eigenvalue of a network's loss on `batch`.
pub fn top_hessian_eigenvalue(
    net: &Network,
    batch: &Batch,
    iters: usize,
    seed: u64,
) -> Result<HessianEigen> {
    top_hessian_eigenvalue_of(&NetworkObjective { net, batch }, iters, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{jacobi_eig, DenseMatrix};
    use crate::nn::Activation;

    fn small_batch(d: usize, classes: usize) -> Batch {
        let mut rng = rng::seeded(3, 9);
        let inputs = DenseMatrix::from_fn(12, d, |_, _| rng.random_range(-1.0..1.0));
        let labels = (0..12).map(|i| i % classes).collect();
        Batch::new(inputs, labels).unwrap()
    }

    #[test]
    fn quadratic_hvp_is_exact() {
        let q = Quadratic::new(vec![2.0, 5.0], vec![0.3, -0.7]);
        let h = hvp(&q, &[0.0, 1.0], 1e-4).unwrap();
        assert!((h[0]).abs() < 1e-9 && (h[1] - 5.0).abs() < 1e-9);
        let top = top_hessian_eigenvalue_of(&q, 50, 1).unwrap();
        assert!((top.value - 5.0).abs() < 1e-6);
        assert!(top.converged);
    }

    #[test]
    fn opposite_sign_pair_resolves_to_positive() {
        let q = Quadratic::new(vec![3.0, -3.0, 1.0, 0.5], vec![0.0; 4]);
        let top = top_hessian_eigenvalue_of(&q, 40, 2).unwrap();
        assert!((top.value - 3.0).abs() < 1e-6, "{}", top.value);
        assert!(top.converged);
        assert!((top.vector[0].abs() - 1.0).abs() < 1e-6);

        let q = Quadratic::new(vec![1.0, -4.0, 0.5], vec![0.0; 3]);
        let top = top_hessian_eigenvalue_of(&q, 60, 2).unwrap();
        assert!((top.value + 4.0).abs() < 1e-6, "{}", top.value);
    }

    #[test]
    fn hvp_does_not_depend_on_step_across_kinks() {
        let mut net = Network::mlp(&[3, 6, 2], Activation::Relu, 4).unwrap();
        let batch = small_batch(3, 2);
        // units whose weights are all zero sit exactly on the kink
        for o in 0..2 {
            net.layer_mut(0).weight.row_mut(o).fill(0.0);
            net.layer_mut(0).bias[o] = 1e-7;
        }
        let d = net.param_count();
        let mut rng = rng::seeded(8, 1);
        let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        normalize(&mut v);
        let fine = hessian_vector_product(&net, &batch, &v, 1e-6).unwrap();
        let coarse = hessian_vector_product(&net, &batch, &v, 1e-3).unwrap();
        let scale = norm(&coarse);
        for (a, b) in fine.iter().zip(&coarse) {
            assert!((a - b).abs() <= 1e-4 * scale.max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn argument_checks() {
        let net = Network::mlp(&[3, 4, 2], Activation::Relu, 0).unwrap();
        let batch = small_batch(3, 2);
        let d = net.param_count();
        assert!(hessian_vector_product(&net, &batch, &vec![0.0; d], 1e-4).is_err());
        let mut v = vec![0.0; d];
        v[0] = 2.0;
        assert!(hessian_vector_product(&net, &batch, &v, 1e-4).is_err());
        v[0] = 1.0;
        assert!(hessian_vector_product(&net, &batch, &v, 1e-1).is_err());
        assert!(top_hessian_eigenvalue(&net, &batch, 5, 0).is_err());
    }

    #[test]
    fn network_hvp_is_symmetric_and_linear() {
        let net = Network::mlp(&[3, 5, 2], Activation::Relu, 7).unwrap();
        let batch = small_batch(3, 2);
        let obj = NetworkObjective {
            net: &net,
            batch: &batch,
        };
        let d = obj.dim();
        let mut rng = rng::seeded(1, 2);
        let mut u: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        normalize(&mut u);
        normalize(&mut v);
        let hu = hvp(&obj, &u, 1e-4).unwrap();
        let hv = hvp(&obj, &v, 1e-4).unwrap();
        let (a, b) = (dot(&u, &hv), dot(&v, &hu));
        assert!((a - b).abs() <= 1e-3 * a.abs().max(b.abs()).max(1e-8));

        let scaled: Vec<f64> = v.iter().map(|x| 0.999 * x).collect();
        let hs = hvp(&obj, &scaled, 1e-4).unwrap();
        for (x, y) in hs.iter().zip(&hv) {
            assert!((x - 0.999 * y).abs() <= 1e-6 * y.abs().max(1.0));
        }
    }

    #[test]
    fn top_eigenvalue_matches_dense_hessian() {
        // 3-4-2 net: 26 parameters
        let net = Network::mlp(&[3, 4, 2], Activation::Relu, 5).unwrap();
        let batch = small_batch(3, 2);
        let obj = NetworkObjective {
            net: &net,
            batch: &batch,
        };
        let d = obj.dim();
        let mut h = DenseMatrix::zeros(d, d);
        for j in 0..d {
            let mut e = vec![0.0; d];
            e[j] = 1.0;
            let col = hvp(&obj, &e, 1e-4).unwrap();
            for i in 0..d {
                h[(i, j)] = col[i];
            }
        }
        let sym = DenseMatrix::from_fn(d, d, |i, j| 0.5 * (h[(i, j)] + h[(j, i)]));
        let spectrum = jacobi_eig(&sym).unwrap();
        let dominant =
            spectrum
                .values
                .iter()
                .cloned()
                .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        let top = top_hessian_eigenvalue(&net, &batch, 300, 2).unwrap();
        assert!(
            (top.value - dominant).abs() / dominant.abs() < 1e-2,
            "{} vs {}",
            top.value,
            dominant
        );
    }

    #[test]
    fn doubling_the_loss_doubles_the_eigenvalue() {
        // loss weighted by two: every example counted twice with unit weight
        struct Doubled<'a>(NetworkObjective<'a>);
        impl Differentiable for Doubled<'_> {
            fn dim(&self) -> usize {
                self.0.dim()
            }
            fn point(&self) -> Vec<f64> {
                self.0.point()
            }
            fn loss_at(&self, w: &[f64]) -> Result<f64> {
                Ok(2.0 * self.0.loss_at(w)?)
            }
            fn gradient_at(&self, w: &[f64]) -> Result<Vec<f64>> {
                Ok(self.0.gradient_at(w)?.iter().map(|g| 2.0 * g).collect())
            }
        }
        let net = Network::mlp(&[3, 4, 2], Activation::Relu, 8).unwrap();
        let batch = small_batch(3, 2);
        let base = top_hessian_eigenvalue(&net, &batch, 100, 4).unwrap();
        let doubled = top_hessian_eigenvalue_of(
            &Doubled(NetworkObjective {
                net: &net,
                batch: &batch,
            }),
            100,
            4,
        )
        .unwrap();
        assert!((doubled.value - 2.0 * base.value).abs() / (2.0 * base.value.abs()) < 1e-2);
    }

    #[test]
    fn layer_block_restricts_directions() {
        let q = Quadratic::new(vec![1.0, 7.0, 3.0], vec![0.0; 3]);
        let block = LayerBlock::new(&q, 0..1).unwrap();
        let top = top_hessian_eigenvalue_of(&block, 20, 0).unwrap();
        assert!((top.value - 1.0).abs() < 1e-6);
        assert!(LayerBlock::new(&q, 2..5).is_err());
    }
}
