use proptest::prelude::*;

use super::*;
use crate::linalg::test_support::{random_matrix, random_orthonormal};
use crate::linalg::{dot, jacobi_eig, norm};

fn basis(vectors: Vec<Vec<f64>>, values: Vec<f64>) -> EigenPairs {
    let k = vectors.len();
    EigenPairs {
        vectors,
        values,
        residuals: vec![0.0; k],
    }
}

#[test]
fn rank_one_activations() {
    let u = [0.6, 0.0, -0.8];
    let a = DenseMatrix::from_fn(7, 3, |_, j| u[j]);
    let mut state = LayerSpectralState::new();
    state.refresh(&a, 1, 20, 3, 0).unwrap();
    let (e1, l1) = state.top().unwrap();
    assert!((l1 - 7.0).abs() < 1e-10);
    assert!((dot(e1, &u).abs() - 1.0).abs() < 1e-10);
    assert_eq!(state.lambda_history(), vec![l1]);
    assert_eq!(state.initial_top, Some(l1));
}

#[test]
fn second_refresh_on_same_activations_is_a_fixed_point() {
    let a = random_matrix(30, 6, 8);
    let mut state = LayerSpectralState::new();
    state.refresh(&a, 3, 200, 1, 0).unwrap();
    let first = state.eigenpairs.clone().unwrap();
    state.refresh(&a, 3, 200, 2, 10).unwrap();
    let second = state.eigenpairs.clone().unwrap();
    for i in 0..3 {
        assert!((first.values[i] - second.values[i]).abs() < 1e-9 * first.values[0]);
        for (x, y) in first.vectors[i].iter().zip(&second.vectors[i]) {
            assert!((x - y).abs() < 1e-6);
        }
    }
    assert_eq!(state.last_refresh_iter, Some(10));
    assert_eq!(state.lambda_history().len(), 2);
}

#[test]
fn refreshed_top_value_matches_jacobi() {
    let a = random_matrix(40, 9, 21);
    let mut state = LayerSpectralState::new();
    state.refresh(&a, 2, 100, 4, 0).unwrap();
    let oracle = jacobi_eig(&activation_covariance(&a).unwrap()).unwrap();
    let (_, l1) = state.top().unwrap();
    assert!((l1 - oracle.values[0]).abs() / oracle.values[0] < 1e-4);
    assert!((state.spectrum_total - oracle.values.iter().sum::<f64>()).abs() < 1e-9);
}

#[test]
fn refresh_rejects_oversized_k() {
    let a = random_matrix(5, 3, 1);
    assert!(LayerSpectralState::new().refresh(&a, 4, 5, 0, 0).is_err());
}

#[test]
fn history_is_a_sliding_window() {
    let mut s = LayerSpectralState::new();
    for i in 0..25 {
        s.record_top_eigenvalue(i as f64);
    }
    let h = s.lambda_history();
    assert_eq!(h.len(), HISTORY_WINDOW);
    assert_eq!(h[0], 15.0);
}

#[test]
fn dsbp_update_reduces_to_sgd() {
    let w0 = random_matrix(4, 3, 2);
    let g = random_matrix(4, 3, 3);
    let full = basis(random_orthonormal(4, 4), vec![4.0, 3.0, 2.0, 1.0]);
    let mut w = w0.clone();
    dsbp_weight_update(&mut w, &g, &full, 0.05, 0.0).unwrap();
    let mut expected = w0.clone();
    sgd_step(expected.as_mut_slice(), g.as_slice(), 0.05);
    assert_eq!(w, expected);
}

#[test]
fn shrinkage_only_scales_the_top_component() {
    let w0 = random_matrix(5, 4, 6);
    let q = random_orthonormal(5, 7);
    let b = basis(q[..2].to_vec(), vec![2.5, 1.0]);
    let (beta, l1) = (0.2, 2.5);
    let mut w = w0.clone();
    dsbp_weight_update(&mut w, &DenseMatrix::zeros(5, 4), &b, 0.01, beta).unwrap();

    // explicit multiplication: e1ᵀW before and after
    let e1 = &b.vectors[0];
    let before = w0.vecmat(e1).unwrap();
    let after = w.vecmat(e1).unwrap();
    assert!((norm(&after) - (1.0 - beta * l1) * norm(&before)).abs() < 1e-12);
    // the orthogonal complement of e1 is untouched
    let e2 = &b.vectors[1];
    let (p, q2) = (w0.vecmat(e2).unwrap(), w.vecmat(e2).unwrap());
    for (x, y) in p.iter().zip(&q2) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn shrinkage_is_clamped() {
    let w0 = random_matrix(3, 2, 1);
    let b = basis(vec![vec![1.0, 0.0, 0.0]], vec![50.0]);
    let mut w = w0.clone();
    dsbp_weight_update(&mut w, &DenseMatrix::zeros(3, 2), &b, 0.01, 0.1).unwrap();
    assert!(w.row(0).iter().all(|x| x.abs() < 1e-15));
    assert_eq!(w.row(1), w0.row(1));
}

#[test]
fn dsbp_update_matches_explicit_loops() {
    let (rows, cols, k) = (12, 7, 10);
    let w0 = random_matrix(rows, cols, 31);
    let g = random_matrix(rows, cols, 32);
    let q = random_orthonormal(rows, 33);
    let values: Vec<f64> = (0..k).map(|i| 3.0 / (i + 1) as f64).collect();
    let b = basis(q[..k].to_vec(), values);
    let (eta, beta) = (0.01, 0.1);

    let mut w = w0.clone();
    dsbp_weight_update(&mut w, &g, &b, eta, beta).unwrap();

    let mut reference = w0.clone();
    let s = (beta * b.values[0]).min(1.0);
    for r in 0..rows {
        for c in 0..cols {
            let mut pg = 0.0;
            for e in &b.vectors {
                let mut coeff = 0.0;
                for m in 0..rows {
                    coeff += e[m] * g[(m, c)];
                }
                pg += e[r] * coeff;
            }
            let e1 = &b.vectors[0];
            let mut comp = 0.0;
            for m in 0..rows {
                comp += e1[m] * w0[(m, c)];
            }
            reference[(r, c)] = w0[(r, c)] - eta * pg - s * e1[r] * comp;
        }
    }
    assert!(w.sub(&reference).unwrap().max_abs() < 1e-12);
}

#[test]
fn dsbp_update_shape_mismatch() {
    let mut w = DenseMatrix::zeros(3, 2);
    let g = DenseMatrix::zeros(2, 3);
    let b = basis(vec![vec![1.0, 0.0, 0.0]], vec![1.0]);
    assert!(dsbp_weight_update(&mut w, &g, &b, 0.1, 0.0).is_err());
}

#[test]
fn interval_examples() {
    let ctrl = IntervalController::new(100, 0.1).unwrap();
    assert_eq!(ctrl.interval(&[3.0; 10]), 100);
    let alternating: Vec<f64> = (0..10)
        .map(|i| if i % 2 == 0 { 0.0 } else { 2.0 })
        .collect();
    assert_eq!(window_variance(&alternating), 1.0);
    assert_eq!(ctrl.interval(&alternating), 90);
    let frozen = IntervalController::new(100, 0.0).unwrap();
    assert_eq!(frozen.interval(&[0.0, 1e6, 3.0]), 100);
    assert_eq!(ctrl.interval(&[5.0]), 100);
    assert_eq!(ctrl.interval_for_variance(1e12), 1);
    assert!(IntervalController::new(0, 0.1).is_err());
}

#[test]
fn prune_threshold_examples() {
    let s = PruneSchedule::new(0.01, 0.1, 1000).unwrap();
    assert_eq!(prune_threshold(&s, 0).unwrap(), 0.01);
    assert!((prune_threshold(&s, 1000).unwrap() - 0.009_048_374_180_359_595).abs() < 1e-15);
    let flat = PruneSchedule::new(0.01, 0.0, 50).unwrap();
    assert!((0..=50).all(|t| flat.threshold(t).unwrap() == 0.01));
    assert!(s.threshold(1001).is_err());
    assert!(PruneSchedule::new(0.0, 0.1, 10).is_err());
}

#[test]
fn layer_threshold_examples() {
    assert_eq!(layer_threshold_scale(0.01, 12.0, 12.0).unwrap(), 0.01);
    assert_eq!(layer_threshold_scale(0.01, 6.0, 12.0).unwrap(), 0.005);
    assert!((layer_threshold_scale(0.01, 3.0, 12.0).unwrap() - 0.0025).abs() < 1e-18);
    assert!(layer_threshold_scale(0.01, 3.0, 0.0).is_err());
}

#[test]
fn prune_extremes() {
    let w = random_matrix(6, 4, 3);
    let q = random_orthonormal(6, 4);
    let b = basis(q[..2].to_vec(), vec![2.0, 1.0]);
    let none = spectral_prune(&w, &b, 1e-300).unwrap();
    assert_eq!(none.sparsity, 0.0);
    assert_eq!(none.weights, w);
    let r = project_onto_subspace(&w, &b).unwrap();
    let all = spectral_prune(&w, &b, r.max_abs() * 1.01).unwrap();
    assert_eq!(all.sparsity, 1.0);
    assert_eq!(all.weights.max_abs(), 0.0);
    assert!(spectral_prune(&w, &b, -1.0).is_err());
}

#[test]
fn prune_at_median_matches_explicit_reconstruction() {
    let w = random_matrix(6, 4, 13);
    let q = random_orthonormal(6, 14);
    let b = basis(q[..2].to_vec(), vec![2.0, 1.0]);
    // explicit reconstruction oracle
    let mut recon = [0.0; 24];
    for r in 0..6 {
        for c in 0..4 {
            for e in &b.vectors {
                let coeff: f64 = (0..6).map(|m| e[m] * w[(m, c)]).sum();
                recon[r * 4 + c] += e[r] * coeff;
            }
        }
    }
    let mut mags: Vec<f64> = recon.iter().map(|x| x.abs()).collect();
    mags.sort_by(f64::total_cmp);
    let tau = 0.5 * (mags[11] + mags[12]);
    let out = spectral_prune(&w, &b, tau).unwrap();
    let expected: Vec<bool> = recon.iter().map(|x| x.abs() >= tau).collect();
    assert_eq!(out.mask, expected);
    assert!((out.sparsity - 0.5).abs() < 1e-12);
}

#[test]
fn reconstruction_veto_examples() {
    let w = random_matrix(3, 3, 1);
    assert!(reconstruction_error_ok(&w, &w, &[0.0]));
    let mut changed = w.clone();
    changed[(0, 0)] += 1e-3;
    assert!(!reconstruction_error_ok(&w, &changed, &[0.0]));
    let direct = 1e-6;
    assert!(reconstruction_error_ok(
        &w,
        &changed,
        &[direct / 0.05 + 1e-12]
    ));
    assert!(!reconstruction_error_ok(
        &w,
        &changed,
        &[direct / 0.05 - 1e-9]
    ));
}

proptest! {
    #[test]
    fn interval_is_bounded_and_monotone(v1 in 0.0f64..1e4, v2 in 0.0f64..1e4, alpha in 0.0f64..2.0, p0 in 1usize..500) {
        let ctrl = IntervalController::new(p0, alpha).unwrap();
        let (lo, hi) = if v1 <= v2 { (v1, v2) } else { (v2, v1) };
        let (p_lo, p_hi) = (ctrl.interval_for_variance(lo), ctrl.interval_for_variance(hi));
        prop_assert!(p_hi <= p_lo);
        prop_assert!((1..=p0).contains(&p_lo) && (1..=p0).contains(&p_hi));
    }

    #[test]
    fn threshold_never_increases(tau0 in 1e-4f64..1.0, beta in 0.0f64..5.0, horizon in 1usize..2000) {
        let s = PruneSchedule::new(tau0, beta, horizon).unwrap();
        let mut last = f64::INFINITY;
        for t in (0..=horizon).step_by((horizon / 50).max(1)) {
            let tau = s.threshold(t).unwrap();
            prop_assert!(tau > 0.0 && tau <= last);
            last = tau;
        }
    }

    #[test]
    fn pruning_never_grows_the_norm(seed in 0u64..10_000, tau in 0.0f64..1.0, k in 1usize..6) {
        let w = random_matrix(6, 5, seed);
        let q = random_orthonormal(6, seed + 1);
        let b = basis(q[..k].to_vec(), vec![1.0; k]);
        let out = spectral_prune(&w, &b, tau).unwrap();
        prop_assert!(out.weights.frobenius_norm() <= w.frobenius_norm());
    }
}
