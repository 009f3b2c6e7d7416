//! End-to-end behaviour of the structure learner on small problems.

use cape::discovery::{augmented_lagrangian_fit, CausalGraph, DiscoveryConfig};
use cape::numerics::{DenseMatrix, SeededRng};
use cape::synthgen::{assign_weights, gen_ba_dag, simulate_sem, SemOptions};

fn chain_data(seed: u64, n: usize) -> DenseMatrix {
    let mut rng = SeededRng::new(seed);
    let mut x = DenseMatrix::zeros(n, 2);
    for i in 0..n {
        let x0 = rng.normal();
        x[(i, 0)] = x0;
        x[(i, 1)] = 2.0 * x0 + rng.normal();
    }
    x
}

/// OLS slopes in both directions; the residual variance is smaller for the
/// causal direction once both are rescaled, which is what makes it
/// identifiable under equal-variance noise.
fn ols_residual_variances(x: &DenseMatrix) -> (f64, f64) {
    let n = x.rows() as f64;
    let (a, b) = (x.column(0), x.column(1));
    let cov = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(p, q)| p * q).sum::<f64>() / n;
    let (vaa, vbb, vab) = (cov(&a, &a), cov(&b, &b), cov(&a, &b));
    (vbb - vab * vab / vaa, vaa - vab * vab / vbb)
}

#[test]
fn two_feature_chain_is_oriented() {
    let x = chain_data(11, 5000);
    let (forward, backward) = ols_residual_variances(&x);
    // oracle: x0 -> x1 leaves unit-variance noise, the reverse fit does not
    assert!((forward - 1.0).abs() < 0.1 && backward < 0.3, "{forward} {backward}");
    let cfg = DiscoveryConfig { outer_iterations: 10, inner_epochs: 20, ..Default::default() };
    let fit = augmented_lagrangian_fit(&x, &cfg, 3).unwrap();
    let a = fit.model.adjacency();
    assert!(a[(0, 1)].abs() > 0.2, "{a:?}");
    assert!(a[(1, 0)].abs() < 0.2, "{a:?}");
    let g = CausalGraph::from_weighted(&a, 0.2).unwrap();
    assert_eq!(g.edges().len(), 1);
}

fn replica(seed: u64, n: usize) -> DenseMatrix {
    let dag = gen_ba_dag(10, 2, &mut SeededRng::derive(seed, 10)).unwrap();
    let dag = assign_weights(&dag, 0.5, 2.0, &mut SeededRng::derive(seed, 11)).unwrap();
    simulate_sem(&dag, n, &SemOptions::default(), &mut SeededRng::derive(seed, 12)).unwrap()
}

#[test]
fn low_rank_loss_tracks_full_rank() {
    let x = replica(2, 1000);
    let base = DiscoveryConfig { outer_iterations: 3, inner_epochs: 5, ..Default::default() };
    let full = augmented_lagrangian_fit(&x, &base, 5).unwrap();
    let low = augmented_lagrangian_fit(&x, &DiscoveryConfig { rank: Some(40), ..base }, 5).unwrap();
    assert_eq!(full.report.loss_curve.len(), low.report.loss_curve.len());
    for (f, l) in full.report.loss_curve.iter().zip(&low.report.loss_curve) {
        assert!((f - l).abs() <= 0.05 * f.abs(), "full {f} vs low-rank {l}");
    }
}

#[test]
fn fit_is_deterministic() {
    let x = replica(4, 300);
    let cfg = DiscoveryConfig { outer_iterations: 2, inner_epochs: 2, ..Default::default() };
    let a = augmented_lagrangian_fit(&x, &cfg, 9).unwrap();
    let b = augmented_lagrangian_fit(&x, &cfg, 9).unwrap();
    assert_eq!(a.model.adjacency(), b.model.adjacency());
    assert_eq!(a.report, b.report);
}

/// Literal form of the "h never rises between outer iterations in 90% of
/// runs" invariant. The specified update (one inner solve per outer step,
/// ρ raised afterwards) starts from A ≈ 0 where h ≈ 0, so h must first grow
/// while edges are learned; every replica run observed rises for the first
/// several outer steps.
#[test]
#[ignore = "contradicts the specified single-solve update from a near-zero start; see README"]
fn h_is_monotone_across_outer_iterations() {
    let mut monotone = 0;
    for seed in 0..10 {
        let x = replica(seed, 500);
        let cfg = DiscoveryConfig { outer_iterations: 10, inner_epochs: 10, ..Default::default() };
        let fit = augmented_lagrangian_fit(&x, &cfg, seed).unwrap();
        assert!(fit.report.h_history.iter().all(|&h| h >= 0.0));
        monotone += usize::from(fit.report.h_history.windows(2).all(|w| w[1] <= w[0]));
    }
    assert!(monotone >= 9, "h monotone in {monotone}/10 runs");
}
