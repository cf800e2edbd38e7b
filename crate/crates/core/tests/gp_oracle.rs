mod common;

use approx::assert_relative_eq;
use common::{dense_covariance, dense_posterior, exact_joint, random_samples, rng, to_dmatrix};
use nngp_al::gp::GPState;
use nngp_al::{build_gp_state, Matrix, Regularization};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn posterior_variance_matches_dense_inverse() {
    let mut r = rng(5);
    for _ in 0..50 {
        let n_anchor = r.random_range(1..=20);
        let n_pool = r.random_range(1..=50);
        let samples = random_samples(&mut r, n_anchor + n_pool + 20, n_anchor + n_pool);
        let anchors: Vec<usize> = (n_pool..n_pool + n_anchor).collect();
        let pool: Vec<usize> = (0..n_pool).collect();
        let state = build_gp_state(&samples, &anchors, &pool, Regularization::default()).unwrap();
        assert_eq!(state.clamp_count(), 0);
        let joint = dense_covariance(&samples);
        let reference = dense_posterior(&joint, &anchors, &pool, state.shift());
        for (got, want) in state.posterior_var_raw().iter().zip(&reference) {
            assert_relative_eq!(*got, *want, max_relative = 1e-9);
        }
    }
}

#[test]
fn cholesky_reconstructs_regularized_anchor_block() {
    let mut r = rng(6);
    let samples = random_samples(&mut r, 40, 15);
    let anchors: Vec<usize> = (0..10).collect();
    let pool: Vec<usize> = (10..15).collect();
    let state = build_gp_state(&samples, &anchors, &pool, Regularization::Relative(1e-3)).unwrap();
    let l = to_dmatrix(state.chol());
    let mut k = to_dmatrix(&state.cov().k_anchor);
    for i in 0..k.nrows() {
        k[(i, i)] += state.shift();
    }
    let err = (&l * l.transpose() - &k).norm() / k.norm();
    assert!(err < 1e-8, "{err:e}");
}

/// Absorb `picks` one at a time and compare with a state built with those
/// points moved into the anchor set.
fn check_updates_against_rebuild(joint: &Matrix, n_anchor: usize, picks: &[usize]) {
    let m = joint.rows();
    let anchors: Vec<usize> = (0..n_anchor).collect();
    let pool: Vec<usize> = (n_anchor..m).collect();
    let reg = Regularization::Absolute(0.0);
    let mut state = GPState::from_joint_covariance(joint, &anchors, &pool, reg).unwrap();
    for &p in picks {
        state = state.rank_one_update(p).unwrap();
    }
    let mut batch_anchors = anchors.clone();
    batch_anchors.extend(picks.iter().map(|&p| pool[p]));
    let rest: Vec<usize> = (0..pool.len()).filter(|j| !picks.contains(j)).collect();
    let rest_ids: Vec<usize> = rest.iter().map(|&j| pool[j]).collect();
    let batch = GPState::from_joint_covariance(joint, &batch_anchors, &rest_ids, reg).unwrap();
    for (k, &j) in rest.iter().enumerate() {
        let got = state.posterior_var_raw()[j];
        let want = batch.posterior_var_raw()[k];
        assert!((got - want).abs() < 1e-6, "point {j}: {got} vs {want}");
    }
    for &p in picks {
        assert_eq!(state.posterior_var_raw()[p], 0.0);
    }
}

#[test]
fn rank_one_updates_equal_batch_recompute() {
    let mut r = rng(7);
    for _ in 0..30 {
        let n_anchor = r.random_range(1..=8);
        let n_pool = r.random_range(10..=25);
        let joint = exact_joint(&mut r, n_anchor + n_pool, n_anchor + n_pool + 5);
        let k = r.random_range(1..=10);
        let picks = rand::seq::index::sample(&mut r, n_pool, k).into_vec();
        check_updates_against_rebuild(&joint, n_anchor, &picks);
    }
}

#[test]
fn three_updates_on_six_points() {
    let mut r = rng(8);
    let joint = exact_joint(&mut r, 8, 8);
    check_updates_against_rebuild(&joint, 2, &[4, 0, 2]);
}

#[test]
fn duplicated_anchor_has_zero_posterior_variance() {
    let mut r = rng(9);
    let base = exact_joint(&mut r, 6, 6);
    // Point 6 duplicates anchor 0.
    let idx = [0, 1, 2, 3, 4, 5, 0];
    let joint = Matrix::from_fn(7, 7, |i, j| base[(idx[i], idx[j])]);
    let state = GPState::from_joint_covariance(&joint, &[0, 1, 2], &[3, 4, 5, 6], Regularization::Absolute(0.0)).unwrap();
    assert!(state.posterior_var_raw()[3].abs() < 1e-8);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn posterior_is_bounded_by_prior_and_symmetric(seed in any::<u64>(), n_anchor in 1usize..8, n_pool in 2usize..12) {
        let mut r = rng(seed);
        let samples = random_samples(&mut r, 32, n_anchor + n_pool);
        let anchors: Vec<usize> = (0..n_anchor).collect();
        let pool: Vec<usize> = (n_anchor..n_anchor + n_pool).collect();
        let state = build_gp_state(&samples, &anchors, &pool, Regularization::default()).unwrap();
        for (post, prior) in state.posterior_var().iter().zip(&state.cov().v_pool) {
            prop_assert!(*post <= prior + 1e-12);
            prop_assert!(*post >= 0.0);
        }
        for a in 0..n_pool {
            for b in 0..n_pool {
                prop_assert_eq!(state.posterior_covariance(a, b).unwrap(), state.posterior_covariance(b, a).unwrap());
            }
        }
    }

    #[test]
    fn updates_never_increase_variance(seed in any::<u64>(), picks in 1usize..6) {
        let mut r = rng(seed);
        let joint = exact_joint(&mut r, 18, 20);
        let anchors: Vec<usize> = (0..4).collect();
        let pool: Vec<usize> = (4..18).collect();
        let mut state = GPState::from_joint_covariance(&joint, &anchors, &pool, Regularization::Absolute(0.0)).unwrap();
        for p in 0..picks {
            let before = state.posterior_var_raw().to_vec();
            state = state.rank_one_update(p).unwrap();
            for (b, a) in before.iter().zip(state.posterior_var_raw()) {
                prop_assert!(*a <= b + 1e-12);
            }
        }
    }
}
