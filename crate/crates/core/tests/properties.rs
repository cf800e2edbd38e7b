mod common;

use common::{random_matrix, random_network, reference_stop, rng};
use nngp_al::harness::dolan_more::{breakpoint_grid, dolan_more, performance_ratios};
use nngp_al::harness::metrics::metrics;
use nngp_al::harness::split::split;
use nngp_al::inference::sample_passes;
use nngp_al::nn::run_schedule;
use nngp_al::{lr_at_epoch, Matrix, TrainConfig};
use proptest::prelude::*;

proptest! {
    #[test]
    fn splits_are_disjoint_and_cover(n in 20usize..2000, seed in any::<u64>(),
                                     a in 1u32..10, b in 1u32..10, c in 1u32..10, d in 1u32..10) {
        let total = (a + b + c + d) as f64;
        let fr = [a as f64 / total, b as f64 / total, c as f64 / total, d as f64 / total];
        if let Ok(s) = split(n, fr, seed) {
            let mut all: Vec<usize> = s.train.iter().chain(&s.test).chain(&s.val).chain(&s.pool).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            for (part, f) in [&s.train, &s.test, &s.val, &s.pool].iter().zip(fr) {
                prop_assert!((part.len() as f64 - f * n as f64).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn profiles_are_monotone_and_bounded(seed in any::<u64>(), p in 1usize..8, a in 2usize..5) {
        let mut r = rng(seed);
        let errors = Matrix::from_fn(p, a, |_, _| rand::Rng::random_range(&mut r, 0.1..10.0));
        let ratios = performance_ratios(&errors).unwrap();
        let grid = breakpoint_grid(&ratios);
        let t = dolan_more(&errors, &grid).unwrap();
        for alg in 0..a {
            for k in 1..grid.len() {
                prop_assert!(t.rho[(k, alg)] >= t.rho[(k - 1, alg)]);
            }
            prop_assert_eq!(t.rho[(grid.len() - 1, alg)], 1.0);
        }
        for prob in 0..p {
            let row = ratios.row(prob);
            prop_assert!(row.iter().all(|&v| v >= 1.0));
            prop_assert!(row.contains(&1.0));
        }
    }

    #[test]
    fn metrics_scale_linearly(seed in any::<u64>(), scale in 0.01f64..100.0) {
        let mut r = rng(seed);
        let preds: Vec<f64> = (0..20).map(|_| rand::Rng::random_range(&mut r, -3.0..3.0)).collect();
        let truths: Vec<f64> = (0..20).map(|_| rand::Rng::random_range(&mut r, -3.0..3.0)).collect();
        let m = metrics(&preds, &truths).unwrap();
        let sp: Vec<f64> = preds.iter().map(|v| v * scale).collect();
        let st: Vec<f64> = truths.iter().map(|v| v * scale).collect();
        let ms = metrics(&sp, &st).unwrap();
        let s = m.scaled(scale);
        prop_assert!((ms.rmse - s.rmse).abs() <= 1e-12 * s.rmse.max(1.0));
        prop_assert!((ms.mae - s.mae).abs() <= 1e-12 * s.mae.max(1.0));
        prop_assert!((ms.max_error - s.max_error).abs() <= 1e-12 * s.max_error.max(1.0));
    }

    #[test]
    fn learning_rate_is_monotone_and_floored(epoch in 0usize..10_000_000) {
        let cfg = TrainConfig::default();
        let lr = lr_at_epoch(&cfg, epoch);
        prop_assert!(lr >= cfg.lr_floor && lr <= cfg.lr_initial);
        prop_assert!(lr_at_epoch(&cfg, epoch + 50_000) <= lr);
    }

    #[test]
    fn shared_masks_give_identical_columns_for_duplicate_points(seed in any::<u64>()) {
        let mut r = rng(seed);
        let net = random_network(&mut r);
        let pts = random_matrix(&mut r, 4, net.input_dim());
        let dup = Matrix::from_fn(5, pts.cols(), |i, j| pts[(if i == 4 { 1 } else { i }, j)]);
        let s = sample_passes(&net, &dup, 16, 0.3, seed).unwrap();
        prop_assert_eq!(s.column(1), s.column(4));
    }

    #[test]
    fn schedule_replays_reference(seed in any::<u64>(), mandatory in 0usize..50, step in 1usize..10,
                                  extra in 0usize..200, warnings_max in 0usize..4) {
        let mut r = rng(seed);
        let cfg = TrainConfig {
            epochs_mandatory: mandatory,
            epochs_max: mandatory + extra,
            es_check_step: step,
            warnings_max,
            ..TrainConfig::default()
        };
        let vals: Vec<f64> = (0..64).map(|_| rand::Rng::random_range(&mut r, 0.9..1.1)).collect();
        let mut k = 0;
        let out = run_schedule(&cfg, |_| Ok(0.0), || { let v = vals[k % vals.len()]; k += 1; v }).unwrap();
        let (epochs, early, checks) = reference_stop(&cfg, &vals);
        prop_assert_eq!(out.epochs_run, epochs);
        prop_assert_eq!(out.stop_reason == nngp_al::nn::StopReason::EarlyStopped, early);
        prop_assert_eq!(out.trace.len(), checks);
    }
}
