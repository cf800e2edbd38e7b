//! Shared fixtures and independent reference computations for the
//! integration and acceptance tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use nngp_al::inference::SampleMatrix;
use nngp_al::nn::{init_network, LayerSpec};
use nngp_al::{loss_and_gradient, Matrix, Network, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Small MLP with 1-2 hidden layers, random widths, slope and dropout rate.
pub fn random_network(rng: &mut impl Rng) -> Network {
    let input = rng.random_range(1..=4);
    let depth = rng.random_range(1..=2);
    let slope = rng.random_range(0.01..0.3);
    let mut specs = Vec::new();
    let mut prev = input;
    for _ in 0..depth {
        let w = rng.random_range(2..=6);
        specs.push(LayerSpec::leaky(prev, w, slope));
        prev = w;
    }
    specs.push(LayerSpec::identity(prev, 1));
    let rate = rng.random_range(0.0..0.5);
    let mut net = init_network(&specs, rate, rng.random()).unwrap();
    // Non-zero biases so every parameter carries gradient signal.
    let mut p = net.params();
    for v in p.iter_mut() {
        *v += rng.random_range(-0.1..0.1);
    }
    net.set_params(&p);
    net
}

/// Largest relative error between the analytic gradient and central
/// differences with step `h`, relative to `max(|analytic|, |numeric|, floor)`.
pub fn gradient_max_rel_error(
    net: &Network,
    x: &Matrix,
    y: &[f64],
    mask_seed: u64,
    l2: f64,
    h: f64,
    floor: f64,
) -> f64 {
    let (_, grad) = loss_and_gradient(net, x, y, mask_seed, l2).unwrap();
    let analytic = grad.flatten();
    let base = net.params();
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let mut p = base.clone();
        p[i] = base[i] + h;
        probe.set_params(&p);
        let plus = loss_and_gradient(&probe, x, y, mask_seed, l2).unwrap().0;
        p[i] = base[i] - h;
        probe.set_params(&p);
        let minus = loss_and_gradient(&probe, x, y, mask_seed, l2).unwrap().0;
        let numeric = (plus - minus) / (2.0 * h);
        let denom = a.abs().max(numeric.abs()).max(floor);
        worst = worst.max((a - numeric).abs() / denom);
    }
    worst
}

/// `T × cols` sample matrix of independent standard normals.
pub fn random_samples(rng: &mut impl Rng, passes: usize, cols: usize) -> SampleMatrix {
    let values = Matrix::from_fn(passes, cols, |_, _| {
        let u: f64 = rng.random_range(-1.0..1.0);
        let v: f64 = rng.random_range(-1.0..1.0);
        u + 0.5 * v * v
    });
    SampleMatrix::from_values(values, (0..cols).collect(), 0).unwrap()
}

pub fn to_dmatrix(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

/// Empirical covariance (T − 1 denominator) of all columns, via nalgebra.
pub fn dense_covariance(samples: &SampleMatrix) -> DMatrix<f64> {
    let y = to_dmatrix(samples.values());
    let t = y.nrows() as f64;
    let mean = y.row_mean();
    let mut c = y.clone();
    for mut row in c.row_iter_mut() {
        row -= &mean;
    }
    c.transpose() * c / (t - 1.0)
}

/// `k(x,x) − kᵀ (K + λI)⁻¹ k` for each pool index with an explicit inverse.
pub fn dense_posterior(joint: &DMatrix<f64>, anchors: &[usize], pool: &[usize], lambda: f64) -> Vec<f64> {
    let n = anchors.len();
    let k = DMatrix::from_fn(n, n, |i, j| joint[(anchors[i], anchors[j])] + if i == j { lambda } else { 0.0 });
    let inv = k.try_inverse().expect("anchor block invertible");
    pool.iter()
        .map(|&p| {
            let kx = nalgebra::DVector::from_fn(n, |i, _| joint[(anchors[i], p)]);
            joint[(p, p)] - (kx.transpose() * &inv * &kx)[(0, 0)]
        })
        .collect()
}

/// Full-rank joint covariance `Φ Φᵀ / r` over `m` points.
pub fn exact_joint(rng: &mut impl Rng, m: usize, rank: usize) -> Matrix {
    let phi = random_matrix(rng, m, rank);
    let mut k = phi.matmul(&phi.transpose());
    for v in k.as_mut_slice() {
        *v /= rank as f64;
    }
    k
}

/// Reference replay of the early-stopping rules: returns
/// `(epochs_run, stopped_early, checks_consumed)` for validation values
/// delivered in order at each check.
pub fn reference_stop(cfg: &TrainConfig, vals: &[f64]) -> (usize, bool, usize) {
    let mandatory = cfg.epochs_mandatory.min(cfg.epochs_max);
    let mut prev = 1e10;
    let mut warnings = 0;
    let mut check = 0;
    let mut e = mandatory;
    loop {
        let next = e + cfg.es_check_step;
        if next > cfg.epochs_max {
            return (cfg.epochs_max, false, check);
        }
        e = next;
        let v = vals[check % vals.len()];
        check += 1;
        if v > prev * (1.0 + cfg.es_window_frac) {
            warnings += 1;
            if warnings > cfg.warnings_max {
                return (e, true, check);
            }
        } else {
            warnings = 0;
            prev = v;
        }
    }
}

fn fit(rng: &mut impl Rng, x: &Matrix, y: &[f64], hidden: &[usize], epochs: usize, seed: u64) -> Network {
    let specs = nngp_al::nn::mlp_specs(x.cols(), hidden, 0.1);
    let mut net = init_network(&specs, 0.1, seed).unwrap();
    let n_val = (x.rows() / 5).max(1);
    let idx: Vec<usize> = (0..x.rows()).collect();
    let (val, tr) = idx.split_at(n_val);
    let cfg = TrainConfig {
        lr_initial: 0.05,
        lr_step_epochs: 100,
        lr_decay: 0.7,
        lr_floor: 1e-3,
        batch_size: 20,
        epochs_mandatory: epochs,
        epochs_max: epochs,
        seed: rng.random(),
        ..TrainConfig::default()
    };
    let sel = |ids: &[usize]| (x.select_rows(ids), ids.iter().map(|&i| y[i]).collect::<Vec<_>>());
    let (tx, ty) = sel(tr);
    let (vx, vy) = sel(val);
    nngp_al::train(&mut net, &tx, &ty, &vx, &vy, &cfg).unwrap();
    net
}

/// Diversity fixture: a net trained on the unit square with its upper-right
/// corner left empty, and a pool of uniform points plus a tight cluster of
/// 30 points inside that corner. Returns `(net, pool, anchors)`.
pub fn cluster_fixture(seed: u64) -> (Network, Matrix, Matrix) {
    let mut r = rng(seed);
    let f = |u: f64, v: f64| (3.0 * u).sin() + (3.0 * v).cos();
    let mut pts = Vec::new();
    while pts.len() < 100 {
        let (u, v): (f64, f64) = (r.random(), r.random());
        if !(u > 0.65 && v > 0.65) {
            pts.push([u, v]);
        }
    }
    let x = Matrix::from_rows(&pts);
    let y: Vec<f64> = pts.iter().map(|p| f(p[0], p[1])).collect();
    let net = fit(&mut r, &x, &y, &[32, 32], 300, seed);
    let mut pool = Vec::new();
    for _ in 0..200 {
        pool.push([r.random::<f64>(), r.random::<f64>()]);
    }
    for _ in 0..30 {
        let du: f64 = r.random_range(-0.02..0.02);
        let dv: f64 = r.random_range(-0.02..0.02);
        pool.push([0.85 + du, 0.85 + dv]);
    }
    (net, Matrix::from_rows(&pool), x)
}

pub fn min_pairwise_distance(points: &Matrix, selected: &[usize]) -> f64 {
    let mut best = f64::INFINITY;
    for (a, &i) in selected.iter().enumerate() {
        for &j in &selected[a + 1..] {
            let d: f64 = points.row(i).iter().zip(points.row(j)).map(|(p, q)| (p - q).powi(2)).sum();
            best = best.min(d.sqrt());
        }
    }
    best
}

/// Correlation fixture: a net trained on a smooth surface over [-1, 1]².
pub fn smooth_fixture(seed: u64) -> Network {
    let mut r = rng(seed);
    let pts: Vec<[f64; 2]> = (0..150)
        .map(|_| [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)])
        .collect();
    let x = Matrix::from_rows(&pts);
    let y: Vec<f64> = pts.iter().map(|p| (2.0 * p[0]).sin() + p[1] * p[1]).collect();
    fit(&mut r, &x, &y, &[32, 32], 300, seed)
}

pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}
