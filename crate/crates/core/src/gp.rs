//! Gaussian-process view of the stochastic network output.
//!
//! The covariance function is estimated from a [`SampleMatrix`]; posterior
//! variances given a set of anchor points come from a regularized Cholesky
//! solve, and absorbing a pool point into the conditioning set is a rank-1
//! correction `σ²(x | X ∪ x') = σ²(x | X) − k²(x, x' | X) / σ²(x' | X)`.
//!
//! Internally each pool column `k̂(x_j)` is kept in whitened form
//! `w_j = L⁻¹ k̂(x_j)` with `L·Lᵀ = K̂ + λI`, so that
//! `k̂(x_a)ᵀ (K̂ + λI)⁻¹ k̂(x_b) = w_a · w_b` is exactly symmetric.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::SampleMatrix;
use crate::linalg::{cholesky_shifted, dot, solve_lower_in_place, solve_lower_transpose_in_place, Matrix};
use crate::par::Execution;

/// How the diagonal regularizer λ is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularization {
    /// λ = value.
    Absolute(f64),
    /// λ = value · mean(diag K̂).
    Relative(f64),
}

impl Default for Regularization {
    fn default() -> Self {
        Regularization::Relative(1e-3)
    }
}

impl Regularization {
    pub fn resolve(self, k_anchor: &Matrix) -> Result<f64> {
        let lambda = match self {
            Regularization::Absolute(v) => v,
            Regularization::Relative(r) => {
                let d = k_anchor.diag();
                r * d.iter().sum::<f64>() / d.len().max(1) as f64
            }
        };
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::usage(format!("regularization λ = {lambda} must be finite and >= 0")));
        }
        Ok(lambda)
    }
}

/// Number of ×10 jitter escalations tried after the initial factorization.
pub const JITTER_ESCALATIONS: usize = 3;
/// Degenerate-pivot threshold relative to the largest prior pool variance.
pub const UPDATE_EPSILON_REL: f64 = 1e-12;

/// Empirical covariance estimate between anchors and pool points.
#[derive(Debug, Clone, PartialEq)]
pub struct CovEstimate {
    /// `N × N` anchor–anchor covariance K̂.
    pub k_anchor: Matrix,
    /// `N × n` anchor–pool covariance; column `j` is k̂(x_j).
    pub k_cross: Matrix,
    /// Prior pool variances k̂(x_j, x_j).
    pub v_pool: Vec<f64>,
    /// λ actually used (before any jitter escalation).
    pub lambda: f64,
}

/// Pool–pool prior covariances, evaluated lazily.
#[derive(Debug, Clone)]
enum PoolPrior {
    /// Mean-centered pool columns (`n × T`) and `1 / (T - 1)`.
    Samples { centered: Matrix, scale: f64 },
    Dense(Matrix),
}

impl PoolPrior {
    fn cov(&self, a: usize, b: usize) -> f64 {
        match self {
            PoolPrior::Samples { centered, scale } => dot(centered.row(a), centered.row(b)) * scale,
            PoolPrior::Dense(m) => m[(a, b)],
        }
    }
}

#[derive(Debug, Clone)]
struct RankOneUpdate {
    /// `k(·, x' | X) / σ(x' | X)` over the pool.
    direction: Vec<f64>,
}

/// Posterior state of the GP approximation over a fixed pool listing.
/// Pool indices are positions `0..n` in the listing it was built with.
#[derive(Debug, Clone)]
pub struct GPState {
    cov: Arc<CovEstimate>,
    prior: Arc<PoolPrior>,
    chol: Arc<Matrix>,
    /// `n × N`; row `j` is `L⁻¹ k̂(x_j)`.
    whitened: Arc<Matrix>,
    /// Diagonal actually added to K̂ for the factorization.
    shift: f64,
    posterior_raw: Vec<f64>,
    updates: Vec<RankOneUpdate>,
    absorbed: Vec<usize>,
    epsilon_update: f64,
}

fn check_columns(s: &SampleMatrix, cols: &[usize], what: &str) -> Result<()> {
    if let Some(&bad) = cols.iter().find(|&&c| c >= s.points()) {
        return Err(Error::usage(format!(
            "{what} column {bad} out of range for {} points",
            s.points()
        )));
    }
    Ok(())
}

/// Unbiased sample covariance between columns `a_cols` of `a` and
/// `b_cols` of `b` (`|A| × |B|`). Both matrices must come from the same
/// passes.
pub fn empirical_covariance(
    a: &SampleMatrix,
    a_cols: &[usize],
    b: &SampleMatrix,
    b_cols: &[usize],
) -> Result<Matrix> {
    if a.passes() != b.passes() {
        return Err(Error::usage(format!(
            "pass counts differ: {} vs {}",
            a.passes(),
            b.passes()
        )));
    }
    check_columns(a, a_cols, "left")?;
    check_columns(b, b_cols, "right")?;
    let ca = a.centered_columns(a_cols);
    let cb = b.centered_columns(b_cols);
    let scale = 1.0 / (a.passes() - 1) as f64;
    Ok(Matrix::from_fn(a_cols.len(), b_cols.len(), |i, j| {
        dot(ca.row(i), cb.row(j)) * scale
    }))
}

pub fn build_gp_state(
    samples: &SampleMatrix,
    anchor_cols: &[usize],
    pool_cols: &[usize],
    reg: Regularization,
) -> Result<GPState> {
    build_gp_state_with(samples, anchor_cols, pool_cols, reg, Execution::default())
}

/// Estimate K̂, k̂(x_j), v_j from `samples` and compute posterior variances
/// for every pool column.
pub fn build_gp_state_with(
    samples: &SampleMatrix,
    anchor_cols: &[usize],
    pool_cols: &[usize],
    reg: Regularization,
    exec: Execution,
) -> Result<GPState> {
    if anchor_cols.is_empty() {
        return Err(Error::usage("anchor set is empty"));
    }
    check_columns(samples, anchor_cols, "anchor")?;
    check_columns(samples, pool_cols, "pool")?;
    let mut seen = vec![false; samples.points()];
    for &c in anchor_cols {
        seen[c] = true;
    }
    if let Some(&c) = pool_cols.iter().find(|&&c| seen[c]) {
        return Err(Error::usage(format!("column {c} is both anchor and pool")));
    }

    let scale = 1.0 / (samples.passes() - 1) as f64;
    let anchors = samples.centered_columns(anchor_cols);
    let pool = samples.centered_columns(pool_cols);
    let n_anchor = anchor_cols.len();

    let mut k_anchor = Matrix::zeros(n_anchor, n_anchor);
    for i in 0..n_anchor {
        for j in 0..=i {
            let v = dot(anchors.row(i), anchors.row(j)) * scale;
            k_anchor[(i, j)] = v;
            k_anchor[(j, i)] = v;
        }
    }
    let cross_rows = exec.map_range(pool_cols.len(), |j| {
        (0..n_anchor)
            .map(|i| dot(anchors.row(i), pool.row(j)) * scale)
            .collect::<Vec<f64>>()
    });
    let k_cross = Matrix::from_fn(n_anchor, pool_cols.len(), |i, j| cross_rows[j][i]);
    let v_pool = (0..pool_cols.len())
        .map(|j| dot(pool.row(j), pool.row(j)) * scale)
        .collect();
    GPState::from_parts(
        k_anchor,
        k_cross,
        v_pool,
        PoolPrior::Samples {
            centered: pool,
            scale,
        },
        reg,
        exec,
    )
}

impl GPState {
    /// Build from a full joint covariance matrix over anchors and pool
    /// (indices into `joint`). Used with known, exactly consistent kernels.
    pub fn from_joint_covariance(
        joint: &Matrix,
        anchor_idx: &[usize],
        pool_idx: &[usize],
        reg: Regularization,
    ) -> Result<GPState> {
        if joint.rows() != joint.cols() {
            return Err(Error::usage("joint covariance must be square"));
        }
        if anchor_idx.is_empty() {
            return Err(Error::usage("anchor set is empty"));
        }
        let n = joint.rows();
        if anchor_idx.iter().chain(pool_idx).any(|&i| i >= n) {
            return Err(Error::usage("index out of range for joint covariance"));
        }
        if anchor_idx.iter().any(|a| pool_idx.contains(a)) {
            return Err(Error::usage("anchor and pool indices overlap"));
        }
        let k_anchor = Matrix::from_fn(anchor_idx.len(), anchor_idx.len(), |i, j| {
            joint[(anchor_idx[i], anchor_idx[j])]
        });
        let k_cross = Matrix::from_fn(anchor_idx.len(), pool_idx.len(), |i, j| {
            joint[(anchor_idx[i], pool_idx[j])]
        });
        let pool_block =
            Matrix::from_fn(pool_idx.len(), pool_idx.len(), |i, j| joint[(pool_idx[i], pool_idx[j])]);
        let v_pool = pool_block.diag();
        GPState::from_parts(
            k_anchor,
            k_cross,
            v_pool,
            PoolPrior::Dense(pool_block),
            reg,
            Execution::Sequential,
        )
    }

    fn from_parts(
        k_anchor: Matrix,
        k_cross: Matrix,
        v_pool: Vec<f64>,
        prior: PoolPrior,
        reg: Regularization,
        exec: Execution,
    ) -> Result<GPState> {
        let lambda = reg.resolve(&k_anchor)?;
        let (chol, shift) = factor_with_jitter(&k_anchor, lambda)?;
        let n_anchor = k_anchor.rows();
        let n_pool = k_cross.cols();
        let rows = exec.map_range(n_pool, |j| {
            let mut w: Vec<f64> = (0..n_anchor).map(|i| k_cross[(i, j)]).collect();
            solve_lower_in_place(&chol, &mut w);
            w
        });
        let mut whitened = Matrix::zeros(n_pool, n_anchor);
        for (j, w) in rows.into_iter().enumerate() {
            whitened.row_mut(j).copy_from_slice(&w);
        }
        let posterior_raw = (0..n_pool)
            .map(|j| {
                let w = whitened.row(j);
                v_pool[j] - dot(w, w)
            })
            .collect();
        let max_prior = v_pool.iter().cloned().fold(0.0f64, f64::max);
        Ok(GPState {
            cov: Arc::new(CovEstimate {
                k_anchor,
                k_cross,
                v_pool,
                lambda,
            }),
            prior: Arc::new(prior),
            chol: Arc::new(chol),
            whitened: Arc::new(whitened),
            shift,
            posterior_raw,
            updates: Vec::new(),
            absorbed: Vec::new(),
            epsilon_update: UPDATE_EPSILON_REL * max_prior,
        })
    }

    pub fn cov(&self) -> &CovEstimate {
        &self.cov
    }

    /// Lower-triangular factor of `K̂ + shift·I`.
    pub fn chol(&self) -> &Matrix {
        &self.chol
    }

    /// Diagonal added for the factorization: λ, or larger after jitter escalation.
    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn n_pool(&self) -> usize {
        self.posterior_raw.len()
    }

    pub fn n_anchor(&self) -> usize {
        self.cov.k_anchor.rows()
    }

    /// Posterior variances clamped at zero, the acquisition scores.
    pub fn posterior_var(&self) -> Vec<f64> {
        self.posterior_raw.iter().map(|&v| v.max(0.0)).collect()
    }

    /// Posterior variances before clamping.
    pub fn posterior_var_raw(&self) -> &[f64] {
        &self.posterior_raw
    }

    /// Number of negative pre-clamp posterior variances.
    pub fn clamp_count(&self) -> usize {
        self.posterior_raw.iter().filter(|&&v| v < 0.0).count()
    }

    /// Pool indices absorbed by rank-1 updates, in order.
    pub fn absorbed(&self) -> &[usize] {
        &self.absorbed
    }

    pub fn epsilon_update(&self) -> f64 {
        self.epsilon_update
    }

    /// Column `j` of `(K̂ + λI)⁻¹ k̂_cross`.
    pub fn solved_cross(&self, j: usize) -> Result<Vec<f64>> {
        self.check_index(j)?;
        let mut s = self.whitened.row(j).to_vec();
        solve_lower_transpose_in_place(&self.chol, &mut s);
        Ok(s)
    }

    fn check_index(&self, j: usize) -> Result<()> {
        if j >= self.n_pool() {
            return Err(Error::usage(format!(
                "pool index {j} out of range for {} pool points",
                self.n_pool()
            )));
        }
        Ok(())
    }

    #[inline]
    fn posterior_cov_unchecked(&self, a: usize, b: usize) -> f64 {
        let mut c = self.prior.cov(a, b) - dot(self.whitened.row(a), self.whitened.row(b));
        for u in &self.updates {
            c -= u.direction[a] * u.direction[b];
        }
        c
    }

    /// `k̂(x_a, x_b | X) = k̂(x_a, x_b) − k̂ᵀ(x_a) (K̂ + λI)⁻¹ k̂(x_b)`,
    /// including every absorbed point.
    pub fn posterior_covariance(&self, a: usize, b: usize) -> Result<f64> {
        self.check_index(a)?;
        self.check_index(b)?;
        Ok(self.posterior_cov_unchecked(a, b))
    }

    /// Successor state with pool point `j_new` added to the conditioning set.
    pub fn rank_one_update(&self, j_new: usize) -> Result<GPState> {
        let mut next = self.clone();
        next.absorb(j_new, Execution::Sequential)?;
        Ok(next)
    }

    /// In-place form of [`GPState::rank_one_update`].
    pub fn absorb(&mut self, j_new: usize, exec: Execution) -> Result<()> {
        self.check_index(j_new)?;
        if self.absorbed.contains(&j_new) {
            return Err(Error::usage(format!("pool index {j_new} already absorbed")));
        }
        let pivot = self.posterior_raw[j_new];
        if !(pivot > self.epsilon_update) {
            return Err(Error::DegeneratePivot {
                index: j_new,
                variance: pivot,
                threshold: self.epsilon_update,
            });
        }
        let inv_sd = 1.0 / pivot.sqrt();
        let mut direction = exec.map_range(self.n_pool(), |j| {
            self.posterior_cov_unchecked(j, j_new) * inv_sd
        });
        // Conditioned points are uncorrelated with everything; keep them exact.
        for &a in &self.absorbed {
            direction[a] = 0.0;
        }
        for (v, d) in self.posterior_raw.iter_mut().zip(&direction) {
            *v -= d * d;
        }
        self.posterior_raw[j_new] = 0.0;
        self.updates.push(RankOneUpdate { direction });
        self.absorbed.push(j_new);
        Ok(())
    }

    /// Debug dump: `k_anchor.csv`, `posterior.csv` and `updates.csv` in `dir`.
    pub fn write_debug_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("k_anchor.csv"))?;
        for i in 0..self.n_anchor() {
            w.write_record(self.cov.k_anchor.row(i).iter().map(|v| format!("{v:e}")))?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("posterior.csv"))?;
        w.write_record(["pool_index", "prior", "posterior_raw", "posterior"])?;
        for j in 0..self.n_pool() {
            let raw = self.posterior_raw[j];
            w.write_record([
                j.to_string(),
                format!("{:e}", self.cov.v_pool[j]),
                format!("{raw:e}"),
                format!("{:e}", raw.max(0.0)),
            ])?;
        }
        w.flush()?;
        let mut f = std::fs::File::create(dir.join("updates.csv"))?;
        writeln!(f, "step,pool_index")?;
        for (s, j) in self.absorbed.iter().enumerate() {
            writeln!(f, "{s},{j}")?;
        }
        Ok(())
    }
}

/// Cholesky of `K + λI`, escalating the added diagonal ×10 up to
/// [`JITTER_ESCALATIONS`] times. With λ = 0 the first escalation starts at
/// `1e-10 · mean(diag K)`.
fn factor_with_jitter(k: &Matrix, lambda: f64) -> Result<(Matrix, f64)> {
    if let Some(l) = cholesky_shifted(k, lambda) {
        return Ok((l, lambda));
    }
    let d = k.diag();
    let mean_diag = (d.iter().sum::<f64>() / d.len().max(1) as f64).abs();
    let mut shift = if lambda > 0.0 {
        lambda
    } else {
        1e-11 * mean_diag.max(f64::MIN_POSITIVE)
    };
    for _ in 0..JITTER_ESCALATIONS {
        shift *= 10.0;
        if let Some(l) = cholesky_shifted(k, shift) {
            return Ok((l, shift));
        }
    }
    Err(Error::Conditioning { jitter: shift })
}
