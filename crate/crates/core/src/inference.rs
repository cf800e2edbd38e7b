//! Monte-Carlo dropout: `T` stochastic passes with one Bernoulli mask per
//! pass shared by every evaluated point, reduced to per-point mean and
//! variance.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{check_finite_rows, DropoutMask, Network, Workspace};
use crate::par::Execution;
use crate::rng::{derive_seed, labels, stream_rng};

/// Default number of stochastic passes.
pub const DEFAULT_PASSES: usize = 64;

/// `T × n` stochastic outputs: row `t` is pass `t`, column `j` is point `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    values: Matrix,
    point_ids: Vec<usize>,
    mask_seed: u64,
}

impl SampleMatrix {
    /// Wrap precomputed outputs. Column `j` is labelled `point_ids[j]`.
    pub fn from_values(values: Matrix, point_ids: Vec<usize>, mask_seed: u64) -> Result<Self> {
        if values.rows() < 2 {
            return Err(Error::usage("at least two passes are needed"));
        }
        if values.cols() != point_ids.len() {
            return Err(Error::usage("one point id per column required"));
        }
        if values.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericInput("sample matrix contains non-finite outputs".into()));
        }
        Ok(SampleMatrix {
            values,
            point_ids,
            mask_seed,
        })
    }

    pub fn passes(&self) -> usize {
        self.values.rows()
    }

    pub fn points(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn point_ids(&self) -> &[usize] {
        &self.point_ids
    }

    pub fn mask_seed(&self) -> u64 {
        self.mask_seed
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.column(j)
    }

    /// Mean-centered copies of the requested columns, one per row of the
    /// result (`cols.len() × T`).
    pub fn centered_columns(&self, cols: &[usize]) -> Matrix {
        let t = self.passes();
        let mut out = Matrix::zeros(cols.len(), t);
        for (r, &c) in cols.iter().enumerate() {
            let row = out.row_mut(r);
            for (i, v) in row.iter_mut().enumerate() {
                *v = self.values[(i, c)];
            }
            let mean = row.iter().sum::<f64>() / t as f64;
            row.iter_mut().for_each(|v| *v -= mean);
        }
        out
    }

    /// Debug dump: header of point ids, one row per pass.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.point_ids.iter().map(|id| id.to_string()))?;
        for t in 0..self.passes() {
            w.write_record(self.values.row(t).iter().map(|v| format!("{v:e}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// The mask used for pass `t` of a sampling call seeded with `seed`.
pub fn pass_mask(net: &Network, drop_rate: f64, seed: u64, t: usize) -> DropoutMask {
    let mut rng = stream_rng(derive_seed(seed, labels::MASKS), t as u64);
    DropoutMask::sample(&net.hidden_widths(), drop_rate, &mut rng)
}

pub fn sample_passes(
    net: &Network,
    points: &Matrix,
    passes: usize,
    drop_rate: f64,
    seed: u64,
) -> Result<SampleMatrix> {
    sample_passes_with(net, points, passes, drop_rate, seed, Execution::default())
}

/// Evaluate every row of `points` under `passes` dropout masks. Pass `t`
/// draws its mask from the stream `(seed, t)`, so the result does not
/// depend on `exec`.
pub fn sample_passes_with(
    net: &Network,
    points: &Matrix,
    passes: usize,
    drop_rate: f64,
    seed: u64,
    exec: Execution,
) -> Result<SampleMatrix> {
    if passes < 2 {
        return Err(Error::usage(format!(
            "{passes} passes requested; sample covariance needs at least 2"
        )));
    }
    if !(0.0..1.0).contains(&drop_rate) {
        return Err(Error::usage(format!("dropout rate {drop_rate} outside [0, 1)")));
    }
    if points.cols() != net.input_dim() {
        return Err(Error::usage("point width does not match network input"));
    }
    check_finite_rows(points)?;
    let n = points.rows();
    let mut values = Matrix::zeros(passes, n);
    if n > 0 {
        exec.for_each_chunk(values.as_mut_slice(), n, |t, row| {
            let mask = pass_mask(net, drop_rate, seed, t);
            let mut ws = Workspace::new(net);
            ws.set_mask(Some(&mask), drop_rate);
            for (j, out) in row.iter_mut().enumerate() {
                *out = net.forward_ws(points.row(j), &mut ws);
            }
        });
    }
    SampleMatrix::from_values(values, (0..n).collect(), seed)
}

/// Column means `(1/T) Σ_t y_t`.
pub fn mc_mean(s: &SampleMatrix) -> Vec<f64> {
    let t = s.passes() as f64;
    let mut acc = vec![0.0; s.points()];
    for r in 0..s.passes() {
        for (a, v) in acc.iter_mut().zip(s.values.row(r)) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= t);
    acc
}

/// Unbiased column variances `(1/(T-1)) Σ_t (y_t - ȳ)²`.
///
/// Values are shifted by the first pass before centering, so identical passes
/// give exactly zero.
pub fn mc_variance(s: &SampleMatrix) -> Vec<f64> {
    let n = s.points();
    let t = s.passes() as f64;
    let first = s.values.row(0);
    let mut shift = vec![0.0; n];
    for r in 0..s.passes() {
        for ((a, v), f) in shift.iter_mut().zip(s.values.row(r)).zip(first) {
            *a += v - f;
        }
    }
    shift.iter_mut().for_each(|a| *a /= t);
    let mut acc = vec![0.0; n];
    for r in 0..s.passes() {
        for (((a, v), f), m) in acc.iter_mut().zip(s.values.row(r)).zip(first).zip(&shift) {
            let d = (v - f) - m;
            *a += d * d;
        }
    }
    let denom = (s.passes() - 1) as f64;
    acc.iter_mut().for_each(|a| *a /= denom);
    acc
}

/// Write mean and variance per point as CSV (`id,mean,variance`).
pub fn write_moments_csv<W: Write>(s: &SampleMatrix, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "mean", "variance"])?;
    for ((id, m), v) in s.point_ids().iter().zip(mc_mean(s)).zip(mc_variance(s)) {
        w.write_record([id.to_string(), m.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
