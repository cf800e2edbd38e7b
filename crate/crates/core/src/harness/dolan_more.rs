//! Performance profiles: `r[p][a] = q[p][a] / min_x q[p][x]` and
//! `ρ_a(τ) = #{p : r[p][a] ≤ τ} / n_p`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DolanMoreTable {
    /// `problems × algorithms` error measures.
    pub errors: Matrix,
    pub ratios: Matrix,
    pub tau: Vec<f64>,
    /// `tau.len() × algorithms`.
    pub rho: Matrix,
}

pub fn performance_ratios(errors: &Matrix) -> Result<Matrix> {
    if errors.rows() == 0 {
        return Err(Error::usage("need at least one problem"));
    }
    if errors.cols() < 2 {
        return Err(Error::usage("need at least two algorithms"));
    }
    if let Some(bad) = errors.as_slice().iter().find(|&&q| !(q > 0.0) || !q.is_finite()) {
        return Err(Error::usage(format!("error measure {bad} is not positive and finite")));
    }
    let mut ratios = errors.clone();
    for p in 0..errors.rows() {
        let best = errors.row(p).iter().cloned().fold(f64::INFINITY, f64::min);
        ratios.row_mut(p).iter_mut().for_each(|r| *r /= best);
    }
    Ok(ratios)
}

/// Every distinct ratio, ascending; the curves only change at these points.
pub fn breakpoint_grid(ratios: &Matrix) -> Vec<f64> {
    let mut grid: Vec<f64> = ratios.as_slice().to_vec();
    grid.push(1.0);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

pub fn dolan_more(errors: &Matrix, tau_grid: &[f64]) -> Result<DolanMoreTable> {
    let ratios = performance_ratios(errors)?;
    let n_p = errors.rows() as f64;
    let rho = Matrix::from_fn(tau_grid.len(), errors.cols(), |t, a| {
        (0..errors.rows()).filter(|&p| ratios[(p, a)] <= tau_grid[t]).count() as f64 / n_p
    });
    Ok(DolanMoreTable {
        errors: errors.clone(),
        ratios,
        tau: tau_grid.to_vec(),
        rho,
    })
}

impl DolanMoreTable {
    /// CSV with a `tau` column and one ρ column per algorithm.
    pub fn to_csv(&self, names: &[String]) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["tau".to_string()];
        header.extend(names.iter().cloned());
        w.write_record(&header)?;
        for (t, tau) in self.tau.iter().enumerate() {
            let mut rec = vec![tau.to_string()];
            rec.extend(self.rho.row(t).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}
