use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, labels, seeded_rng};

/// Train / test / validation / pool shares.
pub const DEFAULT_FRACTIONS: [f64; 4] = [0.10, 0.05, 0.05, 0.80];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub val: Vec<usize>,
    pub pool: Vec<usize>,
}

/// Seeded shuffle of `0..n`, then contiguous blocks for train, test and
/// val with boundaries at `round(cumulative fraction · n)`; the remaining
/// rows are the pool. Every block is within one row of `fraction · n`.
pub fn split(n: usize, fractions: [f64; 4], seed: u64) -> Result<Splits> {
    if fractions.iter().any(|f| !(*f >= 0.0)) {
        return Err(Error::usage("split fractions must be non-negative"));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::usage(format!("split fractions sum to {total}, not 1")));
    }
    let boundary = |c: f64| ((c * n as f64).round() as usize).min(n);
    let b1 = boundary(fractions[0]);
    let b2 = boundary(fractions[0] + fractions[1]).max(b1);
    let b3 = boundary(fractions[0] + fractions[1] + fractions[2]).max(b2);
    let (n_train, n_test, n_val, n_pool) = (b1, b2 - b1, b3 - b2, n - b3);
    if [n_train, n_test, n_val, n_pool].contains(&0) {
        return Err(Error::usage(format!(
            "empty split for n = {n}: sizes ({n_train}, {n_test}, {n_val}, {n_pool})"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeded_rng(derive_seed(seed, labels::SPLIT)));
    let pool = idx.split_off(n_train + n_test + n_val);
    let val = idx.split_off(n_train + n_test);
    let test = idx.split_off(n_train);
    Ok(Splits {
        train: idx,
        test,
        val,
        pool,
    })
}
