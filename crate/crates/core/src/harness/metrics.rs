use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub mae: f64,
    pub max_error: f64,
}

impl Metrics {
    pub fn scaled(self, factor: f64) -> Metrics {
        Metrics {
            rmse: self.rmse * factor,
            mae: self.mae * factor,
            max_error: self.max_error * factor,
        }
    }
}

pub fn metrics(predictions: &[f64], truths: &[f64]) -> Result<Metrics> {
    if predictions.len() != truths.len() {
        return Err(Error::usage(format!(
            "{} predictions for {} targets",
            predictions.len(),
            truths.len()
        )));
    }
    if truths.is_empty() {
        return Err(Error::usage("metrics need at least one pair"));
    }
    let n = truths.len() as f64;
    let mut sse = 0.0;
    let mut sae = 0.0;
    let mut max = 0.0f64;
    for (p, t) in predictions.iter().zip(truths) {
        let e = (p - t).abs();
        sse += e * e;
        sae += e;
        max = max.max(e);
    }
    Ok(Metrics {
        rmse: (sse / n).sqrt(),
        mae: sae / n,
        max_error: max,
    })
}
