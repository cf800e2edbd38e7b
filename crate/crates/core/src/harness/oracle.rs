//! Annotation sources: a labelled pool, or an analytic test function with
//! Gaussian noise frozen per point id.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, labels, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SyntheticFunction {
    #[serde(rename = "branin-2d")]
    Branin2d,
    #[serde(rename = "friedman1-5d")]
    Friedman1,
    #[serde(rename = "multimodal-2d")]
    Multimodal2d,
}

impl SyntheticFunction {
    pub const ALL: [SyntheticFunction; 3] = [
        SyntheticFunction::Branin2d,
        SyntheticFunction::Friedman1,
        SyntheticFunction::Multimodal2d,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SyntheticFunction::Branin2d => "branin-2d",
            SyntheticFunction::Friedman1 => "friedman1-5d",
            SyntheticFunction::Multimodal2d => "multimodal-2d",
        }
    }

    pub fn dim(self) -> usize {
        self.bounds().len()
    }

    /// Box domain, one `(low, high)` per input.
    pub fn bounds(self) -> &'static [(f64, f64)] {
        match self {
            SyntheticFunction::Branin2d => &[(-5.0, 10.0), (0.0, 15.0)],
            SyntheticFunction::Friedman1 => &[(0.0, 1.0); 5],
            SyntheticFunction::Multimodal2d => &[(0.0, 1.0), (0.0, 1.0)],
        }
    }

    pub fn eval(self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        match self {
            SyntheticFunction::Branin2d => {
                let (x1, x2) = (x[0], x[1]);
                let b = 5.1 / (4.0 * PI * PI);
                let c = 5.0 / PI;
                let t = 1.0 / (8.0 * PI);
                (x2 - b * x1 * x1 + c * x1 - 6.0).powi(2) + 10.0 * (1.0 - t) * x1.cos() + 10.0
            }
            SyntheticFunction::Friedman1 => {
                10.0 * (PI * x[0] * x[1]).sin()
                    + 20.0 * (x[2] - 0.5).powi(2)
                    + 10.0 * x[3]
                    + 5.0 * x[4]
            }
            SyntheticFunction::Multimodal2d => {
                // Smooth oscillating background plus two narrow peaks.
                let (u, v) = (x[0], x[1]);
                let bump = |cu: f64, cv: f64, w: f64| {
                    (-((u - cu).powi(2) + (v - cv).powi(2)) / (2.0 * w * w)).exp()
                };
                (2.0 * PI * u).sin() * (2.0 * PI * v).cos() + 3.0 * bump(0.8, 0.2, 0.05)
                    + 2.0 * bump(0.2, 0.75, 0.07)
            }
        }
    }
}

impl fmt::Display for SyntheticFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SyntheticFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SyntheticFunction::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| {
                Error::usage(format!(
                    "unknown synthetic function '{s}' (expected one of branin-2d, friedman1-5d, multimodal-2d)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Oracle {
    /// Targets known in advance, revealed on request.
    LabeledPool { targets: Vec<f64> },
    Synthetic {
        function: SyntheticFunction,
        noise_sigma: f64,
        seed: u64,
    },
}

pub fn make_synthetic_oracle(name: &str, noise_sigma: f64, seed: u64) -> Result<Oracle> {
    let function = name.parse()?;
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return Err(Error::usage(format!("noise sigma {noise_sigma} must be >= 0")));
    }
    Ok(Oracle::Synthetic {
        function,
        noise_sigma,
        seed,
    })
}

impl Oracle {
    /// Label point `id` located at `x`. The noise draw depends only on
    /// `(seed, id)`, so re-annotating a point returns the same value.
    pub fn annotate(&self, id: usize, x: &[f64]) -> Result<f64> {
        match self {
            Oracle::LabeledPool { targets } => targets
                .get(id)
                .copied()
                .ok_or_else(|| Error::usage(format!("no label for point {id}"))),
            Oracle::Synthetic {
                function,
                noise_sigma,
                seed,
            } => {
                if x.len() != function.dim() {
                    return Err(Error::usage(format!(
                        "{function} expects {} inputs, got {}",
                        function.dim(),
                        x.len()
                    )));
                }
                let clean = function.eval(x);
                if *noise_sigma == 0.0 {
                    return Ok(clean);
                }
                let mut rng = stream_rng(derive_seed(*seed, labels::NOISE), id as u64);
                let z: f64 = rng.sample(StandardNormal);
                Ok(clean + noise_sigma * z)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn noiseless_is_repeatable() {
        let o = make_synthetic_oracle("branin-2d", 0.0, 1).unwrap();
        let x = [1.0, 2.0];
        assert_eq!(o.annotate(3, &x).unwrap(), o.annotate(3, &x).unwrap());
        assert_eq!(o.annotate(3, &x).unwrap(), o.annotate(4, &x).unwrap());
    }

    #[test]
    fn friedman_at_origin() {
        // 10 sin(0) + 20 (0 - 0.5)^2 + 0 + 0 = 5
        let o = make_synthetic_oracle("friedman1-5d", 0.0, 0).unwrap();
        assert_relative_eq!(o.annotate(0, &[0.0; 5]).unwrap(), 5.0, epsilon = 1e-15);
    }

    #[test]
    fn branin_global_minimum() {
        let f = SyntheticFunction::Branin2d;
        for x in [[-PI, 12.275], [PI, 2.275], [9.42478, 2.475]] {
            assert_relative_eq!(f.eval(&x), 0.397887, epsilon = 1e-5);
        }
    }

    #[test]
    fn noise_is_seeded_and_unbiased() {
        let sigma = 0.5;
        let a = make_synthetic_oracle("multimodal-2d", sigma, 1).unwrap();
        let b = make_synthetic_oracle("multimodal-2d", sigma, 2).unwrap();
        let x = [0.3, 0.6];
        let f = SyntheticFunction::Multimodal2d.eval(&x);
        assert_ne!(a.annotate(0, &x).unwrap(), b.annotate(0, &x).unwrap());
        let n = 10_000;
        let mean = |o: &Oracle| (0..n).map(|i| o.annotate(i, &x).unwrap()).sum::<f64>() / n as f64;
        let (ma, mb) = (mean(&a), mean(&b));
        assert!((ma - f).abs() < 3.0 * sigma / 100.0, "{ma} vs {f}");
        assert!((mb - f).abs() < 3.0 * sigma / 100.0, "{mb} vs {f}");
        assert!((ma - mb).abs() < 3.0 * sigma / 100.0);
    }

    #[test]
    fn unknown_name_is_usage_error() {
        assert!(matches!(make_synthetic_oracle("rosenbrock", 0.0, 0), Err(Error::Usage(_))));
    }

    #[test]
    fn labeled_pool_reveals_targets() {
        let o = Oracle::LabeledPool {
            targets: vec![1.0, 2.0],
        };
        assert_eq!(o.annotate(1, &[]).unwrap(), 2.0);
        assert!(o.annotate(2, &[]).is_err());
    }
}
