//! Pool-based active learning for regression with MC-dropout networks.
//!
//! A dropout network is trained on the labelled data ([`nn`]); its stochastic
//! outputs over pool and anchor points ([`inference`]) define an empirical
//! covariance function, and the posterior variance of the matching Gaussian
//! process ([`gp`]) ranks pool points for annotation ([`acquisition`]).
//! [`harness`] runs full experiments and computes performance profiles.

pub mod acquisition;
pub mod error;
pub mod gp;
pub mod harness;
pub mod inference;
pub mod linalg;
pub mod nn;
pub mod par;
pub mod rng;

pub use acquisition::{
    acquire, select_mcdue, select_mstep_nngp, select_nngp, select_random, AcquisitionRequest,
    AcquisitionResult, SelectionMode, Strategy,
};
pub use error::{Error, Result};
pub use gp::{build_gp_state, empirical_covariance, CovEstimate, GPState, Regularization};
pub use inference::{mc_mean, mc_variance, sample_passes, SampleMatrix};
pub use linalg::Matrix;
pub use nn::{
    init_network, loss_and_gradient, lr_at_epoch, train, LayerSpec, Network, TrainConfig,
    TrainReport,
};
pub use par::Execution;
