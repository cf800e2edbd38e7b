//! Pool selection strategies: random, MC-dropout variance (MCDUE),
//! GP posterior variance (NNGP), and M-step NNGP which conditions the GP on
//! each sub-batch before choosing the next one.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{build_gp_state_with, GPState, Regularization};
use crate::inference::{mc_variance, sample_passes_with, SampleMatrix, DEFAULT_PASSES};
use crate::linalg::Matrix;
use crate::nn::Network;
use crate::par::Execution;
use crate::rng::{derive_seed, labels, seeded_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Random,
    Mcdue,
    Nngp,
    MstepNngp,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Random,
        Strategy::Mcdue,
        Strategy::Nngp,
        Strategy::MstepNngp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Mcdue => "mcdue",
            Strategy::Nngp => "nngp",
            Strategy::MstepNngp => "mstep-nngp",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::usage(format!("unknown strategy '{s}'")))
    }
}

/// How scores become a selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMode {
    /// Top scores, ties broken by lowest pool index.
    #[default]
    Greedy,
    /// Scores normalized to sum 1, sampled without replacement.
    Proportional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionRequest {
    pub strategy: Strategy,
    pub batch_size: usize,
    pub passes: usize,
    pub dropout: f64,
    pub regularization: Regularization,
    pub anchor_size: usize,
    pub m_steps: usize,
    pub seed: u64,
    pub mode: SelectionMode,
    /// Rank-1 updates between M-step rounds; `false` rebuilds the Cholesky.
    pub fast_path: bool,
    #[serde(skip)]
    pub exec: Execution,
}

impl AcquisitionRequest {
    pub fn new(strategy: Strategy, batch_size: usize, seed: u64) -> Self {
        AcquisitionRequest {
            strategy,
            batch_size,
            passes: DEFAULT_PASSES,
            dropout: 0.1,
            regularization: Regularization::default(),
            anchor_size: 500,
            m_steps: 1,
            seed,
            mode: SelectionMode::Greedy,
            fast_path: true,
            exec: Execution::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::usage("batch size must be at least 1"));
        }
        if self.strategy == Strategy::MstepNngp {
            check_divides(self.batch_size, self.m_steps)?;
        }
        Ok(())
    }
}

fn check_divides(batch: usize, m: usize) -> Result<()> {
    if m == 0 || !batch.is_multiple_of(m) {
        return Err(Error::usage(format!(
            "M = {m} must be positive and divide the batch size {batch}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundDiagnostics {
    pub round: usize,
    pub selected: Vec<usize>,
    /// Scores, in this round's state, of the points picked in the previous round.
    pub previous_round_scores: Vec<f64>,
    pub clamp_count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub clamp_count: usize,
    pub lambda: Option<f64>,
    pub shift: Option<f64>,
    pub degenerate_skips: usize,
    pub rounds: Vec<RoundDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionResult {
    pub strategy: Strategy,
    pub seed: u64,
    /// Pool positions in selection order.
    pub selected: Vec<usize>,
    /// Acquisition score of each selected point when it was chosen.
    pub scores: Vec<f64>,
    pub pool_exhausted: bool,
    pub diagnostics: Diagnostics,
    #[serde(skip)]
    pub elapsed: Duration,
}

/// Indices sorted by (score descending, index ascending).
pub fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Choose `k` of the `eligible` positions by `mode`.
fn choose(scores: &[f64], eligible: &[bool], k: usize, mode: SelectionMode, seed: u64) -> Vec<usize> {
    match mode {
        SelectionMode::Greedy => rank_descending(scores)
            .into_iter()
            .filter(|&j| eligible[j])
            .take(k)
            .collect(),
        SelectionMode::Proportional => {
            let mut rng = seeded_rng(seed);
            let mut weights: Vec<f64> = scores
                .iter()
                .zip(eligible)
                .map(|(&s, &e)| if e { s.max(0.0) } else { 0.0 })
                .collect();
            let mut alive = eligible.to_vec();
            let mut out = Vec::with_capacity(k);
            for _ in 0..k {
                let total: f64 = weights.iter().sum();
                let remaining = alive.iter().filter(|&&a| a).count();
                if remaining == 0 {
                    break;
                }
                let pick = if total > 0.0 {
                    let mut u = rng.random::<f64>() * total;
                    let mut chosen = None;
                    for (j, &w) in weights.iter().enumerate() {
                        if w > 0.0 {
                            chosen = Some(j);
                            if u < w {
                                break;
                            }
                            u -= w;
                        }
                    }
                    chosen.expect("positive total weight")
                } else {
                    let r = rng.random_range(0..remaining);
                    alive
                        .iter()
                        .enumerate()
                        .filter(|(_, &a)| a)
                        .nth(r)
                        .map(|(j, _)| j)
                        .unwrap()
                };
                out.push(pick);
                alive[pick] = false;
                weights[pick] = 0.0;
            }
            out
        }
    }
}

fn result(strategy: Strategy, seed: u64, selected: Vec<usize>, scores: &[f64]) -> AcquisitionResult {
    let picked = selected.iter().map(|&j| scores[j]).collect();
    AcquisitionResult {
        strategy,
        seed,
        selected,
        scores: picked,
        pool_exhausted: false,
        diagnostics: Diagnostics::default(),
        elapsed: Duration::ZERO,
    }
}

fn check_batch(n_select: usize, pool: usize) -> Result<()> {
    if n_select == 0 {
        return Err(Error::usage("batch size must be at least 1"));
    }
    if n_select > pool {
        return Err(Error::usage(format!(
            "cannot select {n_select} points from a pool of {pool}"
        )));
    }
    Ok(())
}

/// Uniform sample of `n_select` distinct pool positions.
pub fn select_random(pool_size: usize, n_select: usize, seed: u64) -> Result<AcquisitionResult> {
    check_batch(n_select, pool_size)?;
    let mut rng = seeded_rng(derive_seed(seed, labels::ACQUIRE));
    let selected = rand::seq::index::sample(&mut rng, pool_size, n_select).into_vec();
    let zeros = vec![0.0; pool_size];
    Ok(result(Strategy::Random, seed, selected, &zeros))
}

/// Rank by MC-dropout variance over `passes` stochastic passes.
pub fn select_mcdue(
    net: &Network,
    pool: &Matrix,
    n_select: usize,
    passes: usize,
    drop_rate: f64,
    seed: u64,
) -> Result<AcquisitionResult> {
    let mut req = AcquisitionRequest::new(Strategy::Mcdue, n_select, seed);
    req.passes = passes;
    req.dropout = drop_rate;
    mcdue_with(net, pool, &req)
}

fn mcdue_with(net: &Network, pool: &Matrix, req: &AcquisitionRequest) -> Result<AcquisitionResult> {
    check_batch(req.batch_size, pool.rows())?;
    let samples = sample_passes_with(net, pool, req.passes, req.dropout, req.seed, req.exec)?;
    let scores = mc_variance(&samples);
    let eligible = vec![true; scores.len()];
    let selected = choose(
        &scores,
        &eligible,
        req.batch_size,
        req.mode,
        derive_seed(req.seed, labels::ACQUIRE),
    );
    Ok(result(Strategy::Mcdue, req.seed, selected, &scores))
}

/// Stack pool rows then anchor rows and sample them under shared masks.
/// Pool points are columns `0..n`, anchors `n..n+N`.
pub fn joint_samples(
    net: &Network,
    pool: &Matrix,
    anchors: &Matrix,
    passes: usize,
    drop_rate: f64,
    seed: u64,
    exec: Execution,
) -> Result<SampleMatrix> {
    if anchors.rows() == 0 {
        return Err(Error::usage("anchor set is empty"));
    }
    if anchors.cols() != pool.cols() {
        return Err(Error::usage("pool and anchors differ in dimension"));
    }
    let mut data = Vec::with_capacity((pool.rows() + anchors.rows()) * pool.cols());
    data.extend_from_slice(pool.as_slice());
    data.extend_from_slice(anchors.as_slice());
    let joint = Matrix::from_vec(pool.rows() + anchors.rows(), pool.cols(), data);
    sample_passes_with(net, &joint, passes, drop_rate, seed, exec)
}

#[allow(clippy::too_many_arguments)]
pub fn select_nngp(
    net: &Network,
    pool: &Matrix,
    anchors: &Matrix,
    n_select: usize,
    passes: usize,
    drop_rate: f64,
    reg: Regularization,
    seed: u64,
) -> Result<AcquisitionResult> {
    let mut req = AcquisitionRequest::new(Strategy::Nngp, n_select, seed);
    req.passes = passes;
    req.dropout = drop_rate;
    req.regularization = reg;
    nngp_with(net, pool, anchors, &req)
}

fn nngp_with(
    net: &Network,
    pool: &Matrix,
    anchors: &Matrix,
    req: &AcquisitionRequest,
) -> Result<AcquisitionResult> {
    check_batch(req.batch_size, pool.rows())?;
    let samples = joint_samples(net, pool, anchors, req.passes, req.dropout, req.seed, req.exec)?;
    let n = pool.rows();
    let pool_cols: Vec<usize> = (0..n).collect();
    let anchor_cols: Vec<usize> = (n..n + anchors.rows()).collect();
    let mut res = nngp_from_samples(
        &samples,
        &anchor_cols,
        &pool_cols,
        req.batch_size,
        req.regularization,
        req.mode,
        req.seed,
        req.exec,
    )?;
    res.seed = req.seed;
    Ok(res)
}

/// Single-shot NNGP ranking on precomputed samples. Selected entries are
/// positions in `pool_cols`.
#[allow(clippy::too_many_arguments)]
pub fn nngp_from_samples(
    samples: &SampleMatrix,
    anchor_cols: &[usize],
    pool_cols: &[usize],
    n_select: usize,
    reg: Regularization,
    mode: SelectionMode,
    seed: u64,
    exec: Execution,
) -> Result<AcquisitionResult> {
    check_batch(n_select, pool_cols.len())?;
    let state = build_gp_state_with(samples, anchor_cols, pool_cols, reg, exec)?;
    Ok(nngp_from_state(&state, n_select, mode, seed))
}

pub fn nngp_from_state(state: &GPState, n_select: usize, mode: SelectionMode, seed: u64) -> AcquisitionResult {
    let scores = state.posterior_var();
    let eligible = vec![true; scores.len()];
    let n_select = n_select.min(scores.len());
    let selected = choose(&scores, &eligible, n_select, mode, derive_seed(seed, labels::ACQUIRE));
    let mut res = result(Strategy::Nngp, seed, selected, &scores);
    res.diagnostics.clamp_count = state.clamp_count();
    res.diagnostics.lambda = Some(state.cov().lambda);
    res.diagnostics.shift = Some(state.shift());
    res
}

#[allow(clippy::too_many_arguments)]
pub fn select_mstep_nngp(
    net: &Network,
    pool: &Matrix,
    anchors: &Matrix,
    n_select: usize,
    m_steps: usize,
    passes: usize,
    drop_rate: f64,
    reg: Regularization,
    seed: u64,
) -> Result<AcquisitionResult> {
    let mut req = AcquisitionRequest::new(Strategy::MstepNngp, n_select, seed);
    req.m_steps = m_steps;
    req.passes = passes;
    req.dropout = drop_rate;
    req.regularization = reg;
    mstep_with(net, pool, anchors, &req)
}

fn mstep_with(
    net: &Network,
    pool: &Matrix,
    anchors: &Matrix,
    req: &AcquisitionRequest,
) -> Result<AcquisitionResult> {
    check_divides(req.batch_size, req.m_steps)?;
    check_batch(req.batch_size, pool.rows())?;
    let samples = joint_samples(net, pool, anchors, req.passes, req.dropout, req.seed, req.exec)?;
    let n = pool.rows();
    let pool_cols: Vec<usize> = (0..n).collect();
    let anchor_cols: Vec<usize> = (n..n + anchors.rows()).collect();
    let rounds = round_sizes(req.batch_size, req.m_steps);
    mstep_from_samples(&samples, &anchor_cols, &pool_cols, &rounds, req)
}

/// Split `total` into `m` rounds whose sizes differ by at most one.
pub fn round_sizes(total: usize, m: usize) -> Vec<usize> {
    let m = m.max(1).min(total.max(1));
    (0..m).map(|r| total / m + usize::from(r < total % m)).collect()
}

/// M-step NNGP on precomputed samples: each round picks its share of points
/// by current posterior variance, then conditions on them, either by rank-1
/// updates (`req.fast_path`) or by rebuilding with the picked columns moved
/// into the anchor set.
pub fn mstep_from_samples(
    samples: &SampleMatrix,
    anchor_cols: &[usize],
    pool_cols: &[usize],
    rounds: &[usize],
    req: &AcquisitionRequest,
) -> Result<AcquisitionResult> {
    let total: usize = rounds.iter().sum();
    check_batch(total, pool_cols.len())?;
    let state = build_gp_state_with(samples, anchor_cols, pool_cols, req.regularization, req.exec)?;
    let rebuild = |picked: &[usize]| -> Result<Vec<f64>> {
        let mut anchors = anchor_cols.to_vec();
        anchors.extend(picked.iter().map(|&j| pool_cols[j]));
        let mut taken = vec![false; pool_cols.len()];
        picked.iter().for_each(|&j| taken[j] = true);
        let remaining: Vec<usize> = (0..pool_cols.len()).filter(|&j| !taken[j]).collect();
        let cols: Vec<usize> = remaining.iter().map(|&j| pool_cols[j]).collect();
        let st = build_gp_state_with(samples, &anchors, &cols, req.regularization, req.exec)?;
        let mut scores = vec![0.0; pool_cols.len()];
        for (&j, v) in remaining.iter().zip(st.posterior_var()) {
            scores[j] = v;
        }
        Ok(scores)
    };
    let rebuild_ref: Option<&dyn Fn(&[usize]) -> Result<Vec<f64>>> =
        if req.fast_path { None } else { Some(&rebuild) };
    mstep_core(state, rounds, req, rebuild_ref)
}

/// Fast-path M-step directly on a GP state.
pub fn mstep_from_state(state: GPState, rounds: &[usize], req: &AcquisitionRequest) -> Result<AcquisitionResult> {
    let total: usize = rounds.iter().sum();
    check_batch(total, state.n_pool())?;
    mstep_core(state, rounds, req, None)
}

fn mstep_core(
    mut state: GPState,
    rounds: &[usize],
    req: &AcquisitionRequest,
    rebuild: Option<&dyn Fn(&[usize]) -> Result<Vec<f64>>>,
) -> Result<AcquisitionResult> {
    let n = state.n_pool();
    let mut diagnostics = Diagnostics {
        clamp_count: state.clamp_count(),
        lambda: Some(state.cov().lambda),
        shift: Some(state.shift()),
        ..Diagnostics::default()
    };
    let mut eligible = vec![true; n];
    let mut scores = state.posterior_var();
    let mut selected = Vec::new();
    let mut picked_scores = Vec::new();
    let mut previous: Vec<usize> = Vec::new();
    for (r, &k) in rounds.iter().enumerate() {
        let available = eligible.iter().filter(|&&e| e).count();
        let k_eff = k.min(available);
        let base = derive_seed(req.seed, labels::ACQUIRE);
        let round_seed = if r == 0 { base } else { derive_seed(base, r as u64) };
        let chosen = choose(&scores, &eligible, k_eff, req.mode, round_seed);
        diagnostics.rounds.push(RoundDiagnostics {
            round: r,
            selected: chosen.clone(),
            previous_round_scores: previous.iter().map(|&j| scores[j]).collect(),
            clamp_count: match rebuild {
                None => state.clamp_count(),
                Some(_) => 0,
            },
        });
        for &j in &chosen {
            eligible[j] = false;
            selected.push(j);
            picked_scores.push(scores[j]);
        }
        if r + 1 < rounds.len() {
            match rebuild {
                None => {
                    for &j in &chosen {
                        match state.absorb(j, req.exec) {
                            Ok(()) => {}
                            Err(Error::DegeneratePivot { .. }) => diagnostics.degenerate_skips += 1,
                            Err(e) => return Err(e),
                        }
                    }
                    scores = state.posterior_var();
                }
                Some(f) => scores = f(&selected)?,
            }
        }
        previous = chosen;
    }
    let total: usize = rounds.iter().sum();
    Ok(AcquisitionResult {
        strategy: Strategy::MstepNngp,
        seed: req.seed,
        pool_exhausted: selected.len() < total,
        selected,
        scores: picked_scores,
        diagnostics,
        elapsed: Duration::ZERO,
    })
}

/// Uniformly random anchor subset of `min(n_train, anchor_size)` training rows.
pub fn choose_anchors(n_train: usize, anchor_size: usize, seed: u64) -> Vec<usize> {
    let k = anchor_size.min(n_train);
    let mut rng = seeded_rng(derive_seed(seed, labels::ANCHORS));
    let mut idx = rand::seq::index::sample(&mut rng, n_train, k).into_vec();
    idx.sort_unstable();
    idx
}

/// Dispatch on `req.strategy`. A pool smaller than the batch yields every
/// remaining point with `pool_exhausted` set.
pub fn acquire(
    net: &Network,
    pool: &Matrix,
    anchors: &Matrix,
    req: &AcquisitionRequest,
) -> Result<AcquisitionResult> {
    req.validate()?;
    let start = Instant::now();
    if pool.rows() == 0 {
        return Err(Error::usage("pool is empty"));
    }
    let exhausted = req.batch_size > pool.rows();
    let mut req_eff = req.clone();
    req_eff.batch_size = req.batch_size.min(pool.rows());
    let mut res = match req.strategy {
        Strategy::Random => select_random(pool.rows(), req_eff.batch_size, req.seed)?,
        Strategy::Mcdue => mcdue_with(net, pool, &req_eff)?,
        Strategy::Nngp => nngp_with(net, pool, anchors, &req_eff)?,
        Strategy::MstepNngp => {
            if exhausted {
                let samples =
                    joint_samples(net, pool, anchors, req.passes, req.dropout, req.seed, req.exec)?;
                let n = pool.rows();
                let pool_cols: Vec<usize> = (0..n).collect();
                let anchor_cols: Vec<usize> = (n..n + anchors.rows()).collect();
                let rounds = round_sizes(req_eff.batch_size, req.m_steps);
                mstep_from_samples(&samples, &anchor_cols, &pool_cols, &rounds, &req_eff)?
            } else {
                mstep_with(net, pool, anchors, &req_eff)?
            }
        }
    };
    res.pool_exhausted |= exhausted;
    res.elapsed = start.elapsed();
    Ok(res)
}
