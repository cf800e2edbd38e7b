//! The train, evaluate, acquire, annotate loop and its JSON-lines record.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{acquire, choose_anchors, AcquisitionRequest, Diagnostics, Strategy};
use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::dataset::{load_csv, ColumnStats, CsvOptions};
use crate::harness::metrics::{metrics, Metrics};
use crate::harness::oracle::{make_synthetic_oracle, Oracle, SyntheticFunction};
use crate::harness::split::split;
use crate::linalg::Matrix;
use crate::nn::{init_network, mlp_specs, train, Network, StopReason};
use crate::par::Execution;
use crate::rng::{derive_seed, labels, stream_rng};

/// All points of one run with their roles. Ids index rows of `features`.
#[derive(Debug, Clone)]
pub struct Problem {
    pub features: Matrix,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub pool: Vec<usize>,
    /// Standardized labels of train and validation points, indexed by id.
    labels: Vec<f64>,
    /// Standardized ground truth for test points, aligned with `test`.
    pub test_truth: Vec<f64>,
    pub target_stats: ColumnStats,
    oracle: Oracle,
    /// Unstandardized inputs for analytic oracles.
    raw: Option<Matrix>,
}

impl Problem {
    pub fn from_config(cfg: &ExperimentConfig, seed: u64) -> Result<Problem> {
        if let Some(ds) = &cfg.dataset {
            let data = load_csv(
                &ds.path,
                &ds.target,
                &CsvOptions {
                    exclude: ds.exclude.clone(),
                },
            )?;
            let s = split(data.len(), ds.fractions, derive_seed(seed, labels::SPLIT))?;
            let test_truth = s.test.iter().map(|&i| data.targets[i]).collect();
            return Ok(Problem {
                features: data.features,
                train: s.train,
                val: s.val,
                test: s.test,
                pool: s.pool,
                labels: data.targets.clone(),
                test_truth,
                target_stats: data.target_stats,
                oracle: Oracle::LabeledPool {
                    targets: data.targets,
                },
                raw: None,
            });
        }
        let o = cfg
            .oracle
            .as_ref()
            .ok_or_else(|| Error::config("config has neither dataset nor oracle"))?;
        let function: SyntheticFunction = o.name.parse()?;
        let oracle = make_synthetic_oracle(&o.name, o.noise_sigma, derive_seed(seed, labels::NOISE))?;
        let bounds = function.bounds();
        let n = o.initial_train + o.val_size + o.test_size + o.pool_size;
        let mut rng = stream_rng(derive_seed(seed, labels::POINTS), 0);
        let raw = Matrix::from_fn(n, bounds.len(), |_, j| rng.random_range(bounds[j].0..bounds[j].1));
        // Uniform inputs standardized with the moments of the box.
        let features = Matrix::from_fn(n, bounds.len(), |i, j| {
            let (lo, hi) = bounds[j];
            (raw[(i, j)] - 0.5 * (lo + hi)) / ((hi - lo) / 12f64.sqrt())
        });
        let ids: Vec<usize> = (0..n).collect();
        let (train, rest) = ids.split_at(o.initial_train);
        let (val, rest) = rest.split_at(o.val_size);
        let (test, pool) = rest.split_at(o.test_size);

        let mut raw_labels = vec![0.0; n];
        for &i in train.iter().chain(val) {
            raw_labels[i] = oracle.annotate(i, raw.row(i))?;
        }
        let train_y: Vec<f64> = train.iter().map(|&i| raw_labels[i]).collect();
        let target_stats = ColumnStats::of(&train_y);
        let labels = raw_labels.iter().map(|&y| target_stats.standardize(y)).collect();
        let test_truth = test
            .iter()
            .map(|&i| target_stats.standardize(function.eval(raw.row(i))))
            .collect();
        Ok(Problem {
            features,
            train: train.to_vec(),
            val: val.to_vec(),
            test: test.to_vec(),
            pool: pool.to_vec(),
            labels,
            test_truth,
            target_stats,
            oracle,
            raw: Some(raw),
        })
    }

    /// Ask the oracle for point `id` and store its standardized label.
    pub fn annotate(&mut self, id: usize) -> Result<f64> {
        let y = match &self.raw {
            Some(raw) => self.target_stats.standardize(self.oracle.annotate(id, raw.row(id))?),
            None => self.oracle.annotate(id, &[])?,
        };
        self.labels[id] = y;
        Ok(y)
    }

    pub fn labels_of(&self, ids: &[usize]) -> Vec<f64> {
        ids.iter().map(|&i| self.labels[i]).collect()
    }

    /// Test metrics in original target units.
    pub fn evaluate(&self, net: &Network) -> Result<Metrics> {
        let preds = net.predict(&self.features.select_rows(&self.test))?;
        Ok(metrics(&preds, &self.test_truth)?.scaled(self.target_stats.error_scale()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Aborted,
    PoolExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub name: String,
    pub strategy: Strategy,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub initial_train: usize,
    pub pool_size: usize,
    pub test_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub epochs_run: usize,
    pub final_val_rmse: f64,
    pub stop_reason: StopReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionSummary {
    /// Point ids moved from the pool to the training set.
    pub selected_ids: Vec<usize>,
    pub scores: Vec<f64>,
    pub pool_exhausted: bool,
    pub diagnostics: Diagnostics,
}

/// State after training on `train_size` points. `acquisition` is the batch
/// chosen afterwards and is absent for the final entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub train_size: usize,
    pub pool_size: usize,
    pub test: Metrics,
    pub training: TrainingSummary,
    pub acquisition: Option<AcquisitionSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub status: RunStatus,
    pub iterations: usize,
    pub error: Option<String>,
    pub final_test: Option<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RecordLine {
    Header(RunHeader),
    Iteration(IterationRecord),
    Summary(RunSummary),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub header: RunHeader,
    pub iterations: Vec<IterationRecord>,
    pub summary: RunSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationTiming {
    pub iteration: usize,
    pub train_secs: f64,
    pub acquire_secs: f64,
}

impl RunRecord {
    pub fn lines(&self) -> Vec<RecordLine> {
        let mut out = vec![RecordLine::Header(self.header.clone())];
        out.extend(self.iterations.iter().cloned().map(RecordLine::Iteration));
        out.push(RecordLine::Summary(self.summary.clone()));
        out
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for line in self.lines() {
            s.push_str(&serde_json::to_string(&line)?);
            s.push('\n');
        }
        Ok(s)
    }

    pub fn from_lines(lines: Vec<RecordLine>) -> Result<RunRecord> {
        let mut it = lines.into_iter();
        let header = match it.next() {
            Some(RecordLine::Header(h)) => h,
            _ => return Err(Error::usage("run record does not start with a header")),
        };
        let mut iterations = Vec::new();
        for line in it {
            match line {
                RecordLine::Iteration(r) => iterations.push(r),
                RecordLine::Summary(summary) => {
                    return Ok(RunRecord {
                        header,
                        iterations,
                        summary,
                    })
                }
                RecordLine::Header(_) => return Err(Error::usage("duplicate run header")),
            }
        }
        Err(Error::usage("run record has no summary line (run incomplete?)"))
    }

    pub fn read(path: &Path) -> Result<RunRecord> {
        let file = File::open(path)?;
        let mut lines = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            lines.push(serde_json::from_str(&line).map_err(|e| {
                Error::usage(format!("{}:{}: {e}", path.display(), i + 1))
            })?);
        }
        RunRecord::from_lines(lines).map_err(|e| Error::usage(format!("{}: {e}", path.display())))
    }

    /// Test metrics of the last evaluated model.
    pub fn final_metrics(&self) -> Option<Metrics> {
        self.iterations.last().map(|r| r.test)
    }
}

fn train_config_for(cfg: &ExperimentConfig, seed: u64, iteration: usize, n_train: usize) -> crate::nn::TrainConfig {
    let mut tc = cfg.training.clone();
    tc.seed = derive_seed(derive_seed(seed, labels::TRAIN), iteration as u64);
    if let Some(k) = cfg.run_loop.mandatory_epochs_per_sample {
        tc.epochs_mandatory = tc.epochs_mandatory.min(k.saturating_mul(n_train));
    }
    tc
}

/// Run one `(strategy, seed)` experiment. `on_line` sees every record line
/// as soon as it is final, together with the timing of that step.
pub fn run_active_learning_with<F>(
    cfg: &ExperimentConfig,
    strategy: Strategy,
    seed: u64,
    exec: Execution,
    mut on_line: F,
) -> Result<RunRecord>
where
    F: FnMut(&RecordLine, Option<&IterationTiming>) -> Result<()>,
{
    cfg.validate()?;
    let mut problem = Problem::from_config(cfg, seed)?;
    let header = RunHeader {
        name: cfg.name.clone(),
        strategy,
        seed,
        config: cfg.clone(),
        initial_train: problem.train.len(),
        pool_size: problem.pool.len(),
        test_size: problem.test.len(),
    };
    on_line(&RecordLine::Header(header.clone()), None)?;

    let specs = mlp_specs(problem.features.cols(), &cfg.network.hidden, cfg.network.leaky_slope);
    let init_seed = derive_seed(seed, labels::INIT);
    let mut net = init_network(&specs, cfg.training.dropout_train, init_seed)?;
    let val_x = problem.features.select_rows(&problem.val);
    let val_y = problem.labels_of(&problem.val);
    let acq_base = derive_seed(seed, labels::ACQUIRE);
    let mut iterations = Vec::new();
    let mut status = RunStatus::Completed;
    let mut failure = None;

    for iteration in 0..=cfg.run_loop.n_iter {
        if iteration > 0 && !cfg.run_loop.warm_start {
            net = init_network(&specs, cfg.training.dropout_train, init_seed)?;
        }
        let started = Instant::now();
        let train_x = problem.features.select_rows(&problem.train);
        let train_y = problem.labels_of(&problem.train);
        let tc = train_config_for(cfg, seed, iteration, problem.train.len());
        let report = match train(&mut net, &train_x, &train_y, &val_x, &val_y, &tc) {
            Ok(r) => r,
            Err(e @ Error::TrainingDiverged { .. }) => {
                status = RunStatus::Aborted;
                failure = Some(format!("iteration {iteration}: {e}"));
                break;
            }
            Err(e) => return Err(e),
        };
        let test = problem.evaluate(&net)?;
        if !(test.rmse.is_finite() && test.mae.is_finite() && test.max_error.is_finite()) {
            status = RunStatus::Aborted;
            failure = Some(format!("iteration {iteration}: non-finite test metrics"));
            break;
        }
        let train_secs = started.elapsed().as_secs_f64();
        let training = TrainingSummary {
            epochs_run: report.epochs_run,
            final_val_rmse: report.final_val_rmse,
            stop_reason: report.stop_reason,
        };

        let mut record = IterationRecord {
            iteration,
            train_size: problem.train.len(),
            pool_size: problem.pool.len(),
            test,
            training,
            acquisition: None,
        };
        let mut acquire_secs = 0.0;
        let last = iteration == cfg.run_loop.n_iter || status == RunStatus::PoolExhausted;
        if !last {
            if problem.pool.is_empty() {
                status = RunStatus::PoolExhausted;
            } else {
                let started = Instant::now();
                let a = &cfg.acquisition;
                let req = AcquisitionRequest {
                    strategy,
                    batch_size: a.batch_size,
                    passes: a.passes,
                    dropout: cfg.inference_dropout(),
                    regularization: a.lambda,
                    anchor_size: a.anchor_size,
                    m_steps: a.m_steps,
                    seed: derive_seed(acq_base, iteration as u64),
                    mode: a.mode,
                    fast_path: a.fast_path,
                    exec,
                };
                let anchor_pos = choose_anchors(problem.train.len(), a.anchor_size, req.seed);
                let anchor_ids: Vec<usize> = anchor_pos.iter().map(|&p| problem.train[p]).collect();
                let anchors = problem.features.select_rows(&anchor_ids);
                let pool_x = problem.features.select_rows(&problem.pool);
                let res = acquire(&net, &pool_x, &anchors, &req)?;
                let selected_ids: Vec<usize> = res.selected.iter().map(|&p| problem.pool[p]).collect();
                for &id in &selected_ids {
                    problem.annotate(id)?;
                }
                let mut taken = vec![false; problem.pool.len()];
                for &p in &res.selected {
                    taken[p] = true;
                }
                let mut keep = taken.iter().map(|t| !t);
                problem.pool.retain(|_| keep.next().unwrap());
                problem.train.extend_from_slice(&selected_ids);
                if res.pool_exhausted {
                    // Train and evaluate once more on everything, then stop.
                    status = RunStatus::PoolExhausted;
                }
                record.acquisition = Some(AcquisitionSummary {
                    selected_ids,
                    scores: res.scores,
                    pool_exhausted: res.pool_exhausted,
                    diagnostics: res.diagnostics,
                });
                acquire_secs = started.elapsed().as_secs_f64();
            }
        }
        let timing = IterationTiming {
            iteration,
            train_secs,
            acquire_secs,
        };
        let line = RecordLine::Iteration(record);
        on_line(&line, Some(&timing))?;
        if let RecordLine::Iteration(r) = line {
            iterations.push(r);
        }
        if iterations.last().is_some_and(|r| r.acquisition.is_none()) {
            break;
        }
    }
    let summary = RunSummary {
        status,
        iterations: iterations.len().saturating_sub(1),
        error: failure,
        final_test: iterations.last().map(|r| r.test),
    };
    on_line(&RecordLine::Summary(summary.clone()), None)?;
    Ok(RunRecord {
        header,
        iterations,
        summary,
    })
}

pub fn run_active_learning(cfg: &ExperimentConfig, strategy: Strategy, seed: u64) -> Result<RunRecord> {
    run_active_learning_with(cfg, strategy, seed, Execution::default(), |_, _| Ok(()))
}

pub fn run_path(root: &Path, strategy: Strategy, seed: u64) -> PathBuf {
    root.join("runs").join(strategy.name()).join(format!("{seed}.jsonl"))
}

fn timing_path(run: &Path) -> PathBuf {
    run.with_extension("timing.jsonl")
}

/// Append one line with a single write so readers never see a partial line.
fn append_line(file: &mut File, line: &str) -> Result<()> {
    let mut buf = String::with_capacity(line.len() + 1);
    buf.push_str(line);
    buf.push('\n');
    file.write_all(buf.as_bytes())?;
    file.flush()?;
    Ok(())
}

/// Run and stream the record to `<root>/runs/<strategy>/<seed>.jsonl`, with
/// wall-clock timings in a `.timing.jsonl` sidecar. Existing records are
/// only replaced when `force` is set.
pub fn run_to_dir(
    cfg: &ExperimentConfig,
    strategy: Strategy,
    seed: u64,
    root: &Path,
    force: bool,
    exec: Execution,
) -> Result<RunRecord> {
    let path = run_path(root, strategy, seed);
    if path.exists() && !force {
        return Err(Error::usage(format!(
            "{} exists; pass --force to overwrite",
            path.display()
        )));
    }
    fs::create_dir_all(path.parent().expect("run path has a parent"))?;
    let open = |p: &Path| {
        OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(p)
    };
    let mut file = open(&path)?;
    let mut timing = open(&timing_path(&path))?;
    run_active_learning_with(cfg, strategy, seed, exec, |line, t| {
        append_line(&mut file, &serde_json::to_string(line)?)?;
        if let Some(t) = t {
            append_line(&mut timing, &serde_json::to_string(t)?)?;
        }
        Ok(())
    })
}

/// Every complete run record below `<root>/runs`, sorted by strategy and seed.
pub fn load_runs(root: &Path) -> Result<Vec<RunRecord>> {
    let runs = root.join("runs");
    if !runs.is_dir() {
        return Err(Error::usage(format!("{} has no runs/ directory", root.display())));
    }
    let mut paths = Vec::new();
    for dir in fs::read_dir(&runs)? {
        let dir = dir?.path();
        if !dir.is_dir() {
            continue;
        }
        for f in fs::read_dir(&dir)? {
            let f = f?.path();
            let name = f.file_name().and_then(|n| n.to_str()).unwrap_or("");
            if name.ends_with(".jsonl") && !name.ends_with(".timing.jsonl") {
                paths.push(f);
            }
        }
    }
    let mut records = paths.iter().map(|p| RunRecord::read(p)).collect::<Result<Vec<_>>>()?;
    records.sort_by_key(|r| (r.header.strategy, r.header.seed));
    Ok(records)
}

/// `iteration,strategy,seed,rmse,mae,maxerr`, one row per evaluated model.
pub fn curves_csv(records: &[RunRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["iteration", "strategy", "seed", "rmse", "mae", "maxerr"])?;
    for r in records {
        for it in &r.iterations {
            w.write_record([
                it.iteration.to_string(),
                r.header.strategy.name().to_string(),
                r.header.seed.to_string(),
                it.test.rmse.to_string(),
                it.test.mae.to_string(),
                it.test.max_error.to_string(),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregate {
    #[default]
    Median,
    Mean,
    /// Every `(dataset, seed)` pair is its own problem.
    None,
}

impl std::str::FromStr for Aggregate {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "median" => Ok(Aggregate::Median),
            "mean" => Ok(Aggregate::Mean),
            "none" => Ok(Aggregate::None),
            _ => Err(Error::usage(format!("unknown aggregate '{s}' (median, mean, none)"))),
        }
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn aggregate(values: &mut [f64], how: Aggregate) -> f64 {
    match how {
        Aggregate::Mean => values.iter().sum::<f64>() / values.len() as f64,
        _ => median(values),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorMetric {
    Rmse,
    Mae,
    MaxErr,
}

impl ErrorMetric {
    pub fn of(self, m: &Metrics) -> f64 {
        match self {
            ErrorMetric::Rmse => m.rmse,
            ErrorMetric::Mae => m.mae,
            ErrorMetric::MaxErr => m.max_error,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorMetric::Rmse => "rmse",
            ErrorMetric::Mae => "mae",
            ErrorMetric::MaxErr => "maxerr",
        }
    }
}

impl std::str::FromStr for ErrorMetric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rmse" => Ok(ErrorMetric::Rmse),
            "mae" => Ok(ErrorMetric::Mae),
            "maxerr" => Ok(ErrorMetric::MaxErr),
            _ => Err(Error::usage(format!("unknown metric '{s}' (rmse, mae, maxerr)"))),
        }
    }
}

/// Final-iteration errors as a `problems × strategies` table. Problems are
/// datasets (aggregated over seeds) or `(dataset, seed)` pairs. Pairs that
/// are missing a strategy are dropped.
pub fn error_table(
    records: &[RunRecord],
    metric: ErrorMetric,
    how: Aggregate,
) -> Result<(Vec<String>, Vec<Strategy>, Matrix)> {
    use std::collections::BTreeMap;
    let mut strategies: Vec<Strategy> = records.iter().map(|r| r.header.strategy).collect();
    strategies.sort();
    strategies.dedup();
    if strategies.len() < 2 {
        return Err(Error::usage("performance profiles need at least two strategies"));
    }
    // (dataset, seed) -> strategy -> error
    let mut cells: BTreeMap<(String, u64), BTreeMap<Strategy, f64>> = BTreeMap::new();
    for r in records {
        if let Some(m) = r.final_metrics() {
            cells
                .entry((r.header.name.clone(), r.header.seed))
                .or_default()
                .insert(r.header.strategy, metric.of(&m));
        }
    }
    cells.retain(|_, v| v.len() == strategies.len());
    if cells.is_empty() {
        return Err(Error::usage("no (dataset, seed) pair has results for every strategy"));
    }
    let (names, rows): (Vec<String>, Vec<Vec<f64>>) = match how {
        Aggregate::None => cells
            .iter()
            .map(|((d, s), v)| (format!("{d}/{s}"), v.values().copied().collect()))
            .unzip(),
        _ => {
            let mut by_ds: BTreeMap<&str, Vec<Vec<f64>>> = BTreeMap::new();
            for ((d, _), v) in &cells {
                by_ds.entry(d).or_default().push(v.values().copied().collect());
            }
            by_ds
                .into_iter()
                .map(|(d, seeds)| {
                    let row = (0..strategies.len())
                        .map(|a| aggregate(&mut seeds.iter().map(|s| s[a]).collect::<Vec<_>>(), how))
                        .collect();
                    (d.to_string(), row)
                })
                .unzip()
        }
    };
    let table = Matrix::from_fn(rows.len(), strategies.len(), |p, a| rows[p][a]);
    Ok((names, strategies, table))
}
