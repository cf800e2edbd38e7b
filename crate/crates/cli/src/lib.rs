//! Command implementations behind the `nngp-al` binary.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nngp_al::harness::config::{load_config, ExperimentConfig};
use nngp_al::harness::dolan_more::{breakpoint_grid, dolan_more, performance_ratios};
use nngp_al::harness::run::{
    aggregate, curves_csv, error_table, load_runs, run_path, run_to_dir, Aggregate, ErrorMetric,
    RunRecord, RunStatus,
};
use nngp_al::harness::svg::{learning_curves_svg, parse_curves, profile_svg};
use nngp_al::{Error, Execution, Matrix, Strategy};

pub const SEED_ENV: &str = "NNGP_AL_SEED";

/// Exit status contract.
pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "nngp-al", version, about = "Active learning for regression with NNGP acquisition")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every (strategy, seed) pair of a config.
    Run(RunArgs),
    /// Summarize final errors per strategy across seeds.
    Compare(CompareArgs),
    /// Performance profiles from run directories or an error table.
    Profile(ProfileArgs),
    /// Learning-curve SVG from a curves.csv file.
    Plot(PlotArgs),
    /// Print the resolved config and the runs it would produce.
    Inspect(ConfigArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(short, long)]
    pub config: PathBuf,
    /// Dotted-key override, e.g. `loop.n_iter=2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output root; defaults to the config's output.dir or out/<name>.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    /// Overwrite existing run records.
    #[arg(long)]
    pub force: bool,
    /// Concurrent runs.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Rmse,
    Mae,
    Maxerr,
}

impl From<MetricArg> for ErrorMetric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Rmse => ErrorMetric::Rmse,
            MetricArg::Mae => ErrorMetric::Mae,
            MetricArg::Maxerr => ErrorMetric::MaxErr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AggregateArg {
    Median,
    Mean,
    /// Each (dataset, seed) pair is a separate problem.
    None,
}

impl From<AggregateArg> for Aggregate {
    fn from(a: AggregateArg) -> Self {
        match a {
            AggregateArg::Median => Aggregate::Median,
            AggregateArg::Mean => Aggregate::Mean,
            AggregateArg::None => Aggregate::None,
        }
    }
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Output roots of earlier `run` invocations.
    #[arg(required = true)]
    pub run_dirs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = MetricArg::Rmse)]
    pub metric: MetricArg,
    #[arg(long, value_enum, default_value_t = AggregateArg::Median)]
    pub aggregate: AggregateArg,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    pub run_dirs: Vec<PathBuf>,
    /// CSV error table (`problem,<alg>,<alg>,...`) instead of run dirs; `-` reads stdin.
    #[arg(long, conflicts_with = "run_dirs")]
    pub table: Option<String>,
    #[arg(long, value_enum, default_value_t = MetricArg::Rmse)]
    pub metric: MetricArg,
    #[arg(long, value_enum, default_value_t = AggregateArg::Median)]
    pub aggregate: AggregateArg,
    /// Directory for dolan_more.csv and dolan_more.svg; without it the CSV goes to stdout.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    pub curves: PathBuf,
    #[arg(long, value_enum, default_value_t = MetricArg::Rmse)]
    pub metric: MetricArg,
    #[arg(long, value_enum, default_value_t = AggregateArg::Median)]
    pub aggregate: AggregateArg,
    /// Defaults to `<curves>.<metric>.svg`.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

/// A failure with the exit status it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_RUNTIME,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Usage(_) => EXIT_USAGE,
            _ => EXIT_RUNTIME,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::runtime(e.to_string())
    }
}

pub type CmdResult = std::result::Result<(), Failure>;

/// Parse arguments, dispatch, and return the process exit status.
pub fn main_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(stderr, "{e}");
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let env_seed = std::env::var(SEED_ENV).ok();
    let result = match cli.command {
        Command::Run(a) => cmd_run(&a, env_seed.as_deref(), stderr),
        Command::Compare(a) => cmd_compare(&a, stdout),
        Command::Profile(a) => cmd_profile(&a, stdout),
        Command::Plot(a) => cmd_plot(&a),
        Command::Inspect(a) => cmd_inspect(&a, env_seed.as_deref(), stdout),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message);
            f.code
        }
    }
}

/// Load the config, apply overrides and the seed environment variable.
pub fn resolve_config(args: &ConfigArgs, env_seed: Option<&str>) -> Result<ExperimentConfig, Failure> {
    if !args.config.is_file() {
        return Err(Failure::usage(format!("config file {} not found", args.config.display())));
    }
    let mut cfg = load_config(&args.config, &args.overrides)?;
    if let Some(s) = env_seed {
        cfg.run_loop.seed = s
            .trim()
            .parse()
            .map_err(|_| Failure::usage(format!("{SEED_ENV}='{s}' is not an unsigned integer")))?;
    }
    Ok(cfg)
}

fn jobs(cfg: &ExperimentConfig) -> Vec<(Strategy, u64)> {
    let mut out = Vec::new();
    for &s in &cfg.acquisition.strategies {
        for seed in cfg.run_loop.seeds() {
            out.push((s, seed));
        }
    }
    out
}

pub fn cmd_run(args: &RunArgs, env_seed: Option<&str>, log: &mut (dyn Write + Send)) -> CmdResult {
    let cfg = resolve_config(&args.config, env_seed)?;
    if args.workers == 0 {
        return Err(Failure::usage("--workers must be at least 1"));
    }
    let root = args.out.clone().unwrap_or_else(|| cfg.output_root());
    let jobs = jobs(&cfg);
    if !args.force {
        if let Some((s, seed)) = jobs.iter().find(|(s, seed)| run_path(&root, *s, *seed).exists()) {
            return Err(Failure::usage(format!(
                "{} exists; pass --force to overwrite",
                run_path(&root, *s, *seed).display()
            )));
        }
    }
    std::fs::create_dir_all(&root)?;
    std::fs::write(root.join("config.json"), serde_json::to_string_pretty(&cfg).map_err(Error::from)? + "\n")?;

    let exec = if args.workers > 1 {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunRecord, Error>>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    let log = Mutex::new(log);
    std::thread::scope(|scope| {
        for _ in 0..args.workers.min(jobs.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(s, seed)) = jobs.get(i) else { break };
                let start = Instant::now();
                let res = run_to_dir(&cfg, s, seed, &root, true, exec);
                let msg = match &res {
                    Ok(r) => format!(
                        "{s} seed {seed}: {:?}, final rmse {} ({:.1}s)",
                        r.summary.status,
                        r.final_metrics().map_or("n/a".into(), |m| format!("{:.6}", m.rmse)),
                        start.elapsed().as_secs_f64()
                    ),
                    Err(e) => format!("{s} seed {seed}: failed: {e}"),
                };
                let _ = writeln!(log.lock().unwrap(), "{msg}");
                results.lock().unwrap()[i] = Some(res);
            });
        }
    });

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for ((s, seed), res) in jobs.iter().zip(results.into_inner().unwrap()) {
        match res.expect("every job ran") {
            Ok(r) => {
                if r.summary.status == RunStatus::Aborted {
                    failures.push(format!(
                        "run {s}/{seed} aborted: {}",
                        r.summary.error.as_deref().unwrap_or("unknown")
                    ));
                }
                records.push(r);
            }
            Err(e) => failures.push(format!("run {s}/{seed}: {e}")),
        }
    }
    records.sort_by_key(|r| (r.header.strategy, r.header.seed));
    std::fs::write(root.join("curves.csv"), curves_csv(&records)?)?;
    // Profiles need at least two strategies; a single-strategy run has none.
    if let Ok((_, strategies, table)) = error_table(&records, ErrorMetric::Rmse, Aggregate::None) {
        write_profile(&root, &strategies_names(&strategies), &table, false)?;
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::runtime(failures.join("; ")))
    }
}

fn strategies_names(s: &[Strategy]) -> Vec<String> {
    s.iter().map(|s| s.name().to_string()).collect()
}

fn write_profile(dir: &Path, names: &[String], errors: &Matrix, svg: bool) -> Result<String, Failure> {
    let grid = breakpoint_grid(&performance_ratios(errors)?);
    let table = dolan_more(errors, &grid)?;
    let csv = table.to_csv(names)?;
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("dolan_more.csv"), &csv)?;
    if svg {
        std::fs::write(dir.join("dolan_more.svg"), profile_svg(&table, names))?;
    }
    Ok(csv)
}

fn load_all(dirs: &[PathBuf]) -> Result<Vec<RunRecord>, Failure> {
    let mut all = Vec::new();
    for d in dirs {
        let recs = load_runs(d)?;
        if recs.is_empty() {
            return Err(Failure::usage(format!("{} contains no run records", d.display())));
        }
        all.extend(recs);
    }
    if all.is_empty() {
        return Err(Failure::usage("no run directories given"));
    }
    Ok(all)
}

pub fn cmd_compare(args: &CompareArgs, out: &mut dyn Write) -> CmdResult {
    use std::collections::BTreeMap;
    let records = load_all(&args.run_dirs)?;
    let how: Aggregate = args.aggregate.into();
    let how = if how == Aggregate::None { Aggregate::Median } else { how };
    let mut groups: BTreeMap<(String, Strategy), Vec<[f64; 3]>> = BTreeMap::new();
    for r in &records {
        if let Some(m) = r.final_metrics() {
            groups
                .entry((r.header.name.clone(), r.header.strategy))
                .or_default()
                .push([m.rmse, m.mae, m.max_error]);
        }
    }
    writeln!(out, "dataset\tstrategy\tseeds\trmse\tmae\tmaxerr")?;
    for ((name, s), v) in &groups {
        let col = |k: usize| aggregate(&mut v.iter().map(|m| m[k]).collect::<Vec<_>>(), how);
        writeln!(out, "{name}\t{s}\t{}\t{:.6}\t{:.6}\t{:.6}", v.len(), col(0), col(1), col(2))?;
    }
    Ok(())
}

/// Parse `problem,<alg>,<alg>,...` into names and a problems × algorithms matrix.
pub fn parse_error_table(text: &str) -> Result<(Vec<String>, Matrix), Failure> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Failure::usage("error table is empty"))?;
    let names: Vec<String> = header.split(',').skip(1).map(|s| s.trim().to_string()).collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != names.len() + 1 {
            return Err(Failure::usage(format!("error table row {} has {} cells", i + 2, cells.len())));
        }
        let row = cells[1..]
            .iter()
            .map(|c| c.trim().parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| Failure::usage(format!("error table row {}: {e}", i + 2)))?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Failure::usage("error table has no problems"));
    }
    let m = Matrix::from_fn(rows.len(), names.len(), |p, a| rows[p][a]);
    Ok((names, m))
}

pub fn cmd_profile(args: &ProfileArgs, out: &mut dyn Write) -> CmdResult {
    let (names, errors) = match &args.table {
        Some(src) => {
            let text = if src == "-" {
                let mut s = String::new();
                std::io::stdin().read_to_string(&mut s)?;
                s
            } else {
                std::fs::read_to_string(src)
                    .map_err(|e| Failure::usage(format!("cannot read table {src}: {e}")))?
            };
            parse_error_table(&text)?
        }
        None => {
            if args.run_dirs.is_empty() {
                return Err(Failure::usage("give run directories or --table"));
            }
            let records = load_all(&args.run_dirs)?;
            let (_, strategies, table) = error_table(&records, args.metric.into(), args.aggregate.into())?;
            (strategies_names(&strategies), table)
        }
    };
    match &args.out {
        Some(dir) => {
            write_profile(dir, &names, &errors, true)?;
        }
        None => {
            let grid = breakpoint_grid(&performance_ratios(&errors)?);
            write!(out, "{}", dolan_more(&errors, &grid)?.to_csv(&names)?)?;
        }
    }
    Ok(())
}

pub fn cmd_plot(args: &PlotArgs) -> CmdResult {
    let text = std::fs::read_to_string(&args.curves)
        .map_err(|e| Failure::usage(format!("cannot read {}: {e}", args.curves.display())))?;
    let rows = parse_curves(&text)?;
    let metric: ErrorMetric = args.metric.into();
    let svg = learning_curves_svg(&rows, metric, args.aggregate.into());
    let path = args
        .out
        .clone()
        .unwrap_or_else(|| args.curves.with_extension(format!("{}.svg", metric.name())));
    std::fs::write(path, svg)?;
    Ok(())
}

pub fn cmd_inspect(args: &ConfigArgs, env_seed: Option<&str>, out: &mut dyn Write) -> CmdResult {
    let cfg = resolve_config(args, env_seed)?;
    writeln!(out, "{}", serde_json::to_string_pretty(&cfg).map_err(Error::from)?)?;
    let root = cfg.output_root();
    for (s, seed) in jobs(&cfg) {
        writeln!(out, "{}", run_path(&root, s, seed).display())?;
    }
    Ok(())
}
