use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

const TINY: &str = r#"{
  "name": "tiny",
  "oracle": { "name": "branin-2d", "noise_sigma": 0.5, "initial_train": 20, "pool_size": 100, "val_size": 20, "test_size": 50 },
  "network": { "hidden": [8] },
  "training": { "lr_initial": 0.01, "batch_size": 10, "epochs_mandatory": 20, "epochs_max": 60, "es_check_step": 10 },
  "acquisition": { "strategies": ["random", "mcdue", "nngp"], "batch_size": 5, "passes": 16, "anchor_size": 10, "m_steps": 5 },
  "loop": { "n_iter": 3, "replicates": 2, "seed": 7 }
}"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_nngp-al"));
    c.env_remove("NNGP_AL_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn tiny_config(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.json");
    std::fs::write(&p, TINY).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn run_tiny(dir: &Path, extra: &[&str]) -> (PathBuf, Output) {
    let cfg = tiny_config(dir);
    let out = dir.join("out");
    let mut args = vec!["run", "-c", s(&cfg), "-o", s(&out)];
    args.extend_from_slice(extra);
    let o = run(&args);
    (out, o)
}

#[test]
fn run_writes_records_curves_and_profile() {
    let dir = tempfile::tempdir().unwrap();
    let (out, o) = run_tiny(dir.path(), &["--set", "loop.n_iter=2"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for strategy in ["random", "mcdue", "nngp"] {
        for seed in [7, 8] {
            let path = out.join("runs").join(strategy).join(format!("{seed}.jsonl"));
            let text = std::fs::read_to_string(&path).unwrap();
            // header, three iterations (0..=n_iter), summary
            assert_eq!(text.lines().count(), 5, "{}", path.display());
        }
    }
    let curves = std::fs::read_to_string(out.join("curves.csv")).unwrap();
    assert!(curves.starts_with("iteration,strategy,seed,rmse,mae,maxerr"));
    assert_eq!(curves.lines().count(), 1 + 3 * 2 * 3);
    assert!(out.join("dolan_more.csv").exists());
    assert!(out.join("config.json").exists());
}

#[test]
fn second_run_refuses_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let (_, first) = run_tiny(dir.path(), &["--set", "loop.n_iter=1"]);
    assert_eq!(first.status.code(), Some(0));
    let (_, second) = run_tiny(dir.path(), &["--set", "loop.n_iter=1"]);
    assert_eq!(second.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&second.stderr).contains("--force"));
    let (_, forced) = run_tiny(dir.path(), &["--set", "loop.n_iter=1", "--force"]);
    assert_eq!(forced.status.code(), Some(0));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["run", "-c", "does/not/exist.json"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&[]).status.code(), Some(2));
    let cfg = tiny_config(dir.path());
    let bad_key = run(&["inspect", "-c", s(&cfg), "--set", "loop.bogus=1"]);
    assert_eq!(bad_key.status.code(), Some(2));
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    assert_eq!(run(&["compare", s(&empty)]).status.code(), Some(2));
    assert_eq!(run(&["profile", s(&empty)]).status.code(), Some(2));
    assert_eq!(run(&["profile"]).status.code(), Some(2));
}

#[test]
fn invalid_config_names_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, r#"{ "name": "x", "network": {}, "training": {}, "acquisition": {}, "loop": {} }"#).unwrap();
    let o = run(&["inspect", "-c", s(&p)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
}

#[test]
fn profile_from_table_on_stdin() {
    let mut child = bin()
        .args(["profile", "--table", "-"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"problem,A,B\np1,1,2\np2,3,1.5\n").unwrap();
    let o = child.wait_with_output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(String::from_utf8(o.stdout).unwrap(), "tau,A,B\n1,0.5,0.5\n2,1,1\n");
}

#[test]
fn profile_rejects_single_strategy_table() {
    let mut child = bin()
        .args(["profile", "--table", "-"])
        .stdin(Stdio::piped())
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"problem,A\np1,1\n").unwrap();
    assert_eq!(child.wait().unwrap().code(), Some(2));
}

#[test]
fn compare_plot_and_profile_from_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (out, o) = run_tiny(dir.path(), &["--set", "loop.n_iter=1"]);
    assert_eq!(o.status.code(), Some(0));

    let cmp = run(&["compare", s(&out)]);
    assert_eq!(cmp.status.code(), Some(0));
    let text = String::from_utf8(cmp.stdout).unwrap();
    assert_eq!(text.lines().count(), 1 + 3);
    assert!(text.contains("nngp"));

    let prof_dir = dir.path().join("prof");
    let prof = run(&["profile", s(&out), "--aggregate", "none", "-o", s(&prof_dir)]);
    assert_eq!(prof.status.code(), Some(0));
    assert!(std::fs::read_to_string(prof_dir.join("dolan_more.svg")).unwrap().starts_with("<svg"));

    let curves = out.join("curves.csv");
    let a = dir.path().join("a.svg");
    let b = dir.path().join("b.svg");
    let mae = dir.path().join("mae.svg");
    assert_eq!(run(&["plot", s(&curves), "-o", s(&a)]).status.code(), Some(0));
    assert_eq!(run(&["plot", s(&curves), "-o", s(&b)]).status.code(), Some(0));
    assert_eq!(run(&["plot", s(&curves), "--metric", "mae", "-o", s(&mae)]).status.code(), Some(0));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&mae).unwrap());
    assert_eq!(run(&["plot", s(&curves)]).status.code(), Some(0));
    assert!(out.join("curves.rmse.svg").exists());
}

#[test]
fn inspect_lists_runs_and_honours_seed_env() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let o = bin().args(["inspect", "-c", s(&cfg)]).env("NNGP_AL_SEED", "100").output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("\"n_iter\": 3"));
    let runs: Vec<&str> = text.lines().filter(|l| l.ends_with(".jsonl")).collect();
    assert_eq!(runs.len(), 3 * 2);
    assert!(runs.iter().any(|l| l.ends_with("100.jsonl")));
    assert!(runs.iter().any(|l| l.ends_with("101.jsonl")));
}

#[test]
fn shipped_configs_are_valid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            let o = run(&["inspect", "-c", s(&path)]);
            assert_eq!(o.status.code(), Some(0), "{}: {}", path.display(), String::from_utf8_lossy(&o.stderr));
            seen += 1;
        }
    }
    assert!(seen >= 4);
}
