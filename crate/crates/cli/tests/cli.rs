//! End-to-end tests of the `dropf` binary: exit codes, output files, and
//! reproducibility of the experiment CSVs.

use std::path::Path;
use std::process::{Command, Output};

fn dropf() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dropf"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    dropf()
        .args(args)
        .current_dir(dir)
        .env_remove("DROPF_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn solve_drcc_on_bundled_case_writes_solution_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "solve",
            "--case",
            "15bus",
            "--mode",
            "drcc",
            "--eta-v",
            "0.05",
            "--xi",
            "0.005",
            "--samples",
            "N=100,seed=7",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = std::fs::read_to_string(dir.path().join("solution.json")).unwrap();
    let json: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(json["mode"], "drcc");
    assert_eq!(json["solution"]["g_p"].as_array().unwrap().len(), 3);
    let alpha: f64 = json["solution"]["alpha"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .sum();
    assert!((alpha - 1.0).abs() < 1e-6);
}

#[test]
fn unknown_flag_exits_with_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["solve", "--case", "15bus", "--frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--frobnicate"));
}

#[test]
fn help_is_a_success() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["--help"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("solve"));
    assert!(text.contains("sweep"));
}

#[test]
fn sweep_requires_an_explicit_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &["sweep", "--case", "15bus", "--samples", "N=100,seed=7"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--seed"));
}

#[test]
fn stochastic_solve_without_samples_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["solve", "--case", "15bus", "--mode", "cc"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--samples"));
}

#[test]
fn synthetic_samples_without_seed_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &["solve", "--case", "15bus", "--mode", "cc", "--samples", "N=100"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("seed"));
}

#[test]
fn infeasible_case_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    // A load the sole generator cannot cover.
    let case = "\
[base]
1 11
[buses]
0 0.95 1.05 0 0
1 0.95 1.05 5.0 0
[lines]
1 0 1 1.21 0.6 10
[generators]
0 0 0.5 5 0.1 50 0
";
    let path = dir.path().join("starved.case");
    std::fs::write(&path, case).unwrap();
    let out = run(
        &["solve", "--case", "starved.case", "--mode", "det"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
}

#[test]
fn malformed_case_exits_with_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.case");
    std::fs::write(&path, "[buses]\n0 0.95 oops 0 0\n").unwrap();
    let out = run(
        &["solve", "--case", "broken.case", "--mode", "det"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn corrupt_solution_file_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("junk.json");
    std::fs::write(&path, "{ not json").unwrap();
    let out = run(
        &[
            "evaluate",
            "--case",
            "15bus",
            "--solution",
            "junk.json",
            "--samples",
            "N=10,seed=1",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("solution"));
}

#[test]
fn sweep_output_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "sweep",
        "--case",
        "15bus",
        "--samples",
        "N=100,seed=7",
        "--seed",
        "11",
        "--eta-v",
        "0.05",
        "--xi",
        "0.25,0.005",
        "--eval-samples",
        "200",
    ];
    let mut first = args.to_vec();
    first.extend(["--out", "a.csv"]);
    let mut second = args.to_vec();
    second.extend(["--out", "b.csv", "--jobs", "2"]);
    assert!(run(&first, dir.path()).status.success());
    assert!(run(&second, dir.path()).status.success());
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b.csv")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b, "same flags and seed must reproduce the same bytes");
}

#[test]
fn evaluate_round_trips_a_solved_dispatch() {
    let dir = tempfile::tempdir().unwrap();
    let solve = run(
        &[
            "solve",
            "--case",
            "15bus",
            "--mode",
            "det",
            "--out",
            "det.json",
        ],
        dir.path(),
    );
    assert!(solve.status.success(), "stderr: {}", stderr(&solve));
    let eval = run(
        &[
            "evaluate",
            "--case",
            "15bus",
            "--solution",
            "det.json",
            "--samples",
            "N=500,seed=3",
            "--out",
            "report.csv",
        ],
        dir.path(),
    );
    assert!(eval.status.success(), "stderr: {}", stderr(&eval));
    let report = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert!(report.starts_with("# violation-report-schema v1"));
    assert!(report.contains("violation_prob"));
}

#[test]
fn oos_emits_one_entry_per_mode_delta_and_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "oos",
            "--case",
            "15bus",
            "--samples",
            "N=100,seed=7",
            "--seed",
            "5",
            "--eta-v",
            "0.05",
            "--xi",
            "0.25,0.005",
            "--delta",
            "0.5,1.0",
            "--eval-samples",
            "200",
            "--out",
            "oos.csv",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = std::fs::read_to_string(dir.path().join("oos.csv")).unwrap();
    let entries = text
        .lines()
        .filter(|l| l.contains("violation_prob"))
        .count();
    // 2 modes x 1 eta x 2 xi x 2 delta.
    assert_eq!(entries, 8);
}

#[test]
fn bench_prints_a_timing_row_per_case() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &["bench", "--cases", "15bus", "--seed", "7", "--reps", "1"],
        dir.path(),
    );
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("case,buses,mode,solve_ms,iters"));
    assert!(text.contains("15bus,15,drcc,"));
}

#[test]
fn out_dir_env_var_hosts_default_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("results");
    let out = dropf()
        .args(["solve", "--case", "15bus", "--mode", "det"])
        .current_dir(dir.path())
        .env("DROPF_OUT_DIR", &out_dir)
        .output()
        .expect("binary runs");
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(out_dir.join("solution.json").is_file());
}

#[test]
fn eta_outside_half_open_interval_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "solve",
            "--case",
            "15bus",
            "--mode",
            "cc",
            "--eta-v",
            "0.6",
            "--samples",
            "N=10,seed=1",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("eta"));
}
