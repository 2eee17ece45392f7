use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use restore_cli::commands::RunSummary;
use restore_cli::io::{read_histogram, read_image, write_image};
use restore_core::{histogram_of, Image, LevelGrid};

fn restore(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_restore")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn two_tone(dir: &Path) -> String {
    let data = (0..144).map(|i| if i % 12 < 6 { 0.2 } else { 0.8 }).collect();
    let path = dir.join("in.pgm");
    write_image(&path, &Image::new(12, 12, data).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&restore(&["--help"])), 0);
    assert_eq!(code(&restore(&["denoise", "--bogus"])), 1);
    assert_eq!(code(&restore(&[])), 1);
}

#[test]
fn missing_input_is_an_input_error() {
    let out = restore(&["denoise", "--input", "/nonexistent/in.pgm"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));
}

#[test]
fn hist_prints_the_quantized_histogram() {
    let dir = tempfile::tempdir().unwrap();
    let input = two_tone(dir.path());
    let out_dir = dir.path().join("h");
    let out = restore(&["hist", "--input", &input, "--k", "6", "--out-dir", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let written = read_histogram(&out_dir.join("histogram.txt")).unwrap();
    let grid = LevelGrid::new(6).unwrap();
    assert_eq!(written, histogram_of(&read_image(Path::new(&input)).unwrap(), &grid));
    assert_eq!(written.mass(), &[0.0, 0.5, 0.0, 0.0, 0.5, 0.0]);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), fs::read_to_string(out_dir.join("histogram.txt")).unwrap());
}

#[test]
fn w1_between_histogram_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.txt");
    let b = dir.path().join("b.txt");
    fs::write(&a, "k 3\n0 1\n0.5 0\n1 0\n").unwrap();
    fs::write(&b, "k 3\n0 0\n0.5 0\n1 1\n").unwrap();
    let out = restore(&["w1", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim().parse::<f64>().unwrap(), 1.0);

    fs::write(&b, "k 2\n0 0\n1 1\n").unwrap();
    assert_eq!(code(&restore(&["w1", a.to_str().unwrap(), b.to_str().unwrap()])), 1);
}

#[test]
fn denoise_writes_artifacts_and_a_matching_summary() {
    let dir = tempfile::tempdir().unwrap();
    let input = two_tone(dir.path());
    let out_dir = dir.path().join("run");
    let out = restore(&[
        "denoise", "--input", &input, "--k", "4", "--lambda", "0.05", "--nu", "0.5",
        "--tol", "1e-8", "--max-iter", "20000", "--out-dir", out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary: RunSummary = serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert!(summary.converged);
    assert_eq!(summary.command, "denoise");
    assert_eq!(summary.params.k, 4);
    assert_eq!(summary.prior, "input");
    assert!(summary.relaxed_energy <= summary.primal_energy + 1e-6);
    let restored = read_image(&out_dir.join("restored.pgm")).unwrap();
    assert_eq!((restored.width(), restored.height()), (12, 12));
    let trace = fs::read_to_string(out_dir.join("trace.csv")).unwrap();
    assert!(trace.starts_with("iter,relaxed_energy,residual\n"));
    assert!(trace.lines().count() > 1);
}

#[test]
fn iteration_limit_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let input = two_tone(dir.path());
    let out_dir = dir.path().join("run");
    let out = restore(&["denoise", "--input", &input, "--k", "4", "--max-iter", "3", "--out-dir", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(out_dir.join("summary.json").is_file());
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let input = two_tone(dir.path());
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# short run\nk = 4\nmax_iter = 3\n").unwrap();
    let out_dir = dir.path().join("run");
    let base = ["denoise", "--input", &input, "--config", cfg.to_str().unwrap(), "--out-dir", out_dir.to_str().unwrap()];
    assert_eq!(code(&restore(&base)), 2);

    let mut longer = base.to_vec();
    longer.extend(["--max-iter", "5"]);
    restore(&longer);
    let summary: RunSummary = serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.params.k, 4);
    assert_eq!(summary.params.max_iter, 5);

    fs::write(&cfg, "k = 4\nnot a pair\n").unwrap();
    let out = restore(&base);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("byte"));
}

#[test]
fn inpaint_requires_a_mask() {
    let dir = tempfile::tempdir().unwrap();
    let input = two_tone(dir.path());
    assert_eq!(code(&restore(&["inpaint", "--input", &input])), 1);
}

#[test]
fn experiment_writes_a_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let out = restore(&["experiment", "constant-inexact", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("constant-inexact");
    let cmp: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("comparison.json")).unwrap()).unwrap();
    assert_eq!(cmp["experiment"], "constant-inexact");
    assert_eq!(cmp["metrics"]["lambda_over_2"], 0.25);
    for file in ["input.pgm", "mask.pgm", "prior.txt", "wasserstein_restored.pgm", "wasserstein_trace.csv"] {
        assert!(run.join(file).is_file(), "{file}");
    }
    assert_eq!(code(&restore(&["experiment", "no-such-preset"])), 1);
}
