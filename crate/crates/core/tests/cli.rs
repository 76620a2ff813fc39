use std::path::Path;
use std::process::{Command, Output};

const TOY: &str = r#"
[problem]
dim = 2

[splines]
per_axis = 3
degree = 1

[spectral]
total_degree = 1

[mesh]
nodes_per_side = 6
delta = 0.01

[simulation]
nodes_per_side = 17
delta = 0.01
sigma0 = 0.001
seed = 3
"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_thermotomo"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn toy_dir(extra: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("toy.toml"), format!("{TOY}{extra}")).unwrap();
    dir
}

#[test]
fn forward_is_deterministic_and_described_by_info() {
    let dir = toy_dir("");
    let d = dir.path();
    let text = ok(d, &["--config", "toy.toml", "forward", "--output", "a.bin"]);
    assert!(text.contains("N (basis columns)   10"), "{text}");
    ok(d, &["--config", "toy.toml", "forward", "--output", "b.bin"]);
    let a = std::fs::read(d.join("a.bin")).unwrap();
    let b = std::fs::read(d.join("b.bin")).unwrap();
    assert_eq!(a, b);
    let info = ok(d, &["info", "--surrogate", "a.bin"]);
    assert!(info.contains("P / N / n           9 / 10 / 1"), "{info}");
    assert!(info.contains("Q                   468"), "{info}");
    let sizes = ok(d, &["--config", "toy.toml", "info"]);
    assert!(sizes.contains("N (basis columns)   10"), "{sizes}");
}

#[test]
fn noiseless_simulation_is_reproducible() {
    let dir = toy_dir("");
    let d = dir.path();
    std::fs::write(d.join("clean.toml"), TOY.replace("sigma0 = 0.001", "sigma0 = 0.0")).unwrap();
    ok(d, &["--config", "clean.toml", "simulate", "--output", "a.csv"]);
    ok(d, &["--config", "clean.toml", "simulate", "--output", "b.csv", "--seed", "99"]);
    let a = std::fs::read_to_string(d.join("a.csv")).unwrap();
    let b = std::fs::read_to_string(d.join("b.csv")).unwrap();
    let strip = |s: &str| s.lines().filter(|l| !l.starts_with("# seed")).collect::<Vec<_>>().join("\n");
    assert_eq!(strip(&a), strip(&b));
    assert!(b.contains("# seed=99"));
    assert!(a.contains("# sigma=0"));
}

#[test]
fn full_pipeline_writes_report_and_grid() {
    let dir = toy_dir("");
    let d = dir.path();
    ok(d, &["--config", "toy.toml", "forward"]);
    ok(d, &["--config", "toy.toml", "simulate", "--target", "1.25 + 0.2*x1"]);
    let text = ok(d, &["--config", "toy.toml", "reconstruct", "--lambda", "morozov", "--output", "run.txt"]);
    assert!(text.contains("noise level"), "{text}");
    let report = std::fs::read_to_string(d.join("run.txt")).unwrap();
    for key in ["lambda = ", "misfit = ", "noise_level = ", "theta = "] {
        assert!(report.contains(key), "{report}");
    }
    let grid = std::fs::read_to_string(d.join("run-grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 1 + 101 * 101);
    assert!(grid.starts_with("x,y,a\n"));

    ok(d, &["--config", "toy.toml", "reconstruct", "--lambda", "0.01"]);
    let report = std::fs::read_to_string(d.join("report.txt")).unwrap();
    assert!(report.contains("lambda = 0.01"), "{report}");
    assert!(d.join("diffusivity.csv").exists());
}

#[test]
fn config_errors_name_file_and_line() {
    let extra = "\n[inverse]\nlambda = -3.0\n";
    let dir = toy_dir(extra);
    let line = format!("{TOY}{extra}").lines().position(|l| l.starts_with("lambda")).unwrap() + 1;
    let out = run(dir.path(), &["--config", "toy.toml", "info"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("toy.toml") && err.contains(&format!("line {line}:")), "{err}");

    let out = run(dir.path(), &["--config", "missing.toml", "info"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_lambda_flag_is_rejected() {
    let dir = toy_dir("");
    let out = run(dir.path(), &["--config", "toy.toml", "reconstruct", "--lambda", "sometimes"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("morozov"));
}

#[test]
fn mismatched_coordinates_are_fatal() {
    let dir = toy_dir("");
    let d = dir.path();
    ok(d, &["--config", "toy.toml", "forward"]);
    std::fs::write(d.join("other.toml"), format!("{TOY}\n[measurements]\nboundary_points = 8\n")).unwrap();
    ok(d, &["--config", "other.toml", "simulate"]);
    let out = run(d, &["--config", "toy.toml", "reconstruct"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("coordinates"));
}

#[test]
fn non_positive_target_is_fatal() {
    let dir = toy_dir("");
    let out = run(dir.path(), &["--config", "toy.toml", "simulate", "--target", "x1 - 0.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not positive"));
}

#[test]
fn single_criterion_verification() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(dir.path(), &["verify", "--criterion", "4"]);
    assert!(text.contains("[PASS] triple-product"), "{text}");
    let out = run(dir.path(), &["verify", "--criterion", "12"]);
    assert_eq!(out.status.code(), Some(1));
}
