use std::path::Path;
use std::process::{Command, Output};

fn uwbvo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uwbvo")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn flow(dir: &Path) {
    let d = dir.to_str().unwrap();
    let sim = uwbvo(&["simulate", "--scenario", "best-case", "--seeds", "0,1", "--out", d]);
    assert_eq!(code(&sim), 0, "{}", String::from_utf8_lossy(&sim.stderr));
    let run = uwbvo(&["run", "--out", d, "--scenario", "best-case", "--seeds", "0,1", "--method", "self-corrective,raw-vo"]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&uwbvo(&["--help"])), 0);
    assert_eq!(code(&uwbvo(&["--version"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&uwbvo(&[])), 1);
    assert_eq!(code(&uwbvo(&["run", "--method", "nope"])), 1);
    assert_eq!(code(&uwbvo(&["simulate", "--seeds", "5..5"])), 1);
    let dir = tempfile::tempdir().unwrap();
    let out = uwbvo(&["simulate", "--scenario", "no-such-preset", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 1);
}

#[test]
fn missing_logs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = uwbvo(&["run", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert_eq!(code(&uwbvo(&["compare", "--out", dir.path().to_str().unwrap()])), 2);
}

#[test]
fn simulate_run_compare() {
    let dir = tempfile::tempdir().unwrap();
    flow(dir.path());
    assert!(dir.path().join("logs/seed-0001/streams.csv").exists());
    assert!(dir.path().join("runs/self-corrective/seed-0000.csv").exists());
    let cmp = uwbvo(&["compare", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&cmp), 0);
    let table = String::from_utf8(cmp.stdout).unwrap();
    assert!(table.contains("self-corrective") && table.contains("raw-vo"), "{table}");
}

#[test]
fn repeated_runs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    flow(a.path());
    flow(b.path());
    for rel in [
        "logs/seed-0000/streams.csv",
        "logs/seed-0001/truth.csv",
        "runs/self-corrective/seed-0001.csv",
        "reports.csv",
    ] {
        let x = std::fs::read(a.path().join(rel)).unwrap();
        let y = std::fs::read(b.path().join(rel)).unwrap();
        assert!(x == y, "{rel} differs");
    }
}
