//! End-to-end checks of the `erkguid` binary: reproducibility contracts
//! (manifest replay, worker-count independence), the stiff-point table
//! example, and the single-line error contract.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_erkguid")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("erkguid-cli-{}-{name}", std::process::id()));
    if dir.exists() {
        std::fs::remove_dir_all(&dir).expect("stale scratch dir removed");
    }
    std::fs::create_dir_all(&dir).expect("scratch dir created");
    dir
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("binary spawns")
}

fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

#[test]
fn sample_runs_are_deterministic_and_replayable() {
    let dir = scratch("replay");
    let a = dir.join("a");
    let b = dir.join("b");
    let c = dir.join("c");
    let base = [
        "sample",
        "--steps",
        "8",
        "--count",
        "4",
        "--seed",
        "7",
        "--w-stiff",
        "1.0",
    ];

    let mut args_a: Vec<&str> = base.to_vec();
    let a_str = a.to_str().unwrap();
    args_a.extend(["--out", a_str]);
    run_ok(&args_a);

    // Same flags, fresh directory: byte-identical tables.
    let mut args_b: Vec<&str> = base.to_vec();
    let b_str = b.to_str().unwrap();
    args_b.extend(["--out", b_str]);
    run_ok(&args_b);
    for f in ["trace.csv", "endpoints.csv"] {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f} differs between identical runs");
    }

    // Replay from the recorded manifest alone: byte-identical tables.
    let manifest = a.join("manifest.json");
    let manifest_str = manifest.to_str().unwrap();
    let c_str = c.to_str().unwrap();
    run_ok(&["sample", "--config", manifest_str, "--out", c_str]);
    for f in ["trace.csv", "endpoints.csv"] {
        assert_eq!(read(&a.join(f)), read(&c.join(f)), "{f} differs after manifest replay");
    }

    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn results_are_independent_of_worker_count() {
    let dir = scratch("jobs");
    let one = dir.join("one");
    let two = dir.join("two");
    for (jobs, out) in [("1", &one), ("2", &two)] {
        run_ok(&[
            "sample",
            "--steps",
            "8",
            "--count",
            "6",
            "--seed",
            "3",
            "--jobs",
            jobs,
            "--out",
            out.to_str().unwrap(),
        ]);
    }
    for f in ["trace.csv", "endpoints.csv"] {
        assert_eq!(read(&one.join(f)), read(&two.join(f)), "{f} depends on worker count");
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn lte_table_reports_concentrated_truncation_error() {
    let dir = scratch("lte");
    let out = dir.join("t");
    run_ok(&["lte-table", "--out", out.to_str().unwrap()]);
    let table = String::from_utf8(read(&out.join("lte_table.csv"))).expect("utf-8 csv");
    let mut lines = table.lines();
    assert_eq!(
        lines.next(),
        Some("quantity,lambda_dominant,coeff_dominant,coeff_subdominant,ratio")
    );
    let lte_row = lines.next().expect("lte row");
    let cols: Vec<&str> = lte_row.split(',').collect();
    assert_eq!(cols[0], "lte");
    let ratio: f64 = cols[4].parse().expect("numeric ratio");
    assert!(ratio >= 5.0, "default stiff-point LTE ratio {ratio} below 5");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn guide_modes_change_endpoints_but_keep_cost() {
    let dir = scratch("guide");
    let plain = dir.join("plain");
    let guided = dir.join("guided");
    for (w_stiff, out) in [("0", &plain), ("1.0", &guided)] {
        run_ok(&[
            "sample",
            "--steps",
            "12",
            "--count",
            "4",
            "--seed",
            "5",
            "--guide",
            "erk",
            "--w-stiff",
            w_stiff,
            "--out",
            out.to_str().unwrap(),
        ]);
    }
    let a = read(&plain.join("endpoints.csv"));
    let b = read(&guided.join("endpoints.csv"));
    assert_ne!(a, b, "guidance at w_stiff=1 should move endpoints");

    // Last trace column block carries cumulative NFE; equal per (traj, step).
    let nfe = |bytes: &[u8]| -> Vec<String> {
        String::from_utf8(bytes.to_vec())
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(7).unwrap().to_string())
            .collect()
    };
    let ta = read(&plain.join("trace.csv"));
    let tb = read(&guided.join("trace.csv"));
    assert_eq!(nfe(&ta), nfe(&tb), "guidance must not change evaluation counts");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn config_errors_exit_nonzero_with_one_line() {
    let missing = run(&["sample", "--config", "/nonexistent/cfg.json", "--out", "/tmp/x"]);
    assert!(!missing.status.success());
    let err = String::from_utf8_lossy(&missing.stderr);
    assert_eq!(err.trim_end().lines().count(), 1, "stderr not single-line: {err:?}");

    let incompatible = run(&["sample", "--solver", "euler", "--guide", "erk-proj", "--out", "/tmp/x"]);
    assert!(!incompatible.status.success());
    let err = String::from_utf8_lossy(&incompatible.stderr);
    assert_eq!(err.trim_end().lines().count(), 1, "stderr not single-line: {err:?}");

    let unknown_flag = run(&["sample", "--definitely-not-a-flag"]);
    assert!(!unknown_flag.status.success());
}
