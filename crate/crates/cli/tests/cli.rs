//! End-to-end tests of the graphlite binary: every subcommand, the
//! exit-code contract, and artifact byte-stability across reruns.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn graphlite(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_graphlite"))
        .args(args)
        .env_remove("GRAPHLITE_SEED")
        .output()
        .expect("binary spawns")
}

fn expect_ok(args: &[&str]) -> String {
    let out = graphlite(args);
    assert!(
        out.status.success(),
        "`graphlite {}` failed:\n{}{}",
        args.join(" "),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("stdout is utf-8")
}

fn expect_code(args: &[&str], code: i32) -> String {
    let out = graphlite(args);
    assert_eq!(
        out.status.code(),
        Some(code),
        "`graphlite {}` should exit {code}:\n{}{}",
        args.join(" "),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stderr).expect("stderr is utf-8")
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{}/{name}: {e}", dir.display()))
}

fn gen_pagerank(dir: &Path) -> PathBuf {
    let base = dir.join("pr");
    expect_ok(&[
        "gen", "--base", path(&base), "--seed", "7", "pagerank-random", "--n", "40", "--p", "0.1",
    ]);
    base
}

#[test]
fn gen_then_run_chromatic_is_deterministic() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let base = gen_pagerank(tmp.path());
    let (run1, run2) = (tmp.path().join("run1"), tmp.path().join("run2"));

    for (out, workers, machines) in [(&run1, "2", "2"), (&run2, "8", "4")] {
        expect_ok(&[
            "run", "--data", path(&base), "--out", path(out), "--engine", "chromatic",
            "--machines", machines, "--workers", workers,
        ]);
        for artifact in [
            "config.json", "final_data.bin", "sync_results.json",
            "exec_log.ndjson", "metrics.csv", "summary.json",
        ] {
            assert!(out.join(artifact).exists(), "missing {artifact}");
        }
    }
    assert_eq!(read(&run1, "final_data.bin"), read(&run2, "final_data.bin"));
    assert_eq!(read(&run1, "sync_results.json"), read(&run2, "sync_results.json"));
}

#[test]
fn socket_transport_matches_inproc() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let base = gen_pagerank(tmp.path());
    let (inproc, socket) = (tmp.path().join("inproc"), tmp.path().join("socket"));

    expect_ok(&[
        "run", "--data", path(&base), "--out", path(&inproc), "--engine", "chromatic",
        "--machines", "3", "--workers", "2",
    ]);
    expect_ok(&[
        "run", "--data", path(&base), "--out", path(&socket), "--engine", "chromatic",
        "--machines", "3", "--workers", "2", "--transport", "socket",
    ]);
    assert_eq!(read(&inproc, "final_data.bin"), read(&socket, "final_data.bin"));
    assert_eq!(read(&inproc, "sync_results.json"), read(&socket, "sync_results.json"));
}

#[test]
fn bad_configurations_exit_2_before_running() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let base = gen_pagerank(tmp.path());
    let out = tmp.path().join("never");

    let err = expect_code(
        &["run", "--data", path(&base), "--out", path(&out), "--engine", "locking",
          "--model", "none"],
        2,
    );
    assert!(err.contains("--unsafe"), "should point at --unsafe: {err}");

    expect_code(
        &["run", "--data", path(&base), "--out", path(&out), "--engine", "chromatic",
          "--scheduler", "fifo"],
        2,
    );
    expect_code(
        &["run", "--data", path(&base), "--out", path(&out), "--engine", "chromatic",
          "--what-even-is-this"],
        2,
    );
    let err = expect_code(
        &["run", "--data", path(&base), "--out", path(&out), "--engine", "chromatic",
          "--app", "als"],
        2,
    );
    assert!(err.contains("pagerank"), "should name the dataset's app: {err}");
    assert!(!out.exists(), "no artifacts on validation failure");
}

#[test]
fn audit_passes_safe_run_and_fails_racy_run() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let base = tmp.path().join("star");
    expect_ok(&[
        "gen", "--base", path(&base), "--seed", "3", "counter-star",
        "--spokes", "8", "--rounds", "30",
    ]);

    let safe = tmp.path().join("safe");
    expect_ok(&[
        "run", "--data", path(&base), "--out", path(&safe), "--engine", "locking",
        "--model", "edge", "--workers", "8", "--seed", "1",
    ]);
    let report = expect_ok(&["audit", "--run", path(&safe)]);
    assert!(report.contains("audit passed"), "{report}");

    let racy = tmp.path().join("racy");
    expect_ok(&[
        "run", "--data", path(&base), "--out", path(&racy), "--engine", "locking",
        "--model", "none", "--unsafe", "--workers", "8", "--seed", "1",
    ]);
    let err = expect_code(&["audit", "--run", path(&racy)], 4);
    assert!(err.contains("audit violation"), "{err}");
}

#[test]
fn prebuilt_atoms_are_reused_without_repartitioning() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let base = gen_pagerank(tmp.path());
    let atoms = tmp.path().join("atoms");
    expect_ok(&["partition", "--data", path(&base), "--parts", "8", "--out", path(&atoms)]);
    assert!(atoms.join("atom-0007.bin").exists());
    assert!(atoms.join("partition.json").exists());

    let (r1, r2) = (tmp.path().join("m1"), tmp.path().join("m2"));
    for (out, machines) in [(&r1, "1"), (&r2, "2")] {
        expect_ok(&[
            "run", "--data", path(&base), "--out", path(out), "--engine", "chromatic",
            "--machines", machines, "--atoms", path(&atoms),
        ]);
        let summary = String::from_utf8(read(out, "summary.json")).expect("utf-8");
        assert!(summary.contains("\"repartitioned\": false"), "{summary}");
    }
    assert_eq!(read(&r1, "final_data.bin"), read(&r2, "final_data.bin"));

    let fresh = tmp.path().join("fresh");
    expect_ok(&[
        "run", "--data", path(&base), "--out", path(&fresh), "--engine", "chromatic",
    ]);
    let summary = String::from_utf8(read(&fresh, "summary.json")).expect("utf-8");
    assert!(summary.contains("\"repartitioned\": true"), "{summary}");
}

#[test]
fn coloring_files_are_validated_before_use() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let base = gen_pagerank(tmp.path());
    let colors = tmp.path().join("colors.txt");
    expect_ok(&["color", "--data", path(&base), "--out", path(&colors)]);
    let report = expect_ok(&["color", "--data", path(&base), "--check", path(&colors)]);
    assert!(report.contains("valid"), "{report}");

    // Monochrome is improper for any graph with at least one edge.
    let lines = std::fs::read_to_string(&colors).expect("readable").lines().count();
    let bad = tmp.path().join("bad.txt");
    std::fs::write(&bad, "0\n".repeat(lines)).expect("writable");
    expect_code(&["color", "--data", path(&base), "--check", path(&bad)], 2);
    expect_code(
        &["run", "--data", path(&base), "--out", path(&tmp.path().join("x")),
          "--engine", "chromatic", "--coloring", path(&bad)],
        2,
    );
}

#[test]
fn metrics_prints_the_per_machine_csv() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let base = gen_pagerank(tmp.path());
    let run = tmp.path().join("run");
    expect_ok(&[
        "run", "--data", path(&base), "--out", path(&run), "--engine", "chromatic",
        "--machines", "2",
    ]);
    let csv = expect_ok(&["metrics", "--run", path(&run)]);
    assert!(csv.starts_with("machine,wall_ms,"), "{csv}");
    assert_eq!(csv.lines().count(), 3, "header plus one row per machine:\n{csv}");
    let summary = expect_ok(&["metrics", "--run", path(&run), "--summary"]);
    assert!(summary.contains("\"updates\""), "{summary}");
}

#[test]
fn damaged_artifacts_fail_the_audit_as_bad_input() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let base = gen_pagerank(tmp.path());
    let run = tmp.path().join("run");
    expect_ok(&[
        "run", "--data", path(&base), "--out", path(&run), "--engine", "locking",
    ]);
    expect_ok(&["audit", "--run", path(&run)]);

    let log = run.join("exec_log.ndjson");
    let bytes = std::fs::read(&log).expect("readable");
    std::fs::write(&log, &bytes[..bytes.len() / 2]).expect("writable");
    expect_code(&["audit", "--run", path(&run)], 2);

    std::fs::remove_file(run.join("final_data.bin")).expect("removable");
    expect_code(&["audit", "--run", path(&run)], 2);

    expect_code(&["audit", "--run", path(&tmp.path().join("nowhere"))], 2);
}

#[test]
fn seed_env_var_overrides_the_flag() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let base = tmp.path().join("star");
    expect_ok(&[
        "gen", "--base", path(&base), "--seed", "3", "counter-star",
        "--spokes", "4", "--rounds", "10",
    ]);

    let run_with = |out: &Path, seed_flag: &str, seed_env: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_graphlite"));
        cmd.args([
            "run", "--data", path(&base), "--out", path(out), "--engine", "locking",
            "--model", "edge", "--workers", "4", "--seed", seed_flag,
        ]);
        match seed_env {
            Some(v) => cmd.env("GRAPHLITE_SEED", v),
            None => cmd.env_remove("GRAPHLITE_SEED"),
        };
        let out = cmd.output().expect("binary spawns");
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    };
    let seed_of = |out: &Path| -> String {
        let config = String::from_utf8(read(out, "config.json")).expect("utf-8");
        config
            .lines()
            .find(|l| l.contains("\"seed\""))
            .expect("config records the seed")
            .trim()
            .to_string()
    };

    let (flag_run, env_run) = (tmp.path().join("flag"), tmp.path().join("env"));
    run_with(&flag_run, "5", None);
    run_with(&env_run, "5", Some("99"));
    assert_eq!(seed_of(&flag_run), "\"seed\": 5,");
    assert_eq!(seed_of(&env_run), "\"seed\": 99,");

    let out = Command::new(env!("CARGO_BIN_EXE_graphlite"))
        .args(["run", "--data", path(&base), "--out", path(&tmp.path().join("junk")),
               "--engine", "locking"])
        .env("GRAPHLITE_SEED", "not-a-number")
        .output()
        .expect("binary spawns");
    assert_eq!(out.status.code(), Some(2));
}
