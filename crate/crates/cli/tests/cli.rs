use std::path::Path;
use std::process::{Command, Output};

fn evtr(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evtr"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn evtr")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn straight_world(dir: &Path, len: &str) {
    let o = evtr(
        &[
            "world",
            "--shape",
            "straight",
            "--length",
            len,
            "--out-world",
            "w.txt",
            "--out-path",
            "p.txt",
        ],
        dir,
    );
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn teach_writes_map_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    straight_world(dir.path(), "4");
    let o = evtr(
        &[
            "teach",
            "--world",
            "w.txt",
            "--path",
            "p.txt",
            "--out-map",
            "m.map",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("nodes=21"), "{}", stdout(&o));
    assert!(dir.path().join("m.map").exists());
    assert!(dir.path().join("m.trace.csv").exists());
}

#[test]
fn missing_world_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    straight_world(dir.path(), "2");
    let o = evtr(
        &[
            "teach",
            "--world",
            "absent.txt",
            "--path",
            "p.txt",
            "--out-map",
            "m.map",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("world file not found"),
        "{}",
        stderr(&o)
    );
    assert!(!dir.path().join("m.map").exists());
}

#[test]
fn zero_distance_interval_rejected_before_running() {
    let dir = tempfile::tempdir().unwrap();
    straight_world(dir.path(), "2");
    std::fs::write(dir.path().join("c.txt"), "delta_d=0\n").unwrap();
    let o = evtr(
        &[
            "teach",
            "--config",
            "c.txt",
            "--world",
            "w.txt",
            "--path",
            "p.txt",
            "--out-map",
            "m.map",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("delta_d"), "{}", stderr(&o));
    assert!(!dir.path().join("m.map").exists());
}

#[test]
fn unknown_override_and_bad_usage() {
    let dir = tempfile::tempdir().unwrap();
    straight_world(dir.path(), "2");
    let o = evtr(
        &[
            "teach",
            "--set",
            "warp=9",
            "--world",
            "w.txt",
            "--path",
            "p.txt",
            "--out-map",
            "m.map",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("warp"));
    assert_eq!(evtr(&["teach"], dir.path()).status.code(), Some(2));
    assert_eq!(evtr(&["frobnicate"], dir.path()).status.code(), Some(2));
}

#[test]
fn repeat_outputs_and_reloadable_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    straight_world(d, "3");
    assert!(evtr(
        &[
            "teach",
            "--world",
            "w.txt",
            "--path",
            "p.txt",
            "--out-map",
            "m.map"
        ],
        d
    )
    .status
    .success());
    let o = evtr(
        &[
            "repeat",
            "--set",
            "g_theta=0.002",
            "--world",
            "w.txt",
            "--map",
            "m.map",
            "--out-dir",
            "run",
        ],
        d,
    );
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("outcome=completed"));
    for f in [
        "repeat_trace.csv",
        "corrections.csv",
        "outcome.txt",
        "config.txt",
    ] {
        assert!(d.join("run").join(f).exists(), "{f}");
    }
    let dumped = std::fs::read_to_string(d.join("run/config.txt")).unwrap();
    assert!(dumped.contains("g_theta=0.002"));

    // The dumped config reproduces the run.
    let o = evtr(
        &[
            "repeat",
            "--config",
            "run/config.txt",
            "--world",
            "w.txt",
            "--map",
            "m.map",
            "--out-dir",
            "again",
        ],
        d,
    );
    assert!(o.status.success());
    for f in [
        "repeat_trace.csv",
        "corrections.csv",
        "outcome.txt",
        "config.txt",
    ] {
        assert_eq!(
            std::fs::read(d.join("run").join(f)).unwrap(),
            std::fs::read(d.join("again").join(f)).unwrap(),
            "{f}"
        );
    }

    let o = evtr(
        &[
            "eval",
            "m.trace.csv",
            "run/repeat_trace.csv",
            "--out-csv",
            "ate.csv",
        ],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let mean: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("ate_mean_m="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(mean < 0.05, "{text}");
    assert!(std::fs::read_to_string(d.join("ate.csv"))
        .unwrap()
        .starts_with("j,teach_x"));
}

#[test]
fn baseline_with_strong_drift_fails_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    straight_world(d, "8");
    assert!(evtr(
        &[
            "teach",
            "--world",
            "w.txt",
            "--path",
            "p.txt",
            "--out-map",
            "m.map"
        ],
        d
    )
    .status
    .success());
    let o = evtr(
        &[
            "repeat",
            "--no-corrections",
            "--set",
            "repeat_bias_rot=0.1",
            "--world",
            "w.txt",
            "--map",
            "m.map",
            "--out-dir",
            "base",
        ],
        d,
    );
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    let outcome = std::fs::read_to_string(d.join("base/outcome.txt")).unwrap();
    assert!(outcome.contains("outcome=failed"));
    assert!(outcome.contains("length_pct="));
}

#[test]
fn eval_reports_missing_trace() {
    let dir = tempfile::tempdir().unwrap();
    let o = evtr(&["eval", "a.csv", "b.csv"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("not found"));
}

#[test]
fn bench_prints_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    straight_world(d, "2");
    assert!(evtr(
        &[
            "teach",
            "--world",
            "w.txt",
            "--path",
            "p.txt",
            "--out-map",
            "m.map"
        ],
        d
    )
    .status
    .success());
    let o = evtr(
        &["bench", "--set", "bench_iterations=100", "--map", "m.map"],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(
        text.contains("samples=100") && text.contains("median_us="),
        "{text}"
    );
}
