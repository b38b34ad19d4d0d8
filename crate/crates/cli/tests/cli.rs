use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn uavcap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uavcap")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn nominal_run_captures() {
    let dir = TempDir::new().unwrap();
    let cfg = configs().join("noise_free.toml");
    let out = uavcap(&["run", "--config", path(&cfg), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("captured at"));
    for f in ["run.ndjson", "summary.json", "timeseries.csv"] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["verdict"], "captured");
    let csv = fs::read_to_string(dir.path().join("timeseries.csv")).unwrap();
    assert!(csv.lines().next().unwrap().starts_with("step,t,"));
}

#[test]
fn malformed_config_exits_one() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "duration = \"long\"\n").unwrap();
    let out = uavcap(&["run", "--config", path(&cfg), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("invalid config"));
    let out = uavcap(&["check", "--config", path(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_field_and_missing_file_exit_one() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("typo.toml");
    fs::write(&cfg, "sead = 3\n").unwrap();
    assert_eq!(uavcap(&["check", "--config", path(&cfg)]).status.code(), Some(1));
    let missing = dir.path().join("nope.toml");
    assert_eq!(uavcap(&["check", "--config", path(&missing)]).status.code(), Some(1));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(uavcap(&["run"]).status.code(), Some(1));
    assert_eq!(
        uavcap(&["mc", "--config", "x.toml", "--runs", "0"]).status.code(),
        Some(1)
    );
    assert_eq!(uavcap(&["--help"]).status.code(), Some(0));
}

#[test]
fn short_budget_exits_two() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("short.toml");
    let text = fs::read_to_string(configs().join("noise_free.toml")).unwrap();
    fs::write(&cfg, text.replace("duration = 180.0", "duration = 5.0")).unwrap();
    let out = uavcap(&["run", "--config", path(&cfg), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("Timeout"));
}

#[test]
fn mc_is_deterministic() {
    let cfg = configs().join("collaborative.toml");
    let runs: Vec<(String, String)> = (0..2)
        .map(|_| {
            let dir = TempDir::new().unwrap();
            let out = uavcap(&[
                "mc",
                "--config",
                path(&cfg),
                "--runs",
                "10",
                "--seed-base",
                "40",
                "--out",
                path(dir.path()),
            ]);
            assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
            (
                fs::read_to_string(dir.path().join("verdicts.csv")).unwrap(),
                fs::read_to_string(dir.path().join("mc_summary.json")).unwrap(),
            )
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    let lines: Vec<&str> = runs[0].0.lines().collect();
    assert_eq!(lines[0], "seed,verdict,capture_time,failure_cause");
    assert_eq!(lines.len(), 11);
    assert!(lines[1].starts_with("40,") && lines[10].starts_with("49,"));
}

#[test]
fn plot_writes_svg_and_sidecar() {
    let dir = TempDir::new().unwrap();
    let cfg = configs().join("noise_free.toml");
    assert_eq!(
        uavcap(&["run", "--config", path(&cfg), "--out", path(dir.path())])
            .status
            .code(),
        Some(0)
    );
    let log = dir.path().join("run.ndjson");
    for kind in ["depth_profile", "trajectory_3d", "pixel_error", "phase_timeline"] {
        let svg = dir.path().join("fig").join(format!("{kind}.svg"));
        let out = uavcap(&["plot", "--kind", kind, "--log", path(&log), "--out", path(&svg)]);
        assert_eq!(out.status.code(), Some(0), "{kind}: {}", stderr(&out));
        assert!(fs::read_to_string(&svg).unwrap().contains("<svg"));
        assert!(svg.with_extension("csv").is_file());
    }
}

#[test]
fn plot_names_the_missing_record() {
    let dir = TempDir::new().unwrap();
    let cfg = configs().join("noise_free.toml");
    assert_eq!(
        uavcap(&["run", "--config", path(&cfg), "--out", path(dir.path())])
            .status
            .code(),
        Some(0)
    );
    // Keep only the header and verdict lines.
    let log = fs::read_to_string(dir.path().join("run.ndjson")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    let stripped = dir.path().join("stripped.ndjson");
    fs::write(&stripped, format!("{}\n{}\n", lines[0], lines[lines.len() - 1])).unwrap();
    let svg = dir.path().join("depth.svg");
    let out = uavcap(&[
        "plot",
        "--kind",
        "depth_profile",
        "--log",
        path(&stripped),
        "--out",
        path(&svg),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("'detection'"), "{}", stderr(&out));
    assert!(!svg.exists());

    let out = uavcap(&[
        "plot",
        "--kind",
        "heatmap",
        "--log",
        path(&stripped),
        "--out",
        path(&svg),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn check_reports_rates() {
    for (name, mode) in [("collaborative.toml", "Collaborative"), ("single.toml", "Single")] {
        let out = uavcap(&["check", "--config", path(&configs().join(name))]);
        assert_eq!(out.status.code(), Some(0));
        let text = String::from_utf8_lossy(&out.stdout);
        assert!(text.starts_with(&format!("ok: {mode} mode")), "{text}");
        assert!(text.contains("vision every 13 steps") && text.contains("control every 20 steps"));
    }
}
