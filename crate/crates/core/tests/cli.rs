use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use railevac::campaign::{Manifest, MANIFEST_FILE};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_railevac"));
    c.env_remove("RAILEVAC_OUT");
    c
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const ONE: [&str; 7] = ["simulate", "--widths", "0.9", "--het", "0", "--exits", "jump"];

#[test]
fn single_run_single_log() {
    let d = tempfile::tempdir().unwrap();
    let o = run(&[&ONE[..], &["--runs", "1", "--out", "c"]].concat(), d.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let logs = fs::read_dir(d.path().join("c/logs/jump_H0_W0.90")).unwrap().count();
    assert_eq!(logs, 1);
    let m: Manifest = serde_json::from_str(&fs::read_to_string(d.path().join("c").join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(m.runs.len(), 1);
    assert_eq!(m.config.runs, 1);
}

#[test]
fn resume_skips_completed_runs_and_reproduces_bytes() {
    let d = tempfile::tempdir().unwrap();
    let o = run(&[&ONE[..], &["--runs", "2", "--out", "c"]].concat(), d.path());
    assert!(stdout(&o).contains("2 logs written, 0 already complete"), "{}", stdout(&o));
    let first = fs::read(d.path().join("c/logs/jump_H0_W0.90/run_001.csv")).unwrap();
    let o = run(&[&ONE[..], &["--runs", "3", "--out", "c"]].concat(), d.path());
    assert!(stdout(&o).contains("1 logs written, 2 already complete"), "{}", stdout(&o));
    // A fresh campaign with the same settings writes identical files.
    let o = run(&[&ONE[..], &["--runs", "2", "--out", "fresh"]].concat(), d.path());
    assert!(o.status.success());
    assert_eq!(fs::read(d.path().join("fresh/logs/jump_H0_W0.90/run_001.csv")).unwrap(), first);
    // A different seed changes the hash, so nothing is reused.
    let o = run(&[&ONE[..], &["--runs", "1", "--seed", "7", "--out", "c"]].concat(), d.path());
    assert!(stdout(&o).contains("1 logs written, 0 already complete"), "{}", stdout(&o));
}

#[test]
fn config_file_env_root_and_flag_precedence() {
    let d = tempfile::tempdir().unwrap();
    fs::write(
        d.path().join("cfg.json"),
        r#"{"widths": [1.34], "het": [28], "exits": ["platform"], "runs": 3, "seed": 11}"#,
    )
    .unwrap();
    let o = bin()
        .args(["simulate", "--config", "cfg.json", "--runs", "1"])
        .env("RAILEVAC_OUT", d.path().join("root"))
        .current_dir(d.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let m: Manifest = serde_json::from_str(&fs::read_to_string(d.path().join("root").join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(m.config.widths, vec![1.34]);
    assert_eq!(m.config.seed, 11);
    assert_eq!(m.runs.len(), 1);
    assert_eq!(m.runs[0].scenario, "platform_H28_W1.34");
    fs::write(d.path().join("bad.json"), r#"{"width": [1.0]}"#).unwrap();
    let o = run(&["simulate", "--config", "bad.json", "--out", "x"], d.path());
    assert!(!o.status.success());
}

#[test]
fn invalid_grid_is_rejected() {
    let d = tempfile::tempdir().unwrap();
    for args in [
        &["simulate", "--widths=-0.5", "--out", "x"][..],
        &["simulate", "--het", "150", "--out", "x"],
        &["simulate", "--runs", "0", "--out", "x"],
        &["simulate", "--dt", "0.5", "--out", "x"],
        &["simulate", "--exits", "ladder", "--out", "x"],
    ] {
        let o = run(args, d.path());
        assert!(!o.status.success(), "{args:?}");
        assert!(!d.path().join("x/manifest.json").exists());
    }
    let o = run(&["simulate", "--widths=-0.5", "--out", "x"], d.path());
    assert!(stderr(&o).contains("configuration error"), "{}", stderr(&o));
}

#[test]
fn analyze_then_validate_and_corrupted_log() {
    let d = tempfile::tempdir().unwrap();
    assert!(run(&[&ONE[..], &["--runs", "2", "--out", "c"]].concat(), d.path()).status.success());
    let o = run(&["analyze", "c"], d.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics = fs::read_to_string(d.path().join("c/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    assert!(metrics.starts_with("scenario,seed,TET,TET_46,TET_corr,flow"));
    assert!(fs::read_to_string(d.path().join("c/design.csv")).unwrap().starts_with("W_m,H_pct,E_code,TET_s"));
    assert_eq!(fs::read_to_string(d.path().join("c/curves.csv")).unwrap().lines().count(), 1 + 2 * 46);

    // Partial campaign: the gaps are listed.
    let o = run(&["validate", "c", "--min-runs", "1"], d.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("missing scenarios") && stderr(&o).contains("stairs_H28_W1.34"));

    fs::write(d.path().join("c/logs/jump_H0_W0.90/run_007.csv"), "# {}\nnot,a,log\n").unwrap();
    let o = run(&["analyze", "c"], d.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("skipping"), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(d.path().join("c/metrics.csv")).unwrap().lines().count(), 3);
}

#[test]
fn validate_empty_dir_fails() {
    let d = tempfile::tempdir().unwrap();
    fs::create_dir(d.path().join("empty")).unwrap();
    let o = run(&["validate", "empty"], d.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("empty batch"), "{}", stderr(&o));
}

#[test]
fn sensitivity_reports() {
    let d = tempfile::tempdir().unwrap();
    let o = run(&["sensitivity", "--mode", "experiment", "--out", "rep"], d.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("stairs E=1") && out.contains("excluded"));
    assert!(out.contains("R2 0.914"), "{out}");
    for f in ["sensitivity.json", "cop.csv", "coefficients.csv"] {
        assert!(d.path().join("rep").join(f).exists(), "{f}");
    }
    fs::write(d.path().join("const.csv"), {
        let mut s = String::from("W_m,H_pct,E_code,TET_s\n");
        for w in [0.65, 0.9, 1.34] {
            for h in [0, 28] {
                for e in 0..3 {
                    s += &format!("{w},{h},{e},50\n");
                }
            }
        }
        s
    })
    .unwrap();
    let o = run(&["sensitivity", "const.csv"], d.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("degenerate"), "{}", stderr(&o));
    fs::write(d.path().join("bad.csv"), "W,H,E,T\n1,0,0,5\n").unwrap();
    let o = run(&["sensitivity", "bad.csv"], d.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("schema"), "{}", stderr(&o));
}
