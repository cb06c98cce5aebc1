//! End-to-end tests of the `r2vf` binary: exit codes, artifact layout,
//! manifests, and run-to-run determinism.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_r2vf"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin()
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_spec(dir: &Path) {
    std::fs::write(
        dir.join("spec.json"),
        r#"[
            {"name": "city", "kind": "nominal"},
            {"name": "age", "kind": "numeric"},
            {"name": "profession", "kind": "nominal"}
        ]"#,
    )
    .unwrap();
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a.csv", "b.csv"] {
        assert_success(&run(
            &["simulate", "--rows", "500", "--professions", "10", "--seed", "4", "--out", out],
            dir.path(),
        ));
    }
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b.csv")).unwrap();
    assert_eq!(a, b, "same seed must give byte-identical CSVs");
    assert!(dir.path().join("a.manifest.json").exists());
}

#[test]
fn fit_predict_rank_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    write_spec(dir.path());
    assert_success(&run(
        &["simulate", "--rows", "1500", "--professions", "10", "--seed", "2", "--out", "sim.csv"],
        dir.path(),
    ));
    assert_success(&run(
        &[
            "fit", "--data", "sim.csv", "--spec", "spec.json", "--target", "target",
            "--grid-size", "40", "--out-dir", "fitout",
        ],
        dir.path(),
    ));
    for artifact in ["model.json", "clusters.json", "report.json", "manifest.json"] {
        assert!(
            dir.path().join("fitout").join(artifact).exists(),
            "missing {artifact}"
        );
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("fitout/manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["subcommand"], "fit");
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 3);
    for output in manifest["outputs"].as_array().unwrap() {
        assert_eq!(output["sha256"].as_str().unwrap().len(), 64);
    }

    let predict = run(
        &["predict", "--model", "fitout/model.json", "--data", "sim.csv", "--out", "preds.csv"],
        dir.path(),
    );
    assert_success(&predict);
    let preds = std::fs::read_to_string(dir.path().join("preds.csv")).unwrap();
    assert_eq!(preds.lines().count(), 1501, "header plus one row per input");
    assert_eq!(preds.lines().next(), Some("prediction"));

    assert_success(&run(
        &[
            "rank", "--data", "sim.csv", "--spec", "spec.json", "--target", "target",
            "--grid-size", "40", "--out", "rank.csv",
        ],
        dir.path(),
    ));
    let rank = std::fs::read_to_string(dir.path().join("rank.csv")).unwrap();
    assert_eq!(rank.lines().next(), Some("feature,category,score,bin"));
    // 26 cities + 10 professions
    assert_eq!(rank.lines().count(), 37);
}

#[test]
fn identical_fits_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    write_spec(dir.path());
    assert_success(&run(
        &["simulate", "--rows", "1200", "--professions", "10", "--seed", "9", "--out", "sim.csv"],
        dir.path(),
    ));
    for out_dir in ["run1", "run2"] {
        assert_success(&run(
            &[
                "fit", "--data", "sim.csv", "--spec", "spec.json", "--target", "target",
                "--grid-size", "40", "--out-dir", out_dir,
            ],
            dir.path(),
        ));
    }
    for artifact in ["model.json", "clusters.json", "report.json"] {
        let a = std::fs::read(dir.path().join("run1").join(artifact)).unwrap();
        let b = std::fs::read(dir.path().join("run2").join(artifact)).unwrap();
        assert_eq!(a, b, "{artifact} differs between identical runs");
    }
    // manifests embed their own output paths; the checksums must agree
    let sums = |run: &str| -> Vec<String> {
        let m: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join(run).join("manifest.json")).unwrap(),
        )
        .unwrap();
        m["outputs"]
            .as_array()
            .unwrap()
            .iter()
            .map(|o| o["sha256"].as_str().unwrap().to_string())
            .collect()
    };
    assert_eq!(sums("run1"), sums("run2"), "artifact checksums differ");
}

#[test]
fn predict_maps_unseen_categories_to_reference() {
    let dir = tempfile::tempdir().unwrap();
    write_spec(dir.path());
    assert_success(&run(
        &["simulate", "--rows", "1200", "--professions", "10", "--seed", "5", "--out", "sim.csv"],
        dir.path(),
    ));
    assert_success(&run(
        &[
            "fit", "--data", "sim.csv", "--spec", "spec.json", "--target", "target",
            "--grid-size", "40", "--out-dir", "fitout",
        ],
        dir.path(),
    ));
    std::fs::write(
        dir.path().join("new.csv"),
        "city,age,profession\nNOWHERE,44.0,P1\n",
    )
    .unwrap();
    let out = run(
        &["predict", "--model", "fitout/model.json", "--data", "new.csv", "--out", "p.csv"],
        dir.path(),
    );
    assert_success(&out);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("unseen"),
        "expected an unseen-category warning, got: {stderr}"
    );
    let preds = std::fs::read_to_string(dir.path().join("p.csv")).unwrap();
    assert_eq!(preds.lines().count(), 2);
}

#[test]
fn predict_on_empty_input_writes_empty_output() {
    let dir = tempfile::tempdir().unwrap();
    write_spec(dir.path());
    assert_success(&run(
        &["simulate", "--rows", "1200", "--professions", "10", "--seed", "6", "--out", "sim.csv"],
        dir.path(),
    ));
    assert_success(&run(
        &[
            "fit", "--data", "sim.csv", "--spec", "spec.json", "--target", "target",
            "--grid-size", "40", "--out-dir", "fitout",
        ],
        dir.path(),
    ));
    std::fs::write(dir.path().join("empty.csv"), "city,age,profession\n").unwrap();
    let out = run(
        &["predict", "--model", "fitout/model.json", "--data", "empty.csv", "--out", "p.csv"],
        dir.path(),
    );
    assert_success(&out);
    let preds = std::fs::read_to_string(dir.path().join("p.csv")).unwrap();
    assert_eq!(preds.trim(), "prediction", "header-only output expected");
}

#[test]
fn bench_synthetic_emits_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "bench", "--mode", "synthetic", "--reps", "2", "--rows", "1000",
            "--professions", "10", "--grid-size", "30", "--methods", "r2vf,olvf,none",
            "--out-dir", "benchout",
        ],
        dir.path(),
    );
    assert_success(&out);
    let raw = std::fs::read_to_string(dir.path().join("benchout/raw.csv")).unwrap();
    assert_eq!(raw.lines().count(), 7, "header + 2 reps x 3 methods");
    let summary = std::fs::read_to_string(dir.path().join("benchout/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4, "header + 3 methods");
    assert!(dir.path().join("benchout/manifest.json").exists());
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    write_spec(dir.path());

    // usage errors -> 2
    let usage = run(&["simulate", "--rows", "5"], dir.path());
    assert_eq!(usage.status.code(), Some(2), "missing --out is a usage error");
    let bad_method = run(
        &["bench", "--mode", "synthetic", "--methods", "bogus", "--out-dir", "x"],
        dir.path(),
    );
    assert_eq!(bad_method.status.code(), Some(2));
    assert!(
        String::from_utf8_lossy(&bad_method.stderr).contains("r2vf, olvf, none"),
        "usage error should list valid method names"
    );

    // runtime errors -> 1
    let missing = run(
        &[
            "fit", "--data", "nope.csv", "--spec", "spec.json", "--target", "target",
            "--out-dir", "fitout",
        ],
        dir.path(),
    );
    assert_eq!(missing.status.code(), Some(1), "missing input is a runtime error");

    // schema mismatch names the offending column
    assert_success(&run(
        &["simulate", "--rows", "800", "--professions", "10", "--seed", "1", "--out", "sim.csv"],
        dir.path(),
    ));
    std::fs::write(
        dir.path().join("badspec.json"),
        r#"[{"name": "no_such_column", "kind": "nominal"}]"#,
    )
    .unwrap();
    let bad_col = run(
        &[
            "fit", "--data", "sim.csv", "--spec", "badspec.json", "--target", "target",
            "--out-dir", "fitout",
        ],
        dir.path(),
    );
    assert_eq!(bad_col.status.code(), Some(1));
    assert!(
        String::from_utf8_lossy(&bad_col.stderr).contains("no_such_column"),
        "error should name the missing column"
    );
}
