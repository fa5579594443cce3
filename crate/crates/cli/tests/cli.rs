use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn gbmds(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gbmds"))
        .args(args)
        .env_remove("GBMDS_OUT")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_points(dir: &Path) -> String {
    let mut text = String::from("a,b,c\n");
    for i in 0..9 {
        let t = i as f64;
        text.push_str(&format!("{},{},{}\n", 2.0 + t.cos() * 2.0, 1.0 + (1.7 * t).sin(), 0.3 * t));
    }
    let p = dir.join("points.csv");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const FAST: &[&str] = &["--particles", "30", "--threads", "1"];

fn run_ok(args: &[&str]) {
    let o = gbmds(args);
    assert!(o.status.success(), "{args:?} failed: {}", stderr(&o));
}

#[test]
fn empty_input_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "").unwrap();
    let out = dir.path().join("out");
    let o = gbmds(&["dissim", "--data", empty.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no observations"), "{}", stderr(&o));
}

#[test]
fn bad_options_are_input_errors() {
    let dir = TempDir::new().unwrap();
    let data = write_points(dir.path());
    let out = dir.path().join("out");
    let o = gbmds(&["fit", "--data", &data, "--phi", "1.5", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = gbmds(&["fit", "--data", "/nonexistent/file.csv", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = gbmds(&["incremental", "--data", &data, "--batches", "5,4", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn iteration_cap_has_its_own_exit_code() {
    let dir = TempDir::new().unwrap();
    let data = write_points(dir.path());
    let out = dir.path().join("out");
    let mut args = vec!["fit", "--data", &data, "--max-iterations", "1", "--out", out.to_str().unwrap()];
    args.extend_from_slice(FAST);
    let o = gbmds(&args);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn dissim_writes_a_symmetric_matrix() {
    let dir = TempDir::new().unwrap();
    let data = write_points(dir.path());
    let out = dir.path().join("out");
    run_ok(&["dissim", "--data", &data, "--metric", "cosine", "--out", out.to_str().unwrap()]);
    let text = fs::read_to_string(out.join("dissimilarity.csv")).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 9);
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row[i], 0.0);
        for (j, v) in row.iter().enumerate() {
            assert_eq!(*v, rows[j][i]);
        }
    }
    assert!(out.join("manifest.json").exists());
}

#[test]
fn cosine_rejects_negative_data_once() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("neg.csv");
    fs::write(&p, "1,2\n-1,3\n2,2\n").unwrap();
    let out = dir.path().join("out");
    let o = gbmds(&["dissim", "--data", p.to_str().unwrap(), "--metric", "cosine", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert_eq!(msg.matches("negative entry").count(), 1, "{msg}");
}

#[test]
fn fit_is_deterministic_and_complete() {
    let dir = TempDir::new().unwrap();
    let data = write_points(dir.path());
    let mut summaries = Vec::new();
    for (name, threads) in [("a", "1"), ("b", "2")] {
        let out = dir.path().join(name);
        run_ok(&[
            "fit", "--data", &data, "--family", "tsn", "--seed", "7", "--particles", "30", "--threads", threads,
            "--out", out.to_str().unwrap(),
        ]);
        for f in ["mode.csv", "samples.csv", "regions.json", "diagnostics.csv", "summary.json", "manifest.json"] {
            assert!(out.join(f).exists(), "missing {f}");
        }
        summaries.push(fs::read_to_string(out.join("summary.json")).unwrap());
    }
    assert_eq!(summaries[0], summaries[1]);
    let s: serde_json::Value = serde_json::from_str(&summaries[0]).unwrap();
    assert!(s["log_evidence"].as_f64().unwrap().is_finite());
    assert_eq!(s["n"], 9);
}

#[test]
fn compare_marks_one_winner() {
    let dir = TempDir::new().unwrap();
    let data = write_points(dir.path());
    let out = dir.path().join("out");
    let mut args = vec!["compare", "--data", &data, "--families", "tn,tt", "--dims", "1-2", "--out", out.to_str().unwrap()];
    args.extend_from_slice(FAST);
    run_ok(&args);
    let table: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("comparison.json")).unwrap()).unwrap();
    let csv = fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(table.is_object());
}

#[test]
fn incremental_writes_every_batch() {
    let dir = TempDir::new().unwrap();
    let data = write_points(dir.path());
    let out = dir.path().join("out");
    let mut args = vec!["incremental", "--data", &data, "--batches", "6,9", "--out", out.to_str().unwrap()];
    args.extend_from_slice(FAST);
    run_ok(&args);
    assert!(out.join("batch-1/mode.csv").exists());
    assert!(out.join("batch-2/mode.csv").exists());
    let batches: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("batches.json")).unwrap()).unwrap();
    assert_eq!(batches.as_array().unwrap().len(), 2);
}

#[test]
fn text_input_uses_jaccard() {
    let dir = TempDir::new().unwrap();
    let docs = dir.path().join("docs.txt");
    fs::write(
        &docs,
        "the cat sat on the mat\nthe dog sat on the log\na cat and a dog\nbirds fly over the sea\nthe sea is wide\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    run_ok(&["dissim", "--text", docs.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let text = fs::read_to_string(out.join("dissimilarity.csv")).unwrap();
    let values: Vec<f64> = text.split([',', '\n']).filter(|v| !v.is_empty()).map(|v| v.parse().unwrap()).collect();
    assert_eq!(values.len(), 25);
    assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn experiment_accepts_overrides() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let mut args = vec![
        "experiment", "outliers", "--set", "n=12", "--set", "outlier_fraction=0.1", "--out", out.to_str().unwrap(),
    ];
    args.extend_from_slice(FAST);
    run_ok(&args);
    for f in ["experiment.json", "dissimilarity.csv", "comparison.csv", "comparison.json", "manifest.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let o = gbmds(&["experiment", "outliers", "--set", "bogus=1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
