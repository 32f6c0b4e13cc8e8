use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::{DMatrix, DVector};
use serde_json::Value;

use ddlab::ingest::{write_csv, write_table};
use ddlab::ood_scores::{ClassifierHead, ModelOutputs};

fn ddlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddlab")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn json(o: &Output) -> Value {
    serde_json::from_str(&stdout(o)).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_scores(dir: &Path, name: &str, values: &[f64]) -> PathBuf {
    let path = dir.join(name);
    let mut text = String::from("row,score\n");
    for (i, v) in values.iter().enumerate() {
        text += &format!("{i},{v}\n");
    }
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn theory_sweep_defaults() {
    let text = stdout(&ddlab(&["theory-sweep"]));
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("# ddlab-curve v1"));
    assert_eq!(lines[1], "p,c,risk_lo,risk_hi,ood_lo,ood_hi,convention");
    let records = &lines[2..];
    assert_eq!(records.len(), 59);
    let inf: Vec<&str> = records
        .iter()
        .filter(|l| l.contains("inf"))
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(inf, ["29", "30", "31"]);
}

#[test]
fn theory_sweep_convention_changes_ood_columns() {
    let args = ["theory-sweep", "--p-min", "10", "--p-max", "10"];
    let proof = stdout(&ddlab(&args));
    let paper = stdout(&ddlab(&[&args[..], &["--convention", "paper"]].concat()));
    let row = |t: &str| {
        t.lines()
            .nth(2)
            .unwrap()
            .split(',')
            .map(String::from)
            .collect::<Vec<_>>()
    };
    let (a, b) = (row(&proof), row(&paper));
    assert_eq!(a[..4], b[..4]);
    assert_ne!(a[4], b[4]);
    assert_eq!(a[6], "proof");
    assert_eq!(b[6], "paper");
}

#[test]
fn bad_arguments_exit_with_usage_code() {
    assert_eq!(
        ddlab(&["theory-sweep", "--p-min", "40", "--p-max", "10"]).status.code(),
        Some(2)
    );
    assert_eq!(ddlab(&["theory-sweep", "--sigma", "-1"]).status.code(), Some(2));
    assert_eq!(ddlab(&["no-such-command"]).status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_ddlab"))
        .env("DDLAB_THREADS", "zero")
        .arg("theory-sweep")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn mc_sweep_writes_curve_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("curve.csv");
    let o = ddlab(&[
        "mc-sweep",
        "--trials",
        "40",
        "--test-points",
        "200",
        "--p-step",
        "2",
        "--out",
        p(&out),
    ]);
    stdout(&o);
    let csv = std::fs::read_to_string(&out).unwrap();
    assert!(csv.lines().nth(1).unwrap().ends_with("mc_weight_err,mc_weight_err_se"));
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("curve.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "mc-sweep");
    assert_eq!(manifest["params"]["trials"], 40);
    let peak = manifest["summary"]["peak_p_risk"].as_u64().unwrap();
    assert!((28..=32).contains(&peak), "peak at {peak}");
}

#[test]
fn mc_sweep_is_reproducible_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let run = |threads: &str, name: &str| {
        let out = dir.path().join(name);
        let o = Command::new(env!("CARGO_BIN_EXE_ddlab"))
            .env("DDLAB_THREADS", threads)
            .args([
                "mc-sweep",
                "--trials",
                "16",
                "--test-points",
                "100",
                "--p-min",
                "20",
                "--p-max",
                "40",
            ])
            .args(["--phi", "sigmoid", "--seed", "3", "--out"])
            .arg(&out)
            .output()
            .unwrap();
        stdout(&o);
        std::fs::read(out).unwrap()
    };
    assert_eq!(run("1", "a.csv"), run("3", "b.csv"));
}

#[test]
fn mc_sweep_needs_an_output() {
    assert_eq!(ddlab(&["mc-sweep", "--trials", "2"]).status.code(), Some(2));
}

fn logits_only_table(dir: &Path) -> PathBuf {
    let logits = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 3.0, 0.0]);
    let out = ModelOutputs::new(DMatrix::zeros(2, 1), Some(logits), None).unwrap();
    let path = dir.join("logits.ddft");
    write_table(&out, None, &path).unwrap();
    path
}

#[test]
fn score_msp_on_logits() {
    let dir = tempfile::tempdir().unwrap();
    let table = logits_only_table(dir.path());
    let text = stdout(&ddlab(&[
        "score",
        "--train",
        p(&table),
        "--eval",
        p(&table),
        "--method",
        "msp",
    ]));
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("# ddlab-scores v1"));
    assert_eq!(lines[1], "row,msp");
    let msp: Vec<f64> = lines[2..]
        .iter()
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!((msp[0] - 0.5).abs() < 1e-12);
    assert!((msp[1] - 1.0 / (1.0 + (-3.0f64).exp())).abs() < 1e-12);
}

#[test]
fn score_without_head_names_the_missing_block() {
    let dir = tempfile::tempdir().unwrap();
    let table = logits_only_table(dir.path());
    let o = ddlab(&["score", "--train", p(&table), "--eval", p(&table), "--method", "react"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("head"));
}

#[test]
fn score_all_emits_every_applicable_method() {
    let dir = tempfile::tempdir().unwrap();
    let features = DMatrix::from_row_slice(6, 2, &[3.0, 0.1, 2.5, 0.3, 3.2, 0.0, 0.2, 3.0, 0.1, 2.7, 0.4, 3.3]);
    let head = ClassifierHead::new(
        DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]),
        DVector::zeros(2),
    )
    .unwrap();
    let logits = head.logits(&features).unwrap();
    let train = ModelOutputs::new(features.clone(), Some(logits), Some(vec![0, 0, 0, 1, 1, 1])).unwrap();
    let train_path = dir.path().join("train.ddft");
    write_table(&train, Some(&head), &train_path).unwrap();
    let eval = ModelOutputs::new(features, None, None).unwrap();
    let eval_path = dir.path().join("eval.csv");
    write_csv(&eval, &eval_path).unwrap();

    let text = stdout(&ddlab(&["score", "--train", p(&train_path), "--eval", p(&eval_path)]));
    let header = text.lines().nth(1).unwrap();
    assert_eq!(header.split(',').count(), 11, "{header}");
    assert_eq!(text.lines().count(), 8);
}

#[test]
fn auc_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cases = [
        (vec![2.0, 3.0], vec![0.0, 1.0], 1.0),
        (vec![1.0, 1.0], vec![1.0, 1.0], 0.5),
        (vec![0.0, 1.0], vec![0.5, 2.0], 0.25),
    ];
    for (i, (id, ood, want)) in cases.iter().enumerate() {
        let a = write_scores(d, &format!("id{i}.csv"), id);
        let b = write_scores(d, &format!("ood{i}.csv"), ood);
        let v = json(&ddlab(&["auc", "--id", p(&a), "--ood", p(&b)]));
        assert_eq!(v["auc"].as_f64().unwrap(), *want);
        assert_eq!(v["n_id"], 2);
    }
}

#[test]
fn auc_with_several_columns_needs_a_choice() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("two.csv");
    std::fs::write(&path, "# ddlab-scores v1\nrow,msp,energy\n0,0.5,1\n1,0.9,2\n").unwrap();
    assert_eq!(
        ddlab(&["auc", "--id", p(&path), "--ood", p(&path)]).status.code(),
        Some(2)
    );
    let v = json(&ddlab(&[
        "auc",
        "--id",
        p(&path),
        "--ood",
        p(&path),
        "--column",
        "energy",
    ]));
    assert_eq!(v["auc"].as_f64().unwrap(), 0.5);
}

fn labelled(dir: &Path, name: &str, rows: usize, cols: usize, data: &[f64], labels: Vec<usize>) -> PathBuf {
    let out = ModelOutputs::new(DMatrix::from_row_slice(rows, cols, data), None, Some(labels)).unwrap();
    let path = dir.join(name);
    write_table(&out, None, &path).unwrap();
    path
}

#[test]
fn nc1_fixtures_and_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let collapsed = labelled(dir.path(), "c.ddft", 4, 1, &[1.0, 1.0, 5.0, 5.0], vec![0, 0, 1, 1]);
    let hand = labelled(dir.path(), "h.ddft", 4, 1, &[-1.0, 1.0, 3.0, 5.0], vec![0, 0, 1, 1]);
    let v = json(&ddlab(&["nc1", "--table", p(&collapsed)]));
    assert!(v["nc1"].as_f64().unwrap().abs() < 1e-12);
    assert_eq!(v["per_class_counts"], serde_json::json!([2, 2]));
    let v = json(&ddlab(&["nc1", "--table", p(&hand)]));
    assert!((v["nc1"].as_f64().unwrap() - 0.125).abs() < 1e-10);
    let v = json(&ddlab(&["nc1", "--table", p(&hand), "--over", p(&hand)]));
    assert!((v["ratio"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn spectrum_of_rank_one_features() {
    let dir = tempfile::tempdir().unwrap();
    let table = labelled(
        dir.path(),
        "r1.ddft",
        4,
        2,
        &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0, 4.0, 8.0],
        vec![0, 1, 0, 1],
    );
    let v = json(&ddlab(&["spectrum", "--table", p(&table)]));
    let frac = v["explained_fraction"].as_array().unwrap();
    assert!((frac[0].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!(frac[1].as_f64().unwrap().abs() < 1e-12);
}

#[test]
fn corrupt_table_exits_with_data_code() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.ddft");
    std::fs::write(&path, b"not a table").unwrap();
    let o = ddlab(&["nc1", "--table", p(&path)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("ddlab: "));
}
