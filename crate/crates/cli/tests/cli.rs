use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn ptec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ptec")).args(args).output().expect("binary runs")
}

fn ptec_stdin(args: &[&str], input: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_ptec"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn ok(o: &Output) {
    assert!(o.status.success(), "status {:?}\n{}", o.status, String::from_utf8_lossy(&o.stderr));
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    dataset: PathBuf,
    taxonomy: PathBuf,
    split: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let data = root.join("data");
    ok(&ptec(&["synth", "--out", s(&data), "--labels", "4", "--samples-per-label", "25"]));
    let (dataset, taxonomy, split) = (data.join("dataset.jsonl"), data.join("taxonomy.txt"), root.join("split.json"));
    ok(&ptec(&["split", "--dataset", s(&dataset), "--taxonomy", s(&taxonomy), "--out", s(&split)]));
    Fixture {
        _dir: dir,
        root,
        dataset,
        taxonomy,
        split,
    }
}

fn train(f: &Fixture, method: &str, extra: &[&str]) -> PathBuf {
    let run = f.root.join(format!("run-{method}"));
    let mut args = vec![
        "train", "--method", method, "--dataset", s(&f.dataset), "--taxonomy", s(&f.taxonomy), "--split", s(&f.split),
        "--out", s(&run),
    ];
    args.extend_from_slice(extra);
    ok(&ptec(&args));
    run
}

#[test]
fn pipeline_from_synthetic_data_to_report() {
    let f = fixture();
    let ch = train(&f, "ch", &["--seeds", "2", "--epochs", "3", "--ch-lr", "1e-1"]);
    let knn = train(&f, "knn", &["--k", "3"]);
    for run in [&ch, &knn] {
        ok(&ptec(&["eval", "--run", s(run)]));
        assert!(run.join("eval-test.json").exists());
    }
    let summary: Value = serde_json::from_str(&fs::read_to_string(ch.join("eval-test.json")).unwrap()).unwrap();
    assert_eq!(summary["seeds"].as_array().unwrap().len(), 2);
    let f1 = summary["macro_f1_mean"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f1));
    assert!(ch.join("seed-1").join("roc-test.csv").exists());

    let flops = ptec(&["flops", s(&ch), "--json"]);
    ok(&flops);
    let ledger: Value = serde_json::from_slice(&flops.stdout).unwrap();
    assert!(ledger.to_string().contains("2·d·l"));

    let csv = f.root.join("report.csv");
    let report = ptec(&["report", s(&ch), s(&knn), "--csv", s(&csv)]);
    ok(&report);
    let table = String::from_utf8(report.stdout).unwrap();
    assert!(table.contains("CH") && table.contains("KNN"), "{table}");
    let rows = fs::read_to_string(&csv).unwrap();
    assert_eq!(rows.lines().count(), 1 + ptec_core::Method::ALL.len());

    // A finished run resumes without retraining.
    let again = ptec(&[
        "train", "--method", "ch", "--dataset", s(&f.dataset), "--taxonomy", s(&f.taxonomy), "--split", s(&f.split),
        "--out", s(&ch), "--seeds", "2", "--epochs", "3", "--ch-lr", "1e-1", "--resume",
    ]);
    ok(&again);
}

#[test]
fn infer_streams_in_order_and_counts_bad_lines() {
    let f = fixture();
    let run = train(&f, "ch", &["--epochs", "2"]);
    ok(&ptec(&["eval", "--run", s(&run), "--set", "val"]));

    let empty = ptec_stdin(&["infer", "--run", s(&run)], "");
    ok(&empty);
    assert!(empty.stdout.is_empty());

    let lines: Vec<String> = (0..30)
        .map(|i| format!(r#"{{"id":"q{i}","name":"Item {i}","keywords":["alpha"],"description":"words {i}"}}"#))
        .collect();
    let out = ptec_stdin(&["infer", "--run", s(&run), "--workers", "3"], &lines.join("\n"));
    ok(&out);
    let ids: Vec<String> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["id"].as_str().unwrap().to_owned())
        .collect();
    assert_eq!(ids, (0..30).map(|i| format!("q{i}")).collect::<Vec<_>>());

    let mixed = format!("{}\nnot json\n{}\n", lines[0], lines[1]);
    let out = ptec_stdin(&["infer", "--run", s(&run)], &mixed);
    assert_eq!(code(&out), 2);
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 2);
    assert!(String::from_utf8(out.stderr).unwrap().contains("line 2"));
}

#[test]
fn exit_codes() {
    let f = fixture();
    let base = ["--dataset", s(&f.dataset), "--taxonomy", s(&f.taxonomy), "--split", s(&f.split)];
    let out = f.root.join("x");

    let mut missing = vec!["train", "--out", s(&out)];
    missing.extend_from_slice(&base);
    assert_eq!(code(&ptec(&missing)), 1, "no method");

    let mut unknown = missing.clone();
    unknown.extend_from_slice(&["--method", "svm"]);
    assert_eq!(code(&ptec(&unknown)), 1, "unknown method");

    let mut bad_value = missing.clone();
    bad_value.extend_from_slice(&["--method", "knn", "--k", "0"]);
    assert_eq!(code(&ptec(&bad_value)), 1, "k = 0");

    let absent = f.root.join("absent.jsonl");
    assert_eq!(
        code(&ptec(&["split", "--dataset", s(&absent), "--taxonomy", s(&f.taxonomy), "--out", s(&out)])),
        2,
        "missing dataset"
    );
    let infeasible = ptec(&[
        "split", "--dataset", s(&f.dataset), "--taxonomy", s(&f.taxonomy), "--out", s(&out), "--min-counts", "500,2,3",
    ]);
    assert_eq!(code(&infeasible), 3);

    let run = train(&f, "gzip", &[]);
    assert_eq!(code(&ptec(&["eval", "--run", s(&run), "--tau-from", "test"])), 1);

    // Inputs are checksummed; editing the dataset invalidates the run.
    let mut text = fs::read_to_string(&f.dataset).unwrap();
    text.push('\n');
    fs::write(&f.dataset, text).unwrap();
    assert_eq!(code(&ptec(&["eval", "--run", s(&run)])), 2);
}
