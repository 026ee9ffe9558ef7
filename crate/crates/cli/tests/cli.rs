use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn claimcheck(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_claimcheck"))
        .args(args)
        .current_dir(cwd)
        .env_remove("CLAIMCHECK_CONFIG")
        .env_remove("CLAIMCHECK_SCORER_URL")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn write_dataset(dir: &Path) {
    let topics = [
        ("aspirin", "stroke"),
        ("statins", "cholesterol"),
        ("coffee", "arrhythmia"),
    ];
    let mut corpus = String::new();
    let mut claims = String::new();
    for (i, (a, b)) in topics.iter().enumerate() {
        let doc = 10 * (i + 1);
        corpus.push_str(&format!(
            "{{\"doc_id\": {doc}, \"title\": \"{a} and {b}\", \"abstract\": [\"We studied {a}.\", \"{a} lowered {b}.\", \"{a} raised {b} in adults.\"]}}\n"
        ));
        claims.push_str(&format!(
            "{{\"id\": {}, \"claim\": \"{a} reduces {b}.\", \"evidence\": {{\"{doc}\": [{{\"sentences\": [1], \"label\": \"SUPPORT\"}}]}}, \"cited_doc_ids\": [{doc}]}}\n",
            100 + i
        ));
        claims.push_str(&format!(
            "{{\"id\": {}, \"claim\": \"{a} is harmless for {b}.\", \"evidence\": {{\"{doc}\": [{{\"sentences\": [2], \"label\": \"CONTRADICT\"}}]}}, \"cited_doc_ids\": [{doc}]}}\n",
            200 + i
        ));
        claims.push_str(&format!(
            "{{\"id\": {}, \"claim\": \"{a} changes eye colour.\", \"cited_doc_ids\": [{doc}]}}\n",
            300 + i
        ));
    }
    fs::write(dir.join("corpus.jsonl"), corpus).unwrap();
    fs::write(dir.join("claims.jsonl"), claims).unwrap();
    fs::write(
        dir.join("run.toml"),
        "output_dir = \"out\"\nmodels_dir = \"models\"\nindex_cache = \"index.json\"\n\n[data]\ncorpus = \"corpus.jsonl\"\nclaims = \"claims.jsonl\"\ntrain_claims = \"claims.jsonl\"\n",
    )
    .unwrap();
}

#[test]
fn full_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_dataset(d);

    let ingest: Value = serde_json::from_str(&ok(&claimcheck(&["ingest", "-c", "run.toml"], d))).unwrap();
    assert_eq!(ingest["docs"], 3);
    assert_eq!(ingest["claims"], 9);
    assert_eq!(ingest["pool_recall"], 1.0);
    assert!(d.join("index.json").exists());

    let trained = ok(&claimcheck(&["train", "--stage", "all", "-c", "run.toml"], d));
    assert_eq!(trained.lines().count(), 4);
    for stage in ["abstract", "rationale", "neutral", "support"] {
        assert!(d.join("models").join(format!("{stage}.cclm")).exists());
    }

    ok(&claimcheck(&["predict", "-c", "run.toml"], d));
    let first = fs::read(d.join("out/predictions.jsonl")).unwrap();
    ok(&claimcheck(
        &["predict", "-c", "run.toml", "--output-dir", "out2", "--workers", "3"],
        d,
    ));
    assert_eq!(first, fs::read(d.join("out2/predictions.jsonl")).unwrap());

    let table = ok(&claimcheck(&["report", "--run-dir", "out"], d));
    assert!(table.contains("Selection+Label"));

    let eval = ok(&claimcheck(
        &[
            "evaluate",
            "--gold",
            "claims.jsonl",
            "--predictions",
            "out/predictions.jsonl",
            "--retrieved",
            "out/retrieved.jsonl",
            "--labels",
            "out/labels.jsonl",
            "--format",
            "json",
        ],
        d,
    ));
    let report: Value = serde_json::from_str(&eval).unwrap();
    assert!(report["labels"]["confusion"]["counts"].is_array());
}

#[test]
fn oracle_flags_reach_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_dataset(d);
    ok(&claimcheck(&["train", "--stage", "neutral", "-c", "run.toml"], d));
    ok(&claimcheck(&["train", "--stage", "support", "-c", "run.toml"], d));
    // No abstract or rationale model exists, so this only works if both
    // stages are replaced by gold.
    ok(&claimcheck(
        &["predict", "-c", "run.toml", "--oracle-abstracts", "--oracle-rationales"],
        d,
    ));
    let retrieved = fs::read_to_string(d.join("out/retrieved.jsonl")).unwrap();
    assert!(retrieved.starts_with("{\"id\":100,\"doc_ids\":[10]}"));
}

#[test]
fn gold_against_gold_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_dataset(d);
    fs::write(
        d.join("gold_preds.jsonl"),
        "{\"id\":100,\"evidence\":{\"10\":{\"sentences\":[1],\"label\":\"SUPPORT\"}}}\n\
         {\"id\":101,\"evidence\":{\"20\":{\"sentences\":[1],\"label\":\"SUPPORT\"}}}\n\
         {\"id\":102,\"evidence\":{\"30\":{\"sentences\":[1],\"label\":\"SUPPORT\"}}}\n\
         {\"id\":200,\"evidence\":{\"10\":{\"sentences\":[2],\"label\":\"CONTRADICT\"}}}\n\
         {\"id\":201,\"evidence\":{\"20\":{\"sentences\":[2],\"label\":\"CONTRADICT\"}}}\n\
         {\"id\":202,\"evidence\":{\"30\":{\"sentences\":[2],\"label\":\"CONTRADICT\"}}}\n",
    )
    .unwrap();
    let out = ok(&claimcheck(
        &[
            "evaluate",
            "--gold",
            "claims.jsonl",
            "--predictions",
            "gold_preds.jsonl",
            "--corpus",
            "corpus.jsonl",
            "--format",
            "json",
        ],
        d,
    ));
    let report: Value = serde_json::from_str(&out).unwrap();
    for family in [
        "retrieval",
        "abstract_label_only",
        "abstract_label_rationale",
        "sentence_selection_only",
        "sentence_selection_label",
    ] {
        assert_eq!(report[family]["f1"], 1.0, "{family}");
    }
}

#[test]
fn failures_are_machine_readable() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_dataset(d);

    let out = claimcheck(&["predict", "-c", "run.toml"], d);
    assert!(!out.status.success());
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "config");
    assert!(err["error"]["message"].as_str().unwrap().contains("model"));

    let out = claimcheck(&["evaluate", "--gold", "missing.jsonl", "--predictions", "x.jsonl"], d);
    assert!(!out.status.success());
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "io");

    fs::write(d.join("bad.toml"), "nonsense_key = 1\n").unwrap();
    let out = claimcheck(&["ingest", "-c", "bad.toml"], d);
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "config");

    let out = claimcheck(&["train", "--stage", "everything"], d);
    assert!(!out.status.success());
}
