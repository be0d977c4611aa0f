use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const CONFIG: &str = r#"
seed = 5

[corpus]
min_papers_per_author_included = 2
min_papers_per_venue_included = 2
min_papers_per_keyphrases_included = 2
train_end_year = 2012
dev_end_year = 2014

[select]
dense_dimension = 8
triplets_per_epoch = 0
epochs = 2
number_ann_neighbors = 5

[rank]
dense_dimension = 4
metadata_dimension = 4
hidden_dimension = 4
triplets_per_epoch = 0
epochs = 1

[ann]
n_trees = 4
"#;

fn citerec(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_citerec"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(["--config", "toy.toml"])
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "citerec {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn full_workflow() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("toy.toml"), CONFIG).unwrap();

    citerec(dir, &["synth", "--out", "corpus.jsonl", "--documents", "300", "--clusters", "4"]);
    let ingest: Value = serde_json::from_str(&stdout(&citerec(dir, &["ingest", "--input", "corpus.jsonl"]))).unwrap();
    assert_eq!(ingest["report"]["documents"], 300);

    let stats: Value = serde_json::from_str(&stdout(&citerec(dir, &["train-select"]))).unwrap();
    assert_eq!(stats["epoch_loss"].as_array().unwrap().len(), 2);
    citerec(dir, &["build-index"]);
    citerec(dir, &["train-rank"]);
    for f in ["embedder.json", "forest.ann", "ranker.json"] {
        assert!(dir.join("model").join(f).exists(), "{f} missing");
    }

    let report: Value = serde_json::from_str(&stdout(&citerec(
        dir,
        &["evaluate", "--split", "dev", "--mode", "select-only", "--k", "5,20", "--json"],
    )))
    .unwrap();
    assert!(report["mrr"].as_f64().unwrap() > 0.0, "{report}");
    assert!(report["recall"]["20"].as_f64().unwrap() >= report["recall"]["5"].as_f64().unwrap());
    let table = stdout(&citerec(dir, &["evaluate", "--mode", "bm25"]));
    assert!(table.contains("MRR"), "{table}");

    let sweep = stdout(&citerec(dir, &["sweep-k", "--k", "1,5", "--queries", "20"]));
    assert_eq!(sweep.lines().count(), 3, "{sweep}");

    let queries: String = std::fs::read_to_string(dir.join("corpus.jsonl")).unwrap().lines().take(3).map(|l| format!("{l}\n")).collect();
    std::fs::write(dir.join("queries.jsonl"), queries).unwrap();

    citerec(dir, &["bm25", "--build"]);
    assert!(dir.join("model/bm25.json").exists());
    let bm = stdout(&citerec(dir, &["bm25", "--query-file", "queries.jsonl", "--top", "4"]));
    let lines: Vec<Value> = bm.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0]["query_id"], "p00000");
    assert!(lines.iter().all(|l| l["results"].as_array().unwrap().len() <= 4));

    let sel = stdout(&citerec(dir, &["select", "--query-file", "queries.jsonl", "--top", "3"]));
    let lines: Vec<Value> = sel.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    for l in &lines {
        assert!(l["candidates"].as_array().unwrap().len() <= 3, "{l}");
        assert!(l["candidates"].as_array().unwrap().iter().all(|c| c["id"] != l["query_id"]));
    }

    let title = ingest_title(dir);
    let rec: Value =
        serde_json::from_str(&stdout(&citerec(dir, &["recommend", "--title", &title, "--k", "4"]))).unwrap();
    assert_eq!(rec["results"].as_array().unwrap().len(), 4);
}

fn ingest_title(dir: &Path) -> String {
    let first = std::fs::read_to_string(dir.join("corpus.jsonl")).unwrap();
    let v: Value = serde_json::from_str(first.lines().nth(250).unwrap()).unwrap();
    v["title"].as_str().unwrap().to_string()
}

#[test]
fn errors_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_citerec"))
            .current_dir(tmp.path())
            .args(args)
            .output()
            .unwrap()
    };
    let o = run(&["train-select", "--model-dir", "missing"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
    let o = run(&["bm25", "--model-dir", "missing"]);
    assert!(!o.status.success());
    assert!(!run(&["evaluate", "--k", "abc"]).status.success());
    assert!(run(&["--help"]).status.success());
}
