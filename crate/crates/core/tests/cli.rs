mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};
use vec2gc::cli::{ClusteringDocument, EvaluationDocument, Manifest};
use vec2gc::TreeDocument;

use common::*;

fn vec2gc(args: &[&str], paths: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_vec2gc"));
    cmd.args(args);
    for (flag, path) in paths {
        cmd.arg(flag).arg(path);
    }
    cmd.output().expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn read<T: serde::de::DeserializeOwned>(path: &Path) -> T {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn graph_writes_one_line_per_edge() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("tiny.txt");
    // a.b = 0.6, a.c = 0, b.c = 0.8 with unit vectors.
    fs::write(&input, "3 2\na 1 0\nb 0.6 0.8\nc 0 1\n").unwrap();
    let output = dir.path().join("edges.tsv");
    let out = vec2gc(
        &["graph", "--format", "word2vec", "--theta", "0.5"],
        &[("--input", &input), ("--output", &output)],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(&output).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][..2], ["a", "b"]);
    assert_eq!(rows[1][..2], ["b", "c"]);
    let w_ab: f64 = rows[0][2].parse().unwrap();
    let w_bc: f64 = rows[1][2].parse().unwrap();
    assert!((w_ab - 2.5).abs() < 1e-6, "{w_ab}");
    assert!((w_bc - 5.0).abs() < 1e-6, "{w_bc}");
}

#[test]
fn cluster_writes_tree_and_manifest_that_replays() {
    let dir = tempfile::tempdir().unwrap();
    let p = planted_groups(3, 15, 21);
    let input = dir.path().join("groups.jsonl");
    let labels = dir.path().join("groups.tsv");
    fs::write(&input, p.jsonl()).unwrap();
    fs::write(&labels, p.labels_tsv()).unwrap();
    let tree = dir.path().join("groups.tree.json");

    let out = vec2gc(
        &[
            "cluster", "--format", "jsonl", "--theta", "0.5", "--seed", "9",
        ],
        &[
            ("--input", &input),
            ("--labels", &labels),
            ("--output", &tree),
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("3 leaves"), "{}", stdout(&out));

    let manifest_path = dir.path().join("groups.tree.manifest.json");
    let manifest: Manifest = read(&manifest_path);
    let digest = |path: &Path| hex::encode(Sha256::digest(fs::read(path).unwrap()));
    assert_eq!(manifest.input_sha256, digest(&input));
    assert_eq!(
        manifest.labels_sha256.as_deref(),
        Some(digest(&labels).as_str())
    );
    assert_eq!(manifest.tree_sha256, digest(&tree));
    assert_eq!(manifest.config.seed, 9);
    assert_eq!(manifest.summary.items, 45);
    assert_eq!(manifest.summary.leaves, 3);
    assert_eq!(manifest.summary.non_community, 0);

    let doc: TreeDocument = read(&tree);
    assert_eq!(doc.seed, 9);
    assert_eq!(doc.theta, 0.5);
    let mut leaves: Vec<Vec<String>> = doc.leaf_members();
    leaves.iter_mut().for_each(|l| l.sort());
    leaves.sort();
    let mut expected: Vec<Vec<String>> = p
        .groups
        .iter()
        .map(|g| g.iter().map(|&i| p.emb.id(i).to_owned()).collect())
        .collect();
    expected.iter_mut().for_each(|l| l.sort());
    expected.sort();
    assert_eq!(leaves, expected);

    let replay = dir.path().join("replay.json");
    let out = vec2gc(
        &["cluster"],
        &[("--config", &manifest_path), ("--output", &replay)],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(fs::read(&tree).unwrap(), fs::read(&replay).unwrap());
    assert!(dir.path().join("replay.manifest.json").exists());
}

#[test]
fn generated_seed_is_reported_and_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let p = planted_groups(2, 10, 22);
    let input = dir.path().join("in.jsonl");
    fs::write(&input, p.jsonl()).unwrap();
    let tree = dir.path().join("t.json");
    let out = vec2gc(
        &["cluster", "--format", "jsonl", "--theta", "0.5"],
        &[("--input", &input), ("--output", &tree)],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let line = stderr(&out)
        .lines()
        .find(|l| l.starts_with("seed: "))
        .map(str::to_owned);
    let seed: u64 = line
        .expect("seed line")
        .trim_start_matches("seed: ")
        .parse()
        .unwrap();
    let doc: TreeDocument = read(&tree);
    assert_eq!(doc.seed, seed);
    let manifest: Manifest = read(&dir.path().join("t.manifest.json"));
    assert_eq!(manifest.config.seed, seed);
}

#[test]
fn isolated_items_land_in_the_bucket() {
    let dir = tempfile::tempdir().unwrap();
    let base = planted_groups(2, 10, 23);
    let (emb, _) = append_isolated(&base.emb, 3);
    let input = dir.path().join("in.jsonl");
    let mut bytes = Vec::new();
    emb.write_jsonl(&mut bytes).unwrap();
    fs::write(&input, bytes).unwrap();
    let tree = dir.path().join("t.json");
    let out = vec2gc(
        &[
            "cluster", "--format", "jsonl", "--theta", "0.5", "--seed", "1",
        ],
        &[("--input", &input), ("--output", &tree)],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let raw: serde_json::Value = read(&tree);
    assert_eq!(
        raw["non_community"]["members"],
        serde_json::json!(["lone0", "lone1", "lone2"])
    );
    assert_eq!(raw["non_community"]["reasons"]["lone1"], "isolated");
}

#[test]
fn everything_isolated_gives_an_empty_tree_with_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("axes.csv");
    fs::write(&input, "id,x,y,z\na,1,0,0\nb,0,1,0\nc,0,0,1\n").unwrap();
    let tree = dir.path().join("t.json");
    let out = vec2gc(
        &[
            "cluster", "--format", "csv", "--theta", "0.5", "--seed", "1",
        ],
        &[("--input", &input), ("--output", &tree)],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stderr(&out).contains("warning: no edge reaches theta"));
    let doc: TreeDocument = read(&tree);
    assert!(doc.nodes.is_empty());
    assert_eq!(doc.non_community.members, ["a", "b", "c"]);
}

#[test]
fn bad_inputs_exit_with_status_one() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.txt");
    fs::write(&input, "2 3\na 1 0 0\nb 1 0\n").unwrap();
    let tree = dir.path().join("t.json");
    let out = vec2gc(
        &[
            "cluster", "--format", "word2vec", "--theta", "0.5", "--seed", "1",
        ],
        &[("--input", &input), ("--output", &tree)],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));
    assert!(!tree.exists());

    fs::write(&input, "2 2\na 1 0\nb 0 1\n").unwrap();
    for theta in ["1", "-0.2", "1.2", "nan"] {
        let out = vec2gc(
            &[
                "cluster",
                "--format",
                "word2vec",
                &format!("--theta={theta}"),
                "--seed",
                "1",
            ],
            &[("--input", &input), ("--output", &tree)],
        );
        assert_eq!(
            out.status.code(),
            Some(1),
            "theta {theta}: {}",
            stderr(&out)
        );
        if theta == "1.2" {
            assert!(stderr(&out).contains("[0, 1)"), "{}", stderr(&out));
        }
    }
    let out = vec2gc(&["cluster", "--format", "word2vec", "--bogus"], &[]);
    assert_eq!(out.status.code(), Some(1));

    let out = vec2gc(
        &[
            "cluster",
            "--format",
            "word2vec",
            "--theta",
            "0.5",
            "--max-size",
            "0",
        ],
        &[("--input", &input), ("--output", &tree)],
    );
    assert_eq!(out.status.code(), Some(1));

    let missing = dir.path().join("missing.txt");
    let out = vec2gc(
        &["graph", "--format", "word2vec", "--theta", "0.5"],
        &[("--input", &missing), ("--output", &tree)],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn kmedoids_and_evaluate_produce_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let p = planted_groups(3, 12, 24);
    let input = dir.path().join("news.jsonl");
    let labels = dir.path().join("news.tsv");
    fs::write(&input, p.jsonl()).unwrap();
    // Leave one item unlabeled to exercise the warning.
    let unlabeled = p.emb.id(0).to_owned();
    let tsv: String = p
        .labels_tsv()
        .lines()
        .filter(|l| !l.starts_with(&format!("{unlabeled}\t")))
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(&labels, format!("id\tlabel\n{tsv}")).unwrap();

    let tree = dir.path().join("news.tree.json");
    let base = dir.path().join("news.kmedoids.json");
    assert!(vec2gc(
        &["cluster", "--format", "jsonl", "--theta", "0.5", "--seed", "3"],
        &[("--input", &input), ("--output", &tree)],
    )
    .status
    .success());
    let out = vec2gc(
        &[
            "baseline", "kmedoids", "--format", "jsonl", "--k", "3", "--seed", "3",
        ],
        &[("--input", &input), ("--output", &base)],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let clustering: ClusteringDocument = read(&base);
    assert_eq!(clustering.method, "KMedoids");
    assert_eq!(clustering.clusters.len(), 3);
    assert_eq!(clustering.clusters.iter().map(Vec::len).sum::<usize>(), 36);

    let out = vec2gc(
        &[
            "evaluate",
            "--labels-header",
            "--purity-thresholds",
            "0.5,0.8,1",
        ],
        &[
            ("--tree", &tree),
            ("--baseline", &base),
            ("--labels", &labels),
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(
        stderr(&out).contains("1 clustered item(s)"),
        "{}",
        stderr(&out)
    );
    let report: EvaluationDocument = read(&dir.path().join("news.tree.report.json"));
    assert_eq!(report.dataset, "news.tree");
    assert_eq!(report.methods.len(), 2);
    for m in &report.methods {
        assert_eq!(m.report.fraction(1.0), Some(1.0), "{}", m.method);
        assert_eq!(m.report.unlabeled_members, 1);
    }
    assert!(report.table.contains("| 80%"));
    assert!(stdout(&out).contains("Fraction of clusters @ k% purity (KMedoids)"));

    let empty = dir.path().join("empty.tsv");
    fs::write(&empty, "").unwrap();
    let out = vec2gc(&["evaluate"], &[("--tree", &tree), ("--labels", &empty)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn evaluate_rejects_malformed_tree_and_missing_labels() {
    let dir = tempfile::tempdir().unwrap();
    let tree = dir.path().join("broken.json");
    fs::write(&tree, "{\n  \"theta\": 0.5,\n  \"nodes\": [\n").unwrap();
    let labels = dir.path().join("labels.tsv");
    fs::write(&labels, "a\tx\n").unwrap();
    let out = vec2gc(&["evaluate"], &[("--tree", &tree), ("--labels", &labels)]);
    assert_eq!(out.status.code(), Some(1));
    let msg = stderr(&out);
    assert!(msg.contains("line 4"), "{msg}");
    assert_eq!(msg.trim_end().lines().count(), 1, "{msg}");

    let p = planted_groups(2, 5, 25);
    let input = dir.path().join("in.jsonl");
    fs::write(&input, p.jsonl()).unwrap();
    let good = dir.path().join("good.json");
    assert!(vec2gc(
        &["cluster", "--format", "jsonl", "--theta", "0.55", "--seed", "2"],
        &[("--input", &input), ("--output", &good)],
    )
    .status
    .success());
    let manifest: Manifest = read(&dir.path().join("good.manifest.json"));
    assert_eq!(manifest.config.theta, 0.55);
    let out = vec2gc(
        &["evaluate"],
        &[
            ("--tree", &good),
            ("--labels", &dir.path().join("none.tsv")),
        ],
    );
    assert_eq!(out.status.code(), Some(1));
}
