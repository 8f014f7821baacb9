use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use xsense::checkpoint::{file_digest, load_model};
use xsense::dataset::{parse_dataset, parse_triples, write_dataset, Triple};
use xsense::eval::{evaluate_split, ModelGenerator};
use xsense::synthetic::clean_entries;

fn xsense(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xsense")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Trained {
    dir: PathBuf,
    triples: Vec<Triple>,
}

fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap().keep();
        let data = dir.join("data");
        let o = xsense(&["synth", "--kind", "toy", "--out", p(&data), "--n", "4", "--dim", "24", "--seed", "3"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let run = dir.join("run");
        let o = xsense(&[
            "train",
            "--embeddings",
            p(&data.join("embeddings.txt")),
            "--data",
            p(&data.join("dataset.jsonl")),
            "--out",
            p(&run),
            "--seed",
            "3",
            "--k",
            "3",
            "--sparse-dim",
            "48",
            "--extractor-epochs",
            "20",
            "--extractor-batch",
            "8",
            "--epochs",
            "150",
            "--batch",
            "1",
            "--checkpoint-every",
            "50",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let entries = parse_dataset(fs::read(data.join("dataset.jsonl")).unwrap().as_slice()).unwrap();
        let triples = xsense::dataset::entries_to_triples(&entries);
        fs::write(dir.join("train.jsonl"), xsense::dataset::write_triples(&triples)).unwrap();
        Trained { dir, triples }
    })
}

#[test]
fn validate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let clean = dir.path().join("clean.jsonl");
    let mut entries = clean_entries(10, 1);
    fs::write(&clean, write_dataset(&entries)).unwrap();
    let o = xsense(&["validate", "--data", p(&clean)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("entries 10 violations 0"));

    let word = entries[4].word.clone();
    entries[4].examples[0].retain(|t| *t != word);
    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, write_dataset(&entries)).unwrap();
    let o = xsense(&["validate", "--data", p(&bad)]);
    assert_eq!(o.status.code(), Some(1));
    let text = stdout(&o);
    assert_eq!(text.matches("MissingTargetWord").count(), 1);
    assert!(text.contains("line 5: MissingTargetWord"));

    let o = xsense(&["validate", "--data", p(&dir.path().join("absent.jsonl"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn mutated_corpus_flags_every_planted_line() {
    let dir = tempfile::tempdir().unwrap();
    let o = xsense(&["synth", "--kind", "mutated", "--out", p(dir.path()), "--n", "30", "--seed", "2"]);
    assert!(o.status.success());
    let planted: Vec<serde_json::Value> =
        serde_json::from_slice(&fs::read(dir.path().join("planted.json")).unwrap()).unwrap();
    let o = xsense(&["validate", "--data", p(&dir.path().join("dataset.jsonl"))]);
    assert_eq!(o.status.code(), Some(1));
    let text = stdout(&o);
    for rec in &planted {
        assert!(text.contains(&format!("line {}:", rec["line"])), "line {} not flagged", rec["line"]);
    }
}

#[test]
fn stats_and_split() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    fs::write(&data, write_dataset(&clean_entries(40, 5))).unwrap();
    let o = xsense(&["stats", "--data", p(&data)]);
    assert!(o.status.success());
    let stats: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(stats["definitions"], 40);

    let out = dir.path().join("splits");
    let o = xsense(&["split", "--data", p(&data), "--out", p(&out), "--unseen-fraction", "0.2", "--seed", "1"]);
    assert!(o.status.success());
    let mut total = 0;
    for (line, name) in stdout(&o).lines().zip(["train", "test_seen", "test_unseen"]) {
        let n: usize = line.strip_prefix(&format!("{name} ")).unwrap().parse().unwrap();
        let triples = parse_triples(fs::read(out.join(format!("{name}.jsonl"))).unwrap().as_slice()).unwrap();
        assert_eq!(triples.len(), n);
        total += n;
    }
    let examples: usize = clean_entries(40, 5).iter().map(|e| e.examples.len()).sum();
    assert_eq!(total, examples);
}

#[test]
fn unknown_variant_is_a_usage_error() {
    let o = xsense(&["train", "--embeddings", "e", "--data", "d", "--out", "o", "--variant", "ATT"]);
    assert_eq!(o.status.code(), Some(2));
    let o = xsense(&["eval", "--data", "d"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_writes_report_and_checkpoints() {
    let t = trained();
    let run = t.dir.join("run");
    for name in ["extractor.json", "model.json", "report.json"] {
        assert!(run.join(name).exists(), "{name}");
    }
    for epoch in [50, 100, 150] {
        assert!(run.join(format!("checkpoints/epoch-{epoch:04}.json")).exists());
    }
    let report: serde_json::Value = serde_json::from_slice(&fs::read(run.join("report.json")).unwrap()).unwrap();
    let initial = report["phase1_initial"]["reconstruction"].as_f64().unwrap();
    let last = report["phase1_epochs"].as_array().unwrap().last().unwrap()["reconstruction"].as_f64().unwrap();
    assert!(last < initial, "{last} >= {initial}");
    let losses: Vec<f64> = report["phase2_epochs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(losses.len(), 150);
    assert!(losses[149] < losses[0]);
    let final_ckpt = load_model(&run.join("checkpoints/epoch-0150.json")).unwrap();
    assert_eq!(final_ckpt, load_model(&run.join("model.json")).unwrap());
}

#[test]
fn generate_reproduces_training_definitions() {
    let t = trained();
    let model = t.dir.join("run/model.json");
    for tr in &t.triples {
        let o = xsense(&["generate", "--checkpoint", p(&model), "--word", &tr.word, "--context", &tr.context.join(" ")]);
        assert!(o.status.success());
        let text = stdout(&o);
        let first = text.lines().next().unwrap();
        assert_eq!(first, format!("definition: {}", tr.definition.join(" ")));
        let weights: Vec<f64> = text
            .lines()
            .skip(1)
            .map(|l| l.split('\t').nth(1).unwrap().strip_prefix("weight ").unwrap().parse().unwrap())
            .collect();
        assert_eq!(weights.len(), 3);
        assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(text.lines().skip(1).all(|l| l.split("neighbors ").nth(1).unwrap().split(", ").count() == 3));
    }
}

#[test]
fn generate_rejects_unknown_word() {
    let t = trained();
    let model = t.dir.join("run/model.json");
    let o = xsense(&["generate", "--checkpoint", p(&model), "--word", "zzzunknown", "--context", "a zzzunknown b"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn eval_matches_the_library_exactly() {
    let t = trained();
    let model = t.dir.join("run/model.json");
    let data = t.dir.join("train.jsonl");
    let o = xsense(&["eval", "--checkpoint", p(&model), "--data", p(&data)]);
    assert!(o.status.success());
    let text = stdout(&o);
    let mut lines = text.lines();
    let bleu: f64 = lines.next().unwrap().strip_prefix("bleu ").unwrap().parse().unwrap();
    let rouge: f64 = lines.next().unwrap().strip_prefix("rougeL ").unwrap().parse().unwrap();

    let ckpt = load_model(&model).unwrap();
    let lib = evaluate_split(&ModelGenerator::new(&ckpt.model, &ckpt.embeddings), &t.triples).unwrap();
    assert_eq!(bleu.to_bits(), lib.bleu.to_bits());
    assert_eq!(rouge.to_bits(), lib.rouge_l.to_bits());
    assert_eq!(lines.next().unwrap(), format!("count {} skipped 0", t.triples.len()));
}

#[test]
fn eval_echo_and_empty_split() {
    let t = trained();
    let o = xsense(&["eval", "--echo", "--data", p(&t.dir.join("train.jsonl"))]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("bleu 100\nrougeL 1\n"));

    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let o = xsense(&["eval", "--echo", "--data", p(&empty)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn inspect_reads_both_checkpoint_kinds() {
    let t = trained();
    let run = t.dir.join("run");
    let o = xsense(&["inspect", "--checkpoint", p(&run.join("model.json")), "--dim", "0", "--top", "4"]);
    assert!(o.status.success());
    let from_model = stdout(&o);
    assert_eq!(from_model.lines().count(), 4);

    let emb = t.dir.join("data/embeddings.txt");
    let o = xsense(&[
        "inspect",
        "--checkpoint",
        p(&run.join("extractor.json")),
        "--embeddings",
        p(&emb),
        "--dim",
        "0",
        "--top",
        "4",
    ]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), from_model);

    let o = xsense(&["inspect", "--checkpoint", p(&run.join("extractor.json")), "--dim", "0"]);
    assert_eq!(o.status.code(), Some(1));
    let o = xsense(&["inspect", "--checkpoint", p(&run.join("model.json")), "--dim", "48"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn retraining_from_a_saved_extractor_is_reproducible() {
    let t = trained();
    let data = t.dir.join("data");
    let extractor = t.dir.join("run/extractor.json");
    let before = file_digest(&extractor).unwrap();
    let mut digests = Vec::new();
    for i in 0..2 {
        let out = t.dir.join(format!("rerun{i}"));
        let o = xsense(&[
            "train",
            "--embeddings",
            p(&data.join("embeddings.txt")),
            "--data",
            p(&data.join("dataset.jsonl")),
            "--out",
            p(&out),
            "--extractor",
            p(&extractor),
            "--k",
            "3",
            "--epochs",
            "3",
            "--batch",
            "2",
            "--seed",
            "7",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        digests.push(file_digest(&out.join("model.json")).unwrap());
        let ckpt = load_model(&out.join("model.json")).unwrap();
        let original = load_model(&t.dir.join("run/model.json")).unwrap();
        assert_eq!(ckpt.model.extractor, original.model.extractor);
    }
    assert_eq!(digests[0], digests[1]);
    assert_eq!(file_digest(&extractor).unwrap(), before);
}
