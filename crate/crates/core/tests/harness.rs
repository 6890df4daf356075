use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use elbert::harness::dataset::{format_dataset, keyword_class, parse_dataset};
use elbert::harness::{preprocess, synth_dataset, Checkpoint, LabeledText, Preprocessor, SynthSpec};
use proptest::prelude::*;

fn elbert(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_elbert"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = elbert(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn value(report: &str, key: &str) -> f64 {
    report
        .lines()
        .find_map(|l| l.strip_prefix(key).map(|v| v.trim().parse().unwrap()))
        .unwrap_or_else(|| panic!("{key} missing from {report}"))
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        Self { _dir: dir, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Small synthetic dataset and a briefly trained checkpoint.
    fn trained(&self) -> (PathBuf, PathBuf) {
        let data = self.path("data.tsv");
        let cfg = self.path("run.cfg");
        let ck = self.path("model.ckpt");
        fs::write(
            &cfg,
            "depth = 3\nhidden = 16\nheads = 2\nffn = 32\nmax_seq_len = 12\nvocab = 64\nlearning_rate = 3e-3\nbatch_size = 16\nepochs = 2\n",
        )
        .unwrap();
        ok(&["synth", "--seed", "3", "--n", "150", "--out", s(&data)]);
        let report = ok(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&ck)]);
        assert!(report.contains("epoch 2"), "{report}");
        (data, ck)
    }
}

#[test]
fn end_to_end_commands() {
    let ws = Workspace::new();
    let (data, ck) = ws.trained();
    let loaded = Checkpoint::load(&ck).unwrap();
    assert_eq!(loaded.model.depth(), 3);
    assert!(loaded.preprocessor.is_some());

    let full = ok(&["eval", "--checkpoint", s(&ck), "--data", s(&data)]);
    let zero = ok(&["eval", "--checkpoint", s(&ck), "--data", s(&data), "--delta", "0"]);
    assert_eq!(value(&full, "accuracy"), value(&zero, "accuracy"));
    assert_eq!(value(&zero, "compute_ratio"), 1.0);
    let cut = ok(&["eval", "--checkpoint", s(&ck), "--data", s(&data), "--depth-override", "2"]);
    assert_eq!(value(&cut, "mean_exit_layer"), 2.0);
    assert!(elbert(&["eval", "--checkpoint", s(&ck), "--data", s(&data), "--depth-override", "4"]).status.code() == Some(1));

    let samples = ws.path("samples.csv");
    ok(&[
        "eval", "--checkpoint", s(&ck), "--data", s(&data), "--delta", "0.5", "--window", "4", "--criterion",
        "stable-label", "--samples-out", s(&samples),
    ]);
    let text = fs::read_to_string(&samples).unwrap();
    assert_eq!(text.lines().next(), Some("sample_id,label,prediction,exit_layer,exit_stage"));
    assert_eq!(text.lines().count(), 151);

    let sweep = ws.path("sweep.csv");
    ok(&["sweep", "--checkpoint", s(&ck), "--data", s(&data), "--out", s(&sweep)]);
    let text = fs::read_to_string(&sweep).unwrap();
    assert_eq!(text.lines().next(), Some("delta,criterion,window,accuracy,compute_ratio,mean_exit_layer"));
    assert_eq!(text.lines().count(), 1 + 10 + 1);
    let again = ws.path("sweep2.csv");
    ok(&["sweep", "--checkpoint", s(&ck), "--data", s(&data), "--out", s(&again)]);
    assert_eq!(fs::read(&sweep).unwrap(), fs::read(&again).unwrap());
    let short = ws.path("sweep3.csv");
    ok(&["sweep", "--checkpoint", s(&ck), "--data", s(&data), "--out", s(&short), "--grid", "0.0", "--window", "inf"]);
    let text = fs::read_to_string(&short).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    let reference: Vec<&str> = text.lines().nth(2).unwrap().split(',').collect();
    assert_eq!(row[4], "1");
    assert_eq!(row[3], reference[3]);

    let sim = ws.path("sim.csv");
    let steps = ws.path("steps.csv");
    ok(&[
        "schedule-sim", "--checkpoint", s(&ck), "--data", s(&data), "--out", s(&sim), "--batch-slots", "8",
        "--steps-out", s(&steps),
    ]);
    let text = fs::read_to_string(&sim).unwrap();
    assert_eq!(
        text.lines().next(),
        Some("strategy,n_slots,accuracy,compute_ratio,sim_time,throughput,speedup")
    );
    assert_eq!(text.lines().count(), 6);
    for line in text.lines().skip(1) {
        assert_eq!(line.split(',').nth(3), Some("1"), "{line}");
    }
    assert!(fs::read_to_string(&steps).unwrap().starts_with("step,strategy,occupancy\n"));
    let one = ws.path("sim1.csv");
    ok(&[
        "schedule-sim", "--checkpoint", s(&ck), "--data", s(&data), "--out", s(&one), "--strategy", "alg1", "--delta",
        "0.5",
    ]);
    assert_eq!(fs::read_to_string(&one).unwrap().lines().count(), 2);

    let att = ws.path("att.csv");
    ok(&["trace-attention", "--checkpoint", s(&ck), "--text", "The noise1 key0v0, now!", "--out", s(&att)]);
    let text = fs::read_to_string(&att).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("[CLS],noise1,key0v0,[UNK]"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 3);
    for r in rows {
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn preprocess_and_synth_commands() {
    let ws = Workspace::new();
    let raw = ws.path("raw.tsv");
    let clean = ws.path("clean.tsv");
    fs::write(&raw, "1\tGood news!!!\n0\tthe of\n2\tsee https://x.co now\n").unwrap();
    let report = ok(&["preprocess", "--input", s(&raw), "--output", s(&clean), "--stopwords", "the,of"]);
    assert_eq!(report.trim(), "kept 2 dropped 1");
    assert_eq!(fs::read_to_string(&clean).unwrap(), "1\tgood news\n2\tsee now\n");

    let a = ws.path("a.tsv");
    let b = ws.path("b.tsv");
    ok(&["synth", "--seed", "9", "--n", "300", "--out", s(&a)]);
    ok(&["synth", "--seed", "9", "--n", "300", "--out", s(&b)]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let records = parse_dataset(&fs::read_to_string(&a).unwrap(), &a, 3).unwrap();
    for c in 0..3 {
        assert_eq!(records.iter().filter(|r| r.label == c).count(), 100);
    }
}

#[test]
fn errors_exit_nonzero() {
    let ws = Workspace::new();
    let out = elbert(&["eval", "--bogus"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert!(!elbert(&["nonsense"]).status.success());
    assert!(!elbert(&[]).status.success());

    let out = elbert(&["eval", "--checkpoint", s(&ws.path("missing.ckpt")), "--data", "x"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let bad = ws.path("bad.tsv");
    fs::write(&bad, "0\tfine\nx\ttext\n").unwrap();
    let out = elbert(&["preprocess", "--input", s(&bad), "--output", s(&ws.path("o.tsv"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains(":2:"));

    let out = elbert(&["eval", "--checkpoint", "c", "--data", "d", "--criterion", "sideways"]);
    assert!(!out.status.success());
}

#[test]
fn synthetic_data_is_keyword_separable() {
    let spec = SynthSpec::default();
    let data = synth_dataset(11, 900, 3, &spec).unwrap();
    let hits = data
        .iter()
        .filter(|r| keyword_class(&preprocess(&r.text), 3, &spec) == Some(r.label))
        .count();
    assert_eq!(hits, data.len());
}

fn record() -> impl Strategy<Value = LabeledText> {
    (0usize..3, "[^\n\r]{0,40}").prop_map(|(l, t)| LabeledText::new(l, t))
}

proptest! {
    #[test]
    fn dataset_files_round_trip(records in prop::collection::vec(record(), 0..20)) {
        let text = format_dataset(&records);
        let parsed = parse_dataset(&text, Path::new("mem"), 3).unwrap();
        prop_assert_eq!(&parsed, &records);
        prop_assert_eq!(format_dataset(&parsed), text);
    }

    #[test]
    fn preprocessing_is_idempotent(text in any::<String>()) {
        let once = preprocess(&text);
        prop_assert_eq!(preprocess(&once), once.clone());
        prop_assert!(!once.contains("  "));
        prop_assert_eq!(once.trim(), once.as_str());
    }

    #[test]
    fn custom_preprocessing_is_idempotent(text in "[a-zA-Z !.,:/]{0,60}") {
        let p = Preprocessor::new(["a", "of", "the"], ["rt"]);
        let once = p.apply(&text);
        prop_assert_eq!(p.apply(&once), once);
    }
}
