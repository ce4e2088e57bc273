use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use hmt_cli::trace_file::write_traces;
use hmt_cli::{Checkpoint, TraceRecord};
use hmt_core::policy::{Action, DecisionTrace, Event, PolicyMode};
use serde_json::Value;
use tempfile::TempDir;

fn hmt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hmt"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = hmt(args);
    assert!(
        out.status.success(),
        "hmt {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> (i32, String) {
    let out = hmt(args);
    assert!(!out.status.success(), "hmt {args:?} unexpectedly succeeded");
    (out.status.code().unwrap(), String::from_utf8(out.stderr).unwrap())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const LOWER: usize = 1;
const STATES: usize = 2;

fn config_json(updates: usize) -> String {
    format!(
        r#"{{
  "model": {{"lower": {LOWER}, "states": {STATES}, "layers": 1, "model_dim": 32, "heads": 2, "ffn_dim": 64, "dropout": 0.1}},
  "train": {{"lr": 0.001, "warmup_updates": 50, "max_tokens": 130, "updates": {updates}, "seed": 3}},
  "data": {{"synthetic": {{"kind": "copy", "vocab_size": 8, "min_len": 3, "max_len": 8, "lag": 0, "seed": 5}}, "synthetic_pairs": 300}},
  "checkpoint_every": 100
}}"#
    )
}

struct Trained {
    dir: TempDir,
}

impl Trained {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

/// A 200-update copy model plus held-out copy data, built once.
fn trained() -> &'static Trained {
    static T: OnceLock<Trained> = OnceLock::new();
    T.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let cfg = dir.path().join("run.json");
        fs::write(&cfg, config_json(200)).unwrap();
        ok(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("run"))]);
        ok(&[
            "synth",
            "--task",
            "copy",
            "--vocab-size",
            "8",
            "--min-len",
            "3",
            "--max-len",
            "8",
            "--count",
            "12",
            "--seed",
            "77",
            "--out",
            s(dir.path()),
            "--prefix",
            "test",
        ]);
        Trained { dir }
    })
}

fn read_jsonl(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn copy_training_smoke() {
    let t = trained();
    let log = read_jsonl(&t.path("run/train_log.jsonl"));
    assert_eq!(log.len(), 200);
    let state = |r: &[Value]| r.iter().map(|v| v["state"].as_f64().unwrap()).sum::<f64>() / r.len() as f64;
    let (first, last) = (state(&log[..10]), state(&log[190..]));
    assert!(last < first, "state loss {first} -> {last}");
    for key in ["step", "lr", "hmm", "latency", "state", "total", "grad_norm"] {
        assert!(log[0].get(key).is_some(), "log misses {key}");
    }
    assert!(t.path("run/checkpoint-100.hmt").exists());
    assert!(t.path("run/checkpoint-200.hmt").exists());
    assert!(t.path("run/checkpoint.hmt").exists());
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let t = trained();
    let bytes = fs::read(t.path("run/checkpoint.hmt")).unwrap();
    let ck = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(ck.step, 200);
    assert_eq!(ck.to_bytes().unwrap(), bytes);
    ck.model().unwrap();
}

fn translate(mode: &str, extra: &[&str], out: &Path) -> Vec<Value> {
    let t = trained();
    let ck = t.path("run/checkpoint.hmt");
    let input = t.path("test.src");
    let mut args = vec![
        "translate",
        "--checkpoint",
        s(&ck),
        "--input",
        s(&input),
        "--mode",
        mode,
        "--out",
        s(out),
    ];
    args.extend_from_slice(extra);
    ok(&args);
    read_jsonl(&out.join("traces.jsonl"))
}

fn g_of(v: &Value) -> Vec<u64> {
    v["g"].as_array().unwrap().iter().map(|x| x.as_u64().unwrap()).collect()
}

#[test]
fn wait_k_schedule_follows_the_upper_boundary() {
    let tmp = TempDir::new().unwrap();
    let traces = translate("wait-k", &[], tmp.path());
    assert_eq!(traces.len(), 12);
    for r in &traces {
        let j = r["source_len"].as_u64().unwrap();
        for (i, g) in g_of(r).into_iter().enumerate() {
            let want = ((LOWER + STATES - 1 + i) as u64).clamp(1, j);
            assert_eq!(g, want);
        }
        assert_eq!(r["path_probability"].as_f64().unwrap(), 1.0);
    }
    ok(&["validate-trace", "--traces", s(&tmp.path().join("traces.jsonl"))]);
}

#[test]
fn delta_one_matches_wait_k() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let wait = translate("wait-k", &[], a.path());
    let adaptive = translate("adaptive", &["--delta", "1"], b.path());
    for (x, y) in wait.iter().zip(&adaptive) {
        assert_eq!(g_of(x), g_of(y));
        assert_eq!(x["hypothesis"], y["hypothesis"]);
    }
    assert_eq!(
        fs::read(a.path().join("hypotheses.txt")).unwrap(),
        fs::read(b.path().join("hypotheses.txt")).unwrap()
    );
}

#[test]
fn force_decode_evaluates_and_analyzes() {
    let t = trained();
    let tmp = TempDir::new().unwrap();
    let traces = translate("force-decode", &["--reference", s(&t.path("test.tgt"))], tmp.path());
    assert!(traces.iter().all(|r| r["judgments"].is_array()));
    let tr = tmp.path().join("traces.jsonl");
    let report: Value = serde_json::from_str(&ok(&[
        "evaluate",
        "--traces",
        s(&tr),
        "--reference",
        s(&t.path("test.tgt")),
        "--alignments",
        s(&t.path("test.align")),
    ]))
    .unwrap();
    assert_eq!(report["bleu"].as_f64().unwrap(), 100.0);
    let p = report["aligned_proportion"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));
    for key in ["al", "ap", "cw", "dal"] {
        assert!(report[key].is_f64(), "missing {key}");
    }

    let out = tmp.path().join("analysis");
    ok(&[
        "analyze",
        "--traces",
        s(&tr),
        "--reference",
        s(&t.path("test.tgt")),
        "--out",
        s(&out),
    ]);
    let conf = fs::read_to_string(out.join("confidence_accuracy.tsv")).unwrap();
    assert_eq!(conf.lines().count(), 11);
    let prob = fs::read_to_string(out.join("path_probability_bleu.tsv")).unwrap();
    assert_eq!(prob.lines().count(), 6);
}

#[test]
fn analyze_without_judgments_skips_calibration() {
    let t = trained();
    let tmp = TempDir::new().unwrap();
    translate("adaptive", &[], tmp.path());
    let out = tmp.path().join("analysis");
    let stdout = ok(&[
        "analyze",
        "--traces",
        s(&tmp.path().join("traces.jsonl")),
        "--reference",
        s(&t.path("test.tgt")),
        "--out",
        s(&out),
    ]);
    assert!(stdout.contains("skipped the confidence table"));
    assert!(!out.join("confidence_accuracy.tsv").exists());
    assert!(out.join("path_probability_bleu.tsv").exists());

    let empty = tmp.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let empty_ref = tmp.path().join("empty.txt");
    fs::write(&empty_ref, "").unwrap();
    let (_, err) = fails(&[
        "analyze",
        "--traces",
        s(&empty),
        "--reference",
        s(&empty_ref),
        "--out",
        s(&out),
    ]);
    assert!(err.starts_with("error[data]:"), "{err}");
}

/// Nine content tokens written at 3, 4, ..., 10, 10 and the end token at 10.
fn hand_record() -> TraceRecord {
    let g: Vec<usize> = (3..=10).chain([10, 10]).collect();
    let mut events = Vec::new();
    let mut j = 0;
    for (i, &gi) in g.iter().enumerate() {
        while j < gi {
            j += 1;
            events.push(Event {
                action: Action::Read,
                i,
                j,
                k: None,
                confidence: None,
            });
        }
        events.push(Event {
            action: Action::Write,
            i,
            j,
            k: Some(0),
            confidence: Some(1.0),
        });
    }
    let trace = DecisionTrace {
        events,
        states: vec![0; g.len()],
        confidences: vec![1.0; g.len()],
        g,
        judgments: Vec::new(),
        log_path_prob: 0.0,
        source_len: 10,
    };
    let words = |n: usize| (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>();
    TraceRecord::new(PolicyMode::Adaptive, words(9), words(9), &trace)
}

#[test]
fn evaluate_hand_trace() {
    let tmp = TempDir::new().unwrap();
    let tr = tmp.path().join("t.jsonl");
    write_traces(&tr, &[hand_record()]).unwrap();
    let reference = tmp.path().join("ref.txt");
    fs::write(&reference, "w0 w1 w2 w3 w4 w5 w6 w7 w8\n").unwrap();
    let report: Value =
        serde_json::from_str(&ok(&["evaluate", "--traces", s(&tr), "--reference", s(&reference)])).unwrap();
    assert_eq!(report["bleu"].as_f64().unwrap(), 100.0);
    assert_eq!(report["al"].as_f64().unwrap(), 3.0);
    assert!(report.get("aligned_proportion").is_none());

    let align = tmp.path().join("a.txt");
    fs::write(&align, "0-0 1-1 2-2 3-3 4-4 5-5 6-6 7-7 8-8\n").unwrap();
    let report: Value = serde_json::from_str(&ok(&[
        "evaluate",
        "--traces",
        s(&tr),
        "--reference",
        s(&reference),
        "--alignments",
        s(&align),
    ]))
    .unwrap();
    assert_eq!(report["aligned_proportion"].as_f64().unwrap(), 1.0);

    let (code, err) = fails(&[
        "evaluate",
        "--traces",
        s(&tr),
        "--reference",
        s(&reference),
        "--alignments",
        s(&tmp.path().join("missing")),
    ]);
    assert_eq!(code, 1);
    assert!(err.starts_with("error[io]:"), "{err}");

    fs::write(&reference, "a\nb\n").unwrap();
    let (_, err) = fails(&["evaluate", "--traces", s(&tr), "--reference", s(&reference)]);
    assert!(
        err.starts_with("error[data]:") && err.contains("1 traces but 2 lines"),
        "{err}"
    );
}

#[test]
fn validate_trace_rejects_tampering() {
    let tmp = TempDir::new().unwrap();
    let tr = tmp.path().join("t.jsonl");
    let mut r = hand_record();
    write_traces(&tr, &[r.clone()]).unwrap();
    assert!(ok(&["validate-trace", "--traces", s(&tr)]).contains("1 records valid"));
    r.g[2] = 9;
    write_traces(&tr, &[r]).unwrap();
    let (code, err) = fails(&["validate-trace", "--traces", s(&tr)]);
    assert_eq!(code, 1);
    assert!(err.starts_with("error[format]:") && err.contains("line 1"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn synth_files_and_determinism() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let args = |d: &Path| {
        vec![
            "synth".to_string(),
            "--task".into(),
            "delayed-copy".into(),
            "--lag".into(),
            "2".into(),
            "--min-len".into(),
            "5".into(),
            "--max-len".into(),
            "5".into(),
            "--count".into(),
            "4".into(),
            "--seed".into(),
            "9".into(),
            "--out".into(),
            s(d).into(),
        ]
    };
    for d in [a.path(), b.path()] {
        let v = args(d);
        ok(&v.iter().map(String::as_str).collect::<Vec<_>>());
    }
    for f in ["data.src", "data.tgt", "data.align"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
    }
    let align = fs::read_to_string(a.path().join("data.align")).unwrap();
    assert!(align.lines().all(|l| l == "2-0 3-1 4-2 4-3 4-4"), "{align}");

    ok(&[
        "synth",
        "--task",
        "copy",
        "--min-len",
        "4",
        "--max-len",
        "4",
        "--count",
        "2",
        "--out",
        s(a.path()),
        "--prefix",
        "c",
    ]);
    let align = fs::read_to_string(a.path().join("c.align")).unwrap();
    assert!(align.lines().all(|l| l == "0-0 1-1 2-2 3-3"));
    assert_eq!(
        fs::read_to_string(a.path().join("c.src")).unwrap(),
        fs::read_to_string(a.path().join("c.tgt")).unwrap()
    );
}

#[test]
fn training_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.json");
    fs::write(&cfg, config_json(15)).unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&["train", "--config", s(&cfg), "--out", s(&a)]);
    ok(&["train", "--config", s(&cfg), "--out", s(&b)]);
    assert_eq!(
        fs::read(a.join("checkpoint.hmt")).unwrap(),
        fs::read(b.join("checkpoint.hmt")).unwrap()
    );
    assert_eq!(
        fs::read(a.join("train_log.jsonl")).unwrap(),
        fs::read(b.join("train_log.jsonl")).unwrap()
    );
    let c = tmp.path().join("c");
    ok(&["train", "--config", s(&cfg), "--out", s(&c), "--seed", "4"]);
    assert_ne!(
        fs::read(a.join("checkpoint.hmt")).unwrap(),
        fs::read(c.join("checkpoint.hmt")).unwrap()
    );
}

#[test]
fn errors_are_single_prefixed_lines() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, r#"{"train": {"learning_rate": 0.1}}"#).unwrap();
    let (code, err) = fails(&["train", "--config", s(&cfg), "--out", s(tmp.path())]);
    assert_eq!(code, 1);
    assert!(
        err.starts_with("error[config]: invalid config field learning_rate"),
        "{err}"
    );

    fs::write(&cfg, r#"{"train": {"lr": 0}, "data": {"synthetic": {"kind": "copy", "vocab_size": 3, "min_len": 1, "max_len": 2, "lag": 0, "seed": 1}}}"#).unwrap();
    let (_, err) = fails(&["train", "--config", s(&cfg), "--out", s(tmp.path())]);
    assert!(err.starts_with("error[config]: invalid config field lr"), "{err}");

    let (code, err) = fails(&["translate", "--checkpoint", s(&tmp.path().join("none.hmt"))]);
    assert_eq!(code, 1);
    assert!(err.starts_with("error[io]:"), "{err}");

    let (code, err) = fails(&["translate", "--bogus"]);
    assert_eq!(code, 2);
    assert!(err.starts_with("error[usage]:"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);

    let junk = tmp.path().join("junk.hmt");
    fs::write(&junk, b"not a checkpoint").unwrap();
    let (_, err) = fails(&["translate", "--checkpoint", s(&junk)]);
    assert!(err.starts_with("error[format]:"), "{err}");
}

#[test]
fn force_decode_requires_reference() {
    let t = trained();
    let (code, err) = fails(&[
        "translate",
        "--checkpoint",
        s(&t.path("run/checkpoint.hmt")),
        "--input",
        s(&t.path("test.src")),
        "--mode",
        "force-decode",
    ]);
    assert_eq!(code, 2);
    assert!(err.starts_with("error[usage]:"), "{err}");
}
