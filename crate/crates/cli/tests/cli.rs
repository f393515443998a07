use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pairprobe::bank::write_bank;
use pairprobe::probe::{write_probe_file, ProbeRecord};
use pairprobe::{
    BoundaryExample, EmbeddingBank, LayerRankingCurve, ProbeExample, Side, Span, Task,
};
use serde_json::Value;
use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
}

fn pairprobe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pairprobe"))
        .args(args)
        .env("RUST_LOG", "info")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}",
            String::from_utf8_lossy(&out.stdout)
        )
    })
}

fn stderr_record(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text
        .lines()
        .rev()
        .find(|l| l.starts_with('{'))
        .expect("error record on stderr");
    serde_json::from_str(line).unwrap()
}

fn p(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_string_lossy().into_owned()
}

/// Answer-type probes with anchor = positive = (1, 0) and every negative
/// orthogonal, on a 12-layer bank.
fn perfect_inputs(dir: &TempDir, ids: &[&str], bank_ids: &[&str]) -> (String, String) {
    let para_len = 4;
    let probes: Vec<ProbeRecord> = ids
        .iter()
        .map(|id| {
            ProbeRecord::Pair(ProbeExample {
                task: Task::AnswerType,
                example_id: id.to_string(),
                anchor_side: Side::Question,
                anchor_span: Span::new(0, 1),
                positive_span: Span::new(0, 1),
                para_len,
                excluded: BTreeSet::from([0]),
                question_words: vec!["when".into()],
                paragraph_words: vec!["1999".into(), "a".into(), "b".into(), "c".into()],
            })
        })
        .collect();
    let probe_path = p(dir, "probes.jsonl");
    write_probe_file(fs::File::create(&probe_path).unwrap(), &probes).unwrap();

    let mut bank = EmbeddingBank::new("synthetic", 12, 2, false, true);
    for id in bank_ids {
        let mut data = Vec::new();
        for _ in 0..12 {
            data.extend([1.0, 0.0]); // question word
            data.extend([1.0, 0.0]); // positive
            for _ in 1..para_len {
                data.extend([0.0, 1.0]);
            }
        }
        bank.push(*id, 1, para_len, data).unwrap();
    }
    let bank_path = p(dir, "bank.ppem");
    write_bank(&bank, &bank_path).unwrap();
    (probe_path, bank_path)
}

#[test]
fn build_coreference_over_table1() {
    let dir = TempDir::new().unwrap();
    let out_path = p(&dir, "coref.jsonl");
    let input = fixture("table1.jsonl");
    let out = pairprobe(&[
        "build",
        "--task",
        "coreference",
        "--input",
        input.to_str().unwrap(),
        "--out",
        &out_path,
    ]);
    assert!(out.status.success());
    let summary = stdout_json(&out);
    assert_eq!(summary["task"], "coreference");
    let text = fs::read_to_string(&out_path).unwrap();
    let first = ProbeRecord::from_json_line(text.lines().next().unwrap()).unwrap();
    let ProbeRecord::Pair(probe) = first else {
        panic!("pair probe expected")
    };
    assert_eq!(probe.example_id, "t1-coreference");
    assert_eq!(probe.anchor_text(), "It");
    assert_eq!(probe.positive_text(), "Locked Out of Heaven");
}

#[test]
fn synonyms_without_lexicon_is_usage_error() {
    let dir = TempDir::new().unwrap();
    let input = fixture("table1.jsonl");
    let out = pairprobe(&[
        "build",
        "--task",
        "synonyms",
        "--input",
        input.to_str().unwrap(),
        "--out",
        &p(&dir, "s.jsonl"),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_record(&out)["exit_code"], 2);
}

#[test]
fn empty_input_builds_nothing() {
    let dir = TempDir::new().unwrap();
    let input = p(&dir, "empty.jsonl");
    fs::write(&input, "").unwrap();
    let out_path = p(&dir, "out.jsonl");
    let out = pairprobe(&[
        "build",
        "--task",
        "answer-type",
        "--input",
        &input,
        "--out",
        &out_path,
    ]);
    assert!(out.status.success());
    assert_eq!(stdout_json(&out)["built"], 0);
    assert_eq!(fs::read(&out_path).unwrap(), b"");
}

#[test]
fn malformed_input_is_data_error() {
    let dir = TempDir::new().unwrap();
    let input = p(&dir, "bad.jsonl");
    fs::write(&input, "{not json\n").unwrap();
    let out = pairprobe(&[
        "build",
        "--task",
        "answer-type",
        "--input",
        &input,
        "--out",
        &p(&dir, "o.jsonl"),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn missing_file_is_io_error() {
    let dir = TempDir::new().unwrap();
    let out = pairprobe(&[
        "build",
        "--task",
        "answer-type",
        "--input",
        &p(&dir, "nope.jsonl"),
        "--out",
        &p(&dir, "o.jsonl"),
    ]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = pairprobe(&["score", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn perfect_bank_scores_one_everywhere() {
    let dir = TempDir::new().unwrap();
    let (probes, bank) = perfect_inputs(&dir, &["a", "b"], &["a", "b"]);
    let curve_path = p(&dir, "curve.json");
    let out = pairprobe(&[
        "score",
        "--probes",
        &probes,
        "--bank",
        &bank,
        "--out",
        &curve_path,
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let curve = LayerRankingCurve::from_json(&fs::read_to_string(&curve_path).unwrap()).unwrap();
    assert_eq!(curve.layers.len(), 12);
    assert!(curve.percentages().iter().all(|&v| v == 1.0));
    assert_eq!(stdout_json(&out)["mode"], "negatives");

    let out = pairprobe(&[
        "score",
        "--probes",
        &probes,
        "--bank",
        &bank,
        "--scorer",
        "euclidean",
        "--out",
        &curve_path,
    ]);
    assert!(out.status.success());
    let text = fs::read_to_string(&curve_path).unwrap();
    assert_eq!(
        serde_json::from_str::<Value>(&text).unwrap()["scorer"],
        "euclidean"
    );
}

#[test]
fn missing_id_with_strict_exits_3() {
    let dir = TempDir::new().unwrap();
    let (probes, bank) = perfect_inputs(&dir, &["a", "ghost"], &["a"]);
    let curve = p(&dir, "curve.json");
    let out = pairprobe(&[
        "score", "--probes", &probes, "--bank", &bank, "--out", &curve, "--strict",
    ]);
    assert_eq!(out.status.code(), Some(3));
    let record = stderr_record(&out);
    assert_eq!(record["error"], "id_mismatch");
    assert_eq!(record["details"]["missing_ids"][0], "ghost");

    let out = pairprobe(&[
        "score", "--probes", &probes, "--bank", &bank, "--out", &curve,
    ]);
    assert!(out.status.success());
    assert_eq!(stdout_json(&out)["diagnostics"]["missing_ids"][0], "ghost");
}

#[test]
fn config_supplies_defaults_and_flags_win() {
    let dir = TempDir::new().unwrap();
    let (probes, bank) = perfect_inputs(&dir, &["a"], &["a"]);
    let config = p(&dir, "pairprobe.toml");
    fs::write(
        &config,
        format!("[score]\nprobes = {probes:?}\nbank = {bank:?}\nscorer = \"euclidean\"\nmode = \"literal-para-len\"\n"),
    )
    .unwrap();
    let curve = p(&dir, "curve.json");
    let out = pairprobe(&[
        "--config", &config, "score", "--out", &curve, "--scorer", "cosine",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary = stdout_json(&out);
    assert_eq!(summary["scorer"], "cosine");
    assert_eq!(summary["mode"], "literal_para_len");

    fs::write(&config, "[score]\nnot_a_flag = 1\n").unwrap();
    let out = pairprobe(&[
        "score", "--config", &config, "--probes", &probes, "--bank", &bank, "--out", &curve,
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_record(&out)["error"], "config");
}

fn write_curve(path: &str, tag: &str, scorer: &str, values: &[f64]) {
    let layers: Vec<Value> = values
        .iter()
        .enumerate()
        .map(|(i, v)| serde_json::json!({"layer": i + 1, "count": 0, "denominator": 0, "percentage": v}))
        .collect();
    let curve = serde_json::json!({
        "model_tag": tag, "task": "coreference", "scorer": scorer, "mode": "negatives",
        "has_layer0": false, "layers": layers,
    });
    fs::write(path, curve.to_string()).unwrap();
}

#[test]
fn compare_identical_and_mismatched() {
    let dir = TempDir::new().unwrap();
    let (a, b, c) = (p(&dir, "a.json"), p(&dir, "b.json"), p(&dir, "c.json"));
    write_curve(&a, "pretrained", "cosine", &[0.5, 0.6, 0.7]);
    write_curve(&b, "finetuned", "cosine", &[0.5, 0.6, 0.7]);
    write_curve(&c, "finetuned", "euclidean", &[0.5, 0.6, 0.7]);
    let csv = p(&dir, "cmp.csv");
    let out = pairprobe(&["compare", "--a", &a, "--b", &b, "--out", &csv]);
    assert!(out.status.success());
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("layer,percentage_a,percentage_b,delta"));
    assert!(lines.all(|l| l.ends_with(",0.0")));
    assert_eq!(stdout_json(&out)["mean_delta_layers_1_to_5"], 0.0);

    let out = pairprobe(&["compare", "--a", &a, "--b", &c, "--out", &csv]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_record(&out)["error"], "curve_mismatch");
}

#[test]
fn report_writes_csv_and_chart() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (p(&dir, "a.json"), p(&dir, "b.json"));
    write_curve(&a, "pretrained", "cosine", &[0.5, 0.6]);
    write_curve(&b, "finetuned", "cosine", &[0.55, 0.8]);
    let out_dir = p(&dir, "report");
    let out = pairprobe(&[
        "report",
        "--curve",
        &a,
        "--curve",
        &b,
        "--out-dir",
        &out_dir,
    ]);
    assert!(out.status.success());
    let csv = fs::read_to_string(Path::new(&out_dir).join("curves.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    let chart: Value = serde_json::from_str(
        &fs::read_to_string(Path::new(&out_dir).join("chart.vl.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(chart["data"]["url"], "curves.csv");
}

/// Three-word one-sentence contexts with the gold start on word 0.
fn boundary_inputs(dir: &TempDir, n_train: usize, n_test: usize) -> (String, String, String) {
    let example = |id: String| BoundaryExample {
        example_id: id,
        context: Span::new(0, 3),
        gold_start: 0,
        gold_end: 1,
        question_words: vec!["when".into()],
        paragraph_words: vec!["a".into(), "b".into(), "c.".into()],
    };
    let train: Vec<ProbeRecord> = (0..n_train)
        .map(|i| ProbeRecord::Boundary(example(format!("tr{i}"))))
        .collect();
    let test: Vec<ProbeRecord> = (0..n_test)
        .map(|i| ProbeRecord::Boundary(example(format!("te{i}"))))
        .collect();
    let mut bank = EmbeddingBank::new("synthetic", 1, 2, false, false);
    for r in train.iter().chain(&test) {
        bank.push(r.example_id(), 0, 3, vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.0])
            .unwrap();
    }
    let (tr, te, bk) = (
        p(dir, "train.jsonl"),
        p(dir, "test.jsonl"),
        p(dir, "bank.ppem"),
    );
    write_probe_file(fs::File::create(&tr).unwrap(), &train).unwrap();
    write_probe_file(fs::File::create(&te).unwrap(), &test).unwrap();
    write_bank(&bank, &bk).unwrap();
    (tr, te, bk)
}

#[test]
fn empty_training_file_exits_2() {
    let dir = TempDir::new().unwrap();
    let (_, te, bk) = boundary_inputs(&dir, 0, 4);
    let empty = p(&dir, "empty.jsonl");
    fs::write(&empty, "").unwrap();
    let out = pairprobe(&[
        "train-boundary",
        "--train",
        &empty,
        "--test",
        &te,
        "--bank",
        &bk,
        "--out-dir",
        &p(&dir, "run"),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_record(&out)["error"], "empty_input");
}

#[test]
fn large_training_file_is_sampled_to_10k() {
    let dir = TempDir::new().unwrap();
    let (tr, te, bk) = boundary_inputs(&dir, 12_000, 20);
    let run = p(&dir, "run");
    let out = pairprobe(&[
        "train-boundary",
        "--train",
        &tr,
        "--test",
        &te,
        "--bank",
        &bk,
        "--out-dir",
        &run,
        "--max-epochs",
        "2",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary = stdout_json(&out);
    assert_eq!(summary["train"]["available"], 12_000);
    assert_eq!(summary["train"]["used"], 10_000);
    assert_eq!(summary["seed"], 42);
    assert!(String::from_utf8_lossy(&out.stderr).contains("using 10000 of 12000 training"));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed 42"));

    let run = Path::new(&run);
    for name in [
        "boundary_start.json",
        "boundary_end.json",
        "boundary.json",
        "summary.json",
    ] {
        assert!(run.join(name).exists(), "{name}");
    }
    assert!(run.join("checkpoints/layer01_start.probe").exists());
    assert!(run.join("checkpoints/layer01_end.probe").exists());
    let curve =
        LayerRankingCurve::from_json(&fs::read_to_string(run.join("boundary_start.json")).unwrap())
            .unwrap();
    assert!(curve.trained_probe);
    assert_eq!(curve.seed, Some(42));
    assert_eq!(curve.percentages(), vec![1.0]);
}
