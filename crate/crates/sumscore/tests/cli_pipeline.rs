//! End-to-end checks of the command-line binary: synth → evaluate wiring,
//! score ordering with a trained bundle, and train determinism.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sumscore::corpus::{load_dataset, save_dataset, SummaryRecord};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sumscore"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn sumscore");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn synth(dir: &Path, passages: usize, per_passage: usize, seed: u64) {
    run_ok(bin().args([
        "synth",
        "--passages",
        &passages.to_string(),
        "--per-passage",
        &per_passage.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        dir.to_str().unwrap(),
    ]));
}

fn data_args(dir: &Path) -> Vec<String> {
    vec![
        "--dataset".into(),
        dir.join("summaries.jsonl").display().to_string(),
        "--passages".into(),
        dir.join("passages.jsonl").display().to_string(),
        "--word-vectors".into(),
        dir.join("vectors.txt").display().to_string(),
    ]
}

#[test]
fn synth_then_evaluate_produces_a_report_with_accuracy() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, 2, 10, 1);
    for name in ["passages.jsonl", "summaries.jsonl", "vectors.txt"] {
        assert!(dir.join(name).exists(), "missing {name}");
    }

    let report_path = dir.join("report.json");
    run_ok(
        bin()
            .args(["evaluate", "--model", "svm", "--seed", "3"])
            .args(data_args(dir))
            .args(["--out", report_path.to_str().unwrap()]),
    );
    assert!(report_path.exists());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    let accuracy = report["aggregate"]["accuracy"]
        .as_f64()
        .expect("accuracy field present");
    assert!((0.0..=1.0).contains(&accuracy));
    assert_eq!(report["per_fold"].as_array().unwrap().len(), 5);
    assert_eq!(report["model"], "svm");
}

#[test]
fn score_ranks_a_verbatim_summary_at_or_above_an_off_topic_one() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, 2, 12, 1);

    let model_path = dir.join("model.json");
    run_ok(
        bin()
            .args(["train", "--model", "krr", "--task", "regress", "--seed", "7"])
            .args(data_args(dir))
            .args(["--out", model_path.to_str().unwrap()]),
    );

    // A summary that repeats its passage verbatim, and one lifted from the
    // other passage's topic.
    let (passages, _) = load_dataset(dir.join("passages.jsonl"), dir.join("summaries.jsonl"))
        .unwrap();
    assert!(passages.len() >= 2);
    let target = &passages[0];
    let other = &passages[1];
    let score_records = vec![
        SummaryRecord {
            id: "same".to_string(),
            passage_id: target.id.clone(),
            text: target.text.clone(),
            annotator_scores: vec![3, 3, 3],
            binary_label: None,
            learner_level: None,
        },
        SummaryRecord {
            id: "off".to_string(),
            passage_id: target.id.clone(),
            text: other.text.clone(),
            annotator_scores: vec![3, 3, 3],
            binary_label: None,
            learner_level: None,
        },
    ];
    let score_path = dir.join("score_summaries.jsonl");
    save_dataset(&passages, &score_records, dir.join("p2.jsonl"), &score_path).unwrap();

    let scores_path = dir.join("scores.json");
    run_ok(
        bin()
            .args(["score", "--model", model_path.to_str().unwrap()])
            .args([
                "--dataset",
                score_path.to_str().unwrap(),
                "--passages",
                dir.join("passages.jsonl").to_str().unwrap(),
                "--word-vectors",
                dir.join("vectors.txt").to_str().unwrap(),
            ])
            .args(["--out", scores_path.to_str().unwrap()]),
    );
    let scores: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&scores_path).unwrap()).unwrap();
    let same = scores["same"].as_f64().unwrap();
    let off = scores["off"].as_f64().unwrap();
    assert!(
        same >= off,
        "verbatim summary scored {same}, off-topic scored {off}"
    );
    assert!((0.0..=5.0).contains(&same));
    assert!((0.0..=5.0).contains(&off));
}

#[test]
fn train_is_byte_identical_under_a_fixed_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, 1, 10, 2);

    let first = dir.join("model_a.json");
    let second = dir.join("model_b.json");
    for out in [&first, &second] {
        run_ok(
            bin()
                .args(["train", "--model", "krr", "--task", "regress", "--seed", "7"])
                .args(data_args(dir))
                .args(["--out", out.to_str().unwrap()]),
        );
    }
    let a = fs::read(&first).unwrap();
    let b = fs::read(&second).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b, "bundles differ between identical runs");
}

#[test]
fn errors_are_single_line_json_on_stderr_with_json_flag() {
    let out = bin()
        .args(["evaluate", "--model", "svm", "--json"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    let line = stderr.trim();
    assert!(!line.contains('\n'), "stderr not single-line: {stderr:?}");
    let parsed: serde_json::Value = serde_json::from_str(line).expect("stderr is JSON");
    assert!(parsed["error"].as_str().unwrap().contains("required"));

    // Without --json the message is plain text.
    let out = bin().args(["evaluate", "--model", "svm"]).output().unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.starts_with("error:"), "{stderr:?}");
}

#[test]
fn features_and_metrics_dump_one_row_per_record() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, 1, 8, 5);

    let features_path = dir.join("features.csv");
    run_ok(
        bin()
            .arg("features")
            .args(data_args(dir))
            .args(["--out", features_path.to_str().unwrap()]),
    );
    let text = fs::read_to_string(&features_path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("id,rouge1_precision,"), "{header}");
    assert_eq!(lines.count(), 8);

    let metrics_path = dir.join("metrics.csv");
    run_ok(
        bin()
            .arg("metrics")
            .args(data_args(dir))
            .args(["--out", metrics_path.to_str().unwrap()]),
    );
    let text = fs::read_to_string(&metrics_path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.contains("bleu") && header.contains("meteor"), "{header}");
    assert_eq!(lines.count(), 8);

    let summaries_path = dir.join("refs.json");
    run_ok(
        bin()
            .args(["summarize", "--reference", "mead"])
            .args([
                "--passages",
                dir.join("passages.jsonl").to_str().unwrap(),
            ])
            .args(["--out", summaries_path.to_str().unwrap()]),
    );
    let refs: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&summaries_path).unwrap()).unwrap();
    let map = refs.as_object().unwrap();
    assert_eq!(map.len(), 1);
    let sentences = map.values().next().unwrap().as_array().unwrap();
    assert!(!sentences.is_empty());
}
