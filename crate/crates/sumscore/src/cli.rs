//! Command-line entry point tying the pipeline together.
//!
//! A JSON config file can predefine paths and settings; command-line flags
//! always win. Every subcommand is deterministic under a fixed seed and
//! config, and errors leave a nonzero exit code (single-line JSON on
//! standard error when `--json` is set).

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::error::ErrorKind as ClapErrorKind;
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    builtin_background_corpus, generate_synthetic, load_dataset, make_folds, save_dataset,
    synthetic_word_vectors, Passage, SummaryRecord,
};
use crate::embeddings::{load_word_vectors, BackgroundCorpus, WordVectors};
use crate::error::{Error, Result};
use crate::eval::{
    annotator_agreement, predict_record, prepare_inputs, run_experiment, train_split,
    ExperimentContext, ExperimentParams, ModelSpec, RecordInputs,
};
use crate::metrics::{bleu, meteor_lite, rouge_l, rouge_n, SynonymLexicon};
use crate::models::{
    InputSpec, MergeFunction, ModelBundle, ModelKind, Prediction, Task,
};
use crate::reference::{build_reference, ReferenceKind};
use crate::textproc::tokenize;

/// Seed for the built-in background corpus, fixed so document vectors do
/// not drift with the experiment seed.
const BACKGROUND_SEED: u64 = 0xbac0;
const BACKGROUND_DOCS: usize = 60;

// ---------------------------------------------------------------------------
// Config file

/// JSON run configuration. Unknown keys are rejected.
#[derive(Debug, Default, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Summaries file (JSONL).
    pub dataset: Option<PathBuf>,
    /// Passages file (JSONL).
    pub passages: Option<PathBuf>,
    pub word_vectors: Option<PathBuf>,
    /// Background corpus for document-vector fitting, one document per line.
    pub background_corpus: Option<PathBuf>,
    /// Synonym lexicon (TSV pairs).
    pub synonyms: Option<PathBuf>,
    /// Trained model bundle to score with.
    pub model_bundle: Option<PathBuf>,
    /// Model kind to train or evaluate.
    pub model: Option<String>,
    /// Merge function for merged_lstm.
    pub variant: Option<String>,
    pub reference: Option<String>,
    pub task: Option<String>,
    pub seed: Option<u64>,
    /// Hyperparameter overrides; missing fields keep their defaults.
    pub params: Option<ExperimentParams>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| {
            Error::invalid(format!("bad config {}: {e}", path.display()))
        })
    }
}

// ---------------------------------------------------------------------------
// Argument grammar

#[derive(Debug, Parser)]
#[command(
    name = "sumscore",
    version,
    about = "Automated quality scores for learner-written passage summaries"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct CommonOpts {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Summaries file (JSONL).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Passages file (JSONL).
    #[arg(long)]
    passages: Option<PathBuf>,
    /// Word-vector file (header "count dim", then one entry per line).
    #[arg(long)]
    word_vectors: Option<PathBuf>,
    /// Background corpus, one document per line.
    #[arg(long)]
    background_corpus: Option<PathBuf>,
    /// Reference kind: original, textrank, mead, random.
    #[arg(long)]
    reference: Option<String>,
    /// Task: classify or regress.
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Machine-readable output; errors become single-line JSON on stderr.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one model on the whole dataset and write its bundle.
    Train {
        #[command(flatten)]
        common: CommonOpts,
        /// Model kind: svm, krr, cnn, merged_lstm, attention_lstm, ensemble.
        #[arg(long)]
        model: Option<String>,
        /// Merge function for merged_lstm.
        #[arg(long)]
        variant: Option<String>,
    },
    /// Score dataset records with a trained bundle, printing JSON.
    Score {
        #[command(flatten)]
        common: CommonOpts,
        /// Path to a trained model bundle.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Cross-validate a model and write an evaluation report.
    Evaluate {
        #[command(flatten)]
        common: CommonOpts,
        /// Model kind: svm, krr, cnn, merged_lstm, attention_lstm, ensemble.
        #[arg(long)]
        model: Option<String>,
        /// Merge function for merged_lstm.
        #[arg(long)]
        variant: Option<String>,
    },
    /// Dump the full feature vectors for every record.
    Features {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Dump per-record similarity metrics against the reference.
    Metrics {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Build extractive references for every passage.
    Summarize {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Generate a synthetic corpus with word vectors.
    Synth {
        /// JSON config file; flags override its values.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Number of passages.
        #[arg(long, default_value_t = 3)]
        passages: usize,
        /// Summaries per passage.
        #[arg(long, default_value_t = 20)]
        per_passage: usize,
        /// Dimension of the synthetic word vectors.
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Machine-readable output.
        #[arg(long)]
        json: bool,
    },
}

// ---------------------------------------------------------------------------
// Settings resolution (flags win over config)

#[derive(Debug, Clone)]
struct Settings {
    dataset: Option<PathBuf>,
    passages: Option<PathBuf>,
    word_vectors: Option<PathBuf>,
    background_corpus: Option<PathBuf>,
    synonyms: Option<PathBuf>,
    model_bundle: Option<PathBuf>,
    model: Option<String>,
    variant: Option<String>,
    out: Option<PathBuf>,
    task: Option<Task>,
    json: bool,
    params: ExperimentParams,
}

fn parse_task(s: &str) -> Result<Task> {
    match s {
        "classify" | "classification" => Ok(Task::Classification),
        "regress" | "regression" => Ok(Task::Regression),
        other => Err(Error::invalid(format!(
            "unknown task {other:?} (expected classify or regress)"
        ))),
    }
}

fn parse_reference(s: &str) -> Result<ReferenceKind> {
    match s {
        "original" => Ok(ReferenceKind::Original),
        "textrank" => Ok(ReferenceKind::Textrank),
        "mead" => Ok(ReferenceKind::Mead),
        "random" => Ok(ReferenceKind::Random),
        other => Err(Error::invalid(format!(
            "unknown reference kind {other:?} (expected original, textrank, mead, or random)"
        ))),
    }
}

fn resolve(common: &CommonOpts, model: Option<&str>, variant: Option<&str>) -> Result<Settings> {
    let config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let mut params = config.params.clone().unwrap_or_default();
    if let Some(seed) = common.seed.or(config.seed) {
        params.seed = seed;
    }
    let reference = common
        .reference
        .clone()
        .or_else(|| config.reference.clone());
    if let Some(r) = &reference {
        params.reference = parse_reference(r)?;
    }
    let task = common
        .task
        .clone()
        .or_else(|| config.task.clone())
        .map(|t| parse_task(&t))
        .transpose()?;
    Ok(Settings {
        dataset: common.dataset.clone().or(config.dataset),
        passages: common.passages.clone().or(config.passages),
        word_vectors: common.word_vectors.clone().or(config.word_vectors),
        background_corpus: common
            .background_corpus
            .clone()
            .or(config.background_corpus),
        synonyms: config.synonyms,
        model_bundle: config.model_bundle,
        model: model.map(str::to_string).or(config.model),
        variant: variant.map(str::to_string).or(config.variant),
        out: common.out.clone(),
        task,
        json: common.json,
        params,
    })
}

impl Settings {
    fn model_kind(&self) -> Result<ModelKind> {
        let name = self
            .model
            .as_deref()
            .ok_or_else(|| Error::invalid("--model is required"))?;
        ModelKind::from_str(name)
    }

    fn model_spec(&self) -> Result<ModelSpec> {
        let kind = self.model_kind()?;
        let merge = match (&self.variant, kind) {
            (Some(v), ModelKind::MergedLstm) => Some(MergeFunction::from_str(v)?),
            (None, ModelKind::MergedLstm) => Some(MergeFunction::Concatenation),
            (Some(v), other) => {
                return Err(Error::invalid(format!(
                    "--variant {v:?} only applies to merged_lstm, not {other}"
                )))
            }
            (None, _) => None,
        };
        Ok(ModelSpec { kind, merge })
    }

    fn task_or_default(&self, kind: ModelKind) -> Task {
        self.task.unwrap_or(match kind {
            ModelKind::Krr => Task::Regression,
            _ => Task::Classification,
        })
    }
}

// ---------------------------------------------------------------------------
// Data loading

struct LoadedData {
    passages: Vec<Passage>,
    records: Vec<SummaryRecord>,
    wv: WordVectors,
    background: BackgroundCorpus,
    synonyms: SynonymLexicon,
}

impl LoadedData {
    fn ctx(&self) -> ExperimentContext<'_> {
        ExperimentContext {
            passages: &self.passages,
            records: &self.records,
            wv: &self.wv,
            background: &self.background,
            synonyms: &self.synonyms,
        }
    }
}

fn load_background(path: &Path) -> Result<BackgroundCorpus> {
    let text = fs::read_to_string(path)?;
    let docs: Vec<_> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(tokenize)
        .filter(|t| !t.is_empty())
        .collect();
    if docs.is_empty() {
        return Err(Error::invalid(format!(
            "background corpus {} has no documents",
            path.display()
        )));
    }
    Ok(BackgroundCorpus::new(docs))
}

fn load_data(st: &Settings, need_wv: bool) -> Result<LoadedData> {
    let passages_path = st
        .passages
        .as_deref()
        .ok_or_else(|| Error::invalid("--passages (or a config `passages` path) is required"))?;
    let dataset_path = st
        .dataset
        .as_deref()
        .ok_or_else(|| Error::invalid("--dataset (or a config `dataset` path) is required"))?;
    let (passages, records) = load_dataset(passages_path, dataset_path)?;
    let wv = match &st.word_vectors {
        Some(p) => load_word_vectors(p)?,
        None if need_wv => {
            return Err(Error::invalid(
                "--word-vectors (or a config `word_vectors` path) is required",
            ))
        }
        None => WordVectors::new(1),
    };
    let background = match &st.background_corpus {
        Some(p) => load_background(p)?,
        None => builtin_background_corpus(BACKGROUND_DOCS, BACKGROUND_SEED),
    };
    let synonyms = match &st.synonyms {
        Some(p) => SynonymLexicon::from_tsv_file(p)?,
        None => SynonymLexicon::from_pairs(Vec::<(String, String)>::new()),
    };
    Ok(LoadedData {
        passages,
        records,
        wv,
        background,
        synonyms,
    })
}

fn load_passages_only(path: &Path) -> Result<Vec<Passage>> {
    let file = fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut passages = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: Passage = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        passages.push(p);
    }
    if passages.is_empty() {
        return Err(Error::invalid(format!(
            "no passages in {}",
            path.display()
        )));
    }
    Ok(passages)
}

// ---------------------------------------------------------------------------
// Output plumbing

fn write_out(out: &Option<PathBuf>, content: &str) -> Result<Option<PathBuf>> {
    match out {
        Some(path) => {
            fs::write(path, content)?;
            Ok(Some(path.clone()))
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(content.as_bytes())?;
            if !content.ends_with('\n') {
                stdout.write_all(b"\n")?;
            }
            Ok(None)
        }
    }
}

fn report_done(json: bool, fields: &[(&str, String)]) {
    if json {
        let map: BTreeMap<&str, &String> = fields.iter().map(|(k, v)| (*k, v)).collect();
        println!("{}", serde_json::to_string(&map).unwrap_or_default());
    } else {
        for (k, v) in fields {
            println!("{k}: {v}");
        }
    }
}

// ---------------------------------------------------------------------------
// Subcommands

fn cmd_synth(
    config: Option<PathBuf>,
    n_passages: usize,
    per_passage: usize,
    dim: usize,
    seed: Option<u64>,
    out: Option<PathBuf>,
    json: bool,
) -> Result<()> {
    let config = match config {
        Some(p) => RunConfig::load(&p)?,
        None => RunConfig::default(),
    };
    let seed = seed.or(config.seed).unwrap_or(0);
    let dir = out.unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)?;
    let (passages, records) = generate_synthetic(n_passages, per_passage, seed)?;
    let passages_path = dir.join("passages.jsonl");
    let summaries_path = dir.join("summaries.jsonl");
    save_dataset(&passages, &records, &passages_path, &summaries_path)?;
    let wv = synthetic_word_vectors(dim, seed);
    let vectors_path = dir.join("vectors.txt");
    save_word_vectors(&vectors_path, &wv)?;
    report_done(
        json,
        &[
            ("passages", passages_path.display().to_string()),
            ("summaries", summaries_path.display().to_string()),
            ("word_vectors", vectors_path.display().to_string()),
            ("n_passages", passages.len().to_string()),
            ("n_summaries", records.len().to_string()),
        ],
    );
    Ok(())
}

fn save_word_vectors(path: &Path, wv: &WordVectors) -> Result<()> {
    let mut words: Vec<&str> = wv.words().collect();
    words.sort_unstable();
    let mut text = format!("{} {}\n", words.len(), wv.dim());
    for w in words {
        text.push_str(w);
        for v in wv.get(w).expect("listed word") {
            text.push(' ');
            text.push_str(&v.to_string());
        }
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// Deterministic 80/20 train/dev split of the prepared record ids.
fn train_dev_split<'a>(
    inputs: &'a BTreeMap<String, RecordInputs>,
    seed: u64,
) -> (Vec<&'a RecordInputs>, Vec<&'a RecordInputs>) {
    let mut ids: Vec<&String> = inputs.keys().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..ids.len()).rev() {
        let j = rng.random_range(0..=i);
        ids.swap(i, j);
    }
    let mut train = Vec::new();
    let mut dev = Vec::new();
    for (i, id) in ids.iter().enumerate() {
        let row = &inputs[*id];
        if i % 5 == 0 {
            dev.push(row);
        } else {
            train.push(row);
        }
    }
    (train, dev)
}

fn cmd_train(st: &Settings) -> Result<()> {
    let spec = st.model_spec()?;
    let task = st.task_or_default(spec.kind);
    let data = load_data(st, true)?;
    let inputs = prepare_inputs(&data.ctx(), &st.params)?;
    let (train, dev) = train_dev_split(&inputs, st.params.seed);
    let bundle = train_split(&train, &dev, &spec, task, &st.params, &data.wv, 0)?;
    let out = st.out.clone().unwrap_or_else(|| PathBuf::from("model.json"));
    bundle.save(&out)?;
    report_done(
        st.json,
        &[
            ("model", out.display().to_string()),
            ("kind", spec.kind.to_string()),
            ("task", task.to_string()),
        ],
    );
    Ok(())
}

fn bundle_reference_kind(bundle: &ModelBundle) -> Option<ReferenceKind> {
    match &bundle.input {
        InputSpec::Features { reference_kind, .. } => Some(*reference_kind),
        InputSpec::Ensemble => bundle.members.iter().find_map(bundle_reference_kind),
        _ => None,
    }
}

fn cmd_score(st: &Settings, model: Option<&Path>) -> Result<()> {
    let bundle_path = model
        .map(Path::to_path_buf)
        .or_else(|| st.model_bundle.clone())
        .ok_or_else(|| Error::invalid("--model <bundle path> is required for score"))?;
    let bundle = ModelBundle::load(&bundle_path)?;
    let mut params = st.params.clone();
    if let Some(kind) = bundle_reference_kind(&bundle) {
        // Features must be built against the reference the bundle trained on.
        params.reference = kind;
    }
    let data = load_data(st, true)?;
    let inputs = prepare_inputs(&data.ctx(), &params)?;
    let mut scores: BTreeMap<String, serde_json::Value> = BTreeMap::new();
    for (id, row) in &inputs {
        let value = match predict_record(&bundle, row, &data.wv, &params.lstm)? {
            Prediction::Label(l) => serde_json::Value::String(l.to_string()),
            Prediction::Score(s) => serde_json::json!(s),
        };
        scores.insert(id.clone(), value);
    }
    let text = serde_json::to_string_pretty(&scores)
        .map_err(|e| Error::invalid(format!("score serialization failed: {e}")))?;
    write_out(&st.out, &text)?;
    Ok(())
}

fn cmd_evaluate(st: &Settings) -> Result<()> {
    let spec = st.model_spec()?;
    let task = st.task_or_default(spec.kind);
    let data = load_data(st, true)?;
    let plan = make_folds(&data.records, st.params.seed)?;
    let report = run_experiment(&data.ctx(), &spec, task, &plan, &st.params)?;
    let out = st
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("report.json"));
    fs::write(&out, report.to_json()? + "\n")?;
    if st.json {
        report_done(true, &[("report", out.display().to_string())]);
    } else {
        print!("{}", report.render_text());
        println!("report written to {}", out.display());
    }
    Ok(())
}

fn cmd_features(st: &Settings) -> Result<()> {
    let data = load_data(st, true)?;
    let inputs = prepare_inputs(&data.ctx(), &st.params)?;
    let text = if st.json {
        let rows: Vec<serde_json::Value> = inputs
            .iter()
            .map(|(id, row)| {
                let map: BTreeMap<&String, f64> = row
                    .features
                    .names
                    .iter()
                    .zip(row.features.values.iter().copied())
                    .collect();
                serde_json::json!({ "id": id, "features": map })
            })
            .collect();
        serde_json::to_string_pretty(&rows)
            .map_err(|e| Error::invalid(format!("feature serialization failed: {e}")))?
    } else {
        let mut csv = String::from("id");
        if let Some(first) = inputs.values().next() {
            for name in &first.features.names {
                csv.push(',');
                csv.push_str(name);
            }
        }
        csv.push('\n');
        for (id, row) in &inputs {
            csv.push_str(id);
            for v in &row.features.values {
                csv.push(',');
                csv.push_str(&v.to_string());
            }
            csv.push('\n');
        }
        csv
    };
    write_out(&st.out, &text)?;
    Ok(())
}

const METRIC_COLUMNS: [&str; 11] = [
    "rouge1_precision",
    "rouge1_recall",
    "rouge1_f",
    "rouge2_precision",
    "rouge2_recall",
    "rouge2_f",
    "rougeL_precision",
    "rougeL_recall",
    "rougeL_f",
    "bleu",
    "meteor",
];

fn cmd_metrics(st: &Settings) -> Result<()> {
    let need_wv = st.params.reference == ReferenceKind::Textrank;
    let data = load_data(st, need_wv)?;
    let mut references = BTreeMap::new();
    for p in &data.passages {
        let tokenized = p.tokenized();
        let reference = build_reference(
            st.params.reference,
            &tokenized,
            &p.id,
            &data.wv,
            &st.params.reference_params,
        )?;
        references.insert(p.id.clone(), reference.all_tokens());
    }
    let mut rows: Vec<(String, [f64; 11])> = Vec::new();
    for r in &data.records {
        let ref_tokens = references
            .get(&r.passage_id)
            .ok_or_else(|| Error::Integrity(format!("unknown passage {:?}", r.passage_id)))?;
        let cand = r.tokenized().tokens;
        let r1 = rouge_n(&cand, ref_tokens, 1);
        let r2 = rouge_n(&cand, ref_tokens, 2);
        let rl = rouge_l(&cand, ref_tokens);
        let values = [
            r1.0,
            r1.1,
            r1.2,
            r2.0,
            r2.1,
            r2.2,
            rl.0,
            rl.1,
            rl.2,
            bleu(&cand, ref_tokens, 4),
            meteor_lite(&cand, ref_tokens, Some(&data.synonyms)),
        ];
        rows.push((r.id.clone(), values));
    }
    let text = if st.json {
        let records: Vec<serde_json::Value> = rows
            .iter()
            .map(|(id, values)| {
                let map: BTreeMap<&str, f64> = METRIC_COLUMNS
                    .iter()
                    .copied()
                    .zip(values.iter().copied())
                    .collect();
                serde_json::json!({ "id": id, "metrics": map })
            })
            .collect();
        let agreement: Vec<serde_json::Value> = annotator_agreement(&data.records)
            .into_iter()
            .map(|(a, b, pcc)| serde_json::json!({ "a": a, "b": b, "pcc": pcc }))
            .collect();
        serde_json::to_string_pretty(&serde_json::json!({
            "records": records,
            "annotator_agreement": agreement,
        }))
        .map_err(|e| Error::invalid(format!("metric serialization failed: {e}")))?
    } else {
        let mut csv = String::from("id");
        for c in METRIC_COLUMNS {
            csv.push(',');
            csv.push_str(c);
        }
        csv.push('\n');
        for (id, values) in &rows {
            csv.push_str(id);
            for v in values {
                csv.push(',');
                csv.push_str(&v.to_string());
            }
            csv.push('\n');
        }
        csv
    };
    write_out(&st.out, &text)?;
    Ok(())
}

fn cmd_summarize(st: &Settings) -> Result<()> {
    let passages_path = st
        .passages
        .as_deref()
        .ok_or_else(|| Error::invalid("--passages (or a config `passages` path) is required"))?;
    let passages = load_passages_only(passages_path)?;
    let need_wv = st.params.reference == ReferenceKind::Textrank;
    let wv = match &st.word_vectors {
        Some(p) => load_word_vectors(p)?,
        None if need_wv => {
            return Err(Error::invalid(
                "--word-vectors is required for textrank references",
            ))
        }
        None => WordVectors::new(1),
    };
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for p in &passages {
        let tokenized = p.tokenized();
        let reference = build_reference(
            st.params.reference,
            &tokenized,
            &p.id,
            &wv,
            &st.params.reference_params,
        )?;
        let sentences = reference
            .sentences
            .iter()
            .map(|s| s.join(" "))
            .collect::<Vec<_>>();
        out.insert(p.id.clone(), sentences);
    }
    let text = serde_json::to_string_pretty(&out)
        .map_err(|e| Error::invalid(format!("summary serialization failed: {e}")))?;
    write_out(&st.out, &text)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Dispatch

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Train {
            common,
            model,
            variant,
        } => {
            let st = resolve(common, model.as_deref(), variant.as_deref())?;
            cmd_train(&st)
        }
        Command::Score { common, model } => {
            let st = resolve(common, None, None)?;
            cmd_score(&st, model.as_deref())
        }
        Command::Evaluate {
            common,
            model,
            variant,
        } => {
            let st = resolve(common, model.as_deref(), variant.as_deref())?;
            cmd_evaluate(&st)
        }
        Command::Features { common } => cmd_features(&resolve(common, None, None)?),
        Command::Metrics { common } => cmd_metrics(&resolve(common, None, None)?),
        Command::Summarize { common } => cmd_summarize(&resolve(common, None, None)?),
        Command::Synth {
            config,
            passages,
            per_passage,
            dim,
            seed,
            out,
            json,
        } => cmd_synth(
            config.clone(),
            *passages,
            *per_passage,
            *dim,
            *seed,
            out.clone(),
            *json,
        ),
    }
}

fn emit_error(json: bool, msg: &str) {
    if json {
        eprintln!("{}", serde_json::json!({ "error": msg }));
    } else {
        eprintln!("error: {msg}");
    }
}

/// Parses and runs one invocation, returning the process exit code.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let json = argv.iter().any(|a| a == "--json");
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(
                e.kind(),
                ClapErrorKind::DisplayHelp | ClapErrorKind::DisplayVersion
            ) {
                print!("{e}");
                return 0;
            }
            emit_error(json, e.to_string().trim());
            return 2;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            emit_error(json, &e.to_string());
            1
        }
    }
}

pub fn main() {
    env_logger::init();
    let code = dispatch(std::env::args());
    std::process::exit(code);
}
