//! Experimental harness: cross-validated training/selection/testing, the
//! five baselines, evaluation metrics, paired significance testing, and
//! report generation.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::corpus::{BinaryLabel, FoldPlan, FoldSplit, Passage, SummaryRecord};
use crate::embeddings::{BackgroundCorpus, WordVectors};
use crate::error::{Error, Result};
use crate::features::{
    extract_feature_vector, fit_doc_vector_suite, DocVectorParams, FeatureInputs, FeatureVector,
    DEFAULT_LINK_THRESHOLD,
};
use crate::metrics::{build_similarity_matrix, SimilarityMatrix, SynonymLexicon};
use crate::models::{
    default_kernel_grid, embed_sequence, ensemble, label_target, train_attention_lstm, train_cnn,
    train_krr, train_merged_lstm, train_svm, CnnConfig, KernelSpec, LstmConfig, MergeFunction,
    ModelBundle, ModelKind, Prediction, ScoringInput, Standardizer, Task, KRR_LAMBDA_GRID,
    SVM_C_GRID,
};
use crate::reference::{build_reference, ReferenceKind, ReferenceParams};

// ---------------------------------------------------------------------------
// Metrics

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    MostFrequent,
    Random,
    RougeOnly,
    BleuOnly,
    RougeBleu,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 5] = [
        BaselineKind::MostFrequent,
        BaselineKind::Random,
        BaselineKind::RougeOnly,
        BaselineKind::BleuOnly,
        BaselineKind::RougeBleu,
    ];
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BaselineKind::MostFrequent => "most_frequent",
            BaselineKind::Random => "random",
            BaselineKind::RougeOnly => "rouge_only",
            BaselineKind::BleuOnly => "bleu_only",
            BaselineKind::RougeBleu => "rouge_bleu",
        };
        f.write_str(s)
    }
}

impl FromStr for BaselineKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "most_frequent" => Ok(BaselineKind::MostFrequent),
            "random" => Ok(BaselineKind::Random),
            "rouge_only" => Ok(BaselineKind::RougeOnly),
            "bleu_only" => Ok(BaselineKind::BleuOnly),
            "rouge_bleu" => Ok(BaselineKind::RougeBleu),
            other => Err(Error::invalid(format!("unknown baseline kind {other:?}"))),
        }
    }
}

/// Metrics for one evaluation split. A PCC of `None` means the coefficient
/// is undefined (constant predictions or golds), which reports render as
/// "-" rather than 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "lowercase")]
pub enum Metrics {
    Classification { accuracy: f64 },
    Regression { pcc: Option<f64>, rmse: f64 },
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        cov += (x - mx) * (y - my);
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some((cov / (vx * vy).sqrt()).clamp(-1.0, 1.0))
}

pub fn rmse(predictions: &[f64], golds: &[f64]) -> f64 {
    let n = predictions.len() as f64;
    let sq: f64 = predictions
        .iter()
        .zip(golds)
        .map(|(p, g)| (p - g) * (p - g))
        .sum();
    (sq / n).sqrt()
}

/// Computes the task's evaluation metrics. Classification predictions and
/// golds are the 0/1 label encoding; regression values are raw scores.
pub fn compute_metrics(predictions: &[f64], golds: &[f64], task: Task) -> Result<Metrics> {
    if predictions.len() != golds.len() {
        return Err(Error::invalid(format!(
            "predictions ({}) and golds ({}) have different lengths",
            predictions.len(),
            golds.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::invalid("cannot compute metrics on zero items"));
    }
    match task {
        Task::Classification => {
            let hits = predictions
                .iter()
                .zip(golds)
                .filter(|(p, g)| p == g)
                .count();
            Ok(Metrics::Classification {
                accuracy: hits as f64 / predictions.len() as f64,
            })
        }
        Task::Regression => {
            if predictions.len() < 2 {
                return Err(Error::invalid("pcc needs at least 2 items"));
            }
            Ok(Metrics::Regression {
                pcc: pearson(predictions, golds),
                rmse: rmse(predictions, golds),
            })
        }
    }
}

/// Mean and population standard deviation over folds. A PCC mean exists
/// only when every fold's PCC is defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy_std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pcc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pcc_std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rmse_std: Option<f64>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn aggregate(per_fold: &[Metrics]) -> Aggregate {
    let mut agg = Aggregate {
        accuracy: None,
        accuracy_std: None,
        pcc: None,
        pcc_std: None,
        rmse: None,
        rmse_std: None,
    };
    let accs: Vec<f64> = per_fold
        .iter()
        .filter_map(|m| match m {
            Metrics::Classification { accuracy } => Some(*accuracy),
            _ => None,
        })
        .collect();
    if accs.len() == per_fold.len() && !accs.is_empty() {
        let (m, s) = mean_std(&accs);
        agg.accuracy = Some(m);
        agg.accuracy_std = Some(s);
    }
    let rmses: Vec<f64> = per_fold
        .iter()
        .filter_map(|m| match m {
            Metrics::Regression { rmse, .. } => Some(*rmse),
            _ => None,
        })
        .collect();
    if rmses.len() == per_fold.len() && !rmses.is_empty() {
        let (m, s) = mean_std(&rmses);
        agg.rmse = Some(m);
        agg.rmse_std = Some(s);
        let pccs: Vec<f64> = per_fold
            .iter()
            .filter_map(|m| match m {
                Metrics::Regression { pcc, .. } => *pcc,
                _ => None,
            })
            .collect();
        if pccs.len() == per_fold.len() {
            let (m, s) = mean_std(&pccs);
            agg.pcc = Some(m);
            agg.pcc_std = Some(s);
        }
    }
    agg
}

// ---------------------------------------------------------------------------
// Significance

/// Two-sided paired t-test. Zero differences everywhere give p = 1.0; a
/// nonzero mean with zero spread gives p = 0.
pub fn paired_t_test(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::invalid("paired t-test needs equal-length samples"));
    }
    if xs.len() < 2 {
        return Err(Error::invalid("paired t-test needs at least 2 pairs"));
    }
    let n = xs.len() as f64;
    let diffs: Vec<f64> = xs.iter().zip(ys).map(|(a, b)| a - b).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return Ok(if mean == 0.0 { 1.0 } else { 0.0 });
    }
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 1.0)
        .map_err(|e| Error::numeric(format!("t distribution: {e}")))?;
    Ok(2.0 * (1.0 - dist.cdf(t.abs())))
}

fn fold_scores(report: &EvalReport) -> Result<(Vec<f64>, &'static str)> {
    match report.task {
        Task::Classification => {
            let accs: Vec<f64> = report
                .per_fold
                .iter()
                .filter_map(|m| match m {
                    Metrics::Classification { accuracy } => Some(*accuracy),
                    _ => None,
                })
                .collect();
            if accs.len() != report.per_fold.len() {
                return Err(Error::invalid("report has mixed-task fold metrics"));
            }
            Ok((accs, "accuracy"))
        }
        Task::Regression => {
            let pccs: Vec<Option<f64>> = report
                .per_fold
                .iter()
                .map(|m| match m {
                    Metrics::Regression { pcc, .. } => Ok(*pcc),
                    _ => Err(Error::invalid("report has mixed-task fold metrics")),
                })
                .collect::<Result<_>>()?;
            if pccs.iter().all(|p| p.is_some()) {
                Ok((pccs.into_iter().map(|p| p.unwrap()).collect(), "pcc"))
            } else {
                // A constant predictor has no PCC; fall back to RMSE.
                let rmses = report
                    .per_fold
                    .iter()
                    .map(|m| match m {
                        Metrics::Regression { rmse, .. } => *rmse,
                        _ => unreachable!(),
                    })
                    .collect();
                Ok((rmses, "rmse"))
            }
        }
    }
}

/// Paired two-sided t-test over the two reports' per-fold scores
/// (accuracy for classification; PCC for regression, falling back to RMSE
/// when either report's PCC is undefined on some fold).
pub fn paired_significance(a: &EvalReport, b: &EvalReport) -> Result<f64> {
    if a.task != b.task {
        return Err(Error::invalid("cannot compare reports across tasks"));
    }
    if a.per_fold.len() != b.per_fold.len() {
        return Err(Error::invalid("reports have different fold counts"));
    }
    let (xs, x_metric) = fold_scores(a)?;
    let (ys, y_metric) = fold_scores(b)?;
    if x_metric != y_metric {
        // One side lacks PCC: compare both on RMSE.
        let take_rmse = |r: &EvalReport| -> Vec<f64> {
            r.per_fold
                .iter()
                .map(|m| match m {
                    Metrics::Regression { rmse, .. } => *rmse,
                    Metrics::Classification { accuracy } => *accuracy,
                })
                .collect()
        };
        return paired_t_test(&take_rmse(a), &take_rmse(b));
    }
    paired_t_test(&xs, &ys)
}

pub const SIGNIFICANCE_NOTE: &str =
    "p-values from a paired two-sided t-test over per-fold scores (n = fold count)";

// ---------------------------------------------------------------------------
// Reports

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub name: String,
    pub per_fold: Vec<Metrics>,
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    /// Model name, e.g. "svm", "merged_lstm", or "baseline:random".
    pub model: String,
    /// Sub-variant when applicable (a merge function name).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    pub reference: ReferenceKind,
    pub seed: u64,
    pub n_records: usize,
    pub per_fold: Vec<Metrics>,
    pub aggregate: Aggregate,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub baselines: Vec<BaselineRow>,
    /// p-value of the model against each baseline row.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub p_values: BTreeMap<String, f64>,
    pub significance_note: String,
    pub config_hash: String,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn fmt_pair(mean: Option<f64>, std: Option<f64>) -> String {
    match (mean, std) {
        (Some(m), Some(s)) => format!("{m:.3} ± {s:.3}"),
        (Some(m), None) => format!("{m:.3}"),
        _ => "-".to_string(),
    }
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::invalid(format!("report serialization failed: {e}")))
    }

    /// Plain-text table: baselines first, the evaluated model last.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let variant = self
            .variant
            .as_deref()
            .map(|v| format!(" ({v})"))
            .unwrap_or_default();
        out.push_str(&format!(
            "task: {}  model: {}{variant}  reference: {}  records: {}  seed: {}  config: {}\n",
            self.task, self.model, self.reference, self.n_records, self.seed, self.config_hash
        ));
        let header = match self.task {
            Task::Classification => format!("{:<24} {:>16}\n", "system", "accuracy"),
            Task::Regression => format!("{:<24} {:>16} {:>16}\n", "system", "pcc", "rmse"),
        };
        out.push_str(&header);
        let row = |name: &str, agg: &Aggregate| match self.task {
            Task::Classification => format!(
                "{:<24} {:>16}\n",
                name,
                fmt_pair(agg.accuracy, agg.accuracy_std)
            ),
            Task::Regression => format!(
                "{:<24} {:>16} {:>16}\n",
                name,
                fmt_pair(agg.pcc, agg.pcc_std),
                fmt_pair(agg.rmse, agg.rmse_std)
            ),
        };
        for b in &self.baselines {
            out.push_str(&row(&b.name, &b.aggregate));
        }
        out.push_str(&row(&self.model, &self.aggregate));
        if !self.p_values.is_empty() {
            out.push_str(&format!("{}\n", self.significance_note));
            for (name, p) in &self.p_values {
                out.push_str(&format!("  vs {name}: p = {p:.4}\n"));
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Experiment configuration

/// Which model to evaluate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merge: Option<MergeFunction>,
}

impl ModelSpec {
    pub fn new(kind: ModelKind) -> Self {
        ModelSpec { kind, merge: None }
    }

    pub fn merged(merge: MergeFunction) -> Self {
        ModelSpec {
            kind: ModelKind::MergedLstm,
            merge: Some(merge),
        }
    }
}

/// Shared data every experiment draws on.
#[derive(Clone, Copy)]
pub struct ExperimentContext<'a> {
    pub passages: &'a [Passage],
    pub records: &'a [SummaryRecord],
    pub wv: &'a WordVectors,
    pub background: &'a BackgroundCorpus,
    pub synonyms: &'a SynonymLexicon,
}

/// Everything tunable about an experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentParams {
    pub reference: ReferenceKind,
    pub link_threshold: f64,
    pub doc_vector: DocVectorParams,
    pub reference_params: ReferenceParams,
    pub cnn: CnnConfig,
    pub lstm: LstmConfig,
    pub svm_c_grid: Vec<f64>,
    pub krr_lambda_grid: Vec<f64>,
    pub krr_kernel_grid: Vec<KernelSpec>,
    pub seed: u64,
}

impl Default for ExperimentParams {
    fn default() -> Self {
        ExperimentParams {
            reference: ReferenceKind::Original,
            link_threshold: DEFAULT_LINK_THRESHOLD,
            doc_vector: DocVectorParams::default(),
            reference_params: ReferenceParams::default(),
            cnn: CnnConfig::default(),
            lstm: LstmConfig::default(),
            svm_c_grid: SVM_C_GRID.to_vec(),
            krr_lambda_grid: KRR_LAMBDA_GRID.to_vec(),
            krr_kernel_grid: default_kernel_grid(),
            seed: 0,
        }
    }
}

fn mix_seed(seed: u64, fold: usize, salt: u64) -> u64 {
    let mut z = seed
        .wrapping_add(salt.wrapping_mul(0x9e3779b97f4a7c15))
        .wrapping_add((fold as u64).wrapping_mul(0xbf58476d1ce4e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

// ---------------------------------------------------------------------------
// Prepared per-record inputs

/// Model-ready inputs for one record, computed once per experiment. Nothing
/// here depends on any train/dev/test statistics: references and document
/// vectors come from the passages and the background corpus.
pub struct RecordInputs {
    pub features: FeatureVector,
    pub matrix: SimilarityMatrix,
    pub summary_tokens: Vec<String>,
    pub passage_tokens: Vec<String>,
    pub label: Option<BinaryLabel>,
    pub score: Option<f64>,
}

pub fn prepare_inputs(
    ctx: &ExperimentContext,
    params: &ExperimentParams,
) -> Result<BTreeMap<String, RecordInputs>> {
    let suite = fit_doc_vector_suite(ctx.background, ctx.wv, &params.doc_vector)?;
    let mut passages = BTreeMap::new();
    for p in ctx.passages {
        let tokenized = p.tokenized();
        let reference = build_reference(
            params.reference,
            &tokenized,
            &p.id,
            ctx.wv,
            &params.reference_params,
        )?;
        passages.insert(p.id.clone(), (p, tokenized, reference));
    }

    let entries: Vec<(String, RecordInputs)> = ctx
        .records
        .par_iter()
        .map(|record| {
            let (passage, passage_tok, reference) =
                passages.get(&record.passage_id).ok_or_else(|| {
                    Error::Integrity(format!(
                        "record {:?} references unknown passage {:?}",
                        record.id, record.passage_id
                    ))
                })?;
            let summary = record.tokenized();
            let features = extract_feature_vector(&FeatureInputs {
                summary: &summary,
                passage,
                reference,
                suite: &suite,
                wv: ctx.wv,
                synonyms: ctx.synonyms,
                link_threshold: params.link_threshold,
            })?;
            let summary_sents: Vec<Vec<String>> = (0..summary.sentence_count())
                .map(|i| summary.sentence_tokens(i).to_vec())
                .collect();
            let passage_sents: Vec<Vec<String>> = (0..passage_tok.sentence_count())
                .map(|i| passage_tok.sentence_tokens(i).to_vec())
                .collect();
            let matrix = build_similarity_matrix(&summary_sents, &passage_sents, ctx.wv)?;
            let target = record.gold_target();
            Ok((
                record.id.clone(),
                RecordInputs {
                    features,
                    matrix,
                    summary_tokens: summary.tokens.clone(),
                    passage_tokens: passage_tok.tokens.clone(),
                    label: target.class_label,
                    score: target.regression_score,
                },
            ))
        })
        .collect::<Result<_>>()?;
    Ok(entries.into_iter().collect())
}

// ---------------------------------------------------------------------------
// Fold assembly

struct FoldData<'a> {
    index: usize,
    train: Vec<&'a RecordInputs>,
    dev: Vec<&'a RecordInputs>,
    test: Vec<&'a RecordInputs>,
}

fn gather<'a>(
    inputs: &'a BTreeMap<String, RecordInputs>,
    ids: &[String],
) -> Result<Vec<&'a RecordInputs>> {
    ids.iter()
        .map(|id| {
            inputs
                .get(id)
                .ok_or_else(|| Error::Integrity(format!("fold references unknown record {id:?}")))
        })
        .collect()
}

fn assemble_folds<'a>(
    inputs: &'a BTreeMap<String, RecordInputs>,
    plan: &FoldPlan,
) -> Result<Vec<FoldData<'a>>> {
    plan.folds
        .iter()
        .enumerate()
        .map(|(index, split): (usize, &FoldSplit)| {
            Ok(FoldData {
                index,
                train: gather(inputs, &split.train_ids)?,
                dev: gather(inputs, &split.dev_ids)?,
                test: gather(inputs, &split.test_ids)?,
            })
        })
        .collect()
}

fn labels_of(rows: &[&RecordInputs]) -> Result<Vec<BinaryLabel>> {
    rows.iter()
        .map(|r| {
            r.label
                .ok_or_else(|| Error::invalid("record lacks a binary label for classification"))
        })
        .collect()
}

fn scores_of(rows: &[&RecordInputs]) -> Result<Vec<f64>> {
    rows.iter()
        .map(|r| {
            r.score
                .ok_or_else(|| Error::invalid("record lacks annotator scores for regression"))
        })
        .collect()
}

fn targets_of(rows: &[&RecordInputs], task: Task) -> Result<Vec<f64>> {
    match task {
        Task::Classification => Ok(labels_of(rows)?.into_iter().map(label_target).collect()),
        Task::Regression => scores_of(rows),
    }
}

fn check_two_classes(labels: &[BinaryLabel], fold: usize) -> Result<()> {
    let good = labels.iter().filter(|&&l| l == BinaryLabel::Good).count();
    if good == 0 || good == labels.len() {
        return Err(Error::invalid(format!(
            "fold {fold} has single-class training data"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Per-fold model training

fn features_of(rows: &[&RecordInputs]) -> Vec<FeatureVector> {
    rows.iter().map(|r| r.features.clone()).collect()
}

fn matrices_of(rows: &[&RecordInputs]) -> Vec<SimilarityMatrix> {
    rows.iter().map(|r| r.matrix.clone()).collect()
}

fn pairs_of(rows: &[&RecordInputs]) -> Vec<(Vec<String>, Vec<String>)> {
    rows.iter()
        .map(|r| (r.summary_tokens.clone(), r.passage_tokens.clone()))
        .collect()
}

/// Trains one model on an explicit train/dev split: feature learners
/// grid-select on dev and retrain on train+dev; neural models, which have
/// no grid, train directly on train+dev. `salt` (the fold index) keeps
/// per-fold randomness independent.
pub fn train_split(
    train: &[&RecordInputs],
    dev: &[&RecordInputs],
    spec: &ModelSpec,
    task: Task,
    params: &ExperimentParams,
    wv: &WordVectors,
    salt: usize,
) -> Result<ModelBundle> {
    if task == Task::Classification {
        check_two_classes(&labels_of(train)?, salt)?;
    }
    let seed = mix_seed(params.seed, salt, spec.kind as u64 + 1);
    match spec.kind {
        ModelKind::Svm => train_svm(
            &features_of(train),
            &labels_of(train)?,
            &features_of(dev),
            &labels_of(dev)?,
            &params.svm_c_grid,
            seed,
        ),
        ModelKind::Krr => train_krr(
            &features_of(train),
            &scores_of(train)?,
            &features_of(dev),
            &scores_of(dev)?,
            &params.krr_kernel_grid,
            &params.krr_lambda_grid,
        ),
        ModelKind::Cnn => {
            let mut combined: Vec<&RecordInputs> = train.to_vec();
            combined.extend(dev.iter().copied());
            let mut cfg = params.cnn.clone();
            cfg.train.seed = seed;
            let (bundle, _) = train_cnn(
                &matrices_of(&combined),
                &targets_of(&combined, task)?,
                &[],
                &[],
                task,
                &cfg,
            )?;
            Ok(bundle)
        }
        ModelKind::MergedLstm => {
            let merge = spec.merge.ok_or_else(|| {
                Error::invalid("merged_lstm model spec needs a merge function")
            })?;
            let mut combined: Vec<&RecordInputs> = train.to_vec();
            combined.extend(dev.iter().copied());
            let mut cfg = params.lstm.clone();
            cfg.train.seed = seed;
            let (bundle, _) = train_merged_lstm(
                &pairs_of(&combined),
                &targets_of(&combined, task)?,
                &[],
                &[],
                task,
                merge,
                wv,
                &cfg,
            )?;
            Ok(bundle)
        }
        ModelKind::AttentionLstm => {
            let mut combined: Vec<&RecordInputs> = train.to_vec();
            combined.extend(dev.iter().copied());
            let mut cfg = params.lstm.clone();
            cfg.train.seed = seed;
            let (bundle, _) = train_attention_lstm(
                &pairs_of(&combined),
                &targets_of(&combined, task)?,
                &[],
                &[],
                task,
                wv,
                &cfg,
            )?;
            Ok(bundle)
        }
        ModelKind::Ensemble => {
            let feature_spec = match task {
                Task::Classification => ModelSpec::new(ModelKind::Svm),
                Task::Regression => ModelSpec::new(ModelKind::Krr),
            };
            let members = vec![
                train_split(train, dev, &feature_spec, task, params, wv, salt)?,
                train_split(
                    train,
                    dev,
                    &ModelSpec::new(ModelKind::Cnn),
                    task,
                    params,
                    wv,
                    salt,
                )?,
                train_split(
                    train,
                    dev,
                    &ModelSpec::new(ModelKind::AttentionLstm),
                    task,
                    params,
                    wv,
                    salt,
                )?,
            ];
            ensemble(members)
        }
    }
}

fn train_fold_model(
    fold: &FoldData,
    spec: &ModelSpec,
    task: Task,
    params: &ExperimentParams,
    wv: &WordVectors,
) -> Result<ModelBundle> {
    train_split(&fold.train, &fold.dev, spec, task, params, wv, fold.index)
}

/// Scores one prepared record with a trained bundle.
pub fn predict_record(
    bundle: &ModelBundle,
    record: &RecordInputs,
    wv: &WordVectors,
    lstm: &LstmConfig,
) -> Result<Prediction> {
    match bundle.kind {
        ModelKind::Svm | ModelKind::Krr => {
            bundle.predict(&ScoringInput::from_features(&record.features))
        }
        ModelKind::Cnn => bundle.predict(&ScoringInput::from_matrix(&record.matrix)),
        ModelKind::MergedLstm | ModelKind::AttentionLstm => {
            let s = embed_sequence(&record.summary_tokens, wv, lstm.summary_max)?;
            let p = embed_sequence(&record.passage_tokens, wv, lstm.passage_max)?;
            bundle.predict(&ScoringInput::from_pair(&s, &p))
        }
        ModelKind::Ensemble => {
            let s = embed_sequence(&record.summary_tokens, wv, lstm.summary_max)?;
            let p = embed_sequence(&record.passage_tokens, wv, lstm.passage_max)?;
            let input = ScoringInput {
                features: Some(&record.features),
                matrix: Some(&record.matrix),
                summary_seq: Some(&s),
                passage_seq: Some(&p),
            };
            bundle.predict(&input)
        }
    }
}

fn prediction_value(p: Prediction) -> f64 {
    match p {
        Prediction::Label(l) => label_target(l),
        Prediction::Score(s) => s,
    }
}

fn evaluate_fold(
    fold: &FoldData,
    bundle: &ModelBundle,
    task: Task,
    wv: &WordVectors,
    lstm: &LstmConfig,
) -> Result<Metrics> {
    let mut preds = Vec::with_capacity(fold.test.len());
    for record in &fold.test {
        preds.push(prediction_value(predict_record(bundle, record, wv, lstm)?));
    }
    compute_metrics(&preds, &targets_of(&fold.test, task)?, task)
}

// ---------------------------------------------------------------------------
// Baselines

fn feature_subset(fv: &FeatureVector, keep: &dyn Fn(&str) -> bool) -> FeatureVector {
    let mut names = Vec::new();
    let mut values = Vec::new();
    for (n, &v) in fv.names.iter().zip(&fv.values) {
        if keep(n) {
            names.push(n.clone());
            values.push(v);
        }
    }
    FeatureVector {
        names,
        values,
        reference_kind: fv.reference_kind,
    }
}

fn subset_features(rows: &[&RecordInputs], kind: BaselineKind) -> Vec<FeatureVector> {
    let keep: Box<dyn Fn(&str) -> bool> = match kind {
        BaselineKind::RougeOnly => Box::new(|n: &str| n.starts_with("rouge")),
        BaselineKind::BleuOnly => Box::new(|n: &str| n == "bleu"),
        BaselineKind::RougeBleu => Box::new(|n: &str| n.starts_with("rouge") || n == "bleu"),
        _ => unreachable!("not a feature-subset baseline"),
    };
    rows.iter()
        .map(|r| feature_subset(&r.features, &keep))
        .collect()
}

fn modal_label(labels: &[BinaryLabel]) -> BinaryLabel {
    let good = labels.iter().filter(|&&l| l == BinaryLabel::Good).count();
    let bad = labels.len() - good;
    // Ties resolve to the label that sorts first.
    if good > bad {
        BinaryLabel::Good
    } else {
        BinaryLabel::Bad
    }
}

fn modal_band(scores: &[f64]) -> f64 {
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for &s in scores {
        *counts.entry(s.round() as i64).or_insert(0) += 1;
    }
    let (&band, _) = counts
        .iter()
        .max_by_key(|&(band, &count)| (count, std::cmp::Reverse(band)))
        .expect("non-empty scores");
    band as f64
}

fn baseline_fold_metrics(
    fold: &FoldData,
    kind: BaselineKind,
    task: Task,
    params: &ExperimentParams,
) -> Result<Metrics> {
    let mut fit_rows: Vec<&RecordInputs> = fold.train.clone();
    fit_rows.extend(fold.dev.iter().copied());
    let golds = targets_of(&fold.test, task)?;
    let preds: Vec<f64> = match kind {
        BaselineKind::MostFrequent => {
            let constant = match task {
                Task::Classification => label_target(modal_label(&labels_of(&fit_rows)?)),
                Task::Regression => modal_band(&scores_of(&fit_rows)?),
            };
            vec![constant; fold.test.len()]
        }
        BaselineKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(params.seed, fold.index, 0x7a4d));
            (0..fold.test.len())
                .map(|_| match task {
                    Task::Classification => {
                        if rng.random::<bool>() {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    Task::Regression => rng.random_range(0.0..=5.0),
                })
                .collect()
        }
        BaselineKind::RougeOnly | BaselineKind::BleuOnly | BaselineKind::RougeBleu => {
            let train_x = subset_features(&fold.train, kind);
            let dev_x = subset_features(&fold.dev, kind);
            let test_x = subset_features(&fold.test, kind);
            let seed = mix_seed(params.seed, fold.index, 0xba5e + kind as u64);
            let bundle = match task {
                Task::Classification => train_svm(
                    &train_x,
                    &labels_of(&fold.train)?,
                    &dev_x,
                    &labels_of(&fold.dev)?,
                    &params.svm_c_grid,
                    seed,
                )?,
                Task::Regression => train_krr(
                    &train_x,
                    &scores_of(&fold.train)?,
                    &dev_x,
                    &scores_of(&fold.dev)?,
                    &params.krr_kernel_grid,
                    &params.krr_lambda_grid,
                )?,
            };
            test_x
                .iter()
                .map(|x| {
                    bundle
                        .predict(&ScoringInput::from_features(x))
                        .map(prediction_value)
                })
                .collect::<Result<_>>()?
        }
    };
    compute_metrics(&preds, &golds, task)
}

// ---------------------------------------------------------------------------
// Entry points

fn config_hash(spec_desc: &str, task: Task, params: &ExperimentParams, n_records: usize) -> String {
    let params_json = serde_json::to_string(params).unwrap_or_default();
    let payload = format!("{spec_desc}|{task}|{params_json}|{n_records}");
    format!("{:016x}", fnv1a(payload.as_bytes()))
}

/// Cross-validates one model over the fold plan: per fold, preprocessing is
/// fit on the training data only, hyperparameters are selected on the dev
/// split, the winner retrains on train+dev, and metrics come from the test
/// split. The report carries all five baselines on the same folds and
/// model-vs-baseline significance.
pub fn run_experiment(
    ctx: &ExperimentContext,
    spec: &ModelSpec,
    task: Task,
    plan: &FoldPlan,
    params: &ExperimentParams,
) -> Result<EvalReport> {
    let inputs = prepare_inputs(ctx, params)?;
    let folds = assemble_folds(&inputs, plan)?;

    let per_fold: Vec<Metrics> = folds
        .par_iter()
        .map(|fold| {
            let bundle = train_fold_model(fold, spec, task, params, ctx.wv)?;
            evaluate_fold(fold, &bundle, task, ctx.wv, &params.lstm)
        })
        .collect::<Result<_>>()?;

    let baselines: Vec<BaselineRow> = BaselineKind::ALL
        .par_iter()
        .map(|&kind| {
            let fold_metrics: Vec<Metrics> = folds
                .iter()
                .map(|fold| baseline_fold_metrics(fold, kind, task, params))
                .collect::<Result<_>>()?;
            Ok(BaselineRow {
                name: format!("baseline:{kind}"),
                aggregate: aggregate(&fold_metrics),
                per_fold: fold_metrics,
            })
        })
        .collect::<Result<_>>()?;

    let variant = spec.merge.map(|m| m.to_string());
    let mut report = EvalReport {
        task,
        model: spec.kind.to_string(),
        variant,
        reference: params.reference,
        seed: params.seed,
        n_records: ctx.records.len(),
        aggregate: aggregate(&per_fold),
        per_fold,
        baselines,
        p_values: BTreeMap::new(),
        significance_note: SIGNIFICANCE_NOTE.to_string(),
        config_hash: config_hash(
            &format!("{}:{:?}", spec.kind, spec.merge),
            task,
            params,
            ctx.records.len(),
        ),
    };
    let model_row = EvalReport {
        baselines: Vec::new(),
        ..report.clone()
    };
    for b in &report.baselines {
        let baseline_report = EvalReport {
            model: b.name.clone(),
            variant: None,
            per_fold: b.per_fold.clone(),
            aggregate: b.aggregate,
            baselines: Vec::new(),
            p_values: BTreeMap::new(),
            ..report.clone()
        };
        let p = paired_significance(&model_row, &baseline_report)?;
        report.p_values.insert(b.name.clone(), p);
    }
    Ok(report)
}

/// Evaluates one baseline over the fold plan as its own report.
pub fn run_baseline(
    ctx: &ExperimentContext,
    kind: BaselineKind,
    task: Task,
    plan: &FoldPlan,
    params: &ExperimentParams,
) -> Result<EvalReport> {
    let needs_features = matches!(
        kind,
        BaselineKind::RougeOnly | BaselineKind::BleuOnly | BaselineKind::RougeBleu
    );
    let inputs = if needs_features {
        prepare_inputs(ctx, params)?
    } else {
        targets_only_inputs(ctx)?
    };
    let folds = assemble_folds(&inputs, plan)?;
    let per_fold: Vec<Metrics> = folds
        .iter()
        .map(|fold| baseline_fold_metrics(fold, kind, task, params))
        .collect::<Result<_>>()?;
    Ok(EvalReport {
        task,
        model: format!("baseline:{kind}"),
        variant: None,
        reference: params.reference,
        seed: params.seed,
        n_records: ctx.records.len(),
        aggregate: aggregate(&per_fold),
        per_fold,
        baselines: Vec::new(),
        p_values: BTreeMap::new(),
        significance_note: SIGNIFICANCE_NOTE.to_string(),
        config_hash: config_hash(&format!("baseline:{kind}"), task, params, ctx.records.len()),
    })
}

/// Cheap input table for baselines that never look at the texts.
fn targets_only_inputs(ctx: &ExperimentContext) -> Result<BTreeMap<String, RecordInputs>> {
    let placeholder_matrix = SimilarityMatrix {
        values: vec![vec![0.0]],
    };
    Ok(ctx
        .records
        .iter()
        .map(|record| {
            let target = record.gold_target();
            (
                record.id.clone(),
                RecordInputs {
                    features: FeatureVector {
                        names: Vec::new(),
                        values: Vec::new(),
                        reference_kind: ReferenceKind::Original,
                    },
                    matrix: placeholder_matrix.clone(),
                    summary_tokens: Vec::new(),
                    passage_tokens: Vec::new(),
                    label: target.class_label,
                    score: target.regression_score,
                },
            )
        })
        .collect())
}

/// Pairwise Pearson correlation between annotator score columns, over the
/// records that carry scores for both columns of a pair. `None` marks a
/// degenerate (constant) column.
pub fn annotator_agreement(records: &[SummaryRecord]) -> Vec<(usize, usize, Option<f64>)> {
    let n_cols = records
        .iter()
        .map(|r| r.annotator_scores.len())
        .max()
        .unwrap_or(0);
    let mut out = Vec::new();
    for i in 0..n_cols {
        for j in (i + 1)..n_cols {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for r in records {
                if r.annotator_scores.len() > j {
                    xs.push(r.annotator_scores[i] as f64);
                    ys.push(r.annotator_scores[j] as f64);
                }
            }
            let pcc = if xs.len() >= 2 { pearson(&xs, &ys) } else { None };
            out.push((i, j, pcc));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Leakage canary

/// Trains an SVM with an extra canary feature that is constant on the
/// training side but wild on the test side, then checks the stored
/// standardizer learned the canary's statistics from training data alone.
pub fn leakage_canary() -> Result<()> {
    const CANARY: f64 = 7.0;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let make = |center: f64, canary: f64, rng: &mut ChaCha8Rng| -> FeatureVector {
        FeatureVector {
            names: vec!["x0".into(), "x1".into(), "canary".into()],
            values: vec![
                center + rng.random_range(-0.5..0.5),
                center + rng.random_range(-0.5..0.5),
                canary,
            ],
            reference_kind: ReferenceKind::Original,
        }
    };
    let mut train_x = Vec::new();
    let mut train_y = Vec::new();
    for i in 0..16 {
        let good = i % 2 == 0;
        train_x.push(make(if good { 2.0 } else { -2.0 }, CANARY, &mut rng));
        train_y.push(if good { BinaryLabel::Good } else { BinaryLabel::Bad });
    }
    // Test rows exist and carry extreme canary values; training must never
    // see them.
    let test_x: Vec<FeatureVector> = (0..8)
        .map(|i| make(1.0, 1000.0 + 100.0 * i as f64, &mut rng))
        .collect();

    let bundle = train_svm(&train_x, &train_y, &[], &[], &SVM_C_GRID, 1)?;
    let std = bundle
        .standardizer
        .as_ref()
        .ok_or_else(|| Error::invalid("svm bundle lacks a standardizer"))?;
    let canary_idx = 2;
    if std.mean[canary_idx] != CANARY || std.std[canary_idx] != 1.0 {
        return Err(Error::Integrity(format!(
            "canary statistics leaked: mean {} std {}",
            std.mean[canary_idx], std.std[canary_idx]
        )));
    }
    // The transform must not zero out the test side's canary values.
    for t in &test_x {
        let z = std.apply(&t.values);
        if (z[canary_idx] - (t.values[canary_idx] - CANARY)).abs() > 1e-12 {
            return Err(Error::Integrity(
                "canary was standardized by non-training statistics".to_string(),
            ));
        }
    }
    // Sanity: fitting on the test rows would produce different statistics.
    let test_fit = Standardizer::fit(&test_x.iter().map(|f| f.values.clone()).collect::<Vec<_>>())?;
    if test_fit.mean[canary_idx] == CANARY {
        return Err(Error::Integrity(
            "canary construction is degenerate".to_string(),
        ));
    }
    Ok(())
}
