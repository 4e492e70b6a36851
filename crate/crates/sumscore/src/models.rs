//! The scorer families: linear SVM (classification), kernel ridge regression
//! (regression), a CNN over sentence-similarity matrices, merged and
//! attention-based bidirectional LSTM models, and the 3-way ensemble. Every
//! trained model is packaged as a serializable [`ModelBundle`].

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::BinaryLabel;
use crate::embeddings::WordVectors;
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::metrics::SimilarityMatrix;
use crate::nncore::{
    attention_backward, attention_forward, bce_with_logits, bilstm_backward, bilstm_forward,
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, dropout_backward,
    dropout_forward, max_pool2_backward, max_pool2_forward, mse_loss, sigmoid, train, Activation,
    AttentionCache, AttentionParams, BilstmCache, LstmParams, ParamSet, Tensor, TrainConfig,
    TrainReport, TrainableModel,
};
use crate::reference::ReferenceKind;

pub const BUNDLE_FORMAT_VERSION: u32 = 1;

/// Similarity-matrix canvas: summary sentences (rows) x passage sentences
/// (columns), zero-padded, leading sentences kept on truncation.
pub const CANVAS_ROWS: usize = 16;
pub const CANVAS_COLS: usize = 64;

pub const SUMMARY_MAX_TOKENS: usize = 128;
pub const PASSAGE_MAX_TOKENS: usize = 512;
pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_DROPOUT: f64 = 0.2;

pub const SVM_C_GRID: [f64; 3] = [0.1, 1.0, 10.0];
pub const KRR_LAMBDA_GRID: [f64; 4] = [1e-3, 1e-2, 1e-1, 1.0];
pub const KRR_GAMMA_GRID: [f64; 3] = [0.01, 0.1, 1.0];

/// Full-batch subgradient iterations for the SVM solver.
pub const SVM_ITERS: usize = 50_000;

// ---------------------------------------------------------------------------
// Shared enums

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Svm,
    Krr,
    Cnn,
    MergedLstm,
    AttentionLstm,
    Ensemble,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModelKind::Svm => "svm",
            ModelKind::Krr => "krr",
            ModelKind::Cnn => "cnn",
            ModelKind::MergedLstm => "merged_lstm",
            ModelKind::AttentionLstm => "attention_lstm",
            ModelKind::Ensemble => "ensemble",
        };
        f.write_str(s)
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "svm" => Ok(ModelKind::Svm),
            "krr" => Ok(ModelKind::Krr),
            "cnn" => Ok(ModelKind::Cnn),
            "merged_lstm" => Ok(ModelKind::MergedLstm),
            "attention_lstm" => Ok(ModelKind::AttentionLstm),
            "ensemble" => Ok(ModelKind::Ensemble),
            other => Err(Error::invalid(format!("unknown model kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Regression,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Task::Classification => f.write_str("classification"),
            Task::Regression => f.write_str("regression"),
        }
    }
}

/// How the two encoded texts are merged into a joint representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeFunction {
    Concatenation,
    Addition,
    ElementwiseProduct,
    LinearCombination,
}

impl MergeFunction {
    pub const ALL: [MergeFunction; 4] = [
        MergeFunction::Concatenation,
        MergeFunction::Addition,
        MergeFunction::ElementwiseProduct,
        MergeFunction::LinearCombination,
    ];
}

impl fmt::Display for MergeFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MergeFunction::Concatenation => "concatenation",
            MergeFunction::Addition => "addition",
            MergeFunction::ElementwiseProduct => "elementwise_product",
            MergeFunction::LinearCombination => "linear_combination",
        };
        f.write_str(s)
    }
}

impl FromStr for MergeFunction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concatenation" => Ok(MergeFunction::Concatenation),
            "addition" => Ok(MergeFunction::Addition),
            "elementwise_product" => Ok(MergeFunction::ElementwiseProduct),
            "linear_combination" => Ok(MergeFunction::LinearCombination),
            other => Err(Error::invalid(format!("unknown merge function {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KernelSpec {
    Linear,
    Rbf { gamma: f64 },
}

impl KernelSpec {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            KernelSpec::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            KernelSpec::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
        }
    }
}

/// Default KRR kernel grid: linear plus rbf over the gamma grid.
pub fn default_kernel_grid() -> Vec<KernelSpec> {
    let mut grid = vec![KernelSpec::Linear];
    grid.extend(KRR_GAMMA_GRID.iter().map(|&gamma| KernelSpec::Rbf { gamma }));
    grid
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prediction {
    Label(BinaryLabel),
    Score(f64),
}

impl Prediction {
    pub fn label(&self) -> Result<BinaryLabel> {
        match self {
            Prediction::Label(l) => Ok(*l),
            Prediction::Score(_) => Err(Error::invalid("prediction is a score, not a label")),
        }
    }

    pub fn score(&self) -> Result<f64> {
        match self {
            Prediction::Score(s) => Ok(*s),
            Prediction::Label(_) => Err(Error::invalid("prediction is a label, not a score")),
        }
    }
}

/// Classification target encoding for neural losses.
pub fn label_target(label: BinaryLabel) -> f64 {
    match label {
        BinaryLabel::Good => 1.0,
        BinaryLabel::Bad => 0.0,
    }
}

// ---------------------------------------------------------------------------
// Standardizer

/// Per-feature z-scoring. Fit on training rows only; constant features get a
/// unit scale so they pass through centered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("cannot fit a standardizer on no rows"));
        }
        let d = rows[0].len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::invalid("standardizer rows have inconsistent widths"));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for row in rows {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        let mut std = vec![0.0; d];
        for row in rows {
            for ((s, v), m) in std.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        for s in std.iter_mut() {
            *s = s.sqrt();
            if *s == 0.0 {
                *s = 1.0;
            }
        }
        Ok(Standardizer { mean, std })
    }

    pub fn fit_features(features: &[FeatureVector]) -> Result<Self> {
        let rows: Vec<Vec<f64>> = features.iter().map(|f| f.values.clone()).collect();
        Standardizer::fit(&rows)
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        assert_eq!(row.len(), self.mean.len(), "standardizer width mismatch");
        row.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Model bundle

/// What a bundle expects at prediction time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "input", rename_all = "snake_case")]
pub enum InputSpec {
    Features {
        names: Vec<String>,
        reference_kind: ReferenceKind,
    },
    Matrix {
        rows: usize,
        cols: usize,
    },
    TokenPair {
        embedding_dim: usize,
        summary_max: usize,
        passage_max: usize,
    },
    Ensemble,
}

/// Prediction-time input. Populate the pieces the bundle (or every ensemble
/// member) needs; `predict` refuses inputs that mismatch its spec.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScoringInput<'a> {
    pub features: Option<&'a FeatureVector>,
    pub matrix: Option<&'a SimilarityMatrix>,
    pub summary_seq: Option<&'a [Vec<f64>]>,
    pub passage_seq: Option<&'a [Vec<f64>]>,
}

impl<'a> ScoringInput<'a> {
    pub fn from_features(features: &'a FeatureVector) -> Self {
        ScoringInput {
            features: Some(features),
            ..Default::default()
        }
    }

    pub fn from_matrix(matrix: &'a SimilarityMatrix) -> Self {
        ScoringInput {
            matrix: Some(matrix),
            ..Default::default()
        }
    }

    pub fn from_pair(summary_seq: &'a [Vec<f64>], passage_seq: &'a [Vec<f64>]) -> Self {
        ScoringInput {
            summary_seq: Some(summary_seq),
            passage_seq: Some(passage_seq),
            ..Default::default()
        }
    }
}

/// A trained, serializable model: kind tag, named parameter tensors,
/// preprocessing state, and training metadata. The JSON layout is versioned
/// through `format_version`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBundle {
    pub format_version: u32,
    pub kind: ModelKind,
    pub task: Task,
    pub input: InputSpec,
    pub params: ParamSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardizer: Option<Standardizer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merge: Option<MergeFunction>,
    /// Numeric hyperparameters by name (grid winners, architecture sizes).
    pub hyper: BTreeMap<String, f64>,
    pub seed: u64,
    /// Dev-split selection score: accuracy for classification, RMSE for
    /// regression; absent when no dev split was supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub members: Vec<ModelBundle>,
}

impl ModelBundle {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::invalid(format!("bundle serialization failed: {e}")))?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(&path)?;
        let bundle: ModelBundle = serde_json::from_str(&text).map_err(|e| {
            Error::invalid(format!(
                "cannot read model bundle {}: {e}",
                path.as_ref().display()
            ))
        })?;
        if bundle.format_version != BUNDLE_FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported bundle format version {} (expected {})",
                bundle.format_version, BUNDLE_FORMAT_VERSION
            )));
        }
        Ok(bundle)
    }

    fn hget(&self, key: &str) -> Result<f64> {
        self.hyper
            .get(key)
            .copied()
            .ok_or_else(|| Error::invalid(format!("bundle is missing hyperparameter {key:?}")))
    }

    /// Checks a feature vector against the bundle's stored preprocessing spec.
    fn check_features<'a>(&self, input: &ScoringInput<'a>) -> Result<&'a FeatureVector> {
        let fv = input
            .features
            .ok_or_else(|| Error::invalid("bundle expects feature input"))?;
        let InputSpec::Features {
            names,
            reference_kind,
        } = &self.input
        else {
            return Err(Error::invalid("bundle input spec is not feature-based"));
        };
        if fv.names != *names {
            return Err(Error::invalid(
                "feature names do not match the bundle's preprocessing spec",
            ));
        }
        if fv.reference_kind != *reference_kind {
            return Err(Error::invalid(format!(
                "feature reference kind {} does not match the bundle's {}",
                fv.reference_kind, reference_kind
            )));
        }
        Ok(fv)
    }

    pub fn predict(&self, input: &ScoringInput) -> Result<Prediction> {
        Ok(self.predict_with_attention(input)?.0)
    }

    /// Predicts and, for attention bundles, also returns the attention
    /// weights over the passage tokens.
    pub fn predict_with_attention(
        &self,
        input: &ScoringInput,
    ) -> Result<(Prediction, Option<Vec<f64>>)> {
        match self.kind {
            ModelKind::Svm => {
                let fv = self.check_features(input)?;
                let std = self
                    .standardizer
                    .as_ref()
                    .ok_or_else(|| Error::invalid("svm bundle lacks a standardizer"))?;
                let score = svm_score(&self.params.get("w").data, &std.apply(&fv.values));
                let label = if score >= 0.0 {
                    BinaryLabel::Good
                } else {
                    BinaryLabel::Bad
                };
                Ok((Prediction::Label(label), None))
            }
            ModelKind::Krr => {
                let fv = self.check_features(input)?;
                let std = self
                    .standardizer
                    .as_ref()
                    .ok_or_else(|| Error::invalid("krr bundle lacks a standardizer"))?;
                let kernel = self
                    .kernel
                    .ok_or_else(|| Error::invalid("krr bundle lacks a kernel spec"))?;
                let x = std.apply(&fv.values);
                let support = self.params.get("support_x");
                let alpha = &self.params.get("alpha").data;
                let n = support.shape[0];
                let d = support.shape[1];
                let mut raw = self.hget("y_mean")?;
                for i in 0..n {
                    raw += alpha[i] * kernel.eval(&support.data[i * d..(i + 1) * d], &x);
                }
                Ok((Prediction::Score(raw.clamp(0.0, 5.0)), None))
            }
            ModelKind::Cnn => {
                let m = input
                    .matrix
                    .ok_or_else(|| Error::invalid("bundle expects a similarity matrix"))?;
                let net = self.cnn_net()?;
                let canvas = pad_matrix(m, net.cfg.rows, net.cfg.cols)?;
                let y = net.output(&canvas);
                Ok((head_prediction(self.task, y), None))
            }
            ModelKind::MergedLstm => {
                let (summary, passage) = self.check_pair(input)?;
                let net = self.merged_net()?;
                let y = net.output(&summary, &passage)?;
                Ok((head_prediction(self.task, y), None))
            }
            ModelKind::AttentionLstm => {
                let (summary, passage) = self.check_pair(input)?;
                let net = self.attention_net()?;
                let (y, weights) = net.output_with_attention(&summary, &passage)?;
                Ok((head_prediction(self.task, y), Some(weights)))
            }
            ModelKind::Ensemble => {
                let preds: Vec<Prediction> = self
                    .members
                    .iter()
                    .map(|m| m.predict(input))
                    .collect::<Result<_>>()?;
                match self.task {
                    Task::Classification => {
                        let good = preds
                            .iter()
                            .map(|p| p.label())
                            .collect::<Result<Vec<_>>>()?
                            .into_iter()
                            .filter(|&l| l == BinaryLabel::Good)
                            .count();
                        let label = if 2 * good >= preds.len() + 1 {
                            BinaryLabel::Good
                        } else {
                            BinaryLabel::Bad
                        };
                        Ok((Prediction::Label(label), None))
                    }
                    Task::Regression => {
                        let scores = preds
                            .iter()
                            .map(|p| p.score())
                            .collect::<Result<Vec<f64>>>()?;
                        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
                        Ok((Prediction::Score(mean), None))
                    }
                }
            }
        }
    }

    fn check_pair<'a>(&self, input: &ScoringInput<'a>) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let (summary, passage) = match (input.summary_seq, input.passage_seq) {
            (Some(s), Some(p)) => (s, p),
            _ => return Err(Error::invalid("bundle expects embedded token sequences")),
        };
        let InputSpec::TokenPair {
            embedding_dim,
            summary_max,
            passage_max,
        } = &self.input
        else {
            return Err(Error::invalid("bundle input spec is not token-based"));
        };
        for row in summary.iter().chain(passage.iter()) {
            if row.len() != *embedding_dim {
                return Err(Error::invalid(format!(
                    "embedding dim {} does not match the bundle's {}",
                    row.len(),
                    embedding_dim
                )));
            }
        }
        if summary.is_empty() || passage.is_empty() {
            return Err(Error::invalid("token sequences must be non-empty"));
        }
        Ok((
            summary.iter().take(*summary_max).cloned().collect(),
            passage.iter().take(*passage_max).cloned().collect(),
        ))
    }

    fn cnn_net(&self) -> Result<CnnNet> {
        let cfg = CnnConfig {
            rows: self.hget("rows")? as usize,
            cols: self.hget("cols")? as usize,
            channels1: self.hget("channels1")? as usize,
            channels2: self.hget("channels2")? as usize,
            dense: self.hget("dense")? as usize,
            dropout: self.hget("dropout")?,
            train: TrainConfig::default(),
        };
        CnnNet::from_parts(cfg, self.task, self.params.clone())
    }

    fn merged_net(&self) -> Result<MergedLstmNet> {
        let merge = self
            .merge
            .ok_or_else(|| Error::invalid("merged_lstm bundle lacks a merge function"))?;
        MergedLstmNet::from_parts(
            self.lstm_cfg()?,
            merge,
            self.task,
            self.hget("embed_dim")? as usize,
            self.params.clone(),
        )
    }

    fn attention_net(&self) -> Result<AttentionLstmNet> {
        AttentionLstmNet::from_parts(
            self.lstm_cfg()?,
            self.task,
            self.hget("embed_dim")? as usize,
            self.params.clone(),
        )
    }

    fn lstm_cfg(&self) -> Result<LstmConfig> {
        let (summary_max, passage_max) = match &self.input {
            InputSpec::TokenPair {
                summary_max,
                passage_max,
                ..
            } => (*summary_max, *passage_max),
            _ => (SUMMARY_MAX_TOKENS, PASSAGE_MAX_TOKENS),
        };
        Ok(LstmConfig {
            hidden: self.hget("hidden")? as usize,
            dropout: self.hget("dropout")?,
            summary_max,
            passage_max,
            train: TrainConfig::default(),
        })
    }
}

fn head_prediction(task: Task, raw: f64) -> Prediction {
    match task {
        Task::Classification => Prediction::Label(if sigmoid(raw) >= 0.5 {
            BinaryLabel::Good
        } else {
            BinaryLabel::Bad
        }),
        Task::Regression => Prediction::Score(raw.clamp(0.0, 5.0)),
    }
}

// ---------------------------------------------------------------------------
// SVM (classification)

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Decision value w . [x; 1] for an augmented weight vector.
pub fn svm_score(w: &[f64], x: &[f64]) -> f64 {
    assert_eq!(w.len(), x.len() + 1, "svm weight/feature width mismatch");
    dot(&w[..x.len()], x) + w[x.len()]
}

/// C-SVM primal objective 0.5 ||w||^2 + C sum_i hinge_i with the bias folded
/// into the (regularized) last weight component.
pub fn svm_objective(w: &[f64], rows: &[Vec<f64>], labels: &[f64], c: f64) -> f64 {
    let reg: f64 = 0.5 * dot(w, w);
    let hinge: f64 = rows
        .iter()
        .zip(labels)
        .map(|(x, &y)| (1.0 - y * svm_score(w, x)).max(0.0))
        .sum();
    reg + c * hinge
}

/// Deterministic full-batch Pegasos-style subgradient descent on the hinge
/// loss, with tail-iterate averaging. `labels` are +-1. Returns the augmented
/// weight vector (bias last, regularized).
pub fn svm_fit(rows: &[Vec<f64>], labels: &[f64], c: f64, iters: usize) -> Vec<f64> {
    assert!(!rows.is_empty());
    assert_eq!(rows.len(), labels.len());
    let n = rows.len();
    let d = rows[0].len() + 1;
    let lambda = 1.0 / (c * n as f64);
    let mut w = vec![0.0; d];
    let mut avg = vec![0.0; d];
    let half = iters / 2;
    for t in 1..=iters {
        let eta = 1.0 / (lambda * t as f64);
        let mut push = vec![0.0; d];
        for (x, &y) in rows.iter().zip(labels) {
            if y * svm_score(&w, x) < 1.0 {
                for (p, &xv) in push.iter_mut().zip(x) {
                    *p += y * xv;
                }
                push[d - 1] += y;
            }
        }
        let decay = 1.0 - eta * lambda;
        for k in 0..d {
            w[k] = decay * w[k] + eta * push[k] / n as f64;
        }
        if t > half {
            for (a, &v) in avg.iter_mut().zip(&w) {
                *a += v;
            }
        }
    }
    let tail = (iters - half) as f64;
    for a in avg.iter_mut() {
        *a /= tail;
    }
    avg
}

fn signed_labels(labels: &[BinaryLabel]) -> Vec<f64> {
    labels
        .iter()
        .map(|&l| if l == BinaryLabel::Good { 1.0 } else { -1.0 })
        .collect()
}

fn feature_rows(features: &[FeatureVector], std: &Standardizer) -> Vec<Vec<f64>> {
    features.iter().map(|f| std.apply(&f.values)).collect()
}

fn check_feature_batch(features: &[FeatureVector], what: &str) -> Result<()> {
    if features.is_empty() {
        return Err(Error::invalid(format!("{what}: no feature vectors")));
    }
    let first = &features[0];
    for f in features {
        if f.names != first.names || f.reference_kind != first.reference_kind {
            return Err(Error::invalid(format!(
                "{what}: feature vectors disagree on names or reference kind"
            )));
        }
    }
    Ok(())
}

/// Trains a linear SVM, selecting C on the dev split (falling back to
/// training accuracy when no dev data is given), then retraining on
/// train+dev with the winner.
pub fn train_svm(
    train_x: &[FeatureVector],
    train_y: &[BinaryLabel],
    dev_x: &[FeatureVector],
    dev_y: &[BinaryLabel],
    c_grid: &[f64],
    seed: u64,
) -> Result<ModelBundle> {
    check_feature_batch(train_x, "train_svm")?;
    if train_x.len() != train_y.len() || dev_x.len() != dev_y.len() {
        return Err(Error::invalid("features and labels have different lengths"));
    }
    if c_grid.is_empty() {
        return Err(Error::invalid("empty C grid"));
    }
    let good = train_y.iter().filter(|&&l| l == BinaryLabel::Good).count();
    if good == 0 || good == train_y.len() {
        return Err(Error::invalid(
            "svm training set contains a single class; both labels are required",
        ));
    }

    let std = Standardizer::fit_features(train_x)?;
    let rows = feature_rows(train_x, &std);
    let y = signed_labels(train_y);

    let accuracy = |w: &[f64], rows: &[Vec<f64>], y: &[f64]| -> f64 {
        let hits = rows
            .iter()
            .zip(y)
            .filter(|(x, &yy)| (svm_score(w, x) >= 0.0) == (yy > 0.0))
            .count();
        hits as f64 / rows.len() as f64
    };

    let mut best_c = c_grid[0];
    let mut best_acc = f64::NEG_INFINITY;
    for &c in c_grid {
        let w = svm_fit(&rows, &y, c, SVM_ITERS);
        let acc = if dev_x.is_empty() {
            accuracy(&w, &rows, &y)
        } else {
            let dev_rows = feature_rows(dev_x, &std);
            accuracy(&w, &dev_rows, &signed_labels(dev_y))
        };
        if acc > best_acc {
            best_acc = acc;
            best_c = c;
        }
    }

    // Retrain on train+dev with a refit standardizer.
    let mut all_x: Vec<FeatureVector> = train_x.to_vec();
    all_x.extend_from_slice(dev_x);
    let mut all_y = train_y.to_vec();
    all_y.extend_from_slice(dev_y);
    let std = Standardizer::fit_features(&all_x)?;
    let rows = feature_rows(&all_x, &std);
    let w = svm_fit(&rows, &signed_labels(&all_y), best_c, SVM_ITERS);

    let mut params = ParamSet::new();
    params.insert("w", Tensor::from_vec(&[w.len()], w));
    let mut hyper = BTreeMap::new();
    hyper.insert("c".to_string(), best_c);
    Ok(ModelBundle {
        format_version: BUNDLE_FORMAT_VERSION,
        kind: ModelKind::Svm,
        task: Task::Classification,
        input: InputSpec::Features {
            names: train_x[0].names.clone(),
            reference_kind: train_x[0].reference_kind,
        },
        params,
        standardizer: Some(std),
        kernel: None,
        merge: None,
        hyper,
        seed,
        dev_score: if dev_x.is_empty() { None } else { Some(best_acc) },
        members: Vec::new(),
    })
}

// ---------------------------------------------------------------------------
// Kernel ridge regression

#[derive(Debug, Clone)]
pub struct KrrSolution {
    pub alpha: Vec<f64>,
    pub y_mean: f64,
}

/// Closed-form KRR on centered targets: alpha = (K + lambda I)^-1 (y - mean).
pub fn krr_solve(
    rows: &[Vec<f64>],
    targets: &[f64],
    kernel: KernelSpec,
    lambda: f64,
) -> Result<KrrSolution> {
    if rows.is_empty() || rows.len() != targets.len() {
        return Err(Error::invalid("krr needs matching non-empty rows/targets"));
    }
    let n = rows.len();
    let y_mean = targets.iter().sum::<f64>() / n as f64;
    let k = DMatrix::from_fn(n, n, |i, j| {
        kernel.eval(&rows[i], &rows[j]) + if i == j { lambda } else { 0.0 }
    });
    let chol = k.cholesky().ok_or_else(|| {
        Error::numeric("kernel matrix is not positive definite; use a ridge λ > 0")
    })?;
    let centered = DVector::from_iterator(n, targets.iter().map(|t| t - y_mean));
    let alpha = chol.solve(&centered);
    Ok(KrrSolution {
        alpha: alpha.iter().copied().collect(),
        y_mean,
    })
}

/// Unclamped KRR prediction at a query point.
pub fn krr_predict_raw(
    sol: &KrrSolution,
    support: &[Vec<f64>],
    kernel: KernelSpec,
    query: &[f64],
) -> f64 {
    sol.y_mean
        + support
            .iter()
            .zip(&sol.alpha)
            .map(|(row, a)| a * kernel.eval(row, query))
            .sum::<f64>()
}

/// Trains KRR with (kernel, lambda) selected by dev RMSE, then retrains on
/// train+dev. Predictions are clamped to the score range [0,5].
pub fn train_krr(
    train_x: &[FeatureVector],
    train_y: &[f64],
    dev_x: &[FeatureVector],
    dev_y: &[f64],
    kernel_grid: &[KernelSpec],
    lambda_grid: &[f64],
) -> Result<ModelBundle> {
    check_feature_batch(train_x, "train_krr")?;
    if train_x.len() != train_y.len() || dev_x.len() != dev_y.len() {
        return Err(Error::invalid("features and targets have different lengths"));
    }
    if kernel_grid.is_empty() || lambda_grid.is_empty() {
        return Err(Error::invalid("empty kernel or lambda grid"));
    }

    let std = Standardizer::fit_features(train_x)?;
    let rows = feature_rows(train_x, &std);
    let dev_rows = feature_rows(dev_x, &std);

    let mut best: Option<(KernelSpec, f64, f64)> = None;
    let mut last_err = None;
    for &kernel in kernel_grid {
        for &lambda in lambda_grid {
            let sol = match krr_solve(&rows, train_y, kernel, lambda) {
                Ok(s) => s,
                Err(e) => {
                    last_err = Some(e);
                    continue;
                }
            };
            let (eval_rows, eval_y): (&[Vec<f64>], &[f64]) = if dev_rows.is_empty() {
                (&rows, train_y)
            } else {
                (&dev_rows, dev_y)
            };
            let mse: f64 = eval_rows
                .iter()
                .zip(eval_y)
                .map(|(r, &t)| {
                    let p = krr_predict_raw(&sol, &rows, kernel, r).clamp(0.0, 5.0);
                    (p - t) * (p - t)
                })
                .sum::<f64>()
                / eval_rows.len() as f64;
            let rmse = mse.sqrt();
            if best.as_ref().is_none_or(|(_, _, b)| rmse < *b) {
                best = Some((kernel, lambda, rmse));
            }
        }
    }
    let Some((kernel, lambda, best_rmse)) = best else {
        return Err(last_err.unwrap_or_else(|| Error::invalid("krr grid search failed")));
    };

    let mut all_x = train_x.to_vec();
    all_x.extend_from_slice(dev_x);
    let mut all_y = train_y.to_vec();
    all_y.extend_from_slice(dev_y);
    let std = Standardizer::fit_features(&all_x)?;
    let rows = feature_rows(&all_x, &std);
    let sol = krr_solve(&rows, &all_y, kernel, lambda)?;

    let d = rows[0].len();
    let mut params = ParamSet::new();
    params.insert(
        "support_x",
        Tensor::from_vec(&[rows.len(), d], rows.into_iter().flatten().collect()),
    );
    params.insert(
        "alpha",
        Tensor::from_vec(&[sol.alpha.len()], sol.alpha.clone()),
    );
    let mut hyper = BTreeMap::new();
    hyper.insert("lambda".to_string(), lambda);
    hyper.insert("y_mean".to_string(), sol.y_mean);
    Ok(ModelBundle {
        format_version: BUNDLE_FORMAT_VERSION,
        kind: ModelKind::Krr,
        task: Task::Regression,
        input: InputSpec::Features {
            names: train_x[0].names.clone(),
            reference_kind: train_x[0].reference_kind,
        },
        params,
        standardizer: Some(std),
        kernel: Some(kernel),
        merge: None,
        hyper,
        seed: 0,
        dev_score: if dev_x.is_empty() {
            None
        } else {
            Some(best_rmse)
        },
        members: Vec::new(),
    })
}

// ---------------------------------------------------------------------------
// CNN over similarity matrices

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CnnConfig {
    pub rows: usize,
    pub cols: usize,
    pub channels1: usize,
    pub channels2: usize,
    pub dense: usize,
    pub dropout: f64,
    pub train: TrainConfig,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig {
            rows: CANVAS_ROWS,
            cols: CANVAS_COLS,
            channels1: 16,
            channels2: 32,
            dense: 64,
            dropout: DEFAULT_DROPOUT,
            train: TrainConfig::default(),
        }
    }
}

impl CnnConfig {
    /// Spatial dims after conv(3)-pool(2)-conv(3)-pool(2), and the flattened
    /// width feeding the dense head.
    fn flat_dim(&self) -> Result<usize> {
        let step = |h: usize, w: usize| -> Result<(usize, usize)> {
            if h < 3 || w < 3 {
                return Err(Error::invalid("cnn canvas too small for a 3x3 conv"));
            }
            let (h, w) = (h - 2, w - 2);
            if h < 2 || w < 2 {
                return Err(Error::invalid("cnn canvas too small for 2x2 pooling"));
            }
            Ok((h / 2, w / 2))
        };
        let (h, w) = step(self.rows, self.cols)?;
        let (h, w) = step(h, w)?;
        Ok(self.channels2 * h * w)
    }
}

/// Zero-pads/truncates a similarity matrix onto the fixed canvas, keeping
/// leading sentences.
pub fn pad_matrix(m: &SimilarityMatrix, rows: usize, cols: usize) -> Result<Tensor> {
    if m.n_rows() == 0 || m.n_cols() == 0 {
        return Err(Error::invalid("similarity matrix is empty"));
    }
    let mut canvas = Tensor::zeros(&[1, rows, cols]);
    for (i, row) in m.values.iter().take(rows).enumerate() {
        for (j, &v) in row.iter().take(cols).enumerate() {
            canvas.data[i * cols + j] = v;
        }
    }
    Ok(canvas)
}

/// conv(3x3)-relu-pool(2) twice, then dense-relu-(dropout)-dense(1).
#[derive(Debug, Clone)]
pub struct CnnNet {
    pub cfg: CnnConfig,
    pub task: Task,
    params: ParamSet,
}

pub struct CnnSample {
    pub canvas: Tensor,
    pub target: f64,
}

struct CnnTrace {
    x: Tensor,
    z1: Tensor,
    a1: Tensor,
    p1: Tensor,
    arg1: Vec<usize>,
    z2: Tensor,
    a2: Tensor,
    p2: Tensor,
    arg2: Vec<usize>,
    z3: Vec<f64>,
    a3: Vec<f64>,
    mask: Vec<f64>,
    dropped: Vec<f64>,
    y: f64,
}

fn xavier(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let scale = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::uniform(shape, scale, rng)
}

impl CnnNet {
    pub fn init(cfg: &CnnConfig, task: Task, seed: u64) -> Result<Self> {
        let flat = cfg.flat_dim()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        params.insert(
            "conv1.w",
            xavier(&[cfg.channels1, 1, 3, 3], 9, cfg.channels1 * 9, &mut rng),
        );
        params.insert("conv1.b", Tensor::zeros(&[cfg.channels1]));
        params.insert(
            "conv2.w",
            xavier(
                &[cfg.channels2, cfg.channels1, 3, 3],
                cfg.channels1 * 9,
                cfg.channels2 * 9,
                &mut rng,
            ),
        );
        params.insert("conv2.b", Tensor::zeros(&[cfg.channels2]));
        params.insert("fc1.w", xavier(&[cfg.dense, flat], flat, cfg.dense, &mut rng));
        params.insert("fc1.b", Tensor::zeros(&[cfg.dense]));
        params.insert("fc2.w", xavier(&[1, cfg.dense], cfg.dense, 1, &mut rng));
        params.insert("fc2.b", Tensor::zeros(&[1]));
        Ok(CnnNet {
            cfg: cfg.clone(),
            task,
            params,
        })
    }

    pub fn from_parts(cfg: CnnConfig, task: Task, params: ParamSet) -> Result<Self> {
        cfg.flat_dim()?;
        Ok(CnnNet { cfg, task, params })
    }

    fn forward(&self, x: &Tensor, rng: Option<&mut ChaCha8Rng>) -> CnnTrace {
        let p = &self.params;
        let z1 = conv2d_forward(x, p.get("conv1.w"), p.get("conv1.b"), 1);
        let a1 = Tensor::from_vec(&z1.shape, Activation::Relu.forward(&z1.data));
        let (p1, arg1) = max_pool2_forward(&a1);
        let z2 = conv2d_forward(&p1, p.get("conv2.w"), p.get("conv2.b"), 1);
        let a2 = Tensor::from_vec(&z2.shape, Activation::Relu.forward(&z2.data));
        let (p2, arg2) = max_pool2_forward(&a2);
        let z3 = dense_forward(&p2.data, p.get("fc1.w"), p.get("fc1.b"));
        let a3 = Activation::Relu.forward(&z3);
        let (dropped, mask) = match rng {
            Some(r) if self.cfg.dropout > 0.0 => dropout_forward(&a3, self.cfg.dropout, r),
            _ => (a3.clone(), vec![1.0; a3.len()]),
        };
        let y = dense_forward(&dropped, p.get("fc2.w"), p.get("fc2.b"))[0];
        CnnTrace {
            x: x.clone(),
            z1,
            a1,
            p1,
            arg1,
            z2,
            a2,
            p2,
            arg2,
            z3,
            a3,
            mask,
            dropped,
            y,
        }
    }

    /// Inference-mode raw output (logit or unclamped score).
    pub fn output(&self, x: &Tensor) -> f64 {
        self.forward(x, None).y
    }

    fn grads(&self, trace: &CnnTrace, dy: f64) -> ParamSet {
        let p = &self.params;
        let (grad_dropped, gw2, gb2) = dense_backward(&trace.dropped, p.get("fc2.w"), &[dy]);
        let grad_a3 = dropout_backward(&trace.mask, &grad_dropped);
        let grad_z3 = Activation::Relu.backward(&trace.z3, &trace.a3, &grad_a3);
        let (grad_flat, gw1, gb1) = dense_backward(&trace.p2.data, p.get("fc1.w"), &grad_z3);
        let grad_p2 = Tensor::from_vec(&trace.p2.shape, grad_flat);
        let grad_a2 = max_pool2_backward(&trace.a2, &trace.arg2, &grad_p2);
        let grad_z2 = Tensor::from_vec(
            &trace.z2.shape,
            Activation::Relu.backward(&trace.z2.data, &trace.a2.data, &grad_a2.data),
        );
        let (grad_p1, gk2, gkb2) = conv2d_backward(&trace.p1, p.get("conv2.w"), &grad_z2, 1);
        let grad_a1 = max_pool2_backward(&trace.a1, &trace.arg1, &grad_p1);
        let grad_z1 = Tensor::from_vec(
            &trace.z1.shape,
            Activation::Relu.backward(&trace.z1.data, &trace.a1.data, &grad_a1.data),
        );
        let (_, gk1, gkb1) = conv2d_backward(&trace.x, p.get("conv1.w"), &grad_z1, 1);

        let mut g = ParamSet::new();
        g.insert("conv1.w", gk1);
        g.insert("conv1.b", gkb1);
        g.insert("conv2.w", gk2);
        g.insert("conv2.b", gkb2);
        g.insert("fc1.w", gw1);
        g.insert("fc1.b", gb1);
        g.insert("fc2.w", gw2);
        g.insert("fc2.b", gb2);
        g
    }
}

fn task_loss(task: Task, y: f64, target: f64) -> (f64, f64) {
    match task {
        Task::Classification => bce_with_logits(y, target),
        Task::Regression => {
            let (l, g) = mse_loss(&[y], &[target]);
            (l, g[0])
        }
    }
}

impl TrainableModel<CnnSample> for CnnNet {
    fn params(&self) -> &ParamSet {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }
    fn loss_and_grads(&self, sample: &CnnSample, rng: &mut ChaCha8Rng) -> (f64, ParamSet) {
        let trace = self.forward(&sample.canvas, Some(rng));
        let (loss, dy) = task_loss(self.task, trace.y, sample.target);
        (loss, self.grads(&trace, dy))
    }
    fn loss(&self, sample: &CnnSample) -> f64 {
        let trace = self.forward(&sample.canvas, None);
        task_loss(self.task, trace.y, sample.target).0
    }
}

/// Trains the similarity-matrix CNN. Classification targets are 0/1;
/// regression targets are raw scores.
pub fn train_cnn(
    matrices: &[SimilarityMatrix],
    targets: &[f64],
    dev_matrices: &[SimilarityMatrix],
    dev_targets: &[f64],
    task: Task,
    cfg: &CnnConfig,
) -> Result<(ModelBundle, TrainReport)> {
    if matrices.is_empty() || matrices.len() != targets.len() {
        return Err(Error::invalid("cnn needs matching non-empty matrices/targets"));
    }
    if dev_matrices.len() != dev_targets.len() {
        return Err(Error::invalid("cnn dev matrices/targets length mismatch"));
    }
    let pack = |ms: &[SimilarityMatrix], ts: &[f64]| -> Result<Vec<CnnSample>> {
        ms.iter()
            .zip(ts)
            .map(|(m, &t)| {
                Ok(CnnSample {
                    canvas: pad_matrix(m, cfg.rows, cfg.cols)?,
                    target: t,
                })
            })
            .collect()
    };
    let train_set = pack(matrices, targets)?;
    let dev_set = pack(dev_matrices, dev_targets)?;
    let mut net = CnnNet::init(cfg, task, cfg.train.seed)?;
    let report = train(&mut net, &train_set, &dev_set, &cfg.train)?;

    let mut hyper = BTreeMap::new();
    hyper.insert("rows".to_string(), cfg.rows as f64);
    hyper.insert("cols".to_string(), cfg.cols as f64);
    hyper.insert("channels1".to_string(), cfg.channels1 as f64);
    hyper.insert("channels2".to_string(), cfg.channels2 as f64);
    hyper.insert("dense".to_string(), cfg.dense as f64);
    hyper.insert("dropout".to_string(), cfg.dropout);
    Ok((
        ModelBundle {
            format_version: BUNDLE_FORMAT_VERSION,
            kind: ModelKind::Cnn,
            task,
            input: InputSpec::Matrix {
                rows: cfg.rows,
                cols: cfg.cols,
            },
            params: net.params.clone(),
            standardizer: None,
            kernel: None,
            merge: None,
            hyper,
            seed: cfg.train.seed,
            dev_score: report.dev_loss.last().copied(),
            members: Vec::new(),
        },
        report,
    ))
}

// ---------------------------------------------------------------------------
// LSTM models

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LstmConfig {
    pub hidden: usize,
    pub dropout: f64,
    pub summary_max: usize,
    pub passage_max: usize,
    pub train: TrainConfig,
}

impl Default for LstmConfig {
    fn default() -> Self {
        LstmConfig {
            hidden: DEFAULT_HIDDEN,
            dropout: DEFAULT_DROPOUT,
            summary_max: SUMMARY_MAX_TOKENS,
            passage_max: PASSAGE_MAX_TOKENS,
            train: TrainConfig::default(),
        }
    }
}

/// Embeds tokens through frozen word vectors (OOV tokens become zero
/// vectors), truncating to `max_len`.
pub fn embed_sequence(tokens: &[String], wv: &WordVectors, max_len: usize) -> Result<Vec<Vec<f64>>> {
    if tokens.is_empty() {
        return Err(Error::invalid("cannot embed an empty token sequence"));
    }
    Ok(tokens
        .iter()
        .take(max_len)
        .map(|t| {
            wv.get(t)
                .map(|v| v.to_vec())
                .unwrap_or_else(|| vec![0.0; wv.dim()])
        })
        .collect())
}

pub struct PairSample {
    pub summary: Vec<Vec<f64>>,
    pub passage: Vec<Vec<f64>>,
    pub target: f64,
}

fn init_bilstm(
    params: &mut ParamSet,
    prefix: &str,
    hidden: usize,
    embed_dim: usize,
    rng: &mut ChaCha8Rng,
) {
    for dir in ["fwd", "bwd"] {
        params.insert(
            format!("{prefix}.{dir}.w"),
            xavier(&[4 * hidden, embed_dim], embed_dim, hidden, rng),
        );
        params.insert(
            format!("{prefix}.{dir}.u"),
            xavier(&[4 * hidden, hidden], hidden, hidden, rng),
        );
        params.insert(format!("{prefix}.{dir}.b"), Tensor::zeros(&[4 * hidden]));
    }
}

fn bilstm_view<'a>(params: &'a ParamSet, prefix: &str, dir: &str) -> LstmParams<'a> {
    LstmParams {
        w: params.get(&format!("{prefix}.{dir}.w")),
        u: params.get(&format!("{prefix}.{dir}.u")),
        b: params.get(&format!("{prefix}.{dir}.b")),
    }
}

fn insert_lstm_grads(g: &mut ParamSet, prefix: &str, dir: &str, grads: crate::nncore::LstmGrads) {
    g.insert(format!("{prefix}.{dir}.w"), grads.w);
    g.insert(format!("{prefix}.{dir}.u"), grads.u);
    g.insert(format!("{prefix}.{dir}.b"), grads.b);
}

/// Two bidirectional encoders whose final states are merged into a joint
/// representation feeding a dense head.
#[derive(Debug, Clone)]
pub struct MergedLstmNet {
    pub cfg: LstmConfig,
    pub merge: MergeFunction,
    pub task: Task,
    pub embed_dim: usize,
    params: ParamSet,
}

struct MergedTrace {
    summary: Vec<Vec<f64>>,
    passage: Vec<Vec<f64>>,
    cache_u: BilstmCache,
    cache_v: BilstmCache,
    su: Vec<f64>,
    sv: Vec<f64>,
    mask: Vec<f64>,
    dropped: Vec<f64>,
    y: f64,
}

impl MergedLstmNet {
    pub fn init(
        cfg: &LstmConfig,
        merge: MergeFunction,
        task: Task,
        embed_dim: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        init_bilstm(&mut params, "sum", cfg.hidden, embed_dim, &mut rng);
        init_bilstm(&mut params, "txt", cfg.hidden, embed_dim, &mut rng);
        let state = 2 * cfg.hidden;
        if merge == MergeFunction::LinearCombination {
            params.insert("merge.w1", xavier(&[state, state], state, state, &mut rng));
            params.insert("merge.w2", xavier(&[state, state], state, state, &mut rng));
            params.insert("merge.b", Tensor::zeros(&[state]));
        }
        let joint_dim = if merge == MergeFunction::Concatenation {
            2 * state
        } else {
            state
        };
        params.insert("head.w", xavier(&[1, joint_dim], joint_dim, 1, &mut rng));
        params.insert("head.b", Tensor::zeros(&[1]));
        MergedLstmNet {
            cfg: cfg.clone(),
            merge,
            task,
            embed_dim,
            params,
        }
    }

    pub fn from_parts(
        cfg: LstmConfig,
        merge: MergeFunction,
        task: Task,
        embed_dim: usize,
        params: ParamSet,
    ) -> Result<Self> {
        Ok(MergedLstmNet {
            cfg,
            merge,
            task,
            embed_dim,
            params,
        })
    }

    /// The merged joint representation of an encoded pair.
    pub fn joint(&self, summary: &[Vec<f64>], passage: &[Vec<f64>]) -> Result<Vec<f64>> {
        let (su, _, _) = bilstm_forward(
            summary,
            bilstm_view(&self.params, "sum", "fwd"),
            bilstm_view(&self.params, "sum", "bwd"),
        )?;
        let (sv, _, _) = bilstm_forward(
            passage,
            bilstm_view(&self.params, "txt", "fwd"),
            bilstm_view(&self.params, "txt", "bwd"),
        )?;
        Ok(self.merge_states(&su, &sv))
    }

    fn merge_states(&self, su: &[f64], sv: &[f64]) -> Vec<f64> {
        match self.merge {
            MergeFunction::Concatenation => su.iter().chain(sv.iter()).copied().collect(),
            MergeFunction::Addition => su.iter().zip(sv).map(|(a, b)| a + b).collect(),
            MergeFunction::ElementwiseProduct => su.iter().zip(sv).map(|(a, b)| a * b).collect(),
            MergeFunction::LinearCombination => {
                let mut j = dense_forward(su, self.params.get("merge.w1"), self.params.get("merge.b"));
                let j2 = self.params.get("merge.w2").matvec(sv);
                for (a, b) in j.iter_mut().zip(&j2) {
                    *a += b;
                }
                j
            }
        }
    }

    fn forward(
        &self,
        summary: &[Vec<f64>],
        passage: &[Vec<f64>],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<MergedTrace> {
        let (su, _, cache_u) = bilstm_forward(
            summary,
            bilstm_view(&self.params, "sum", "fwd"),
            bilstm_view(&self.params, "sum", "bwd"),
        )?;
        let (sv, _, cache_v) = bilstm_forward(
            passage,
            bilstm_view(&self.params, "txt", "fwd"),
            bilstm_view(&self.params, "txt", "bwd"),
        )?;
        let joint = self.merge_states(&su, &sv);
        let (dropped, mask) = match rng {
            Some(r) if self.cfg.dropout > 0.0 => dropout_forward(&joint, self.cfg.dropout, r),
            _ => (joint.clone(), vec![1.0; joint.len()]),
        };
        let y = dense_forward(&dropped, self.params.get("head.w"), self.params.get("head.b"))[0];
        Ok(MergedTrace {
            summary: summary.to_vec(),
            passage: passage.to_vec(),
            cache_u,
            cache_v,
            su,
            sv,
            mask,
            dropped,
            y,
        })
    }

    pub fn output(&self, summary: &[Vec<f64>], passage: &[Vec<f64>]) -> Result<f64> {
        Ok(self.forward(summary, passage, None)?.y)
    }

    fn grads(&self, trace: &MergedTrace, dy: f64) -> ParamSet {
        let p = &self.params;
        let (grad_dropped, ghw, ghb) = dense_backward(&trace.dropped, p.get("head.w"), &[dy]);
        let grad_joint = dropout_backward(&trace.mask, &grad_dropped);
        let state = 2 * self.cfg.hidden;

        let mut g = ParamSet::new();
        g.insert("head.w", ghw);
        g.insert("head.b", ghb);

        let (grad_su, grad_sv) = match self.merge {
            MergeFunction::Concatenation => (
                grad_joint[..state].to_vec(),
                grad_joint[state..].to_vec(),
            ),
            MergeFunction::Addition => (grad_joint.clone(), grad_joint.clone()),
            MergeFunction::ElementwiseProduct => (
                grad_joint.iter().zip(&trace.sv).map(|(g, v)| g * v).collect(),
                grad_joint.iter().zip(&trace.su).map(|(g, u)| g * u).collect(),
            ),
            MergeFunction::LinearCombination => {
                let (gsu, gw1, gb) = dense_backward(&trace.su, p.get("merge.w1"), &grad_joint);
                let gsv = p.get("merge.w2").matvec_t(&grad_joint);
                let mut gw2 = p.get("merge.w2").zeros_like();
                gw2.add_outer(&grad_joint, &trace.sv);
                g.insert("merge.w1", gw1);
                g.insert("merge.w2", gw2);
                g.insert("merge.b", gb);
                (gsu, gsv)
            }
        };

        let zero_a_u = vec![vec![0.0; state]; trace.summary.len()];
        let (_, fg, bg) = bilstm_backward(
            bilstm_view(p, "sum", "fwd"),
            bilstm_view(p, "sum", "bwd"),
            &trace.cache_u,
            &grad_su,
            &zero_a_u,
        );
        insert_lstm_grads(&mut g, "sum", "fwd", fg);
        insert_lstm_grads(&mut g, "sum", "bwd", bg);

        let zero_a_v = vec![vec![0.0; state]; trace.passage.len()];
        let (_, fg, bg) = bilstm_backward(
            bilstm_view(p, "txt", "fwd"),
            bilstm_view(p, "txt", "bwd"),
            &trace.cache_v,
            &grad_sv,
            &zero_a_v,
        );
        insert_lstm_grads(&mut g, "txt", "fwd", fg);
        insert_lstm_grads(&mut g, "txt", "bwd", bg);
        g
    }
}

impl TrainableModel<PairSample> for MergedLstmNet {
    fn params(&self) -> &ParamSet {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }
    fn loss_and_grads(&self, sample: &PairSample, rng: &mut ChaCha8Rng) -> (f64, ParamSet) {
        let trace = self
            .forward(&sample.summary, &sample.passage, Some(rng))
            .expect("training sequences are validated non-empty");
        let (loss, dy) = task_loss(self.task, trace.y, sample.target);
        (loss, self.grads(&trace, dy))
    }
    fn loss(&self, sample: &PairSample) -> f64 {
        let trace = self
            .forward(&sample.summary, &sample.passage, None)
            .expect("training sequences are validated non-empty");
        task_loss(self.task, trace.y, sample.target).0
    }
}

/// Attention model: the encoded summary attends over the passage encoder's
/// per-token states; the combined representation feeds the dense head.
#[derive(Debug, Clone)]
pub struct AttentionLstmNet {
    pub cfg: LstmConfig,
    pub task: Task,
    pub embed_dim: usize,
    params: ParamSet,
}

struct AttentionTrace {
    summary: Vec<Vec<f64>>,
    cache_u: BilstmCache,
    cache_v: BilstmCache,
    att_cache: AttentionCache,
    mask: Vec<f64>,
    dropped: Vec<f64>,
    m: Vec<f64>,
    y: f64,
}

impl AttentionLstmNet {
    pub fn init(cfg: &LstmConfig, task: Task, embed_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        init_bilstm(&mut params, "sum", cfg.hidden, embed_dim, &mut rng);
        init_bilstm(&mut params, "txt", cfg.hidden, embed_dim, &mut rng);
        let state = 2 * cfg.hidden;
        params.insert("att.w_aa", xavier(&[state], state, 1, &mut rng));
        params.insert("att.w_sa", xavier(&[state], state, 1, &mut rng));
        params.insert("att.w_sm", xavier(&[state, state], state, state, &mut rng));
        params.insert("att.w_rm", xavier(&[state, state], state, state, &mut rng));
        params.insert("att.b", Tensor::zeros(&[state]));
        params.insert("head.w", xavier(&[1, state], state, 1, &mut rng));
        params.insert("head.b", Tensor::zeros(&[1]));
        AttentionLstmNet {
            cfg: cfg.clone(),
            task,
            embed_dim,
            params,
        }
    }

    pub fn from_parts(
        cfg: LstmConfig,
        task: Task,
        embed_dim: usize,
        params: ParamSet,
    ) -> Result<Self> {
        Ok(AttentionLstmNet {
            cfg,
            task,
            embed_dim,
            params,
        })
    }

    fn att_view(&self) -> AttentionParams<'_> {
        AttentionParams {
            w_aa: self.params.get("att.w_aa"),
            w_sa: self.params.get("att.w_sa"),
            w_sm: self.params.get("att.w_sm"),
            w_rm: self.params.get("att.w_rm"),
            b: self.params.get("att.b"),
        }
    }

    fn forward(
        &self,
        summary: &[Vec<f64>],
        passage: &[Vec<f64>],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<AttentionTrace> {
        let (su, _, cache_u) = bilstm_forward(
            summary,
            bilstm_view(&self.params, "sum", "fwd"),
            bilstm_view(&self.params, "sum", "bwd"),
        )?;
        let (_, a_txt, cache_v) = bilstm_forward(
            passage,
            bilstm_view(&self.params, "txt", "fwd"),
            bilstm_view(&self.params, "txt", "bwd"),
        )?;
        let (m, att_cache) = attention_forward(&su, &a_txt, self.att_view())?;
        let (dropped, mask) = match rng {
            Some(r) if self.cfg.dropout > 0.0 => dropout_forward(&m, self.cfg.dropout, r),
            _ => (m.clone(), vec![1.0; m.len()]),
        };
        let y = dense_forward(&dropped, self.params.get("head.w"), self.params.get("head.b"))[0];
        Ok(AttentionTrace {
            summary: summary.to_vec(),
            cache_u,
            cache_v,
            att_cache,
            mask,
            dropped,
            m,
            y,
        })
    }

    pub fn output(&self, summary: &[Vec<f64>], passage: &[Vec<f64>]) -> Result<f64> {
        Ok(self.forward(summary, passage, None)?.y)
    }

    /// Raw output plus the attention weights over passage tokens.
    pub fn output_with_attention(
        &self,
        summary: &[Vec<f64>],
        passage: &[Vec<f64>],
    ) -> Result<(f64, Vec<f64>)> {
        let trace = self.forward(summary, passage, None)?;
        Ok((trace.y, trace.att_cache.weights().to_vec()))
    }

    fn grads(&self, trace: &AttentionTrace, dy: f64) -> ParamSet {
        let p = &self.params;
        let (grad_dropped, ghw, ghb) = dense_backward(&trace.dropped, p.get("head.w"), &[dy]);
        let grad_m = dropout_backward(&trace.mask, &grad_dropped);
        debug_assert_eq!(grad_m.len(), trace.m.len());
        let (grad_su, grad_a, att_g) = attention_backward(self.att_view(), &trace.att_cache, &grad_m);

        let mut g = ParamSet::new();
        g.insert("head.w", ghw);
        g.insert("head.b", ghb);
        g.insert("att.w_aa", att_g.w_aa);
        g.insert("att.w_sa", att_g.w_sa);
        g.insert("att.w_sm", att_g.w_sm);
        g.insert("att.w_rm", att_g.w_rm);
        g.insert("att.b", att_g.b);

        let state = 2 * self.cfg.hidden;
        let zero_a_u = vec![vec![0.0; state]; trace.summary.len()];
        let (_, fg, bg) = bilstm_backward(
            bilstm_view(p, "sum", "fwd"),
            bilstm_view(p, "sum", "bwd"),
            &trace.cache_u,
            &grad_su,
            &zero_a_u,
        );
        insert_lstm_grads(&mut g, "sum", "fwd", fg);
        insert_lstm_grads(&mut g, "sum", "bwd", bg);

        let zero_s_v = vec![0.0; state];
        let (_, fg, bg) = bilstm_backward(
            bilstm_view(p, "txt", "fwd"),
            bilstm_view(p, "txt", "bwd"),
            &trace.cache_v,
            &zero_s_v,
            &grad_a,
        );
        insert_lstm_grads(&mut g, "txt", "fwd", fg);
        insert_lstm_grads(&mut g, "txt", "bwd", bg);
        g
    }
}

impl TrainableModel<PairSample> for AttentionLstmNet {
    fn params(&self) -> &ParamSet {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }
    fn loss_and_grads(&self, sample: &PairSample, rng: &mut ChaCha8Rng) -> (f64, ParamSet) {
        let trace = self
            .forward(&sample.summary, &sample.passage, Some(rng))
            .expect("training sequences are validated non-empty");
        let (loss, dy) = task_loss(self.task, trace.y, sample.target);
        (loss, self.grads(&trace, dy))
    }
    fn loss(&self, sample: &PairSample) -> f64 {
        let trace = self
            .forward(&sample.summary, &sample.passage, None)
            .expect("training sequences are validated non-empty");
        task_loss(self.task, trace.y, sample.target).0
    }
}

fn embed_pairs(
    pairs: &[(Vec<String>, Vec<String>)],
    targets: &[f64],
    wv: &WordVectors,
    cfg: &LstmConfig,
) -> Result<Vec<PairSample>> {
    pairs
        .iter()
        .zip(targets)
        .map(|((s, p), &t)| {
            Ok(PairSample {
                summary: embed_sequence(s, wv, cfg.summary_max)?,
                passage: embed_sequence(p, wv, cfg.passage_max)?,
                target: t,
            })
        })
        .collect()
}

fn lstm_bundle_fields(
    cfg: &LstmConfig,
    embed_dim: usize,
) -> (InputSpec, BTreeMap<String, f64>) {
    let input = InputSpec::TokenPair {
        embedding_dim: embed_dim,
        summary_max: cfg.summary_max,
        passage_max: cfg.passage_max,
    };
    let mut hyper = BTreeMap::new();
    hyper.insert("hidden".to_string(), cfg.hidden as f64);
    hyper.insert("dropout".to_string(), cfg.dropout);
    hyper.insert("embed_dim".to_string(), embed_dim as f64);
    (input, hyper)
}

/// Trains the merged bidirectional-LSTM model with the given merge function.
pub fn train_merged_lstm(
    pairs: &[(Vec<String>, Vec<String>)],
    targets: &[f64],
    dev_pairs: &[(Vec<String>, Vec<String>)],
    dev_targets: &[f64],
    task: Task,
    merge: MergeFunction,
    wv: &WordVectors,
    cfg: &LstmConfig,
) -> Result<(ModelBundle, TrainReport)> {
    if pairs.is_empty() || pairs.len() != targets.len() {
        return Err(Error::invalid("lstm needs matching non-empty pairs/targets"));
    }
    let train_set = embed_pairs(pairs, targets, wv, cfg)?;
    let dev_set = embed_pairs(dev_pairs, dev_targets, wv, cfg)?;
    let mut net = MergedLstmNet::init(cfg, merge, task, wv.dim(), cfg.train.seed);
    let report = train(&mut net, &train_set, &dev_set, &cfg.train)?;
    let (input, hyper) = lstm_bundle_fields(cfg, wv.dim());
    Ok((
        ModelBundle {
            format_version: BUNDLE_FORMAT_VERSION,
            kind: ModelKind::MergedLstm,
            task,
            input,
            params: net.params.clone(),
            standardizer: None,
            kernel: None,
            merge: Some(merge),
            hyper,
            seed: cfg.train.seed,
            dev_score: report.dev_loss.last().copied(),
            members: Vec::new(),
        },
        report,
    ))
}

/// Trains the attention-based LSTM model.
pub fn train_attention_lstm(
    pairs: &[(Vec<String>, Vec<String>)],
    targets: &[f64],
    dev_pairs: &[(Vec<String>, Vec<String>)],
    dev_targets: &[f64],
    task: Task,
    wv: &WordVectors,
    cfg: &LstmConfig,
) -> Result<(ModelBundle, TrainReport)> {
    if pairs.is_empty() || pairs.len() != targets.len() {
        return Err(Error::invalid("lstm needs matching non-empty pairs/targets"));
    }
    let train_set = embed_pairs(pairs, targets, wv, cfg)?;
    let dev_set = embed_pairs(dev_pairs, dev_targets, wv, cfg)?;
    let mut net = AttentionLstmNet::init(cfg, task, wv.dim(), cfg.train.seed);
    let report = train(&mut net, &train_set, &dev_set, &cfg.train)?;
    let (input, hyper) = lstm_bundle_fields(cfg, wv.dim());
    Ok((
        ModelBundle {
            format_version: BUNDLE_FORMAT_VERSION,
            kind: ModelKind::AttentionLstm,
            task,
            input,
            params: net.params.clone(),
            standardizer: None,
            kernel: None,
            merge: None,
            hyper,
            seed: cfg.train.seed,
            dev_score: report.dev_loss.last().copied(),
            members: Vec::new(),
        },
        report,
    ))
}

// ---------------------------------------------------------------------------
// Ensemble

/// Combines exactly three bundles: majority vote for classification, mean
/// prediction for regression. All members must share the task.
pub fn ensemble(bundles: Vec<ModelBundle>) -> Result<ModelBundle> {
    if bundles.len() != 3 {
        return Err(Error::invalid(format!(
            "ensemble requires exactly 3 bundles, got {}",
            bundles.len()
        )));
    }
    let task = bundles[0].task;
    if bundles.iter().any(|b| b.task != task) {
        return Err(Error::invalid("ensemble members have mixed tasks"));
    }
    let seed = bundles[0].seed;
    Ok(ModelBundle {
        format_version: BUNDLE_FORMAT_VERSION,
        kind: ModelKind::Ensemble,
        task,
        input: InputSpec::Ensemble,
        params: ParamSet::new(),
        standardizer: None,
        kernel: None,
        merge: None,
        hyper: BTreeMap::new(),
        seed,
        dev_score: None,
        members: bundles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::GRAD_CHECK_H;

    fn fv(values: Vec<f64>) -> FeatureVector {
        FeatureVector {
            names: (0..values.len()).map(|i| format!("f{i}")).collect(),
            values,
            reference_kind: ReferenceKind::Original,
        }
    }

    #[test]
    fn standardizer_zero_means_unit_stds() {
        let rows = vec![vec![1.0, 10.0], vec![3.0, 10.0], vec![5.0, 10.0]];
        let std = Standardizer::fit(&rows).unwrap();
        assert_eq!(std.mean, vec![3.0, 10.0]);
        // Constant column keeps unit scale.
        assert_eq!(std.std[1], 1.0);
        let z: Vec<Vec<f64>> = rows.iter().map(|r| std.apply(r)).collect();
        let mean0: f64 = z.iter().map(|r| r[0]).sum::<f64>() / 3.0;
        let var0: f64 = z.iter().map(|r| r[0] * r[0]).sum::<f64>() / 3.0;
        assert!(mean0.abs() < 1e-12);
        assert!((var0 - 1.0).abs() < 1e-12);
        assert!(z.iter().all(|r| r[1] == 0.0));
    }

    #[test]
    fn svm_separates_two_points_and_flips_with_labels() {
        let x = vec![fv(vec![1.0, 0.0]), fv(vec![-1.0, 0.0])];
        let y = vec![BinaryLabel::Good, BinaryLabel::Bad];
        let bundle = train_svm(&x, &y, &[], &[], &[1.0], 0).unwrap();
        let p0 = bundle.predict(&ScoringInput::from_features(&x[0])).unwrap();
        let p1 = bundle.predict(&ScoringInput::from_features(&x[1])).unwrap();
        assert_eq!(p0, Prediction::Label(BinaryLabel::Good));
        assert_eq!(p1, Prediction::Label(BinaryLabel::Bad));

        let flipped = vec![BinaryLabel::Bad, BinaryLabel::Good];
        let bundle = train_svm(&x, &flipped, &[], &[], &[1.0], 0).unwrap();
        let p0 = bundle.predict(&ScoringInput::from_features(&x[0])).unwrap();
        let p1 = bundle.predict(&ScoringInput::from_features(&x[1])).unwrap();
        assert_eq!(p0, Prediction::Label(BinaryLabel::Bad));
        assert_eq!(p1, Prediction::Label(BinaryLabel::Good));
    }

    #[test]
    fn svm_rejects_single_class_training_data() {
        let x = vec![fv(vec![1.0]), fv(vec![2.0])];
        let y = vec![BinaryLabel::Good, BinaryLabel::Good];
        let err = train_svm(&x, &y, &[], &[], &[1.0], 0).unwrap_err();
        assert!(err.to_string().contains("single class"), "{err}");
    }

    #[test]
    fn svm_rejects_mismatched_feature_names_at_predict() {
        let x = vec![fv(vec![1.0, 0.0]), fv(vec![-1.0, 0.0])];
        let y = vec![BinaryLabel::Good, BinaryLabel::Bad];
        let bundle = train_svm(&x, &y, &[], &[], &[1.0], 0).unwrap();
        let mut other = fv(vec![1.0, 0.0]);
        other.names[0] = "renamed".to_string();
        let err = bundle
            .predict(&ScoringInput::from_features(&other))
            .unwrap_err();
        assert!(err.to_string().contains("feature names"), "{err}");
        let mut other = fv(vec![1.0, 0.0]);
        other.reference_kind = ReferenceKind::Textrank;
        assert!(bundle.predict(&ScoringInput::from_features(&other)).is_err());
    }

    #[test]
    fn krr_interpolates_with_vanishing_ridge() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64 / 10.0]).collect();
        let y: Vec<f64> = (0..6).map(|i| 0.3 * i as f64 + 1.0).collect();
        let sol = krr_solve(&rows, &y, KernelSpec::Rbf { gamma: 0.5 }, 1e-12).unwrap();
        for (r, &t) in rows.iter().zip(&y) {
            let p = krr_predict_raw(&sol, &rows, KernelSpec::Rbf { gamma: 0.5 }, r);
            assert!((p - t).abs() < 1e-6, "{p} vs {t}");
        }
    }

    #[test]
    fn krr_constant_targets_predict_the_constant_everywhere() {
        let x: Vec<FeatureVector> = (0..5).map(|i| fv(vec![i as f64, 1.0 - i as f64])).collect();
        let y = vec![2.5; 5];
        let bundle = train_krr(&x, &y, &[], &[], &default_kernel_grid(), &KRR_LAMBDA_GRID).unwrap();
        let probe = fv(vec![99.0, -3.0]);
        let p = bundle.predict(&ScoringInput::from_features(&probe)).unwrap();
        assert_eq!(p, Prediction::Score(2.5));
    }

    #[test]
    fn krr_singular_kernel_matrix_suggests_positive_ridge() {
        let rows = vec![vec![1.0, 2.0], vec![1.0, 2.0], vec![0.0, 1.0]];
        let y = vec![1.0, 2.0, 3.0];
        let err = krr_solve(&rows, &y, KernelSpec::Linear, 0.0).unwrap_err();
        assert!(err.to_string().contains("λ > 0"), "{err}");
    }

    #[test]
    fn krr_predictions_stay_in_score_range() {
        let x: Vec<FeatureVector> = (0..5).map(|i| fv(vec![i as f64])).collect();
        let y = vec![0.0, 1.0, 3.0, 4.5, 5.0];
        let bundle = train_krr(&x, &y, &[], &[], &[KernelSpec::Linear], &[1e-3]).unwrap();
        for v in [-100.0, -1.0, 2.0, 100.0] {
            let p = bundle
                .predict(&ScoringInput::from_features(&fv(vec![v])))
                .unwrap()
                .score()
                .unwrap();
            assert!((0.0..=5.0).contains(&p), "{p}");
        }
    }

    #[test]
    fn cnn_zero_final_layer_predicts_a_constant() {
        let cfg = CnnConfig {
            rows: 10,
            cols: 10,
            channels1: 2,
            channels2: 3,
            dense: 4,
            dropout: 0.0,
            train: TrainConfig::default(),
        };
        let mut net = CnnNet::init(&cfg, Task::Regression, 1).unwrap();
        net.params.insert("fc2.w", Tensor::zeros(&[1, 4]));
        net.params.insert("fc2.b", Tensor::zeros(&[1]));
        let a = Tensor::zeros(&[1, 10, 10]);
        let mut b = Tensor::zeros(&[1, 10, 10]);
        for (i, v) in b.data.iter_mut().enumerate() {
            *v = (i % 7) as f64 / 7.0;
        }
        assert_eq!(net.output(&a), net.output(&b));
        assert_eq!(net.output(&a), 0.0);
    }

    #[test]
    fn pad_matrix_keeps_leading_block_and_rejects_empty() {
        let m = SimilarityMatrix {
            values: vec![vec![0.5, 0.6, 0.7], vec![0.1, 0.2, 0.3]],
        };
        let t = pad_matrix(&m, 3, 2).unwrap();
        assert_eq!(t.shape, vec![1, 3, 2]);
        assert_eq!(t.data, vec![0.5, 0.6, 0.1, 0.2, 0.0, 0.0]);
        let empty = SimilarityMatrix { values: vec![] };
        assert!(pad_matrix(&empty, 3, 2).is_err());
    }

    fn tiny_lstm_cfg() -> LstmConfig {
        LstmConfig {
            hidden: 2,
            dropout: 0.0,
            summary_max: 8,
            passage_max: 8,
            train: TrainConfig::default(),
        }
    }

    #[test]
    fn merged_addition_with_zero_passage_encoder_is_identity_on_summary() {
        let cfg = tiny_lstm_cfg();
        let mut net = MergedLstmNet::init(&cfg, MergeFunction::Addition, Task::Regression, 3, 7);
        for dir in ["fwd", "bwd"] {
            net.params.insert(format!("txt.{dir}.w"), Tensor::zeros(&[8, 3]));
            net.params.insert(format!("txt.{dir}.u"), Tensor::zeros(&[8, 2]));
            net.params.insert(format!("txt.{dir}.b"), Tensor::zeros(&[8]));
        }
        let summary = vec![vec![0.3, -0.2, 0.5], vec![0.1, 0.9, -0.4]];
        let passage = vec![vec![1.0, 1.0, 1.0]];
        let joint = net.joint(&summary, &passage).unwrap();
        let (su, _, _) = bilstm_forward(
            &summary,
            bilstm_view(&net.params, "sum", "fwd"),
            bilstm_view(&net.params, "sum", "bwd"),
        )
        .unwrap();
        assert_eq!(joint, su);
    }

    #[test]
    fn concatenation_joint_dim_doubles_the_state_dim() {
        let cfg = tiny_lstm_cfg();
        let net = MergedLstmNet::init(&cfg, MergeFunction::Concatenation, Task::Regression, 3, 7);
        let s = vec![vec![0.1, 0.2, 0.3]];
        let joint = net.joint(&s, &s).unwrap();
        assert_eq!(joint.len(), 4 * cfg.hidden);
        let net = MergedLstmNet::init(&cfg, MergeFunction::Addition, Task::Regression, 3, 7);
        assert_eq!(net.joint(&s, &s).unwrap().len(), 2 * cfg.hidden);
    }

    #[test]
    fn attention_weights_sum_to_one_and_single_token_gets_full_weight() {
        let cfg = tiny_lstm_cfg();
        let net = AttentionLstmNet::init(&cfg, Task::Regression, 3, 9);
        let summary = vec![vec![0.2, -0.1, 0.4], vec![0.7, 0.0, -0.3]];
        let passage = vec![
            vec![0.5, 0.5, 0.0],
            vec![-0.2, 0.3, 0.8],
            vec![0.0, -0.6, 0.1],
        ];
        let (_, w) = net.output_with_attention(&summary, &passage).unwrap();
        assert_eq!(w.len(), 3);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(w.iter().all(|&v| v >= 0.0));

        let (_, w) = net
            .output_with_attention(&summary, &passage[..1].to_vec())
            .unwrap();
        assert_eq!(w, vec![1.0]);
    }

    #[test]
    fn lstm_gradients_pass_the_checker_before_training() {
        // All four merge variants plus attention, at toy dimensions.
        let cfg = tiny_lstm_cfg();
        let sample = PairSample {
            summary: vec![vec![0.3, -0.2, 0.5], vec![0.1, 0.9, -0.4]],
            passage: vec![vec![0.2, 0.1, 0.0], vec![-0.5, 0.3, 0.7], vec![0.4, -0.1, 0.2]],
            target: 1.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for merge in MergeFunction::ALL {
            let net = MergedLstmNet::init(&cfg, merge, Task::Regression, 3, 11);
            let (_, analytic) = net.loss_and_grads(&sample, &mut rng);
            let probe = std::cell::RefCell::new(net.clone());
            let report = crate::nncore::gradient_check(
                net.params(),
                &analytic,
                GRAD_CHECK_H,
                |p: &ParamSet| {
                    let mut n = probe.borrow_mut();
                    *n.params_mut() = p.clone();
                    n.loss(&sample)
                },
            );
            assert!(report.max_rel_error < 1e-4, "{merge}: {report:?}");
        }
        let net = AttentionLstmNet::init(&cfg, Task::Classification, 3, 12);
        let (_, analytic) = net.loss_and_grads(&sample, &mut rng);
        let probe = std::cell::RefCell::new(net.clone());
        let report =
            crate::nncore::gradient_check(net.params(), &analytic, GRAD_CHECK_H, |p: &ParamSet| {
                let mut n = probe.borrow_mut();
                *n.params_mut() = p.clone();
                n.loss(&sample)
            });
        assert!(report.max_rel_error < 1e-4, "attention: {report:?}");
    }

    fn toy_regression_bundle(value: f64) -> ModelBundle {
        // A KRR bundle that predicts `value` everywhere: constant targets.
        let x: Vec<FeatureVector> = (0..4).map(|i| fv(vec![i as f64])).collect();
        let y = vec![value; 4];
        train_krr(&x, &y, &[], &[], &[KernelSpec::Linear], &[1e-2]).unwrap()
    }

    #[test]
    fn ensemble_regression_takes_the_mean() {
        let bundles = vec![
            toy_regression_bundle(2.0),
            toy_regression_bundle(3.0),
            toy_regression_bundle(4.0),
        ];
        let ens = ensemble(bundles.clone()).unwrap();
        let probe = fv(vec![1.5]);
        let p = ens.predict(&ScoringInput::from_features(&probe)).unwrap();
        assert_eq!(p, Prediction::Score(3.0));

        // Permutation invariance.
        let mut rev = bundles;
        rev.reverse();
        let ens2 = ensemble(rev).unwrap();
        assert_eq!(
            ens2.predict(&ScoringInput::from_features(&probe)).unwrap(),
            Prediction::Score(3.0)
        );
    }

    fn toy_classifier(invert: bool) -> ModelBundle {
        let x = vec![fv(vec![1.0]), fv(vec![-1.0])];
        let y = if invert {
            vec![BinaryLabel::Bad, BinaryLabel::Good]
        } else {
            vec![BinaryLabel::Good, BinaryLabel::Bad]
        };
        train_svm(&x, &y, &[], &[], &[1.0], 0).unwrap()
    }

    #[test]
    fn ensemble_majority_vote_and_idempotence() {
        let ens = ensemble(vec![toy_classifier(false), toy_classifier(false), toy_classifier(true)])
            .unwrap();
        let probe = fv(vec![1.0]);
        // Votes: good, good, bad -> good.
        assert_eq!(
            ens.predict(&ScoringInput::from_features(&probe)).unwrap(),
            Prediction::Label(BinaryLabel::Good)
        );

        let single = toy_classifier(false);
        let ens = ensemble(vec![single.clone(), single.clone(), single.clone()]).unwrap();
        for v in [-2.0, -0.5, 0.5, 2.0] {
            let probe = fv(vec![v]);
            assert_eq!(
                ens.predict(&ScoringInput::from_features(&probe)).unwrap(),
                single.predict(&ScoringInput::from_features(&probe)).unwrap()
            );
        }
    }

    #[test]
    fn ensemble_rejects_wrong_count_and_mixed_tasks() {
        let c = toy_classifier(false);
        assert!(ensemble(vec![c.clone(), c.clone()]).is_err());
        let r = toy_regression_bundle(1.0);
        let err = ensemble(vec![c.clone(), c, r]).unwrap_err();
        assert!(err.to_string().contains("mixed tasks"), "{err}");
    }

    #[test]
    fn bundle_roundtrips_through_json() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let bundle = toy_regression_bundle(2.5);
        bundle.save(&path).unwrap();
        let loaded = ModelBundle::load(&path).unwrap();
        assert_eq!(bundle, loaded);

        // Version check.
        let mut hacked: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        hacked["format_version"] = serde_json::json!(99);
        std::fs::write(&path, serde_json::to_string(&hacked).unwrap()).unwrap();
        assert!(ModelBundle::load(&path).unwrap_err().to_string().contains("version"));
    }

    #[test]
    fn save_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.json");
        let b = dir.path().join("b.json");
        let x = vec![fv(vec![1.0, 2.0]), fv(vec![-1.0, 0.5]), fv(vec![0.3, -2.0])];
        let y = vec![BinaryLabel::Good, BinaryLabel::Bad, BinaryLabel::Good];
        train_svm(&x, &y, &[], &[], &SVM_C_GRID, 7).unwrap().save(&a).unwrap();
        train_svm(&x, &y, &[], &[], &SVM_C_GRID, 7).unwrap().save(&b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }
}
