//! Word-vector store and document-representation models.
//!
//! Five ways to turn a token sequence into a fixed-length vector: averaged
//! word embeddings, TF-IDF, LSA (truncated SVD over the TF-IDF term-document
//! matrix), LDA topic mixtures, and PV-DM paragraph vectors.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textproc::TokenizedText;

/// Pre-trained word embeddings, loaded from the textual format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WordVectors {
    dim: usize,
    table: BTreeMap<String, Vec<f64>>,
}

impl WordVectors {
    pub fn new(dim: usize) -> Self {
        WordVectors {
            dim,
            table: BTreeMap::new(),
        }
    }

    pub fn from_entries<I, S>(dim: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        let mut wv = WordVectors::new(dim);
        for (word, vec) in entries {
            wv.insert(word.into(), vec)?;
        }
        Ok(wv)
    }

    pub fn insert(&mut self, word: String, vec: Vec<f64>) -> Result<()> {
        if vec.len() != self.dim {
            return Err(Error::invalid(format!(
                "vector for {word:?} has length {}, expected {}",
                vec.len(),
                self.dim
            )));
        }
        self.table.insert(word, vec);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    /// Lookup; unknown words are absent, never fabricated.
    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.table.get(word).map(|v| v.as_slice())
    }

    pub fn contains(&self, word: &str) -> bool {
        self.table.contains_key(word)
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.table.keys().map(|s| s.as_str())
    }
}

/// Loads word vectors from a text file: a `V D` header line followed by
/// `word v1 … vD` lines. Duplicate words keep the last entry (with a warning).
pub fn load_word_vectors(path: impl AsRef<Path>) -> Result<WordVectors> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let display = path.display().to_string();
    let perr = |line: usize, msg: String| Error::Parse {
        path: display.clone(),
        line,
        msg,
    };

    let mut lines = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            lines.push((i + 1, line));
        }
    }
    let Some((header_no, header)) = lines.first() else {
        return Err(perr(1, "empty word-vector file".into()));
    };
    let mut parts = header.split_whitespace();
    let v: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| perr(*header_no, format!("bad header {header:?}")))?;
    let d: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| perr(*header_no, format!("bad header {header:?}")))?;
    if parts.next().is_some() {
        return Err(perr(*header_no, format!("bad header {header:?}")));
    }

    let data = &lines[1..];
    if data.len() != v {
        return Err(perr(
            data.last().map_or(*header_no, |(n, _)| *n),
            format!("header promises {v} entries, file has {}", data.len()),
        ));
    }

    let mut wv = WordVectors::new(d);
    for (line_no, line) in data {
        let mut fields = line.split_whitespace();
        let word = fields
            .next()
            .ok_or_else(|| perr(*line_no, "missing word".into()))?;
        let mut vec = Vec::with_capacity(d);
        for field in fields {
            let x: f64 = field
                .parse()
                .map_err(|_| perr(*line_no, format!("bad number {field:?}")))?;
            vec.push(x);
        }
        if vec.len() != d {
            return Err(perr(
                *line_no,
                format!("entry {word:?} has {} components, expected {d}", vec.len()),
            ));
        }
        if wv.contains(word) {
            log::warn!("duplicate word vector for {word:?}; keeping the last occurrence");
        }
        wv.insert(word.to_string(), vec)?;
    }
    Ok(wv)
}

/// Mean of the embeddings of in-vocabulary tokens; zero vector when none are.
pub fn avg_embedding(tokens: &[String], wv: &WordVectors) -> Vec<f64> {
    let mut sum = vec![0.0; wv.dim()];
    let mut n = 0usize;
    for tok in tokens {
        if let Some(v) = wv.get(tok) {
            for (s, x) in sum.iter_mut().zip(v) {
                *s += x;
            }
            n += 1;
        }
    }
    if n > 0 {
        for s in &mut sum {
            *s /= n as f64;
        }
    }
    sum
}

/// Unannotated documents the representation models are fitted on.
#[derive(Debug, Clone, Default)]
pub struct BackgroundCorpus {
    pub documents: Vec<TokenizedText>,
}

impl BackgroundCorpus {
    pub fn new(documents: Vec<TokenizedText>) -> Self {
        BackgroundCorpus { documents }
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn require_non_empty(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::invalid(
                "background corpus is empty; fitting needs at least one document",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocVectorKind {
    Tfidf,
    Lsa,
    Lda,
    Pvdm,
    AvgEmbedding,
}

impl std::fmt::Display for DocVectorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            DocVectorKind::Tfidf => "tfidf",
            DocVectorKind::Lsa => "lsa",
            DocVectorKind::Lda => "lda",
            DocVectorKind::Pvdm => "pvdm",
            DocVectorKind::AvgEmbedding => "avg_embedding",
        };
        f.write_str(s)
    }
}

/// A fitted document-representation model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DocVectorModel {
    Tfidf(TfidfModel),
    Lsa(LsaModel),
    Lda(LdaModel),
    Pvdm(PvdmModel),
    AvgEmbedding(AvgEmbeddingModel),
}

impl DocVectorModel {
    pub fn kind(&self) -> DocVectorKind {
        match self {
            DocVectorModel::Tfidf(_) => DocVectorKind::Tfidf,
            DocVectorModel::Lsa(_) => DocVectorKind::Lsa,
            DocVectorModel::Lda(_) => DocVectorKind::Lda,
            DocVectorModel::Pvdm(_) => DocVectorKind::Pvdm,
            DocVectorModel::AvgEmbedding(_) => DocVectorKind::AvgEmbedding,
        }
    }

    /// Length of every transformed vector.
    pub fn dim(&self) -> usize {
        match self {
            DocVectorModel::Tfidf(m) => m.dim(),
            DocVectorModel::Lsa(m) => m.k,
            DocVectorModel::Lda(m) => m.k,
            DocVectorModel::Pvdm(m) => m.dim,
            DocVectorModel::AvgEmbedding(m) => m.vectors.dim(),
        }
    }

    /// Maps a token sequence to this model's vector space.
    pub fn transform(&self, tokens: &[String]) -> Vec<f64> {
        match self {
            DocVectorModel::Tfidf(m) => m.transform(tokens),
            DocVectorModel::Lsa(m) => m.transform(tokens),
            DocVectorModel::Lda(m) => m.transform(tokens),
            DocVectorModel::Pvdm(m) => m.transform(tokens),
            DocVectorModel::AvgEmbedding(m) => avg_embedding(tokens, &m.vectors),
        }
    }
}

/// Wraps pre-trained embeddings as a document model (mean over tokens).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AvgEmbeddingModel {
    pub vectors: WordVectors,
}

pub fn avg_embedding_model(wv: WordVectors) -> DocVectorModel {
    DocVectorModel::AvgEmbedding(AvgEmbeddingModel { vectors: wv })
}

// ---------------------------------------------------------------------------
// TF-IDF

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TfidfModel {
    /// Word → column index, in sorted word order.
    pub vocab: BTreeMap<String, usize>,
    /// idf(w) = ln((1+N)/(1+df(w))) + 1, indexed like `vocab`.
    pub idf: Vec<f64>,
}

impl TfidfModel {
    pub fn dim(&self) -> usize {
        self.idf.len()
    }

    /// L2-normalized tf·idf vector over the fitted vocabulary.
    pub fn transform(&self, tokens: &[String]) -> Vec<f64> {
        let mut out = vec![0.0; self.idf.len()];
        for tok in tokens {
            if let Some(&i) = self.vocab.get(tok) {
                out[i] += self.idf[i];
            }
        }
        let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut out {
                *x /= norm;
            }
        }
        out
    }
}

pub fn fit_tfidf(corpus: &BackgroundCorpus) -> Result<DocVectorModel> {
    Ok(DocVectorModel::Tfidf(fit_tfidf_model(corpus)?))
}

fn fit_tfidf_model(corpus: &BackgroundCorpus) -> Result<TfidfModel> {
    corpus.require_non_empty()?;
    let n = corpus.len() as f64;
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for doc in &corpus.documents {
        let mut seen: Vec<&str> = doc.tokens.iter().map(|s| s.as_str()).collect();
        seen.sort_unstable();
        seen.dedup();
        for w in seen {
            *df.entry(w).or_insert(0) += 1;
        }
    }
    let mut vocab = BTreeMap::new();
    let mut idf = Vec::with_capacity(df.len());
    for (i, (w, d)) in df.iter().enumerate() {
        vocab.insert((*w).to_string(), i);
        idf.push(((1.0 + n) / (1.0 + *d as f64)).ln() + 1.0);
    }
    Ok(TfidfModel { vocab, idf })
}

// ---------------------------------------------------------------------------
// LSA

/// Truncated SVD of the TF-IDF term-document matrix A = U Σ Vᵀ.
///
/// `u` holds the k leading left-singular vectors (terms × k, column-major by
/// component); transform projects a TF-IDF vector q onto them: Uₖᵀ q.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LsaModel {
    pub tfidf: TfidfModel,
    pub k: usize,
    /// terms × k, flattened row-major.
    pub u: Vec<f64>,
    /// Leading singular values, zero-padded to length k past the matrix rank.
    pub sigma: Vec<f64>,
    /// docs × k, flattened row-major (right-singular vectors).
    pub v: Vec<f64>,
    pub n_docs: usize,
}

impl LsaModel {
    pub fn transform(&self, tokens: &[String]) -> Vec<f64> {
        let q = self.tfidf.transform(tokens);
        let terms = self.tfidf.dim();
        let mut out = vec![0.0; self.k];
        for (j, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for (t, &qt) in q.iter().enumerate().take(terms) {
                s += self.u[t * self.k + j] * qt;
            }
            *o = s;
        }
        out
    }
}

const EIGEN_MAX_ITERS: usize = 5000;

pub fn fit_lsa(corpus: &BackgroundCorpus, k: usize) -> Result<DocVectorModel> {
    corpus.require_non_empty()?;
    let tfidf = fit_tfidf_model(corpus)?;
    let terms = tfidf.dim();
    let n_docs = corpus.len();
    if k == 0 || k > terms.min(n_docs) {
        return Err(Error::invalid(format!(
            "lsa rank k={k} must be in 1..=min(vocab={terms}, docs={n_docs})"
        )));
    }

    // Column j of A is the TF-IDF vector of document j.
    let mut a = DMatrix::zeros(terms, n_docs);
    for (j, doc) in corpus.documents.iter().enumerate() {
        let col = tfidf.transform(&doc.tokens);
        for (t, &x) in col.iter().enumerate() {
            a[(t, j)] = x;
        }
    }

    // Eigendecompose the docs × docs Gram matrix AᵀA = V Σ² Vᵀ, then recover
    // U = A V Σ⁻¹. Much smaller than a terms × terms problem.
    let gram = a.transpose() * &a;
    let eig = nalgebra::SymmetricEigen::try_new(gram, 1.0e-13, EIGEN_MAX_ITERS).ok_or_else(
        || Error::NotConverged {
            what: "symmetric eigendecomposition of the document Gram matrix".into(),
            iterations: EIGEN_MAX_ITERS,
        },
    )?;

    let mut order: Vec<usize> = (0..n_docs).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let lambda_max = eig.eigenvalues[order[0]].max(0.0);
    let cutoff = lambda_max * 1.0e-12;

    let mut u = vec![0.0; terms * k];
    let mut sigma = vec![0.0; k];
    let mut v = vec![0.0; n_docs * k];
    for (j, &ei) in order.iter().take(k).enumerate() {
        let lambda = eig.eigenvalues[ei];
        if lambda <= cutoff || lambda <= 0.0 {
            continue; // beyond the numerical rank: leave zero columns
        }
        let s = lambda.sqrt();
        sigma[j] = s;
        let vcol = eig.eigenvectors.column(ei);
        for d in 0..n_docs {
            v[d * k + j] = vcol[d];
        }
        let ucol = &a * vcol;
        for t in 0..terms {
            u[t * k + j] = ucol[t] / s;
        }
    }

    Ok(DocVectorModel::Lsa(LsaModel {
        tfidf,
        k,
        u,
        sigma,
        v,
        n_docs,
    }))
}

// ---------------------------------------------------------------------------
// LDA

/// Collapsed-Gibbs LDA. Fitted state is the topic-word count table; transform
/// runs held-out Gibbs passes against it with the counts frozen.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LdaModel {
    pub vocab: BTreeMap<String, usize>,
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    /// topic-word counts, k × V flattened row-major.
    pub topic_word: Vec<f64>,
    /// per-topic totals, length k.
    pub topic_totals: Vec<f64>,
    /// Seed for the held-out Gibbs passes, fixed at fit time so transforms
    /// are deterministic functions of the fitted model.
    pub inference_seed: u64,
}

const LDA_BURN_IN: usize = 30;
const LDA_AVERAGING: usize = 20;

impl LdaModel {
    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    /// Document-topic distribution via held-out Gibbs: 30 burn-in sweeps,
    /// then 20 sweeps averaged. Out-of-vocabulary tokens are skipped.
    pub fn transform(&self, tokens: &[String]) -> Vec<f64> {
        let ids: Vec<usize> = tokens.iter().filter_map(|t| self.vocab.get(t).copied()).collect();
        let k = self.k;
        if ids.is_empty() {
            return vec![1.0 / k as f64; k];
        }
        let v = self.vocab_size() as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(self.inference_seed);
        let mut z: Vec<usize> = Vec::with_capacity(ids.len());
        let mut n_dt = vec![0.0f64; k];
        for _ in &ids {
            let t = rng.random_range(0..k);
            z.push(t);
            n_dt[t] += 1.0;
        }
        let mut weights = vec![0.0f64; k];
        let mut theta = vec![0.0f64; k];
        for sweep in 0..LDA_BURN_IN + LDA_AVERAGING {
            for (i, &w) in ids.iter().enumerate() {
                let old = z[i];
                n_dt[old] -= 1.0;
                let mut total = 0.0;
                for t in 0..k {
                    let p = (n_dt[t] + self.alpha)
                        * (self.topic_word[t * self.vocab_size() + w] + self.beta)
                        / (self.topic_totals[t] + v * self.beta);
                    weights[t] = p;
                    total += p;
                }
                let mut draw = rng.random::<f64>() * total;
                let mut new = k - 1;
                for (t, &p) in weights.iter().enumerate() {
                    draw -= p;
                    if draw <= 0.0 {
                        new = t;
                        break;
                    }
                }
                z[i] = new;
                n_dt[new] += 1.0;
            }
            if sweep >= LDA_BURN_IN {
                let denom = ids.len() as f64 + k as f64 * self.alpha;
                for t in 0..k {
                    theta[t] += (n_dt[t] + self.alpha) / denom;
                }
            }
        }
        let total: f64 = theta.iter().sum();
        for t in &mut theta {
            *t /= total;
        }
        theta
    }
}

pub fn fit_lda(
    corpus: &BackgroundCorpus,
    k_topics: usize,
    alpha: f64,
    beta: f64,
    iters: usize,
    seed: u64,
) -> Result<DocVectorModel> {
    corpus.require_non_empty()?;
    if k_topics < 2 {
        return Err(Error::invalid(format!(
            "lda needs at least 2 topics, got {k_topics}"
        )));
    }
    let mut vocab: BTreeMap<String, usize> = BTreeMap::new();
    for doc in &corpus.documents {
        for tok in &doc.tokens {
            let next = vocab.len();
            vocab.entry(tok.clone()).or_insert(next);
        }
    }
    // Re-index in sorted order so the fitted model is independent of document
    // order quirks in vocab numbering.
    for (i, (_, id)) in vocab.iter_mut().enumerate() {
        *id = i;
    }
    let v = vocab.len();
    if v == 0 {
        return Err(Error::invalid("lda corpus has an empty vocabulary"));
    }

    let docs: Vec<Vec<usize>> = corpus
        .documents
        .iter()
        .map(|d| d.tokens.iter().map(|t| vocab[t]).collect())
        .collect();

    let k = k_topics;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut topic_word = vec![0.0f64; k * v];
    let mut topic_totals = vec![0.0f64; k];
    let mut doc_topic: Vec<Vec<f64>> = docs.iter().map(|_| vec![0.0; k]).collect();
    let mut z: Vec<Vec<usize>> = Vec::with_capacity(docs.len());
    for (d, ids) in docs.iter().enumerate() {
        let mut zd = Vec::with_capacity(ids.len());
        for &w in ids {
            let t = rng.random_range(0..k);
            zd.push(t);
            doc_topic[d][t] += 1.0;
            topic_word[t * v + w] += 1.0;
            topic_totals[t] += 1.0;
        }
        z.push(zd);
    }

    let vb = v as f64 * beta;
    let mut weights = vec![0.0f64; k];
    for _ in 0..iters {
        for (d, ids) in docs.iter().enumerate() {
            for (i, &w) in ids.iter().enumerate() {
                let old = z[d][i];
                doc_topic[d][old] -= 1.0;
                topic_word[old * v + w] -= 1.0;
                topic_totals[old] -= 1.0;
                let mut total = 0.0;
                for t in 0..k {
                    let p = (doc_topic[d][t] + alpha) * (topic_word[t * v + w] + beta)
                        / (topic_totals[t] + vb);
                    weights[t] = p;
                    total += p;
                }
                let mut draw = rng.random::<f64>() * total;
                let mut new = k - 1;
                for (t, &p) in weights.iter().enumerate() {
                    draw -= p;
                    if draw <= 0.0 {
                        new = t;
                        break;
                    }
                }
                z[d][i] = new;
                doc_topic[d][new] += 1.0;
                topic_word[new * v + w] += 1.0;
                topic_totals[new] += 1.0;
            }
        }
    }

    Ok(DocVectorModel::Lda(LdaModel {
        vocab,
        k,
        alpha,
        beta,
        topic_word,
        topic_totals,
        inference_seed: seed ^ 0x1da_1da_1da,
    }))
}

// ---------------------------------------------------------------------------
// PV-DM

/// PV-DM paragraph vectors trained with negative sampling. The context for a
/// target word is the mean of the document vector and the window's input word
/// vectors. Transform learns a vector for an unseen document with the word
/// matrices frozen.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PvdmModel {
    pub vocab: BTreeMap<String, usize>,
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Input word vectors, V × dim row-major.
    pub word_in: Vec<f64>,
    /// Output word vectors, V × dim row-major.
    pub word_out: Vec<f64>,
    /// Trained document vectors, docs × dim row-major.
    pub doc_vecs: Vec<f64>,
    /// Cumulative unigram^(3/4) table for negative sampling.
    pub noise_cdf: Vec<f64>,
    pub inference_seed: u64,
    /// Mean per-target loss after each training epoch.
    pub loss_history: Vec<f64>,
    /// Scratch slot for the vector being inferred; never persisted.
    #[serde(skip)]
    inferred: Vec<f64>,
}

const PVDM_LEARNING_RATE: f64 = 0.05;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln σ(x), computed without overflow for large |x|.
fn ln_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Negative-sampling loss and its gradients, as a pure function of the
/// context vectors and the target/negative output vectors.
///
/// h = mean(ctx); L = −ln σ(u_t·h) − Σ_j ln σ(−u_j·h).
/// Returns (loss, ∂L/∂ctx_i for each i, ∂L/∂u_t, ∂L/∂u_j for each j).
#[allow(clippy::type_complexity)]
pub fn ns_loss_grads(
    ctx: &[&[f64]],
    target_out: &[f64],
    neg_outs: &[&[f64]],
) -> (f64, Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>) {
    let dim = target_out.len();
    let m = ctx.len() as f64;
    let mut h = vec![0.0; dim];
    for c in ctx {
        for (hi, ci) in h.iter_mut().zip(*c) {
            *hi += ci;
        }
    }
    for hi in &mut h {
        *hi /= m;
    }

    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    let s_t = dot(target_out, &h);
    let mut loss = -ln_sigmoid(s_t);
    let mut grad_h = vec![0.0; dim];
    let g_t = sigmoid(s_t) - 1.0;
    let grad_target: Vec<f64> = h.iter().map(|&hi| g_t * hi).collect();
    for (gh, &ut) in grad_h.iter_mut().zip(target_out) {
        *gh += g_t * ut;
    }

    let mut grad_negs = Vec::with_capacity(neg_outs.len());
    for u in neg_outs {
        let s = dot(u, &h);
        loss -= ln_sigmoid(-s);
        let g = sigmoid(s);
        grad_negs.push(h.iter().map(|&hi| g * hi).collect());
        for (gh, &ui) in grad_h.iter_mut().zip(*u) {
            *gh += g * ui;
        }
    }

    let grad_ctx: Vec<Vec<f64>> = (0..ctx.len())
        .map(|_| grad_h.iter().map(|&g| g / m).collect())
        .collect();
    (loss, grad_ctx, grad_target, grad_negs)
}

impl PvdmModel {
    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn sample_negative(&self, rng: &mut ChaCha8Rng) -> usize {
        let draw = rng.random::<f64>() * self.noise_cdf.last().copied().unwrap_or(1.0);
        self.noise_cdf.partition_point(|&c| c < draw).min(self.vocab_size() - 1)
    }

    /// Runs the PV-DM passes over one document, updating `doc_vec` in place.
    /// When `train_words` is set the word matrices move too (fit-time mode);
    /// transform freezes them.
    fn run_passes(
        &mut self,
        ids: &[usize],
        doc_vec_off: DocVecSlot,
        epochs: usize,
        train_words: bool,
        rng: &mut ChaCha8Rng,
    ) -> Vec<f64> {
        let dim = self.dim;
        let mut history = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            let mut epoch_loss = 0.0;
            let mut targets = 0usize;
            for t in 0..ids.len() {
                let lo = t.saturating_sub(self.window);
                let hi = (t + self.window + 1).min(ids.len());
                let ctx_ids: Vec<usize> = (lo..hi).filter(|&j| j != t).map(|j| ids[j]).collect();

                let target = ids[t];
                let mut negs = Vec::with_capacity(self.negatives);
                if self.vocab_size() > 1 {
                    while negs.len() < self.negatives {
                        let n = self.sample_negative(rng);
                        if n != target {
                            negs.push(n);
                        }
                    }
                }

                let doc_vec = doc_vec_off.get(self, dim).to_vec();
                let ctx_vecs: Vec<Vec<f64>> = ctx_ids
                    .iter()
                    .map(|&w| self.word_in[w * dim..(w + 1) * dim].to_vec())
                    .collect();
                let mut ctx_refs: Vec<&[f64]> = Vec::with_capacity(1 + ctx_vecs.len());
                ctx_refs.push(&doc_vec);
                for c in &ctx_vecs {
                    ctx_refs.push(c);
                }
                let target_out = self.word_out[target * dim..(target + 1) * dim].to_vec();
                let neg_vecs: Vec<Vec<f64>> = negs
                    .iter()
                    .map(|&w| self.word_out[w * dim..(w + 1) * dim].to_vec())
                    .collect();
                let neg_refs: Vec<&[f64]> = neg_vecs.iter().map(|v| v.as_slice()).collect();

                let (loss, grad_ctx, grad_target, grad_negs) =
                    ns_loss_grads(&ctx_refs, &target_out, &neg_refs);
                epoch_loss += loss;
                targets += 1;

                let lr = self.learning_rate;
                {
                    let dv = doc_vec_off.get_mut(self, dim);
                    for (x, g) in dv.iter_mut().zip(&grad_ctx[0]) {
                        *x -= lr * g;
                    }
                }
                if train_words {
                    for (slot, &w) in ctx_ids.iter().enumerate() {
                        let row = &mut self.word_in[w * dim..(w + 1) * dim];
                        for (x, g) in row.iter_mut().zip(&grad_ctx[slot + 1]) {
                            *x -= lr * g;
                        }
                    }
                    {
                        let row = &mut self.word_out[target * dim..(target + 1) * dim];
                        for (x, g) in row.iter_mut().zip(&grad_target) {
                            *x -= lr * g;
                        }
                    }
                    for (j, &w) in negs.iter().enumerate() {
                        let row = &mut self.word_out[w * dim..(w + 1) * dim];
                        for (x, g) in row.iter_mut().zip(&grad_negs[j]) {
                            *x -= lr * g;
                        }
                    }
                }
            }
            history.push(if targets > 0 {
                epoch_loss / targets as f64
            } else {
                0.0
            });
        }
        history
    }

    /// Infers a vector for an unseen document: gradient steps on a fresh
    /// document vector with the word matrices frozen.
    pub fn transform(&self, tokens: &[String]) -> Vec<f64> {
        let ids: Vec<usize> = tokens.iter().filter_map(|t| self.vocab.get(t).copied()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.inference_seed);
        let dim = self.dim;
        let mut scratch = self.clone();
        let mut init = Vec::with_capacity(dim);
        for _ in 0..dim {
            init.push((rng.random::<f64>() - 0.5) / dim as f64);
        }
        scratch.inferred = init;
        if !ids.is_empty() {
            scratch.run_passes_inferred(&ids, self.epochs, &mut rng);
        }
        scratch.inferred
    }

    fn run_passes_inferred(&mut self, ids: &[usize], epochs: usize, rng: &mut ChaCha8Rng) {
        self.run_passes(ids, DocVecSlot::Inferred, epochs, false, rng);
    }
}

/// Selects which document vector `run_passes` reads and writes: a row of the
/// training matrix, or the scratch vector used during inference.
#[derive(Clone, Copy)]
enum DocVecSlot {
    Train(usize),
    Inferred,
}

impl DocVecSlot {
    fn get<'a>(&self, m: &'a PvdmModel, dim: usize) -> &'a [f64] {
        match self {
            DocVecSlot::Train(d) => &m.doc_vecs[d * dim..(d + 1) * dim],
            DocVecSlot::Inferred => &m.inferred,
        }
    }

    fn get_mut<'a>(&self, m: &'a mut PvdmModel, dim: usize) -> &'a mut [f64] {
        match self {
            DocVecSlot::Train(d) => &mut m.doc_vecs[d * dim..(d + 1) * dim],
            DocVecSlot::Inferred => &mut m.inferred,
        }
    }
}

pub fn train_pvdm(
    corpus: &BackgroundCorpus,
    dim: usize,
    window: usize,
    negatives: usize,
    epochs: usize,
    seed: u64,
) -> Result<DocVectorModel> {
    corpus.require_non_empty()?;
    if dim < 2 {
        return Err(Error::invalid(format!("pvdm dim must be ≥ 2, got {dim}")));
    }
    let mut counts: BTreeMap<String, f64> = BTreeMap::new();
    for doc in &corpus.documents {
        for tok in &doc.tokens {
            *counts.entry(tok.clone()).or_insert(0.0) += 1.0;
        }
    }
    if counts.is_empty() {
        return Err(Error::invalid("pvdm corpus has an empty vocabulary"));
    }
    let vocab: BTreeMap<String, usize> = counts
        .keys()
        .enumerate()
        .map(|(i, w)| (w.clone(), i))
        .collect();
    let v = vocab.len();
    let mut noise_cdf = Vec::with_capacity(v);
    let mut acc = 0.0;
    for c in counts.values() {
        acc += c.powf(0.75);
        noise_cdf.push(acc);
    }

    let docs: Vec<Vec<usize>> = corpus
        .documents
        .iter()
        .map(|d| d.tokens.iter().map(|t| vocab[t]).collect())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut word_in = Vec::with_capacity(v * dim);
    for _ in 0..v * dim {
        word_in.push((rng.random::<f64>() - 0.5) / dim as f64);
    }
    let mut doc_vecs = Vec::with_capacity(docs.len() * dim);
    for _ in 0..docs.len() * dim {
        doc_vecs.push((rng.random::<f64>() - 0.5) / dim as f64);
    }

    let mut model = PvdmModel {
        vocab,
        dim,
        window,
        negatives,
        epochs,
        learning_rate: PVDM_LEARNING_RATE,
        word_in,
        word_out: vec![0.0; v * dim],
        doc_vecs,
        noise_cdf,
        inference_seed: seed ^ 0x9e3779b97f4a7c15,
        loss_history: Vec::new(),
        inferred: Vec::new(),
    };

    for _ in 0..epochs {
        let mut total = 0.0;
        let mut count = 0usize;
        for (d, ids) in docs.iter().enumerate() {
            if ids.is_empty() {
                continue;
            }
            let h = model.run_passes(ids, DocVecSlot::Train(d), 1, true, &mut rng);
            total += h[0] * ids.len() as f64;
            count += ids.len();
        }
        model
            .loss_history
            .push(if count > 0 { total / count as f64 } else { 0.0 });
    }

    Ok(DocVectorModel::Pvdm(model))
}
