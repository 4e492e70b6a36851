//! Pairwise similarity measures between a candidate summary and a reference:
//! verbatim n-gram metrics (ROUGE, BLEU, METEOR-lite), embedding aggregation
//! scores, document-vector cosines, and the sentence similarity matrix.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embeddings::{avg_embedding, DocVectorModel, WordVectors};
use crate::error::{Error, Result};
use crate::textproc::{ngrams, stem};

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Clipped n-gram overlap precision/recall/F1.
pub fn rouge_n(candidate: &[String], reference: &[String], n: usize) -> (f64, f64, f64) {
    let cand = ngrams(candidate, n);
    let refr = ngrams(reference, n);
    if cand.total() == 0 || refr.total() == 0 {
        return (0.0, 0.0, 0.0);
    }
    let mut overlap = 0usize;
    for (gram, &c) in &cand.counts {
        if let Some(&r) = refr.counts.get(gram) {
            overlap += c.min(r);
        }
    }
    let p = overlap as f64 / cand.total() as f64;
    let r = overlap as f64 / refr.total() as f64;
    (p, r, f1(p, r))
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for ai in a {
        for (j, bj) in b.iter().enumerate() {
            cur[j + 1] = if ai == bj {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Longest-common-subsequence precision/recall/F1.
pub fn rouge_l(candidate: &[String], reference: &[String]) -> (f64, f64, f64) {
    if candidate.is_empty() || reference.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let l = lcs_len(candidate, reference) as f64;
    let p = l / candidate.len() as f64;
    let r = l / reference.len() as f64;
    (p, r, f1(p, r))
}

const BLEU_EPSILON: f64 = 1e-9;

/// BLEU with add-ε smoothing on zero clipped counts and the standard brevity
/// penalty. Orders the candidate is too short to produce any n-gram for are
/// dropped from the geometric mean, so identical texts score 1 at any length.
pub fn bleu(candidate: &[String], reference: &[String], max_n: usize) -> f64 {
    if candidate.is_empty() || reference.is_empty() || max_n == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    let mut orders = 0usize;
    for n in 1..=max_n {
        let cand = ngrams(candidate, n);
        if cand.total() == 0 {
            continue;
        }
        let refr = ngrams(reference, n);
        let mut overlap = 0usize;
        for (gram, &c) in &cand.counts {
            if let Some(&r) = refr.counts.get(gram) {
                overlap += c.min(r);
            }
        }
        let p = if overlap == 0 {
            BLEU_EPSILON
        } else {
            overlap as f64 / cand.total() as f64
        };
        log_sum += p.ln();
        orders += 1;
    }
    if orders == 0 {
        return 0.0;
    }
    let geo = (log_sum / orders as f64).exp();
    let bp = if candidate.len() < reference.len() {
        (1.0 - reference.len() as f64 / candidate.len() as f64).exp()
    } else {
        1.0
    };
    geo * bp
}

/// Word pairs accepted by the synonym stage of METEOR-lite.
#[derive(Debug, Clone, Default)]
pub struct SynonymLexicon {
    map: HashMap<String, HashSet<String>>,
}

impl SynonymLexicon {
    pub fn from_pairs<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, S)>,
        S: Into<String>,
    {
        let mut map: HashMap<String, HashSet<String>> = HashMap::new();
        for (a, b) in pairs {
            map.entry(a.into()).or_default().insert(b.into());
        }
        SynonymLexicon { map }
    }

    /// Loads `word<TAB>synonym` lines; blank lines and `#` comments skipped.
    pub fn from_tsv_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let content = std::fs::read_to_string(path)?;
        let mut pairs = Vec::new();
        for (i, line) in content.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((a, b)) = line.split_once('\t') else {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    msg: format!("expected word<TAB>synonym, got {line:?}"),
                });
            };
            pairs.push((a.trim().to_string(), b.trim().to_string()));
        }
        Ok(SynonymLexicon::from_pairs(pairs))
    }

    pub fn are_synonyms(&self, a: &str, b: &str) -> bool {
        self.map.get(a).is_some_and(|s| s.contains(b))
            || self.map.get(b).is_some_and(|s| s.contains(a))
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Matching stages of the METEOR-lite aligner, applied in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchStage {
    Exact,
    Stem,
    Synonym,
}

pub const METEOR_STAGES: [MatchStage; 3] = [MatchStage::Exact, MatchStage::Stem, MatchStage::Synonym];

fn meteor_align(
    candidate: &[String],
    reference: &[String],
    synonyms: Option<&SynonymLexicon>,
    stages: &[MatchStage],
) -> Vec<(usize, usize)> {
    let mut cand_used = vec![false; candidate.len()];
    let mut ref_used = vec![false; reference.len()];
    let mut matches = Vec::new();
    let cand_stems: Vec<String> = candidate.iter().map(|t| stem(t)).collect();
    let ref_stems: Vec<String> = reference.iter().map(|t| stem(t)).collect();
    for stage in stages {
        for ci in 0..candidate.len() {
            if cand_used[ci] {
                continue;
            }
            let hit = (0..reference.len()).find(|&rj| {
                if ref_used[rj] {
                    return false;
                }
                match stage {
                    MatchStage::Exact => candidate[ci] == reference[rj],
                    MatchStage::Stem => cand_stems[ci] == ref_stems[rj],
                    MatchStage::Synonym => synonyms
                        .is_some_and(|lex| lex.are_synonyms(&candidate[ci], &reference[rj])),
                }
            });
            if let Some(rj) = hit {
                cand_used[ci] = true;
                ref_used[rj] = true;
                matches.push((ci, rj));
            }
        }
    }
    matches.sort_unstable();
    matches
}

fn meteor_chunks(matches: &[(usize, usize)]) -> usize {
    let mut chunks = 0;
    let mut prev: Option<(usize, usize)> = None;
    for &(c, r) in matches {
        let contiguous = prev.is_some_and(|(pc, pr)| c == pc + 1 && r == pr + 1);
        if !contiguous {
            chunks += 1;
        }
        prev = Some((c, r));
    }
    chunks
}

/// METEOR-lite with a restricted stage list; the standard score uses all of
/// [`METEOR_STAGES`].
pub fn meteor_lite_with_stages(
    candidate: &[String],
    reference: &[String],
    synonyms: Option<&SynonymLexicon>,
    stages: &[MatchStage],
) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let matches = meteor_align(candidate, reference, synonyms, stages);
    let m = matches.len() as f64;
    if matches.is_empty() {
        return 0.0;
    }
    let p = m / candidate.len() as f64;
    let r = m / reference.len() as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let chunks = meteor_chunks(&matches) as f64;
    let penalty = 0.5 * (chunks / m).powi(3);
    f_mean * (1.0 - penalty)
}

/// Staged unigram alignment (exact → stem → synonym) scored with
/// F_mean = 10PR/(R+9P) and the fragmentation penalty 0.5·(chunks/matches)³.
pub fn meteor_lite(
    candidate: &[String],
    reference: &[String],
    synonyms: Option<&SynonymLexicon>,
) -> f64 {
    meteor_lite_with_stages(candidate, reference, synonyms, &METEOR_STAGES)
}

/// How word- or sentence-level cosine grids are collapsed to one score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    Average,
    Greedy,
    Optimal,
}

impl std::fmt::Display for AggregationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            AggregationMode::Average => "average",
            AggregationMode::Greedy => "greedy",
            AggregationMode::Optimal => "optimal",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for AggregationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average" => Ok(AggregationMode::Average),
            "greedy" => Ok(AggregationMode::Greedy),
            "optimal" => Ok(AggregationMode::Optimal),
            other => Err(Error::invalid(format!(
                "unknown aggregation mode {other:?} (expected average, greedy, or optimal)"
            ))),
        }
    }
}

pub mod assignment {
    //! Linear assignment on square real matrices.

    /// Maximum-weight one-to-one assignment; returns column index per row.
    pub fn max_weight_assignment(weights: &[Vec<f64>]) -> Vec<usize> {
        let neg: Vec<Vec<f64>> = weights
            .iter()
            .map(|row| row.iter().map(|x| -x).collect())
            .collect();
        min_cost_assignment(&neg)
    }

    /// Hungarian algorithm with potentials and shortest augmenting paths,
    /// O(n³); handles arbitrary (including negative) real costs.
    pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
        let n = cost.len();
        assert!(
            cost.iter().all(|row| row.len() == n),
            "assignment needs a square matrix"
        );
        if n == 0 {
            return Vec::new();
        }
        // 1-based columns; p[j] is the row matched to column j (0 = free).
        let mut u = vec![0.0f64; n + 1];
        let mut v = vec![0.0f64; n + 1];
        let mut p = vec![0usize; n + 1];
        let mut way = vec![0usize; n + 1];
        for i in 1..=n {
            p[0] = i;
            let mut j0 = 0usize;
            let mut minv = vec![f64::INFINITY; n + 1];
            let mut used = vec![false; n + 1];
            loop {
                used[j0] = true;
                let i0 = p[j0];
                let mut delta = f64::INFINITY;
                let mut j1 = 0usize;
                for j in 1..=n {
                    if used[j] {
                        continue;
                    }
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
                for j in 0..=n {
                    if used[j] {
                        u[p[j]] += delta;
                        v[j] -= delta;
                    } else {
                        minv[j] -= delta;
                    }
                }
                j0 = j1;
                if p[j0] == 0 {
                    break;
                }
            }
            loop {
                let j1 = way[j0];
                p[j0] = p[j1];
                j0 = j1;
                if j0 == 0 {
                    break;
                }
            }
        }
        let mut row_to_col = vec![0usize; n];
        for j in 1..=n {
            if p[j] > 0 {
                row_to_col[p[j] - 1] = j - 1;
            }
        }
        row_to_col
    }
}

/// Collapses a rows × cols cosine grid to one score.
fn aggregate_grid(sim: &[Vec<f64>], mode: AggregationMode) -> f64 {
    let nr = sim.len();
    let nc = sim.first().map_or(0, |r| r.len());
    if nr == 0 || nc == 0 {
        return 0.0;
    }
    // Non-finite similarities must surface as NaN instead of reaching the
    // assignment solver, whose comparisons would never terminate on NaN.
    if sim.iter().flatten().any(|v| !v.is_finite()) {
        return f64::NAN;
    }
    match mode {
        AggregationMode::Average => {
            let total: f64 = sim.iter().flatten().sum();
            total / (nr * nc) as f64
        }
        AggregationMode::Greedy => {
            let row_best: f64 = sim
                .iter()
                .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
                .sum::<f64>()
                / nr as f64;
            let col_best: f64 = (0..nc)
                .map(|j| {
                    sim.iter()
                        .map(|row| row[j])
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .sum::<f64>()
                / nc as f64;
            (row_best + col_best) / 2.0
        }
        AggregationMode::Optimal => {
            let n = nr.max(nc);
            let mut padded = vec![vec![0.0; n]; n];
            for (i, row) in sim.iter().enumerate() {
                padded[i][..nc].copy_from_slice(row);
            }
            let assign = assignment::max_weight_assignment(&padded);
            let mut total = 0.0;
            for (i, &j) in assign.iter().enumerate().take(nr) {
                if j < nc {
                    total += sim[i][j];
                }
            }
            total / nr.min(nc) as f64
        }
    }
}

fn cosine_grid(avecs: &[Vec<f64>], bvecs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    avecs
        .iter()
        .map(|a| bvecs.iter().map(|b| cosine(a, b)).collect())
        .collect()
}

/// Word-level semantic similarity under the chosen aggregation; tokens with
/// no embedding are dropped first, and either side empty after that gives 0.
pub fn word_sim_aggregate(
    candidate: &[String],
    reference: &[String],
    wv: &WordVectors,
    mode: AggregationMode,
) -> f64 {
    let vecs = |tokens: &[String]| -> Vec<Vec<f64>> {
        tokens
            .iter()
            .filter_map(|t| wv.get(t).map(|v| v.to_vec()))
            .collect()
    };
    let cand = vecs(candidate);
    let refr = vecs(reference);
    if cand.is_empty() || refr.is_empty() {
        return 0.0;
    }
    aggregate_grid(&cosine_grid(&cand, &refr), mode)
}

/// Sentence-level semantic similarity: each sentence becomes its averaged
/// embedding, then the same aggregation as the word level applies.
pub fn sent_sim_aggregate(
    candidate_sentences: &[Vec<String>],
    reference_sentences: &[Vec<String>],
    wv: &WordVectors,
    mode: AggregationMode,
) -> f64 {
    if candidate_sentences.is_empty() || reference_sentences.is_empty() {
        return 0.0;
    }
    let vecs = |sents: &[Vec<String>]| -> Vec<Vec<f64>> {
        sents.iter().map(|s| avg_embedding(s, wv)).collect()
    };
    aggregate_grid(&cosine_grid(&vecs(candidate_sentences), &vecs(reference_sentences)), mode)
}

/// Cosine between the model representations of the two texts.
pub fn doc_cosine(candidate: &[String], reference: &[String], model: &DocVectorModel) -> f64 {
    cosine(&model.transform(candidate), &model.transform(reference))
}

/// Sentence-by-sentence cosine grid between a summary and a passage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    /// Row i = summary sentence i; column j = passage sentence j.
    pub values: Vec<Vec<f64>>,
}

impl SimilarityMatrix {
    pub fn n_rows(&self) -> usize {
        self.values.len()
    }

    pub fn n_cols(&self) -> usize {
        self.values.first().map_or(0, |r| r.len())
    }
}

pub fn build_similarity_matrix(
    summary_sentences: &[Vec<String>],
    passage_sentences: &[Vec<String>],
    wv: &WordVectors,
) -> Result<SimilarityMatrix> {
    if summary_sentences.is_empty() || passage_sentences.is_empty() {
        return Err(Error::invalid(
            "similarity matrix needs at least one sentence on each side",
        ));
    }
    let svecs: Vec<Vec<f64>> = summary_sentences.iter().map(|s| avg_embedding(s, wv)).collect();
    let pvecs: Vec<Vec<f64>> = passage_sentences.iter().map(|s| avg_embedding(s, wv)).collect();
    Ok(SimilarityMatrix {
        values: cosine_grid(&svecs, &pvecs),
    })
}
