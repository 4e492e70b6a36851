//! Extractive reference construction. A candidate summary is compared against
//! the original passage or against key sentences picked by TextRank, a
//! MEAD-style centroid ranker, or uniform random selection.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::{avg_embedding, WordVectors};
use crate::error::{Error, Result};
use crate::metrics::cosine;
use crate::textproc::{stopwords, TokenizedText};

pub const DEFAULT_DAMPING: f64 = 0.85;
pub const TEXTRANK_TOL: f64 = 1e-8;
pub const TEXTRANK_MAX_ITERS: usize = 200;
pub const MEAD_CENTROID_TERMS: usize = 10;
pub const DEFAULT_MEAD_WEIGHTS: (f64, f64, f64) = (1.0, 1.0, 1.0);

/// How the reference text was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceKind {
    Original,
    Textrank,
    Mead,
    Random,
}

impl std::fmt::Display for ReferenceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ReferenceKind::Original => "original",
            ReferenceKind::Textrank => "textrank",
            ReferenceKind::Mead => "mead",
            ReferenceKind::Random => "random",
        })
    }
}

impl std::str::FromStr for ReferenceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(ReferenceKind::Original),
            "textrank" => Ok(ReferenceKind::Textrank),
            "mead" => Ok(ReferenceKind::Mead),
            "random" => Ok(ReferenceKind::Random),
            other => Err(Error::invalid(format!("unknown reference kind {other:?}"))),
        }
    }
}

/// Reference text: selected passage sentences in document order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub kind: ReferenceKind,
    pub sentences: Vec<Vec<String>>,
    pub source_passage_id: String,
}

impl Reference {
    /// All reference tokens flattened in order.
    pub fn all_tokens(&self) -> Vec<String> {
        self.sentences.iter().flatten().cloned().collect()
    }
}

/// Default number of key sentences: one fifth of the passage, rounded up.
pub fn default_n_sentences(sentence_count: usize) -> usize {
    ((0.2 * sentence_count as f64).ceil() as usize).max(1)
}

fn check_selection(passage: &TokenizedText, n_sentences: usize) -> Result<usize> {
    let count = passage.sentence_count();
    if count == 0 {
        return Err(Error::invalid("passage has no sentences"));
    }
    if n_sentences == 0 {
        return Err(Error::invalid("cannot select 0 reference sentences"));
    }
    if n_sentences > count {
        return Err(Error::invalid(format!(
            "cannot select {n_sentences} sentences from a {count}-sentence passage"
        )));
    }
    Ok(count)
}

/// Top-n indices by score, ties broken toward the lower index, returned in
/// document order.
fn select_top(scores: &[f64], n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut chosen: Vec<usize> = order.into_iter().take(n).collect();
    chosen.sort_unstable();
    chosen
}

fn gather(passage: &TokenizedText, indices: &[usize]) -> Vec<Vec<String>> {
    indices
        .iter()
        .map(|&i| passage.sentence_tokens(i).to_vec())
        .collect()
}

/// PageRank scores over the sentence similarity graph. Edge weights are
/// non-negative cosines of averaged-embedding sentence vectors; rows are
/// normalized, with dangling rows replaced by the uniform distribution.
pub fn textrank_scores(
    passage: &TokenizedText,
    damping: f64,
    wv: &WordVectors,
) -> Result<Vec<f64>> {
    let count = passage.sentence_count();
    if count == 0 {
        return Err(Error::invalid("passage has no sentences"));
    }
    if !(damping > 0.0 && damping < 1.0) {
        return Err(Error::invalid(format!(
            "damping must lie in (0,1), got {damping}"
        )));
    }

    let vectors: Vec<Vec<f64>> = (0..count)
        .map(|i| avg_embedding(passage.sentence_tokens(i), wv))
        .collect();
    let mut transition = vec![vec![0.0; count]; count];
    for i in 0..count {
        let mut row_sum = 0.0;
        for j in 0..count {
            if i != j {
                let w = cosine(&vectors[i], &vectors[j]).max(0.0);
                transition[i][j] = w;
                row_sum += w;
            }
        }
        if row_sum > 0.0 {
            for w in transition[i].iter_mut() {
                *w /= row_sum;
            }
        } else {
            for w in transition[i].iter_mut() {
                *w = 1.0 / count as f64;
            }
        }
    }

    let teleport = (1.0 - damping) / count as f64;
    let mut scores = vec![1.0 / count as f64; count];
    for _ in 0..TEXTRANK_MAX_ITERS {
        let mut next = vec![teleport; count];
        for i in 0..count {
            for j in 0..count {
                next[j] += damping * scores[i] * transition[i][j];
            }
        }
        let delta: f64 = next
            .iter()
            .zip(&scores)
            .map(|(a, b)| (a - b).abs())
            .sum();
        scores = next;
        if delta < TEXTRANK_TOL {
            return Ok(scores);
        }
    }
    Err(Error::NotConverged {
        what: "textrank power iteration".to_string(),
        iterations: TEXTRANK_MAX_ITERS,
    })
}

pub fn textrank_reference(
    passage: &TokenizedText,
    passage_id: &str,
    n_sentences: usize,
    damping: f64,
    wv: &WordVectors,
) -> Result<Reference> {
    check_selection(passage, n_sentences)?;
    let scores = textrank_scores(passage, damping, wv)?;
    let chosen = select_top(&scores, n_sentences);
    Ok(Reference {
        kind: ReferenceKind::Textrank,
        sentences: gather(passage, &chosen),
        source_passage_id: passage_id.to_string(),
    })
}

fn count_vector(tokens: &[String]) -> HashMap<&String, f64> {
    let mut counts: HashMap<&String, f64> = HashMap::new();
    for t in tokens {
        *counts.entry(t).or_insert(0.0) += 1.0;
    }
    counts
}

fn count_cosine(a: &[String], b: &[String]) -> f64 {
    let ca = count_vector(a);
    let cb = count_vector(b);
    let dot: f64 = ca
        .iter()
        .filter_map(|(t, &va)| cb.get(t).map(|&vb| va * vb))
        .sum();
    let na: f64 = ca.values().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = cb.values().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// MEAD-style scores: weighted sum of centroid overlap, positional prior
/// 1/position, and count-vector cosine with the first sentence. The centroid
/// holds the passage's top tf-idf terms (idf over sentences, stopwords
/// excluded), and a sentence's overlap is the covered fraction of centroid
/// mass.
pub fn mead_scores(passage: &TokenizedText, weights: (f64, f64, f64)) -> Result<Vec<f64>> {
    let count = passage.sentence_count();
    if count == 0 {
        return Err(Error::invalid("passage has no sentences"));
    }
    let stop = stopwords();

    let mut tf: HashMap<&String, f64> = HashMap::new();
    let mut df: HashMap<&String, f64> = HashMap::new();
    for i in 0..count {
        let tokens = passage.sentence_tokens(i);
        let mut seen: Vec<&String> = Vec::new();
        for t in tokens {
            if stop.contains(t.as_str()) {
                continue;
            }
            *tf.entry(t).or_insert(0.0) += 1.0;
            if !seen.contains(&t) {
                seen.push(t);
            }
        }
        for t in seen {
            *df.entry(t).or_insert(0.0) += 1.0;
        }
    }
    let mut centroid: Vec<(&String, f64)> = tf
        .iter()
        .map(|(&t, &tf_w)| {
            let idf = ((1.0 + count as f64) / (1.0 + df[t])).ln() + 1.0;
            (t, tf_w * idf)
        })
        .collect();
    centroid.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(b.0))
    });
    centroid.truncate(MEAD_CENTROID_TERMS);
    let centroid_mass: f64 = centroid.iter().map(|(_, w)| w).sum();

    let (w_c, w_p, w_f) = weights;
    let first = passage.sentence_tokens(0);
    let scores = (0..count)
        .map(|i| {
            let tokens = passage.sentence_tokens(i);
            let overlap = if centroid_mass > 0.0 {
                centroid
                    .iter()
                    .filter(|(t, _)| tokens.contains(t))
                    .map(|(_, w)| w)
                    .sum::<f64>()
                    / centroid_mass
            } else {
                0.0
            };
            let position = 1.0 / (i + 1) as f64;
            let first_sim = count_cosine(tokens, first);
            w_c * overlap + w_p * position + w_f * first_sim
        })
        .collect();
    Ok(scores)
}

pub fn mead_reference(
    passage: &TokenizedText,
    passage_id: &str,
    n_sentences: usize,
    weights: (f64, f64, f64),
) -> Result<Reference> {
    check_selection(passage, n_sentences)?;
    let scores = mead_scores(passage, weights)?;
    let chosen = select_top(&scores, n_sentences);
    Ok(Reference {
        kind: ReferenceKind::Mead,
        sentences: gather(passage, &chosen),
        source_passage_id: passage_id.to_string(),
    })
}

/// Uniform sample of sentences without replacement, in document order.
pub fn random_reference(
    passage: &TokenizedText,
    passage_id: &str,
    n_sentences: usize,
    seed: u64,
) -> Result<Reference> {
    let count = check_selection(passage, n_sentences)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = rand::seq::index::sample(&mut rng, count, n_sentences).into_vec();
    chosen.sort_unstable();
    Ok(Reference {
        kind: ReferenceKind::Random,
        sentences: gather(passage, &chosen),
        source_passage_id: passage_id.to_string(),
    })
}

/// The whole passage as the reference.
pub fn original_reference(passage: &TokenizedText, passage_id: &str) -> Result<Reference> {
    let count = passage.sentence_count();
    if count == 0 {
        return Err(Error::invalid("passage has no sentences"));
    }
    Ok(Reference {
        kind: ReferenceKind::Original,
        sentences: (0..count)
            .map(|i| passage.sentence_tokens(i).to_vec())
            .collect(),
        source_passage_id: passage_id.to_string(),
    })
}

/// Knobs for [`build_reference`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceParams {
    /// Number of key sentences; `None` means ceil(0.2 x sentence count).
    pub n_sentences: Option<usize>,
    pub damping: f64,
    pub mead_weights: (f64, f64, f64),
    pub seed: u64,
}

impl Default for ReferenceParams {
    fn default() -> Self {
        ReferenceParams {
            n_sentences: None,
            damping: DEFAULT_DAMPING,
            mead_weights: DEFAULT_MEAD_WEIGHTS,
            seed: 0,
        }
    }
}

/// Builds a reference of the requested kind with shared parameter handling.
pub fn build_reference(
    kind: ReferenceKind,
    passage: &TokenizedText,
    passage_id: &str,
    wv: &WordVectors,
    params: &ReferenceParams,
) -> Result<Reference> {
    let n = params
        .n_sentences
        .unwrap_or_else(|| default_n_sentences(passage.sentence_count()));
    match kind {
        ReferenceKind::Original => original_reference(passage, passage_id),
        ReferenceKind::Textrank => {
            textrank_reference(passage, passage_id, n, params.damping, wv)
        }
        ReferenceKind::Mead => mead_reference(passage, passage_id, n, params.mead_weights),
        ReferenceKind::Random => random_reference(passage, passage_id, n, params.seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textproc::tokenize;

    fn toy_vectors() -> WordVectors {
        let mut wv = WordVectors::new(3);
        for (i, w) in ["cat", "sat", "dog", "ran", "bird", "flew"].iter().enumerate() {
            let mut v = vec![0.0; 3];
            v[i % 3] = 1.0;
            v[(i + 1) % 3] = if i >= 3 { 0.5 } else { 0.0 };
            wv.insert(w.to_string(), v).unwrap();
        }
        wv
    }

    #[test]
    fn original_reference_preserves_everything() {
        let passage = tokenize("The cat sat. The dog ran. The bird flew.");
        let a = original_reference(&passage, "p1").unwrap();
        assert_eq!(a.kind, ReferenceKind::Original);
        assert_eq!(a.sentences.len(), 3);
        assert_eq!(a.sentences[0], passage.sentence_tokens(0));
        let b = original_reference(&passage, "p1").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identical_sentences_get_uniform_textrank_scores() {
        let passage = tokenize("The cat sat. The cat sat. The cat sat.");
        let scores = textrank_scores(&passage, 0.85, &toy_vectors()).unwrap();
        assert_eq!(scores.len(), 3);
        for &s in &scores {
            assert!((s - 1.0 / 3.0).abs() < 1e-9, "{scores:?}");
        }
    }

    #[test]
    fn textrank_scores_sum_to_one() {
        let passage = tokenize("The cat sat. The dog ran. The bird flew. The cat ran.");
        let scores = textrank_scores(&passage, 0.85, &toy_vectors()).unwrap();
        let sum: f64 = scores.iter().sum();
        assert!((sum - 1.0).abs() < 1e-8, "sum {sum}");
    }

    #[test]
    fn textrank_rejects_bad_inputs() {
        let passage = tokenize("The cat sat. The dog ran.");
        let wv = toy_vectors();
        assert!(textrank_scores(&tokenize(""), 0.85, &wv).is_err());
        assert!(textrank_scores(&passage, 1.0, &wv).is_err());
        assert!(textrank_scores(&passage, 0.0, &wv).is_err());
        assert!(textrank_reference(&passage, "p", 3, 0.85, &wv).is_err());
        assert!(textrank_reference(&passage, "p", 0, 0.85, &wv).is_err());
    }

    #[test]
    fn mead_single_sentence_returns_it() {
        let passage = tokenize("The cat sat on the mat.");
        let r = mead_reference(&passage, "p", 1, DEFAULT_MEAD_WEIGHTS).unwrap();
        assert_eq!(r.sentences.len(), 1);
        assert_eq!(r.sentences[0], passage.sentence_tokens(0));
    }

    #[test]
    fn mead_position_term_peaks_at_first_sentence() {
        let passage = tokenize("The cat sat. The dog ran. The bird flew.");
        let scores = mead_scores(&passage, (0.0, 1.0, 0.0)).unwrap();
        assert_eq!(scores, vec![1.0, 0.5, 1.0 / 3.0]);
    }

    #[test]
    fn random_reference_is_seeded_and_exhaustive_at_full_n() {
        let passage = tokenize("The cat sat. The dog ran. The bird flew.");
        let a = random_reference(&passage, "p", 2, 99).unwrap();
        let b = random_reference(&passage, "p", 2, 99).unwrap();
        assert_eq!(a, b);
        let full = random_reference(&passage, "p", 3, 5).unwrap();
        assert_eq!(full.sentences.len(), 3);
        assert_eq!(full.sentences[1], passage.sentence_tokens(1));
    }

    #[test]
    fn references_are_ordered_verbatim_subsets() {
        let passage = tokenize("The cat sat. The dog ran. The bird flew. The cat ran.");
        let wv = toy_vectors();
        let params = ReferenceParams {
            n_sentences: Some(2),
            ..ReferenceParams::default()
        };
        for kind in [
            ReferenceKind::Original,
            ReferenceKind::Textrank,
            ReferenceKind::Mead,
            ReferenceKind::Random,
        ] {
            let r = build_reference(kind, &passage, "p", &wv, &params).unwrap();
            let mut last = None;
            for sent in &r.sentences {
                let idx = (0..passage.sentence_count())
                    .find(|&i| passage.sentence_tokens(i) == sent.as_slice())
                    .unwrap_or_else(|| panic!("{kind}: sentence not from passage"));
                if let Some(prev) = last {
                    assert!(idx > prev, "{kind}: sentences out of order");
                }
                last = Some(idx);
            }
        }
    }

    #[test]
    fn default_n_is_a_fifth_rounded_up() {
        assert_eq!(default_n_sentences(1), 1);
        assert_eq!(default_n_sentences(5), 1);
        assert_eq!(default_n_sentences(10), 2);
        assert_eq!(default_n_sentences(14), 3);
        assert_eq!(default_n_sentences(20), 4);
    }

    #[test]
    fn select_top_breaks_ties_toward_lower_index() {
        assert_eq!(select_top(&[0.5, 0.5, 0.9], 2), vec![0, 2]);
        assert_eq!(select_top(&[0.1, 0.1, 0.1], 2), vec![0, 1]);
    }
}
