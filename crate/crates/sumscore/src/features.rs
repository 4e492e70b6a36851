//! Feature assembly: verbatim overlap metrics, semantic similarity
//! aggregates, document-vector cosines, lexical-chain statistics, and surface
//! characteristics, concatenated into one fixed-order named vector.

use serde::{Deserialize, Serialize};

use crate::corpus::Passage;
use crate::embeddings::{
    avg_embedding_model, fit_lda, fit_lsa, fit_tfidf, train_pvdm, BackgroundCorpus,
    DocVectorModel, WordVectors,
};
use crate::error::{Error, Result};
use crate::metrics::{
    bleu, doc_cosine, meteor_lite, rouge_l, rouge_n, sent_sim_aggregate, word_sim_aggregate,
    AggregationMode, SynonymLexicon,
};
use crate::reference::{Reference, ReferenceKind};
use crate::textproc::{stem, stopwords, TokenizedText};

pub const DEFAULT_LINK_THRESHOLD: f64 = 0.55;
pub const LONG_CHAIN_LENGTH: usize = 5;
pub const FEATURE_COUNT: usize = 33;

/// Fixed feature order; every extracted vector uses exactly these names.
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
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
    "word_sim_average",
    "word_sim_greedy",
    "word_sim_optimal",
    "sent_sim_average",
    "sent_sim_greedy",
    "sent_sim_optimal",
    "doc_cosine_tfidf",
    "doc_cosine_lsa",
    "doc_cosine_lda",
    "doc_cosine_pvdm",
    "doc_cosine_avg_embedding",
    "chain_count",
    "chain_density",
    "chain_mean_length",
    "chain_max_length",
    "chain_mean_span",
    "chain_max_span",
    "chain_long_count",
    "surface_length",
    "surface_compression",
    "surface_ttr",
    "surface_cefr",
];

/// One record's named feature values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub reference_kind: ReferenceKind,
}

/// A greedy lexical chain: content tokens linked by shared stem or embedding
/// similarity to the chain's representative (its first member).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexicalChain {
    pub members: Vec<(String, usize)>,
    pub span: usize,
}

/// Greedy lexical chaining over the non-stopword tokens of `text`. A token
/// joins the first chain whose representative shares its stem or has word
/// vector cosine at or above `link_threshold`; otherwise it opens a new chain.
pub fn extract_chains(
    text: &TokenizedText,
    wv: &WordVectors,
    link_threshold: f64,
) -> Vec<LexicalChain> {
    assert!(
        link_threshold > 0.0 && link_threshold < 1.0,
        "link threshold must lie in (0,1), got {link_threshold}"
    );
    let stop = stopwords();
    struct OpenChain {
        rep_stem: String,
        rep_vec: Option<Vec<f64>>,
        members: Vec<(String, usize)>,
    }
    let mut chains: Vec<OpenChain> = Vec::new();

    for sent_idx in 0..text.sentence_count() {
        for token in text.sentence_tokens(sent_idx) {
            if stop.contains(token.as_str()) {
                continue;
            }
            let token_stem = stem(token);
            let token_vec = wv.get(token);
            let target = chains.iter_mut().find(|chain| {
                if chain.rep_stem == token_stem {
                    return true;
                }
                match (&chain.rep_vec, token_vec) {
                    (Some(rep), Some(vec)) => {
                        crate::metrics::cosine(rep, vec) >= link_threshold
                    }
                    _ => false,
                }
            });
            match target {
                Some(chain) => chain.members.push((token.clone(), sent_idx)),
                None => chains.push(OpenChain {
                    rep_stem: token_stem,
                    rep_vec: token_vec.map(|v| v.to_vec()),
                    members: vec![(token.clone(), sent_idx)],
                }),
            }
        }
    }

    chains
        .into_iter()
        .map(|c| {
            let first = c.members.first().map(|m| m.1).unwrap_or(0);
            let last = c.members.last().map(|m| m.1).unwrap_or(0);
            LexicalChain {
                members: c.members,
                span: last - first + 1,
            }
        })
        .collect()
}

/// The seven chain statistics: count, count per word, mean and max length,
/// mean and max span, and the number of chains with at least
/// [`LONG_CHAIN_LENGTH`] members.
pub fn chain_features(chains: &[LexicalChain], text: &TokenizedText) -> [f64; 7] {
    if chains.is_empty() {
        return [0.0; 7];
    }
    let count = chains.len() as f64;
    let word_count = text.tokens.len() as f64;
    let density = if word_count > 0.0 { count / word_count } else { 0.0 };
    let lengths: Vec<f64> = chains.iter().map(|c| c.members.len() as f64).collect();
    let spans: Vec<f64> = chains.iter().map(|c| c.span as f64).collect();
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let max = |xs: &[f64]| xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let long = chains
        .iter()
        .filter(|c| c.members.len() >= LONG_CHAIN_LENGTH)
        .count() as f64;
    [
        count,
        density,
        mean(&lengths),
        max(&lengths),
        mean(&spans),
        max(&spans),
        long,
    ]
}

/// Surface features: summary length, compression ratio against the passage,
/// type/token ratio, and the passage's CEFR level as an ordinal.
pub fn surface_features(summary: &TokenizedText, passage: &Passage) -> Result<[f64; 4]> {
    if summary.is_empty() {
        return Err(Error::invalid("summary has no tokens"));
    }
    let length = summary.tokens.len() as f64;
    let passage_len = passage.tokenized().tokens.len() as f64;
    if passage_len == 0.0 {
        return Err(Error::invalid(format!(
            "passage {:?} has no tokens",
            passage.id
        )));
    }
    let unique: std::collections::HashSet<&String> = summary.tokens.iter().collect();
    let ttr = unique.len() as f64 / length;
    Ok([
        length,
        length / passage_len,
        ttr,
        passage.cefr_level.ordinal(),
    ])
}

/// The five fitted document-vector models used for the doc-cosine features.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DocVectorSuite {
    pub tfidf: DocVectorModel,
    pub lsa: DocVectorModel,
    pub lda: DocVectorModel,
    pub pvdm: DocVectorModel,
    pub avg_embedding: DocVectorModel,
}

impl DocVectorSuite {
    fn models(&self) -> [&DocVectorModel; 5] {
        [
            &self.tfidf,
            &self.lsa,
            &self.lda,
            &self.pvdm,
            &self.avg_embedding,
        ]
    }
}

/// Hyperparameters for fitting the document-vector suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DocVectorParams {
    pub lsa_k: usize,
    pub lda_k: usize,
    pub lda_alpha: f64,
    pub lda_beta: f64,
    pub lda_iters: usize,
    pub pvdm_dim: usize,
    pub pvdm_window: usize,
    pub pvdm_negatives: usize,
    pub pvdm_epochs: usize,
    pub seed: u64,
}

impl Default for DocVectorParams {
    fn default() -> Self {
        DocVectorParams {
            lsa_k: 16,
            lda_k: 8,
            lda_alpha: 0.5,
            lda_beta: 0.1,
            lda_iters: 120,
            pvdm_dim: 16,
            pvdm_window: 3,
            pvdm_negatives: 4,
            pvdm_epochs: 8,
            seed: 0x5eed,
        }
    }
}

/// Fits all five document-vector models on the background corpus.
pub fn fit_doc_vector_suite(
    corpus: &BackgroundCorpus,
    wv: &WordVectors,
    params: &DocVectorParams,
) -> Result<DocVectorSuite> {
    corpus.require_non_empty()?;
    let vocab: std::collections::BTreeSet<&String> = corpus
        .documents
        .iter()
        .flat_map(|d| d.tokens.iter())
        .collect();
    let lsa_k = params.lsa_k.min(vocab.len()).min(corpus.len()).max(1);
    if lsa_k != params.lsa_k {
        log::debug!("clamping lsa_k from {} to {lsa_k}", params.lsa_k);
    }
    Ok(DocVectorSuite {
        tfidf: fit_tfidf(corpus)?,
        lsa: fit_lsa(corpus, lsa_k)?,
        lda: fit_lda(
            corpus,
            params.lda_k,
            params.lda_alpha,
            params.lda_beta,
            params.lda_iters,
            params.seed,
        )?,
        pvdm: train_pvdm(
            corpus,
            params.pvdm_dim,
            params.pvdm_window,
            params.pvdm_negatives,
            params.pvdm_epochs,
            params.seed ^ 0x7d0c,
        )?,
        avg_embedding: avg_embedding_model(wv.clone()),
    })
}

/// Everything feature extraction needs for one record.
pub struct FeatureInputs<'a> {
    pub summary: &'a TokenizedText,
    pub passage: &'a Passage,
    pub reference: &'a Reference,
    pub suite: &'a DocVectorSuite,
    pub wv: &'a WordVectors,
    pub synonyms: &'a SynonymLexicon,
    pub link_threshold: f64,
}

/// Builds the 33-dimensional feature vector for one summary.
pub fn extract_feature_vector(inputs: &FeatureInputs) -> Result<FeatureVector> {
    let summary = inputs.summary;
    if summary.is_empty() {
        return Err(Error::invalid("summary has no tokens"));
    }
    let cand = &summary.tokens;
    let reference = inputs.reference;
    let ref_tokens = reference.all_tokens();
    if ref_tokens.is_empty() {
        return Err(Error::invalid("reference has no tokens"));
    }

    let mut values = Vec::with_capacity(FEATURE_COUNT);
    let r1 = rouge_n(cand, &ref_tokens, 1);
    let r2 = rouge_n(cand, &ref_tokens, 2);
    let rl = rouge_l(cand, &ref_tokens);
    for (p, r, f) in [r1, r2, rl] {
        values.push(p);
        values.push(r);
        values.push(f);
    }
    values.push(bleu(cand, &ref_tokens, 4));
    values.push(meteor_lite(cand, &ref_tokens, Some(inputs.synonyms)));

    for mode in [
        AggregationMode::Average,
        AggregationMode::Greedy,
        AggregationMode::Optimal,
    ] {
        values.push(word_sim_aggregate(cand, &ref_tokens, inputs.wv, mode));
    }
    let cand_sentences: Vec<Vec<String>> = (0..summary.sentence_count())
        .map(|i| summary.sentence_tokens(i).to_vec())
        .collect();
    for mode in [
        AggregationMode::Average,
        AggregationMode::Greedy,
        AggregationMode::Optimal,
    ] {
        values.push(sent_sim_aggregate(
            &cand_sentences,
            &reference.sentences,
            inputs.wv,
            mode,
        ));
    }
    for model in inputs.suite.models() {
        values.push(doc_cosine(cand, &ref_tokens, model));
    }

    let chains = extract_chains(summary, inputs.wv, inputs.link_threshold);
    values.extend(chain_features(&chains, summary));
    values.extend(surface_features(summary, inputs.passage)?);

    debug_assert_eq!(values.len(), FEATURE_COUNT);
    for (name, &value) in FEATURE_NAMES.iter().zip(&values) {
        if !value.is_finite() {
            return Err(Error::numeric(format!(
                "feature {name} is not finite ({value})"
            )));
        }
    }
    Ok(FeatureVector {
        names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        values,
        reference_kind: reference.kind,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CefrLevel;
    use crate::reference::original_reference;
    use crate::textproc::tokenize;

    fn orthogonal_vectors(words: &[&str]) -> WordVectors {
        let mut wv = WordVectors::new(words.len());
        for (i, w) in words.iter().enumerate() {
            let mut v = vec![0.0; words.len()];
            v[i] = 1.0;
            wv.insert(w.to_string(), v).unwrap();
        }
        wv
    }

    #[test]
    fn repeated_word_forms_one_chain() {
        let text = tokenize("Glaciers move. Glaciers carve. Glacier ice. The glacier.");
        let wv = WordVectors::new(4);
        let chains = extract_chains(&text, &wv, 0.55);
        let glacier_chain = chains
            .iter()
            .find(|c| c.members[0].0.starts_with("glacier"))
            .unwrap();
        assert_eq!(glacier_chain.members.len(), 4);
        assert_eq!(glacier_chain.span, 4);
    }

    #[test]
    fn orthogonal_words_stay_in_separate_chains() {
        let text = tokenize("Apple banana cherry date.");
        let wv = orthogonal_vectors(&["apple", "banana", "cherry", "date"]);
        let chains = extract_chains(&text, &wv, 0.55);
        assert_eq!(chains.len(), 4);
        assert!(chains.iter().all(|c| c.members.len() == 1));
    }

    #[test]
    fn similar_vectors_link_into_one_chain() {
        let mut wv = WordVectors::new(2);
        wv.insert("boat".into(), vec![1.0, 0.0]).unwrap();
        wv.insert("ship".into(), vec![0.9, 0.1]).unwrap();
        wv.insert("cloud".into(), vec![0.0, 1.0]).unwrap();
        let text = tokenize("Boat ship cloud.");
        let chains = extract_chains(&text, &wv, 0.55);
        assert_eq!(chains.len(), 2);
        assert_eq!(chains[0].members.len(), 2);
        assert_eq!(chains[0].members[1].0, "ship");
    }

    #[test]
    fn two_cluster_fixture_matches_hand_built_chain_table() {
        // Hand-run of the greedy procedure with threshold 0.55:
        //   harbor (new chain 1) / pier (cos 0.9 with harbor -> chain 1) /
        //   storm (new chain 2) / thunder (cos with harbor 0, with storm 0.95
        //   -> chain 2) / docks (stem differs, cos 0.85 -> chain 1) /
        //   lightning (cos 0.9 with storm -> chain 2).
        let mut wv = WordVectors::new(2);
        let entries = [
            ("harbor", vec![1.0, 0.0]),
            ("pier", vec![0.9, 0.1]),
            ("docks", vec![0.85, 0.05]),
            ("storm", vec![0.0, 1.0]),
            ("thunder", vec![0.05, 0.95]),
            ("lightning", vec![0.1, 0.9]),
        ];
        for (w, v) in entries {
            wv.insert(w.into(), v).unwrap();
        }
        let text = tokenize("Harbor pier storm. Thunder docks lightning.");
        let chains = extract_chains(&text, &wv, 0.55);
        assert_eq!(chains.len(), 2);
        let members: Vec<Vec<&str>> = chains
            .iter()
            .map(|c| c.members.iter().map(|(t, _)| t.as_str()).collect())
            .collect();
        assert_eq!(members[0], vec!["harbor", "pier", "docks"]);
        assert_eq!(members[1], vec!["storm", "thunder", "lightning"]);
        assert_eq!(chains[0].span, 2);
        assert_eq!(chains[1].span, 2);
    }

    #[test]
    fn chain_features_of_empty_are_zero() {
        let text = tokenize("The of and.");
        assert_eq!(chain_features(&[], &text), [0.0; 7]);
    }

    #[test]
    fn chain_features_match_single_chain_example() {
        let members: Vec<(String, usize)> = [
            ("sea", 0),
            ("ocean", 0),
            ("tide", 1),
            ("wave", 1),
            ("surf", 2),
            ("swell", 2),
        ]
        .iter()
        .map(|(t, s)| (t.to_string(), *s))
        .collect();
        let chain = LexicalChain { members, span: 3 };
        let text = tokenize("One two three four five six seven eight nine ten.");
        let feats = chain_features(&[chain], &text);
        assert_eq!(feats, [1.0, 0.1, 6.0, 6.0, 3.0, 3.0, 1.0]);
    }

    #[test]
    fn surface_features_match_hand_computation() {
        let passage = Passage {
            id: "p".into(),
            text: std::iter::repeat("word").take(499).collect::<Vec<_>>().join(" ") + " end.",
            cefr_level: CefrLevel::B1,
            word_limit: 50,
        };
        let summary_text = std::iter::repeat("token").take(49).collect::<Vec<_>>().join(" ") + " stop.";
        let summary = tokenize(&summary_text);
        let [len, compression, ttr, cefr] = surface_features(&summary, &passage).unwrap();
        assert_eq!(len, 50.0);
        assert!((compression - 0.1).abs() < 1e-12);
        assert!((ttr - 2.0 / 50.0).abs() < 1e-12);
        assert_eq!(cefr, 1.0);
    }

    #[test]
    fn identical_summary_has_unit_fscores_and_compression() {
        let text = "The glacier carves the valley. Meltwater feeds the river below.";
        let passage = Passage {
            id: "p".into(),
            text: text.into(),
            cefr_level: CefrLevel::B2,
            word_limit: 50,
        };
        let tokens = tokenize(text);
        let reference = original_reference(&tokens, "p").unwrap();
        let corpus = crate::corpus::builtin_background_corpus(30, 3);
        let wv = crate::corpus::synthetic_word_vectors(8, 3);
        let suite = fit_doc_vector_suite(
            &corpus,
            &wv,
            &DocVectorParams {
                lda_iters: 20,
                pvdm_epochs: 2,
                ..DocVectorParams::default()
            },
        )
        .unwrap();
        let fv = extract_feature_vector(&FeatureInputs {
            summary: &tokens,
            passage: &passage,
            reference: &reference,
            suite: &suite,
            wv: &wv,
            synonyms: &SynonymLexicon::default(),
            link_threshold: 0.55,
        })
        .unwrap();
        assert_eq!(fv.values.len(), FEATURE_COUNT);
        assert_eq!(fv.names.len(), FEATURE_COUNT);
        assert_eq!(fv.names, FEATURE_NAMES.to_vec());
        let get = |name: &str| fv.values[fv.names.iter().position(|n| n == name).unwrap()];
        for name in ["rouge1_f", "rouge2_f", "rougeL_f", "bleu"] {
            assert!(
                (get(name) - 1.0).abs() < 1e-9,
                "{name} = {} on identity",
                get(name)
            );
        }
        // The chunk penalty keeps meteor fractionally below 1 on short
        // identical texts: 0.5 * (1/m)^3 for m matched tokens.
        assert!(get("meteor") > 0.999, "meteor = {}", get("meteor"));
        assert!((get("surface_compression") - 1.0).abs() < 1e-12);
        assert_eq!(fv.reference_kind, ReferenceKind::Original);
    }

    #[test]
    fn non_finite_values_are_reported_by_feature_name() {
        let mut wv = WordVectors::new(2);
        wv.insert("glacier".into(), vec![f64::NAN, 0.0]).unwrap();
        let passage = Passage {
            id: "p".into(),
            text: "Glacier glacier glacier.".into(),
            cefr_level: CefrLevel::B1,
            word_limit: 50,
        };
        let tokens = passage.tokenized();
        let reference = original_reference(&tokens, "p").unwrap();
        let corpus = crate::corpus::builtin_background_corpus(10, 3);
        let suite = fit_doc_vector_suite(
            &corpus,
            &wv,
            &DocVectorParams {
                lda_iters: 5,
                pvdm_epochs: 1,
                ..DocVectorParams::default()
            },
        )
        .unwrap();
        let err = extract_feature_vector(&FeatureInputs {
            summary: &tokens,
            passage: &passage,
            reference: &reference,
            suite: &suite,
            wv: &wv,
            synonyms: &SynonymLexicon::default(),
            link_threshold: 0.55,
        })
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("word_sim") || msg.contains("doc_cosine"), "{msg}");
    }

    #[test]
    fn empty_summary_is_rejected() {
        let passage = Passage {
            id: "p".into(),
            text: "Some passage text here.".into(),
            cefr_level: CefrLevel::B1,
            word_limit: 50,
        };
        let summary = tokenize("");
        assert!(surface_features(&summary, &passage).is_err());
    }
}
