//! Feature behavior on the synthetic corpus: label separation for the
//! overlap and cosine features, and near-zero scores for alien text.

use sumscore::corpus::{
    builtin_background_corpus, generate_synthetic, synthetic_word_vectors, BinaryLabel,
    CefrLevel, Passage,
};
use sumscore::features::{
    extract_feature_vector, fit_doc_vector_suite, DocVectorParams, FeatureInputs,
    FEATURE_COUNT, FEATURE_NAMES,
};
use sumscore::metrics::SynonymLexicon;
use sumscore::reference::original_reference;
use sumscore::textproc::tokenize;

#[test]
fn verbatim_and_cosine_features_separate_good_from_bad() {
    let (passages, records) = generate_synthetic(4, 20, 31).unwrap();
    let wv = synthetic_word_vectors(16, 7);
    let corpus = builtin_background_corpus(80, 11);
    let suite = fit_doc_vector_suite(
        &corpus,
        &wv,
        &DocVectorParams {
            lda_iters: 60,
            pvdm_epochs: 4,
            ..DocVectorParams::default()
        },
    )
    .unwrap();
    let synonyms = SynonymLexicon::default();

    let mut good_sum = vec![0.0; FEATURE_COUNT];
    let mut bad_sum = vec![0.0; FEATURE_COUNT];
    let mut n_good = 0.0;
    let mut n_bad = 0.0;
    let mut off_topic_example = None;
    let mut good_example = None;

    for record in &records {
        let passage = passages.iter().find(|p| p.id == record.passage_id).unwrap();
        let passage_tokens = passage.tokenized();
        let reference = original_reference(&passage_tokens, &passage.id).unwrap();
        let summary = record.tokenized();
        let fv = extract_feature_vector(&FeatureInputs {
            summary: &summary,
            passage,
            reference: &reference,
            suite: &suite,
            wv: &wv,
            synonyms: &synonyms,
            link_threshold: 0.55,
        })
        .unwrap();
        assert_eq!(fv.names, FEATURE_NAMES.to_vec());
        match record.binary_label.unwrap() {
            BinaryLabel::Good => {
                for (s, v) in good_sum.iter_mut().zip(&fv.values) {
                    *s += v;
                }
                n_good += 1.0;
                if good_example.is_none() && record.passage_id == "p0" {
                    good_example = Some(fv.values.clone());
                }
            }
            BinaryLabel::Bad => {
                for (s, v) in bad_sum.iter_mut().zip(&fv.values) {
                    *s += v;
                }
                n_bad += 1.0;
                if off_topic_example.is_none() && record.id.contains("-bad-off-") {
                    off_topic_example = Some(fv.values.clone());
                }
            }
        }
    }
    assert_eq!(n_good, 40.0);
    assert_eq!(n_bad, 40.0);

    // The first 22 features are the verbatim metrics and the similarity /
    // document cosines; each should be higher for good summaries on average.
    for i in 0..22 {
        let good_mean = good_sum[i] / n_good;
        let bad_mean = bad_sum[i] / n_bad;
        assert!(
            good_mean > bad_mean,
            "{}: good mean {good_mean} <= bad mean {bad_mean}",
            FEATURE_NAMES[i]
        );
    }

    // Off-topic records sit well below good ones on the document cosines.
    let good = good_example.unwrap();
    let off = off_topic_example.unwrap();
    let idx = |name: &str| FEATURE_NAMES.iter().position(|&n| n == name).unwrap();
    for name in ["doc_cosine_tfidf", "doc_cosine_avg_embedding"] {
        assert!(
            off[idx(name)] < good[idx(name)],
            "{name}: off-topic {} vs good {}",
            off[idx(name)],
            good[idx(name)]
        );
    }
}

#[test]
fn alien_summary_scores_zero_on_overlap_and_projection_features() {
    let (passages, _) = generate_synthetic(1, 2, 5).unwrap();
    let passage: &Passage = &passages[0];
    let passage_tokens = passage.tokenized();
    let reference = original_reference(&passage_tokens, &passage.id).unwrap();
    let wv = synthetic_word_vectors(16, 7);
    let corpus = builtin_background_corpus(40, 11);
    let suite = fit_doc_vector_suite(
        &corpus,
        &wv,
        &DocVectorParams {
            lda_iters: 30,
            pvdm_epochs: 2,
            ..DocVectorParams::default()
        },
    )
    .unwrap();
    let summary = tokenize("Zmor blik fenwick parlu. Quur vanth zooble dask.");
    let fv = extract_feature_vector(&FeatureInputs {
        summary: &summary,
        passage,
        reference: &reference,
        suite: &suite,
        wv: &wv,
        synonyms: &SynonymLexicon::default(),
        link_threshold: 0.55,
    })
    .unwrap();
    let idx = |name: &str| FEATURE_NAMES.iter().position(|&n| n == name).unwrap();
    for name in [
        "rouge1_f",
        "rouge2_f",
        "rougeL_f",
        "meteor",
        "word_sim_average",
        "word_sim_greedy",
        "word_sim_optimal",
        "sent_sim_average",
        "doc_cosine_tfidf",
        "doc_cosine_lsa",
        "doc_cosine_avg_embedding",
    ] {
        assert_eq!(fv.values[idx(name)], 0.0, "{name} should be 0 for alien text");
    }
    // Epsilon smoothing keeps bleu nonzero but vanishing without overlap.
    assert!(fv.values[idx("bleu")] < 1e-9, "bleu = {}", fv.values[idx("bleu")]);
}

#[test]
fn feature_names_are_stable_across_records_and_references() {
    let (passages, records) = generate_synthetic(2, 4, 13).unwrap();
    let wv = synthetic_word_vectors(16, 7);
    let corpus = builtin_background_corpus(30, 11);
    let suite = fit_doc_vector_suite(
        &corpus,
        &wv,
        &DocVectorParams {
            lda_iters: 20,
            pvdm_epochs: 1,
            ..DocVectorParams::default()
        },
    )
    .unwrap();
    let mut names: Option<Vec<String>> = None;
    for record in &records {
        let passage = passages.iter().find(|p| p.id == record.passage_id).unwrap();
        let passage_tokens = passage.tokenized();
        let reference = original_reference(&passage_tokens, &passage.id).unwrap();
        let summary = record.tokenized();
        let fv = extract_feature_vector(&FeatureInputs {
            summary: &summary,
            passage,
            reference: &reference,
            suite: &suite,
            wv: &wv,
            synonyms: &SynonymLexicon::default(),
            link_threshold: 0.55,
        })
        .unwrap();
        match &names {
            None => names = Some(fv.names),
            Some(n) => assert_eq!(n, &fv.names),
        }
    }
    let _ = CefrLevel::B1;
}
