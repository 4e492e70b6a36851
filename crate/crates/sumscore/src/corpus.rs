//! Data model, JSON-lines dataset I/O, cross-validation fold construction,
//! and the synthetic corpus generator used for desk-scale verification.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::{BackgroundCorpus, WordVectors};
use crate::error::{Error, Result};
use crate::textproc::{tokenize, TokenizedText};

/// CEFR difficulty band of a reading passage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CefrLevel {
    B1,
    B2,
    C1,
}

impl CefrLevel {
    /// Ordinal encoding used as a surface feature.
    pub fn ordinal(&self) -> f64 {
        match self {
            CefrLevel::B1 => 1.0,
            CefrLevel::B2 => 2.0,
            CefrLevel::C1 => 3.0,
        }
    }
}

/// Binary quality label of a summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinaryLabel {
    Bad,
    Good,
}

impl std::fmt::Display for BinaryLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BinaryLabel::Bad => "bad",
            BinaryLabel::Good => "good",
        })
    }
}

/// Proficiency band of the learner who wrote a summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LearnerLevel {
    B1,
    B2,
    #[serde(rename = "C1-C2")]
    C1C2,
}

/// A reading passage learners summarized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Passage {
    pub id: String,
    pub text: String,
    pub cefr_level: CefrLevel,
    pub word_limit: usize,
}

impl Passage {
    pub fn tokenized(&self) -> TokenizedText {
        tokenize(&self.text)
    }
}

/// One learner-written summary with its annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummaryRecord {
    pub id: String,
    pub passage_id: String,
    pub text: String,
    #[serde(default)]
    pub annotator_scores: Vec<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binary_label: Option<BinaryLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learner_level: Option<LearnerLevel>,
}

impl SummaryRecord {
    pub fn tokenized(&self) -> TokenizedText {
        tokenize(&self.text)
    }

    /// Supervision targets derived from the annotations.
    pub fn gold_target(&self) -> GoldTarget {
        let regression_score = if self.annotator_scores.is_empty() {
            None
        } else {
            let sum: f64 = self.annotator_scores.iter().map(|&s| s as f64).sum();
            Some(sum / self.annotator_scores.len() as f64)
        };
        GoldTarget {
            regression_score,
            class_label: self.binary_label,
        }
    }
}

/// Ground truth for one record: mean annotator score and/or a class label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoldTarget {
    pub regression_score: Option<f64>,
    pub class_label: Option<BinaryLabel>,
}

fn validate_passage(p: &Passage) -> Result<()> {
    if p.text.trim().is_empty() {
        return Err(Error::Integrity(format!("passage {:?} has empty text", p.id)));
    }
    if p.word_limit == 0 {
        return Err(Error::Integrity(format!(
            "passage {:?} has word_limit 0",
            p.id
        )));
    }
    Ok(())
}

fn validate_record(r: &SummaryRecord) -> Result<()> {
    if r.annotator_scores.len() > 3 {
        return Err(Error::Integrity(format!(
            "record {:?} has {} annotator scores (at most 3 allowed)",
            r.id,
            r.annotator_scores.len()
        )));
    }
    if let Some(&bad) = r.annotator_scores.iter().find(|&&s| s > 5) {
        return Err(Error::Integrity(format!(
            "record {:?} has annotator score {bad} outside 0..=5",
            r.id
        )));
    }
    if r.annotator_scores.is_empty() && r.binary_label.is_none() {
        return Err(Error::Integrity(format!(
            "record {:?} has neither annotator scores nor a binary label",
            r.id
        )));
    }
    Ok(())
}

fn load_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let content = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item: T = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

fn save_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for item in items {
        let line = serde_json::to_string(item)
            .map_err(|e| Error::invalid(format!("serialization failed: {e}")))?;
        writeln!(file, "{line}")?;
    }
    file.flush()?;
    Ok(())
}

/// Loads `passages.jsonl` and `summaries.jsonl`, validating referential
/// integrity and the annotation invariants.
pub fn load_dataset(
    passages_path: impl AsRef<Path>,
    summaries_path: impl AsRef<Path>,
) -> Result<(Vec<Passage>, Vec<SummaryRecord>)> {
    let passages: Vec<Passage> = load_jsonl(passages_path.as_ref())?;
    let records: Vec<SummaryRecord> = load_jsonl(summaries_path.as_ref())?;

    let mut ids = BTreeSet::new();
    for p in &passages {
        validate_passage(p)?;
        if !ids.insert(p.id.as_str()) {
            return Err(Error::Integrity(format!("duplicate passage id {:?}", p.id)));
        }
    }
    let mut record_ids = BTreeSet::new();
    for r in &records {
        validate_record(r)?;
        if !record_ids.insert(r.id.as_str()) {
            return Err(Error::Integrity(format!("duplicate record id {:?}", r.id)));
        }
        if !ids.contains(r.passage_id.as_str()) {
            return Err(Error::Integrity(format!(
                "record {:?} references unknown passage {:?}",
                r.id, r.passage_id
            )));
        }
    }
    Ok((passages, records))
}

/// Writes a dataset back to the JSON-lines files the loader reads.
pub fn save_dataset(
    passages: &[Passage],
    records: &[SummaryRecord],
    passages_path: impl AsRef<Path>,
    summaries_path: impl AsRef<Path>,
) -> Result<()> {
    save_jsonl(passages_path.as_ref(), passages)?;
    save_jsonl(summaries_path.as_ref(), records)
}

pub const N_FOLDS: usize = 5;

/// Train/dev/test record ids for one cross-validation fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub train_ids: Vec<String>,
    pub dev_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

/// The full 5-fold plan: a partition of record ids plus the per-fold splits
/// derived from it (test = partition i, dev = partition i+1, train = rest).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub fold_assignments: BTreeMap<String, usize>,
    pub folds: Vec<FoldSplit>,
}

/// The stratification band of a record: the rounded mean score when scores
/// exist, otherwise the class label.
pub fn score_band(record: &SummaryRecord) -> String {
    let target = record.gold_target();
    match (target.regression_score, target.class_label) {
        (Some(score), _) => format!("{}", score.round() as i64),
        (None, Some(label)) => label.to_string(),
        (None, None) => "unlabeled".to_string(),
    }
}

/// Builds the 5-fold plan, stratified by (passage id, score band).
pub fn make_folds(records: &[SummaryRecord], seed: u64) -> Result<FoldPlan> {
    if records.len() < N_FOLDS {
        return Err(Error::invalid(format!(
            "cross-validation needs at least {N_FOLDS} records, got {}",
            records.len()
        )));
    }
    let mut strata: BTreeMap<(String, String), Vec<&str>> = BTreeMap::new();
    for r in records {
        strata
            .entry((r.passage_id.clone(), score_band(r)))
            .or_default()
            .push(&r.id);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments: BTreeMap<String, usize> = BTreeMap::new();
    // A single cursor rotates across strata so partition sizes stay within
    // one record of each other globally, not just within each stratum.
    let mut cursor = 0usize;
    for ids in strata.values_mut() {
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        for id in ids.iter() {
            assignments.insert((*id).to_string(), cursor % N_FOLDS);
            cursor += 1;
        }
    }

    let mut folds = Vec::with_capacity(N_FOLDS);
    for fold in 0..N_FOLDS {
        let test_part = fold;
        let dev_part = (fold + 1) % N_FOLDS;
        let mut split = FoldSplit {
            train_ids: Vec::new(),
            dev_ids: Vec::new(),
            test_ids: Vec::new(),
        };
        for (id, &part) in &assignments {
            if part == test_part {
                split.test_ids.push(id.clone());
            } else if part == dev_part {
                split.dev_ids.push(id.clone());
            } else {
                split.train_ids.push(id.clone());
            }
        }
        folds.push(split);
    }
    Ok(FoldPlan {
        fold_assignments: assignments,
        folds,
    })
}

// ---------------------------------------------------------------------------
// Synthetic corpus

struct TopicPool {
    nouns: &'static [&'static str],
    verbs: &'static [&'static str],
    mods: &'static [&'static str],
}

impl TopicPool {
    fn words(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.nouns
            .iter()
            .chain(self.verbs)
            .chain(self.mods)
            .copied()
    }
}

static TOPICS: &[TopicPool] = &[
    TopicPool {
        nouns: &[
            "glacier", "ice", "moraine", "crevasse", "summit", "valley", "snowfield",
            "meltwater", "ridge", "slope", "firn", "frost",
        ],
        verbs: &["carves", "grinds", "advances", "retreats", "cracks", "thaws", "freezes"],
        mods: &["frozen", "alpine", "slow", "deep", "white", "cold"],
    },
    TopicPool {
        nouns: &[
            "river", "current", "delta", "bank", "sediment", "rapids", "bend",
            "floodplain", "stream", "gravel", "estuary", "channel",
        ],
        verbs: &["flows", "erodes", "meanders", "deposits", "floods", "drains", "curls"],
        mods: &["muddy", "wide", "shallow", "swift", "lower", "upper"],
    },
    TopicPool {
        nouns: &[
            "volcano", "magma", "lava", "crater", "eruption", "vent", "ash", "basalt",
            "caldera", "plume", "tremor", "cone",
        ],
        verbs: &["erupts", "vents", "spews", "builds", "collapses", "rumbles", "hardens"],
        mods: &["molten", "volcanic", "dormant", "active", "fiery", "explosive"],
    },
    TopicPool {
        nouns: &[
            "bee", "hive", "nectar", "pollen", "queen", "drone", "comb", "swarm",
            "forager", "larva", "beekeeper", "apiary",
        ],
        verbs: &["pollinates", "buzzes", "gathers", "dances", "stores", "guards", "hatches"],
        mods: &["busy", "golden", "waxen", "sweet", "humming", "royal"],
    },
    TopicPool {
        nouns: &[
            "desert", "dune", "oasis", "cactus", "sandstorm", "mirage", "camel", "scrub",
            "mesa", "arroyo", "salt", "basin",
        ],
        verbs: &["shifts", "scorches", "parches", "blows", "buries", "shimmers", "survives"],
        mods: &["arid", "dry", "vast", "barren", "hot", "sandy"],
    },
    TopicPool {
        nouns: &[
            "reef", "coral", "lagoon", "polyp", "anemone", "plankton", "shoal", "tide",
            "algae", "urchin", "seagrass", "atoll",
        ],
        verbs: &["bleaches", "shelters", "spawns", "filters", "sways", "grazes", "regrows"],
        mods: &["tropical", "turquoise", "fragile", "vivid", "submerged", "calcified"],
    },
    TopicPool {
        nouns: &[
            "forest", "canopy", "undergrowth", "sapling", "fern", "lichen", "trunk",
            "root", "grove", "thicket", "humus", "seedling",
        ],
        verbs: &["sprouts", "decays", "shades", "spreads", "towers", "rustles", "regenerates"],
        mods: &["ancient", "dense", "mossy", "tall", "green", "shaded"],
    },
    TopicPool {
        nouns: &[
            "storm", "thunder", "lightning", "wind", "hail", "downpour", "front", "gust",
            "cloudburst", "squall", "barometer", "forecast",
        ],
        verbs: &["brews", "strikes", "lashes", "drenches", "howls", "passes", "clears"],
        mods: &["violent", "heavy", "dark", "sudden", "electric", "fierce"],
    },
    TopicPool {
        nouns: &[
            "telescope", "galaxy", "nebula", "orbit", "comet", "meteor", "eclipse",
            "quasar", "constellation", "observatory", "starlight", "horizon",
        ],
        verbs: &["observes", "charts", "glimmers", "drifts", "aligns", "rotates", "dims"],
        mods: &["distant", "celestial", "faint", "luminous", "stellar", "infinite"],
    },
    TopicPool {
        nouns: &[
            "railway", "locomotive", "carriage", "platform", "signal", "track",
            "junction", "timetable", "freight", "conductor", "viaduct", "depot",
        ],
        verbs: &["departs", "arrives", "couples", "brakes", "hauls", "whistles", "shunts"],
        mods: &["punctual", "iron", "rusty", "narrow", "diesel", "crowded"],
    },
    TopicPool {
        nouns: &[
            "bakery", "dough", "yeast", "oven", "crust", "loaf", "flour", "crumb",
            "baker", "batch", "glaze", "rye",
        ],
        verbs: &["kneads", "rises", "bakes", "ferments", "browns", "cools", "slices"],
        mods: &["warm", "crisp", "fresh", "soft", "fragrant", "sour"],
    },
    TopicPool {
        nouns: &[
            "harbor", "pier", "lighthouse", "ferry", "mooring", "buoy", "cargo", "quay",
            "anchor", "breakwater", "tugboat", "wharf",
        ],
        verbs: &["docks", "sails", "unloads", "moors", "bobs", "steers", "berths"],
        mods: &["coastal", "foggy", "salty", "sheltered", "misty", "tidal"],
    },
];

static FUNCTION_WORDS: &[&str] = &[
    "the", "a", "of", "in", "on", "near", "and", "then", "while", "its", "their",
    "through", "under", "over", "beyond", "with",
];

#[derive(Clone, Copy)]
enum Slot {
    F(&'static str),
    N,
    V,
    M,
}

use Slot::{F, M, N, V};

static TEMPLATES: &[&[Slot]] = &[
    &[F("the"), M, N, V, F("the"), N, F("near"), F("the"), M, N],
    &[F("a"), N, V, F("and"), F("the"), M, N, V, F("beyond"), F("the"), N],
    &[F("the"), N, F("of"), F("the"), N, V, F("through"), F("the"), M, N],
    &[F("its"), M, N, V, F("while"), F("the"), N, V, F("under"), F("the"), N],
    &[F("the"), N, V, F("the"), N, F("and"), F("then"), F("the"), N, V],
    &[F("their"), N, V, F("over"), F("the"), M, N, F("in"), F("the"), N],
    &[F("a"), M, N, V, F("near"), F("the"), N, F("and"), F("the"), N, V],
    &[F("the"), M, N, F("and"), F("the"), N, V, F("in"), F("the"), M, N],
    &[F("the"), N, V, F("through"), F("the"), M, N],
    &[F("the"), M, N, V, F("the"), N, F("while"), F("their"), N, V, F("the"), N],
];

fn pick<'a>(rng: &mut ChaCha8Rng, pool: &[&'a str]) -> &'a str {
    pool[rng.random_range(0..pool.len())]
}

fn make_sentence(topic: &TopicPool, rng: &mut ChaCha8Rng) -> Vec<String> {
    let template = TEMPLATES[rng.random_range(0..TEMPLATES.len())];
    template
        .iter()
        .map(|slot| {
            match slot {
                F(w) => *w,
                N => pick(rng, topic.nouns),
                V => pick(rng, topic.verbs),
                M => pick(rng, topic.mods),
            }
            .to_string()
        })
        .collect()
}

/// Light paraphrase: some content words swap for same-category pool words,
/// some function words drop.
fn paraphrase(sentence: &[String], topic: &TopicPool, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut out = Vec::with_capacity(sentence.len());
    for tok in sentence {
        let t = tok.as_str();
        if FUNCTION_WORDS.contains(&t) {
            if rng.random::<f64>() < 0.1 && out.len() > 1 {
                continue;
            }
            out.push(tok.clone());
        } else if rng.random::<f64>() < 0.25 {
            let replacement = if topic.nouns.contains(&t) {
                pick(rng, topic.nouns)
            } else if topic.verbs.contains(&t) {
                pick(rng, topic.verbs)
            } else if topic.mods.contains(&t) {
                pick(rng, topic.mods)
            } else {
                t
            };
            out.push(replacement.to_string());
        } else {
            out.push(tok.clone());
        }
    }
    out
}

fn render(sentences: &[Vec<String>]) -> String {
    let mut parts = Vec::with_capacity(sentences.len());
    for s in sentences {
        let mut sent = s.join(" ");
        if let Some(first) = sent.get_mut(0..1) {
            let upper = first.to_uppercase();
            sent.replace_range(0..1, &upper);
        }
        sent.push('.');
        parts.push(sent);
    }
    parts.join(" ")
}

const GOOD_SCORE_PATTERNS: [[u8; 3]; 2] = [[5, 5, 4], [4, 4, 5]];
const BAD_SCORE_PATTERNS: [[u8; 3]; 2] = [[0, 1, 0], [1, 1, 0]];
const LEARNER_LEVELS: [LearnerLevel; 3] =
    [LearnerLevel::B1, LearnerLevel::B2, LearnerLevel::C1C2];

/// Generates a labeled synthetic corpus. Per passage, half the records are
/// "good" (spread, lightly paraphrased key sentences), a quarter are
/// off-topic mixes, and a quarter are short verbatim local copies; scores and
/// labels follow from the construction.
pub fn generate_synthetic(
    n_passages: usize,
    n_per_passage: usize,
    seed: u64,
) -> Result<(Vec<Passage>, Vec<SummaryRecord>)> {
    if n_passages == 0 {
        return Err(Error::invalid("need at least one synthetic passage"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut passages = Vec::with_capacity(n_passages);
    let mut records = Vec::new();
    let cefr_cycle = [CefrLevel::B1, CefrLevel::B2, CefrLevel::C1];
    let limit_cycle = [50usize, 100, 120];

    for p in 0..n_passages {
        let topic = &TOPICS[p % TOPICS.len()];
        let off_topic = &TOPICS[(p + 1) % TOPICS.len()];
        let n_sents: usize = rng.random_range(10..=14);
        let sentences: Vec<Vec<String>> =
            (0..n_sents).map(|_| make_sentence(topic, &mut rng)).collect();
        let passage_id = format!("p{p}");
        passages.push(Passage {
            id: passage_id.clone(),
            text: render(&sentences),
            cefr_level: cefr_cycle[p % 3],
            word_limit: limit_cycle[p % 3],
        });

        let n_good = n_per_passage / 2 + n_per_passage % 2;
        let n_bad = n_per_passage - n_good;

        for g in 0..n_good {
            let k = n_sents.div_ceil(2);
            let mut idx: Vec<usize> = (0..n_sents).collect();
            idx.shuffle(&mut rng);
            let mut chosen: Vec<usize> = idx[..k].to_vec();
            chosen.sort_unstable();
            let body: Vec<Vec<String>> = chosen
                .iter()
                .map(|&i| paraphrase(&sentences[i], topic, &mut rng))
                .collect();
            records.push(SummaryRecord {
                id: format!("{passage_id}-good-{g}"),
                passage_id: passage_id.clone(),
                text: render(&body),
                annotator_scores: GOOD_SCORE_PATTERNS[g % 2].to_vec(),
                binary_label: Some(BinaryLabel::Good),
                learner_level: Some(LEARNER_LEVELS[g % 3]),
            });
        }

        for b in 0..n_bad {
            let (id, text) = if b % 2 == 0 {
                // Off-topic mix: a little passage material drowned in
                // sentences about something else entirely.
                let n_on = rng.random_range(1..=2);
                let n_off = 4;
                let mut body: Vec<Vec<String>> = Vec::new();
                for _ in 0..n_on {
                    let i = rng.random_range(0..n_sents);
                    body.push(paraphrase(&sentences[i], topic, &mut rng));
                }
                for _ in 0..n_off {
                    body.push(make_sentence(off_topic, &mut rng));
                }
                body.shuffle(&mut rng);
                (format!("{passage_id}-bad-off-{}", b / 2), render(&body))
            } else {
                // Local copy: two adjacent sentences verbatim and nothing else.
                let start = rng.random_range(0..n_sents - 1);
                let body = vec![sentences[start].clone(), sentences[start + 1].clone()];
                (format!("{passage_id}-bad-local-{}", b / 2), render(&body))
            };
            records.push(SummaryRecord {
                id,
                passage_id: passage_id.clone(),
                text,
                annotator_scores: BAD_SCORE_PATTERNS[b % 2].to_vec(),
                binary_label: Some(BinaryLabel::Bad),
                learner_level: Some(LEARNER_LEVELS[b % 3]),
            });
        }
    }
    Ok((passages, records))
}

/// Deterministic word vectors covering the entire synthetic vocabulary:
/// each topic's words cluster around a topic direction, function words stay
/// near the origin.
pub fn synthetic_word_vectors(dim: usize, seed: u64) -> WordVectors {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut wv = WordVectors::new(dim);
    let unit = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let v: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        v.iter().map(|x| x / norm).collect()
    };
    for topic in TOPICS {
        let centroid = unit(&mut rng);
        for word in topic.words() {
            let vec: Vec<f64> = centroid
                .iter()
                .map(|c| c + (rng.random::<f64>() - 0.5) * 0.3)
                .collect();
            wv.insert(word.to_string(), vec).expect("fixed dim");
        }
    }
    for word in FUNCTION_WORDS {
        let vec: Vec<f64> = (0..dim).map(|_| (rng.random::<f64>() - 0.5) * 0.1).collect();
        wv.insert(word.to_string(), vec).expect("fixed dim");
    }
    wv
}

/// Deterministic stand-in for a real background corpus: short documents drawn
/// from the synthetic topic pools.
pub fn builtin_background_corpus(n_docs: usize, seed: u64) -> BackgroundCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let documents: Vec<TokenizedText> = (0..n_docs)
        .map(|_| {
            let topic = &TOPICS[rng.random_range(0..TOPICS.len())];
            let n_sents = rng.random_range(3..=6);
            let sentences: Vec<Vec<String>> =
                (0..n_sents).map(|_| make_sentence(topic, &mut rng)).collect();
            tokenize(&render(&sentences))
        })
        .collect();
    BackgroundCorpus::new(documents)
}
