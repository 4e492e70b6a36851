//! Deterministic tokenization, sentence splitting, stemming, and n-gram
//! extraction. Every metric in the crate goes through this module, so the
//! rules are fixed and rule-based rather than statistical: the fixture
//! files under `tests/fixtures/` are the contract.

use std::collections::{HashMap, HashSet};
use std::ops::Range;
use std::sync::OnceLock;

use crate::error::{Error, Result};

const DEFAULT_ABBREVIATIONS: &str = include_str!("../assets/abbreviations.txt");
const DEFAULT_STOPWORDS: &str = include_str!("../assets/stopwords.txt");

/// Lowercased tokens plus sentence boundaries as token-index ranges.
///
/// Sentence ranges are contiguous, non-overlapping, and cover all tokens;
/// sentences that tokenize to nothing are dropped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedText {
    pub tokens: Vec<String>,
    pub sentences: Vec<Range<usize>>,
}

impl TokenizedText {
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn sentence_tokens(&self, i: usize) -> &[String] {
        &self.tokens[self.sentences[i].clone()]
    }

    pub fn sentence_count(&self) -> usize {
        self.sentences.len()
    }

    /// Sentence index of a token position.
    pub fn sentence_of(&self, token_idx: usize) -> usize {
        self.sentences
            .iter()
            .position(|r| r.contains(&token_idx))
            .expect("token index out of range")
    }
}

/// Sentence-aware tokenizer with a configurable abbreviation stop-list.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    abbreviations: HashSet<String>,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Tokenizer {
            abbreviations: parse_word_list(DEFAULT_ABBREVIATIONS),
        }
    }
}

fn parse_word_list(data: &str) -> HashSet<String> {
    data.lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect()
}

impl Tokenizer {
    /// One lowercase abbreviation per line, without the trailing period
    /// (internal periods allowed, e.g. `e.g`).
    pub fn from_abbreviations_file(path: &std::path::Path) -> Result<Self> {
        let data = std::fs::read_to_string(path)?;
        Ok(Tokenizer {
            abbreviations: parse_word_list(&data),
        })
    }

    /// Splits into sentences, then into lowercase tokens.
    ///
    /// Tokens are maximal runs of alphanumeric characters and apostrophes,
    /// with leading/trailing apostrophes trimmed; everything else is
    /// dropped. A sentence boundary is a `.`, `!` or `?` followed by
    /// whitespace, optionally one opening quote, and a capital letter --
    /// unless the word before a `.` is on the abbreviation list or is a
    /// single letter (an initial). End of text always closes a sentence.
    pub fn tokenize(&self, text: &str) -> TokenizedText {
        let chars: Vec<char> = text.chars().collect();
        let mut tokens = Vec::new();
        let mut sentences = Vec::new();
        let mut sentence_start = 0usize;

        let mut current = String::new();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if c.is_alphanumeric() || c == '\'' || c == '\u{2019}' {
                for lc in c.to_lowercase() {
                    current.push(if lc == '\u{2019}' { '\'' } else { lc });
                }
                i += 1;
                continue;
            }
            flush_token(&mut current, &mut tokens);
            if matches!(c, '.' | '!' | '?') && self.is_boundary(&chars, i) {
                if tokens.len() > sentence_start {
                    sentences.push(sentence_start..tokens.len());
                    sentence_start = tokens.len();
                }
            }
            i += 1;
        }
        flush_token(&mut current, &mut tokens);
        if tokens.len() > sentence_start {
            sentences.push(sentence_start..tokens.len());
        }

        TokenizedText { tokens, sentences }
    }

    fn is_boundary(&self, chars: &[char], punct: usize) -> bool {
        // Require whitespace then (optional opening quote then) a capital.
        let mut j = punct + 1;
        if j >= chars.len() || !chars[j].is_whitespace() {
            return false;
        }
        while j < chars.len() && chars[j].is_whitespace() {
            j += 1;
        }
        if j < chars.len() && matches!(chars[j], '"' | '\u{201c}' | '\u{2018}' | '(') {
            j += 1;
        }
        if j >= chars.len() || !chars[j].is_uppercase() {
            return false;
        }
        if chars[punct] != '.' {
            return true;
        }
        // Look back at the word immediately before the period.
        let mut k = punct;
        let mut word = String::new();
        while k > 0 {
            let p = chars[k - 1];
            if p.is_alphanumeric() || p == '.' {
                word.push(p);
                k -= 1;
            } else {
                break;
            }
        }
        if word.is_empty() {
            return true;
        }
        let word: String = word.chars().rev().flat_map(|c| c.to_lowercase()).collect();
        let alpha_len = word.chars().filter(|c| c.is_alphabetic()).count();
        if alpha_len == 1 {
            return false; // an initial, "J. Smith"
        }
        !self.abbreviations.contains(word.trim_matches('.'))
            && !self.abbreviations.contains(&word)
    }
}

fn flush_token(current: &mut String, tokens: &mut Vec<String>) {
    if !current.is_empty() {
        let trimmed = current.trim_matches('\'');
        if !trimmed.is_empty() {
            tokens.push(trimmed.to_string());
        }
        current.clear();
    }
}

fn default_tokenizer() -> &'static Tokenizer {
    static TOKENIZER: OnceLock<Tokenizer> = OnceLock::new();
    TOKENIZER.get_or_init(Tokenizer::default)
}

/// Tokenize with the built-in abbreviation list.
pub fn tokenize(text: &str) -> TokenizedText {
    default_tokenizer().tokenize(text)
}

/// The built-in stopword list, used by the lexical-chain extractor.
pub fn stopwords() -> &'static HashSet<String> {
    static STOPWORDS: OnceLock<HashSet<String>> = OnceLock::new();
    STOPWORDS.get_or_init(|| parse_word_list(DEFAULT_STOPWORDS))
}

/// Multiset of n-token windows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NGramCounts {
    pub n: usize,
    pub counts: HashMap<Vec<String>, usize>,
}

impl NGramCounts {
    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }
}

/// Sliding-window n-gram multiset over a flat token list.
pub fn ngrams(tokens: &[String], n: usize) -> NGramCounts {
    assert!(n >= 1, "n-gram order must be at least 1");
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    NGramCounts { n, counts }
}

/// Sentence-respecting variant: windows never cross sentence boundaries.
pub fn ngrams_by_sentence(text: &TokenizedText, n: usize) -> NGramCounts {
    assert!(n >= 1, "n-gram order must be at least 1");
    let mut counts = HashMap::new();
    for r in &text.sentences {
        let toks = &text.tokens[r.clone()];
        if toks.len() >= n {
            for w in toks.windows(n) {
                *counts.entry(w.to_vec()).or_insert(0) += 1;
            }
        }
    }
    NGramCounts { n, counts }
}

/// Unique-token ratio, in (0, 1]. Errors on an empty token list.
pub fn type_token_ratio(tokens: &[String]) -> Result<f64> {
    if tokens.is_empty() {
        return Err(Error::invalid("type_token_ratio of an empty token list"));
    }
    let unique: HashSet<&String> = tokens.iter().collect();
    Ok(unique.len() as f64 / tokens.len() as f64)
}

// ---------------------------------------------------------------------------
// Porter stemmer
// ---------------------------------------------------------------------------

/// Porter-stemmer output for a lowercase token.
///
/// Tokens shorter than three characters or containing anything outside
/// `a-z` (digits, apostrophes, non-ASCII) are returned unchanged.
pub fn stem(token: &str) -> String {
    if token.len() <= 2 || !token.bytes().all(|b| b.is_ascii_lowercase()) {
        return token.to_string();
    }
    let mut w: Vec<u8> = token.bytes().collect();
    step1a(&mut w);
    step1b(&mut w);
    step1c(&mut w);
    step2(&mut w);
    step3(&mut w);
    step4(&mut w);
    step5a(&mut w);
    step5b(&mut w);
    String::from_utf8(w).expect("stemmer operates on ascii")
}

fn is_cons(w: &[u8], i: usize) -> bool {
    match w[i] {
        b'a' | b'e' | b'i' | b'o' | b'u' => false,
        b'y' => i == 0 || !is_cons(w, i - 1),
        _ => true,
    }
}

/// Number of VC sequences in the [C](VC)^m[V] decomposition.
fn measure(w: &[u8]) -> usize {
    let n = w.len();
    let mut m = 0;
    let mut i = 0;
    while i < n && is_cons(w, i) {
        i += 1;
    }
    loop {
        while i < n && !is_cons(w, i) {
            i += 1;
        }
        if i >= n {
            break;
        }
        while i < n && is_cons(w, i) {
            i += 1;
        }
        m += 1;
        if i >= n {
            break;
        }
    }
    m
}

fn has_vowel(w: &[u8]) -> bool {
    (0..w.len()).any(|i| !is_cons(w, i))
}

fn ends_double_cons(w: &[u8]) -> bool {
    let n = w.len();
    n >= 2 && w[n - 1] == w[n - 2] && is_cons(w, n - 1)
}

/// *o: ends consonant-vowel-consonant where the final consonant is not
/// w, x or y.
fn ends_cvc(w: &[u8]) -> bool {
    let n = w.len();
    n >= 3
        && is_cons(w, n - 3)
        && !is_cons(w, n - 2)
        && is_cons(w, n - 1)
        && !matches!(w[n - 1], b'w' | b'x' | b'y')
}

fn ends_with(w: &[u8], suffix: &str) -> bool {
    w.len() > suffix.len() && w.ends_with(suffix.as_bytes())
}

fn stem_len(w: &[u8], suffix: &str) -> usize {
    w.len() - suffix.len()
}

/// Longest matching suffix wins within a step; if its measure condition
/// fails, no shorter suffix in the same step is tried.
fn apply_map(w: &mut Vec<u8>, rules: &[(&str, &str)], min_measure: usize) {
    let mut best: Option<&(&str, &str)> = None;
    for rule in rules {
        if ends_with(w, rule.0) && best.map_or(true, |b| rule.0.len() > b.0.len()) {
            best = Some(rule);
        }
    }
    if let Some((s1, s2)) = best {
        let keep = stem_len(w, s1);
        if measure(&w[..keep]) > min_measure - 1 {
            w.truncate(keep);
            w.extend_from_slice(s2.as_bytes());
        }
    }
}

fn step1a(w: &mut Vec<u8>) {
    if ends_with(w, "sses") {
        w.truncate(w.len() - 2);
    } else if ends_with(w, "ies") {
        w.truncate(w.len() - 2);
    } else if ends_with(w, "ss") {
        // keep
    } else if ends_with(w, "s") {
        w.pop();
    }
}

fn step1b(w: &mut Vec<u8>) {
    if ends_with(w, "eed") {
        if measure(&w[..stem_len(w, "eed")]) > 0 {
            w.pop();
        }
        return;
    }
    let removed = if ends_with(w, "ed") && has_vowel(&w[..stem_len(w, "ed")]) {
        w.truncate(w.len() - 2);
        true
    } else if ends_with(w, "ing") && has_vowel(&w[..stem_len(w, "ing")]) {
        w.truncate(w.len() - 3);
        true
    } else {
        false
    };
    if removed {
        if ends_with(w, "at") || ends_with(w, "bl") || ends_with(w, "iz") {
            w.push(b'e');
        } else if ends_double_cons(w) && !matches!(w[w.len() - 1], b'l' | b's' | b'z') {
            w.pop();
        } else if measure(w) == 1 && ends_cvc(w) {
            w.push(b'e');
        }
    }
}

fn step1c(w: &mut Vec<u8>) {
    if w.last() == Some(&b'y') && has_vowel(&w[..w.len() - 1]) {
        let n = w.len();
        w[n - 1] = b'i';
    }
}

fn step2(w: &mut Vec<u8>) {
    apply_map(
        w,
        &[
            ("ational", "ate"),
            ("tional", "tion"),
            ("enci", "ence"),
            ("anci", "ance"),
            ("izer", "ize"),
            ("abli", "able"),
            ("alli", "al"),
            ("entli", "ent"),
            ("eli", "e"),
            ("ousli", "ous"),
            ("ization", "ize"),
            ("ation", "ate"),
            ("ator", "ate"),
            ("alism", "al"),
            ("iveness", "ive"),
            ("fulness", "ful"),
            ("ousness", "ous"),
            ("aliti", "al"),
            ("iviti", "ive"),
            ("biliti", "ble"),
        ],
        1,
    );
}

fn step3(w: &mut Vec<u8>) {
    apply_map(
        w,
        &[
            ("icate", "ic"),
            ("ative", ""),
            ("alize", "al"),
            ("iciti", "ic"),
            ("ical", "ic"),
            ("ful", ""),
            ("ness", ""),
        ],
        1,
    );
}

fn step4(w: &mut Vec<u8>) {
    let rules: &[&str] = &[
        "al", "ance", "ence", "er", "ic", "able", "ible", "ant", "ement", "ment", "ent", "ion",
        "ou", "ism", "ate", "iti", "ous", "ive", "ize",
    ];
    let mut best: Option<&str> = None;
    for s in rules {
        if ends_with(w, s) && best.map_or(true, |b| s.len() > b.len()) {
            best = Some(s);
        }
    }
    if let Some(s) = best {
        let keep = stem_len(w, s);
        let ok = measure(&w[..keep]) > 1
            && (s != "ion" || matches!(w[keep - 1], b's' | b't'));
        if ok {
            w.truncate(keep);
        }
    }
}

fn step5a(w: &mut Vec<u8>) {
    if w.last() == Some(&b'e') {
        let stem = &w[..w.len() - 1];
        let m = measure(stem);
        if m > 1 || (m == 1 && !ends_cvc(stem)) {
            w.pop();
        }
    }
}

fn step5b(w: &mut Vec<u8>) {
    if w.last() == Some(&b'l') && ends_double_cons(w) && measure(w) > 1 {
        w.pop();
    }
}
