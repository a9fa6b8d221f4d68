//! Explicit linguistic features emitted as CSV for external classifiers:
//! lexical counts and diversity (TTR, RTTR, MTLD), stroke and frequency
//! statistics, POS-based densities, named-entity counts, and cohesion
//! counters from resource word lists.
//!
//! Every feature is deterministic given the text and the resource files.
//! Features whose resource (POS tags, entity annotations, word lists,
//! stroke table, frequency lexicon) is absent emit null — never a silent 0.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use crate::corpus::RawDocument;
use crate::error::{Error, Result};

pub const MTLD_THRESHOLD: f64 = 0.72;

/// A document with optional annotation layers.
#[derive(Debug, Clone)]
pub struct TaggedText {
    pub sentences: Vec<Vec<String>>,
    /// POS tags aligned 1:1 with the tokens of each sentence.
    pub pos: Option<Vec<Vec<String>>>,
    /// Named-entity surface forms per sentence (pre-annotated).
    pub entities: Option<Vec<Vec<String>>>,
}

impl TaggedText {
    pub fn new(sentences: Vec<Vec<String>>) -> Self {
        TaggedText {
            sentences,
            pos: None,
            entities: None,
        }
    }

    /// Build from a raw document plus its tokenized sentences, carrying the
    /// optional annotation layers along.
    pub fn from_raw(raw: &RawDocument, sentences: Vec<Vec<String>>) -> Result<Self> {
        if let Some(pos) = &raw.pos {
            let token_shape: Vec<usize> = sentences.iter().map(Vec::len).collect();
            let tag_shape: Vec<usize> = pos.iter().map(Vec::len).collect();
            if token_shape != tag_shape {
                return Err(Error::ShapeMismatch {
                    context: format!("pos tags of document {}", raw.id),
                    expected: format!("{token_shape:?}"),
                    actual: format!("{tag_shape:?}"),
                });
            }
        }
        Ok(TaggedText {
            sentences,
            pos: raw.pos.clone(),
            entities: raw.entities.clone(),
        })
    }

    pub fn tokens(&self) -> impl Iterator<Item = &String> {
        self.sentences.iter().flatten()
    }

    pub fn word_count(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }
}

/// Resource files backing the resource-dependent features.
#[derive(Debug, Clone, Default)]
pub struct FeatureResources {
    pub function_words: Option<BTreeSet<String>>,
    pub negative_words: Option<BTreeSet<String>>,
    pub pronouns: Option<BTreeSet<String>>,
    pub connectives_positive: Option<BTreeSet<String>>,
    pub connectives_negative: Option<BTreeSet<String>>,
    /// Character → stroke count.
    pub strokes: Option<BTreeMap<char, u32>>,
    /// Token → corpus frequency.
    pub word_freq: Option<BTreeMap<String, f64>>,
    /// Tokens with frequency below this count as difficult.
    pub difficult_freq_threshold: f64,
    /// Strokes at or below this count as low-stroke characters.
    pub low_stroke_max: u32,
    /// Strokes at or above this count as high-stroke characters.
    pub high_stroke_min: u32,
}

impl FeatureResources {
    pub fn empty() -> Self {
        FeatureResources {
            difficult_freq_threshold: 10.0,
            low_stroke_max: 10,
            high_stroke_min: 20,
            ..FeatureResources::default()
        }
    }

    /// Load whichever resource files exist in a directory:
    /// `function_words.txt`, `negative_words.txt`, `pronouns.txt`,
    /// `connectives_positive.txt`, `connectives_negative.txt` (one term per
    /// line), `strokes.tsv` (`char\tcount`), `word_freq.tsv`
    /// (`token\tcount`).
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut res = Self::empty();
        let read_list = |name: &str| -> Result<Option<BTreeSet<String>>> {
            let path = dir.join(name);
            if !path.exists() {
                return Ok(None);
            }
            let text = std::fs::read_to_string(path)?;
            Ok(Some(
                text.lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .map(str::to_string)
                    .collect(),
            ))
        };
        res.function_words = read_list("function_words.txt")?;
        res.negative_words = read_list("negative_words.txt")?;
        res.pronouns = read_list("pronouns.txt")?;
        res.connectives_positive = read_list("connectives_positive.txt")?;
        res.connectives_negative = read_list("connectives_negative.txt")?;

        let strokes_path = dir.join("strokes.tsv");
        if strokes_path.exists() {
            let text = std::fs::read_to_string(strokes_path)?;
            let mut map = BTreeMap::new();
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                let mut parts = line.split('\t');
                let ch = parts.next().and_then(|s| s.chars().next());
                let count = parts.next().and_then(|s| s.trim().parse::<u32>().ok());
                if let (Some(ch), Some(count)) = (ch, count) {
                    map.insert(ch, count);
                }
            }
            res.strokes = Some(map);
        }
        let freq_path = dir.join("word_freq.tsv");
        if freq_path.exists() {
            let text = std::fs::read_to_string(freq_path)?;
            let mut map = BTreeMap::new();
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                let mut parts = line.split('\t');
                let tok = parts.next().map(str::to_string);
                let count = parts.next().and_then(|s| s.trim().parse::<f64>().ok());
                if let (Some(tok), Some(count)) = (tok, count) {
                    map.insert(tok, count);
                }
            }
            res.word_freq = Some(map);
        }
        Ok(res)
    }
}

/// Named feature values in registry order; `None` marks a feature whose
/// resource was unavailable.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    values: Vec<(String, Option<f64>)>,
}

impl FeatureVector {
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.values.iter().map(|(n, _)| n.as_str())
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values
            .iter()
            .find(|(n, _)| n == name)
            .and_then(|(_, v)| *v)
    }

    pub fn entries(&self) -> &[(String, Option<f64>)] {
        &self.values
    }
}

/// Full feature registry, in emission order.
pub fn registry() -> Vec<&'static str> {
    vec![
        "word_count",
        "char_count",
        "ttr",
        "rttr",
        "mtld",
        "content_word_count",
        "content_word_density",
        "log_avg_word_freq",
        "difficult_word_count",
        "low_stroke_char_count",
        "high_stroke_char_count",
        "stroke_char_count",
        "avg_strokes_per_char",
        "two_char_word_count",
        "multi_char_word_count",
        "negative_word_count",
        "function_word_count",
        "function_word_density",
        "noun_pct",
        "noun_unique_pct",
        "noun_unique_count",
        "noun_avg_per_sentence",
        "noun_unique_avg_per_sentence",
        "verb_pct",
        "verb_unique_pct",
        "verb_unique_count",
        "verb_avg_per_sentence",
        "verb_unique_avg_per_sentence",
        "adj_pct",
        "adj_unique_pct",
        "adj_unique_count",
        "adj_avg_per_sentence",
        "adj_unique_avg_per_sentence",
        "entity_count",
        "entity_unique_count",
        "entity_pct",
        "entity_unique_pct",
        "entity_avg_per_sentence",
        "entity_unique_avg_per_sentence",
        "pronoun_count",
        "connective_count",
        "positive_connective_count",
        "negative_connective_count",
    ]
}

// ── lexical diversity ───────────────────────────────────────────────────

/// Type-token ratio: distinct / total.
pub fn ttr(tokens: &[String]) -> Result<f64> {
    if tokens.is_empty() {
        return Err(Error::TooFewTokens {
            feature: "ttr".into(),
            min: 1,
        });
    }
    let distinct: HashSet<&String> = tokens.iter().collect();
    Ok(distinct.len() as f64 / tokens.len() as f64)
}

/// Root type-token ratio: distinct / sqrt(total).
pub fn rttr(tokens: &[String]) -> Result<f64> {
    if tokens.is_empty() {
        return Err(Error::TooFewTokens {
            feature: "rttr".into(),
            min: 1,
        });
    }
    let distinct: HashSet<&String> = tokens.iter().collect();
    Ok(distinct.len() as f64 / (tokens.len() as f64).sqrt())
}

fn mtld_directional(tokens: &[String], threshold: f64) -> f64 {
    let mut factors = 0.0;
    let mut types: HashSet<&String> = HashSet::new();
    let mut count = 0usize;
    let mut running_ttr = 1.0;
    for tok in tokens {
        types.insert(tok);
        count += 1;
        running_ttr = types.len() as f64 / count as f64;
        if running_ttr <= threshold {
            factors += 1.0;
            types.clear();
            count = 0;
            running_ttr = 1.0;
        }
    }
    if count > 0 {
        factors += (1.0 - running_ttr) / (1.0 - threshold);
    }
    if factors == 0.0 {
        // the text never came close to a completed factor
        tokens.len() as f64
    } else {
        tokens.len() as f64 / factors
    }
}

/// Measure of textual lexical diversity: factor counting with partial
/// factors, averaged over the forward and backward passes.
pub fn mtld(tokens: &[String], threshold: f64) -> Result<f64> {
    if tokens.len() < 2 {
        return Err(Error::TooFewTokens {
            feature: "mtld".into(),
            min: 2,
        });
    }
    let forward = mtld_directional(tokens, threshold);
    let reversed: Vec<String> = tokens.iter().rev().cloned().collect();
    let backward = mtld_directional(&reversed, threshold);
    Ok(0.5 * (forward + backward))
}

// ── list matching ───────────────────────────────────────────────────────

/// Token sequences a list term may appear as: whitespace-split, the term as
/// one token, and character-by-character (so multi-character terms still
/// match per-character tokenization).
fn term_candidates(term: &str) -> Vec<Vec<String>> {
    let mut out: Vec<Vec<String>> = Vec::new();
    if term.contains(char::is_whitespace) {
        out.push(term.split_whitespace().map(str::to_string).collect());
    }
    out.push(vec![term.to_string()]);
    let chars: Vec<String> = term.chars().map(|c| c.to_string()).collect();
    if chars.len() > 1 && !term.contains(char::is_whitespace) {
        out.push(chars);
    }
    out.dedup();
    out
}

/// Non-overlapping occurrences of one term in a token sequence.
fn count_term(tokens: &[String], term: &str) -> usize {
    let mut total = 0;
    for cand in term_candidates(term) {
        if cand.is_empty() || cand.len() > tokens.len() {
            continue;
        }
        let mut i = 0;
        while i + cand.len() <= tokens.len() {
            if tokens[i..i + cand.len()] == cand[..] {
                total += 1;
                i += cand.len();
            } else {
                i += 1;
            }
        }
    }
    total
}

fn count_list(text: &TaggedText, list: &BTreeSet<String>) -> f64 {
    let mut total = 0usize;
    for sent in &text.sentences {
        for term in list {
            total += count_term(sent, term);
        }
    }
    total as f64
}

// ── tag-based counters ──────────────────────────────────────────────────

fn tag_matches(tag: &str, prefix: &str) -> bool {
    tag.to_lowercase().starts_with(prefix)
}

struct TagStats {
    count: usize,
    unique: usize,
    per_sentence: f64,
    unique_per_sentence: f64,
}

fn tag_stats(text: &TaggedText, pos: &[Vec<String>], prefix: &str) -> TagStats {
    let n_sent = text.sentences.len() as f64;
    let mut count = 0usize;
    let mut unique: HashSet<&String> = HashSet::new();
    let mut per_sent_sum = 0usize;
    let mut unique_per_sent_sum = 0usize;
    for (sent, tags) in text.sentences.iter().zip(pos) {
        let mut sent_unique: HashSet<&String> = HashSet::new();
        for (tok, tag) in sent.iter().zip(tags) {
            if tag_matches(tag, prefix) {
                count += 1;
                unique.insert(tok);
                sent_unique.insert(tok);
            }
        }
        per_sent_sum += sent.iter().zip(tags).filter(|(_, t)| tag_matches(t, prefix)).count();
        unique_per_sent_sum += sent_unique.len();
    }
    TagStats {
        count,
        unique: unique.len(),
        per_sentence: per_sent_sum as f64 / n_sent,
        unique_per_sentence: unique_per_sent_sum as f64 / n_sent,
    }
}

// ── extraction ──────────────────────────────────────────────────────────

/// Extract every feature in the registry (or the requested subset) for one
/// document.
pub fn extract_all(
    text: &TaggedText,
    resources: &FeatureResources,
    subset: Option<&[&str]>,
) -> Result<FeatureVector> {
    let tokens: Vec<String> = text.tokens().cloned().collect();
    if tokens.is_empty() {
        return Err(Error::EmptyDocument { id: None });
    }
    let word_count = tokens.len() as f64;
    let n_sent = text.sentences.len() as f64;
    let chars: Vec<char> = tokens.iter().flat_map(|t| t.chars()).collect();

    let mut out: Vec<(String, Option<f64>)> = Vec::new();
    let wanted: Option<BTreeSet<&str>> = subset.map(|s| s.iter().cloned().collect());
    let mut push = |name: &str, value: Option<f64>| {
        if wanted.as_ref().map_or(true, |w| w.contains(name)) {
            out.push((name.to_string(), value));
        }
    };

    push("word_count", Some(word_count));
    push("char_count", Some(chars.len() as f64));
    push("ttr", Some(ttr(&tokens)?));
    push("rttr", Some(rttr(&tokens)?));
    push(
        "mtld",
        if tokens.len() >= 2 {
            Some(mtld(&tokens, MTLD_THRESHOLD)?)
        } else {
            None
        },
    );

    // POS-based lexical features
    let content = text.pos.as_ref().map(|pos| {
        let mut c = 0usize;
        for (sent, tags) in text.sentences.iter().zip(pos) {
            for (_, tag) in sent.iter().zip(tags) {
                if ["n", "v", "a"].iter().any(|p| tag_matches(tag, p)) {
                    c += 1;
                }
            }
        }
        c as f64
    });
    push("content_word_count", content);
    push("content_word_density", content.map(|c| c / word_count));

    // frequency lexicon features
    let (log_avg, difficult) = match &resources.word_freq {
        Some(freq) => {
            let mut log_sum = 0.0;
            let mut hard = 0usize;
            for tok in &tokens {
                let f = freq.get(tok).copied().unwrap_or(1.0);
                log_sum += f.ln();
                if freq.get(tok).copied().unwrap_or(0.0) < resources.difficult_freq_threshold {
                    hard += 1;
                }
            }
            (Some(log_sum / word_count), Some(hard as f64))
        }
        None => (None, None),
    };
    push("log_avg_word_freq", log_avg);
    push("difficult_word_count", difficult);

    // stroke statistics
    match &resources.strokes {
        Some(table) => {
            let mut low = 0usize;
            let mut high = 0usize;
            let mut found = 0usize;
            let mut stroke_sum = 0u64;
            for c in &chars {
                if let Some(&s) = table.get(c) {
                    found += 1;
                    stroke_sum += u64::from(s);
                    if s <= resources.low_stroke_max {
                        low += 1;
                    }
                    if s >= resources.high_stroke_min {
                        high += 1;
                    }
                }
            }
            push("low_stroke_char_count", Some(low as f64));
            push("high_stroke_char_count", Some(high as f64));
            push("stroke_char_count", Some(found as f64));
            push(
                "avg_strokes_per_char",
                if found > 0 {
                    Some(stroke_sum as f64 / found as f64)
                } else {
                    None
                },
            );
        }
        None => {
            push("low_stroke_char_count", None);
            push("high_stroke_char_count", None);
            push("stroke_char_count", None);
            push("avg_strokes_per_char", None);
        }
    }

    push(
        "two_char_word_count",
        Some(tokens.iter().filter(|t| t.chars().count() == 2).count() as f64),
    );
    push(
        "multi_char_word_count",
        Some(tokens.iter().filter(|t| t.chars().count() >= 3).count() as f64),
    );
    push(
        "negative_word_count",
        resources.negative_words.as_ref().map(|l| count_list(text, l)),
    );
    let function_count = resources.function_words.as_ref().map(|l| count_list(text, l));
    push("function_word_count", function_count);
    push("function_word_density", function_count.map(|c| c / word_count));

    // POS class features
    for (cls, prefix) in [("noun", "n"), ("verb", "v"), ("adj", "a")] {
        let stats = text.pos.as_ref().map(|pos| tag_stats(text, pos, prefix));
        push(&format!("{cls}_pct"), stats.as_ref().map(|s| s.count as f64 / word_count));
        push(
            &format!("{cls}_unique_pct"),
            stats.as_ref().map(|s| s.unique as f64 / word_count),
        );
        push(
            &format!("{cls}_unique_count"),
            stats.as_ref().map(|s| s.unique as f64),
        );
        push(
            &format!("{cls}_avg_per_sentence"),
            stats.as_ref().map(|s| s.per_sentence),
        );
        push(
            &format!("{cls}_unique_avg_per_sentence"),
            stats.as_ref().map(|s| s.unique_per_sentence),
        );
    }

    // named entities (pre-annotated spans only)
    match &text.entities {
        Some(ents) => {
            let all: Vec<&String> = ents.iter().flatten().collect();
            let unique: HashSet<&String> = all.iter().cloned().collect();
            let unique_per_sent: f64 = ents
                .iter()
                .map(|e| e.iter().collect::<HashSet<_>>().len())
                .sum::<usize>() as f64
                / n_sent;
            push("entity_count", Some(all.len() as f64));
            push("entity_unique_count", Some(unique.len() as f64));
            push("entity_pct", Some(all.len() as f64 / word_count));
            push("entity_unique_pct", Some(unique.len() as f64 / word_count));
            push("entity_avg_per_sentence", Some(all.len() as f64 / n_sent));
            push("entity_unique_avg_per_sentence", Some(unique_per_sent));
        }
        None => {
            for name in [
                "entity_count",
                "entity_unique_count",
                "entity_pct",
                "entity_unique_pct",
                "entity_avg_per_sentence",
                "entity_unique_avg_per_sentence",
            ] {
                push(name, None);
            }
        }
    }

    push(
        "pronoun_count",
        resources.pronouns.as_ref().map(|l| count_list(text, l)),
    );
    let pos_conn = resources
        .connectives_positive
        .as_ref()
        .map(|l| count_list(text, l));
    let neg_conn = resources
        .connectives_negative
        .as_ref()
        .map(|l| count_list(text, l));
    let total_conn = match (pos_conn, neg_conn) {
        (None, None) => None,
        (a, b) => Some(a.unwrap_or(0.0) + b.unwrap_or(0.0)),
    };
    push("connective_count", total_conn);
    push("positive_connective_count", pos_conn);
    push("negative_connective_count", neg_conn);

    Ok(FeatureVector { values: out })
}

/// Write one CSV row per document: `id`, `grade`, then the registry columns
/// (null features become empty cells).
pub fn write_features_csv(
    path: &Path,
    rows: &[(String, usize, FeatureVector)],
    names: &[&str],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string(), "grade".to_string()];
    header.extend(names.iter().map(|n| n.to_string()));
    w.write_record(&header)?;
    for (id, grade, features) in rows {
        let mut record = vec![id.clone(), grade.to_string()];
        for name in names {
            let cell = features
                .entries()
                .iter()
                .find(|(n, _)| n == name)
                .and_then(|(_, v)| *v)
                .map(|v| format!("{v}"))
                .unwrap_or_default();
            record.push(cell);
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}
