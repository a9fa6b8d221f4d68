//! Graded-document corpus handling: sentence splitting, tokenization,
//! vocabularies, fixed-shape encoding, and stratified train/test splits.
//!
//! Corpus files are JSONL, one document per line, either
//! `{"id", "grade", "text"}` or pre-tokenized
//! `{"id", "grade", "sentences": [[tok, ...], ...]}`. Grades are 1-based
//! consecutive integers; the loader infers the level count `Y` from the
//! maximum grade and requires every level `1..=Y` to be present.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_for;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Default sentence delimiters: CJK and ASCII full stops, exclamation and
/// question marks.
pub const DEFAULT_DELIMITERS: &str = "。！？.!?";

/// Closing quotes/brackets absorbed into the sentence that ends before them.
const TRAILING_QUOTES: &str = "」』”’\"'）)】》〉»";

/// How raw text is turned into tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Tokenizer {
    /// Whitespace-separated words; CJK characters become single-character
    /// tokens even inside an unspaced run.
    #[default]
    Auto,
    /// Split on whitespace only.
    Whitespace,
    /// Every non-whitespace character is a token.
    Char,
}

/// A document as ingested: id, grade, and either raw text or pre-tokenized
/// sentences.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawDocument {
    pub id: String,
    pub grade: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentences: Option<Vec<Vec<String>>>,
    /// Optional POS tags aligned with `sentences` (used by the features
    /// module; ignored by the models).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos: Option<Vec<Vec<String>>>,
    /// Optional named-entity surface forms per sentence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entities: Option<Vec<Vec<String>>>,
}

impl RawDocument {
    pub fn from_text(id: &str, grade: usize, text: &str) -> Self {
        RawDocument {
            id: id.to_string(),
            grade,
            text: Some(text.to_string()),
            sentences: None,
            pos: None,
            entities: None,
        }
    }

    pub fn from_sentences(id: &str, grade: usize, sentences: Vec<Vec<String>>) -> Self {
        RawDocument {
            id: id.to_string(),
            grade,
            text: None,
            sentences: None,
            pos: None,
            entities: None,
        }
        .with_sentences(sentences)
    }

    fn with_sentences(mut self, sentences: Vec<Vec<String>>) -> Self {
        self.sentences = Some(sentences);
        self
    }

    /// Tokenized sentences: the pre-tokenized field when present, otherwise
    /// split and tokenized from `text`. Empty sentences are dropped.
    pub fn tokenized_sentences(
        &self,
        delimiters: &str,
        tokenizer: Tokenizer,
    ) -> Result<Vec<Vec<String>>> {
        let sentences = match &self.sentences {
            Some(s) => s.clone(),
            None => {
                let text = self.text.as_deref().unwrap_or("");
                split_sentences(text, delimiters)
                    .map_err(|_| Error::EmptyDocument {
                        id: Some(self.id.clone()),
                    })?
                    .iter()
                    .map(|s| tokenize(s, tokenizer))
                    .collect()
            }
        };
        let kept: Vec<Vec<String>> = sentences.into_iter().filter(|s| !s.is_empty()).collect();
        if kept.is_empty() {
            return Err(Error::NoSentences {
                id: self.id.clone(),
            });
        }
        Ok(kept)
    }
}

/// Split text into sentences on the given delimiter set. Delimiter runs,
/// trailing closing quotes, and following whitespace all attach to the
/// sentence they end, so concatenating the output reproduces the input.
pub fn split_sentences(text: &str, delimiters: &str) -> Result<Vec<String>> {
    if text.is_empty() {
        return Err(Error::EmptyDocument { id: None });
    }
    assert!(!delimiters.is_empty(), "delimiter set must not be empty");
    let is_delim = |c: char| delimiters.contains(c);
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        if is_delim(chars[i]) {
            // absorb the full delimiter run, closing quotes, then whitespace
            while i < chars.len() && is_delim(chars[i]) {
                i += 1;
            }
            while i < chars.len() && TRAILING_QUOTES.contains(chars[i]) {
                i += 1;
            }
            while i < chars.len() && chars[i].is_whitespace() {
                i += 1;
            }
            out.push(chars[start..i].iter().collect());
            start = i;
        } else {
            i += 1;
        }
    }
    if start < chars.len() {
        out.push(chars[start..].iter().collect());
    }
    Ok(out)
}

fn is_cjk(c: char) -> bool {
    matches!(c,
        '\u{4E00}'..='\u{9FFF}'
        | '\u{3400}'..='\u{4DBF}'
        | '\u{F900}'..='\u{FAFF}'
        | '\u{3040}'..='\u{30FF}')
}

/// Tokenize one sentence.
pub fn tokenize(sentence: &str, tokenizer: Tokenizer) -> Vec<String> {
    match tokenizer {
        Tokenizer::Whitespace => sentence.split_whitespace().map(str::to_string).collect(),
        Tokenizer::Char => sentence
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| c.to_string())
            .collect(),
        Tokenizer::Auto => {
            let mut out = Vec::new();
            let mut word = String::new();
            for c in sentence.chars() {
                if c.is_whitespace() {
                    if !word.is_empty() {
                        out.push(std::mem::take(&mut word));
                    }
                } else if is_cjk(c) {
                    if !word.is_empty() {
                        out.push(std::mem::take(&mut word));
                    }
                    out.push(c.to_string());
                } else {
                    word.push(c);
                }
            }
            if !word.is_empty() {
                out.push(word);
            }
            out
        }
    }
}

/// Token to id mapping with reserved `<pad>`/`<unk>` slots.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    ids: HashMap<String, u32>,
    pub min_freq: usize,
}

impl Vocabulary {
    /// Build from tokenized documents: every token with corpus frequency
    /// `≥ min_freq` gets an id, assigned in order of first appearance.
    pub fn build(docs: &[Vec<Vec<String>>], min_freq: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut first_seen: Vec<&str> = Vec::new();
        for doc in docs {
            for sent in doc {
                for tok in sent {
                    let e = counts.entry(tok.as_str()).or_insert(0);
                    if *e == 0 {
                        first_seen.push(tok.as_str());
                    }
                    *e += 1;
                }
            }
        }
        let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        for tok in first_seen {
            if counts[tok] >= min_freq {
                tokens.push(tok.to_string());
            }
        }
        let mut vocab = Vocabulary {
            tokens,
            ids: HashMap::new(),
            min_freq,
        };
        vocab.rebuild_index();
        vocab
    }

    /// Restore from an id-ordered token list (checkpoint vocab).
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let mut vocab = Vocabulary {
            tokens,
            ids: HashMap::new(),
            min_freq: 1,
        };
        vocab.rebuild_index();
        vocab
    }

    fn rebuild_index(&mut self) {
        self.ids = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// A document as a fixed-shape grid of token ids plus its grade.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedDocument {
    pub id: String,
    /// 1-based grade.
    pub grade: usize,
    /// `n_max` rows of `m_max` ids, PAD-filled at the tail.
    pub token_ids: Vec<Vec<u32>>,
    /// Kept (possibly truncated) length of each real sentence.
    pub sentence_lengths: Vec<usize>,
    /// Number of real (non-PAD) sentence rows.
    pub n_real: usize,
}

/// Encode tokenized sentences to the fixed `n_max × m_max` grid. Sentences
/// beyond `n_max` and tokens beyond `m_max` are cut from the tail.
pub fn encode_document(
    doc: &RawDocument,
    sentences: &[Vec<String>],
    vocab: &Vocabulary,
    m_max: usize,
    n_max: usize,
) -> Result<TokenizedDocument> {
    assert!(m_max >= 1 && n_max >= 1, "m_max and n_max must be >= 1");
    if sentences.is_empty() {
        return Err(Error::NoSentences {
            id: doc.id.clone(),
        });
    }
    let n_real = sentences.len().min(n_max);
    let mut token_ids = vec![vec![PAD_ID; m_max]; n_max];
    let mut sentence_lengths = Vec::with_capacity(n_real);
    for (i, sent) in sentences.iter().take(n_real).enumerate() {
        let keep = sent.len().min(m_max);
        for (j, tok) in sent.iter().take(keep).enumerate() {
            token_ids[i][j] = vocab.id(tok);
        }
        sentence_lengths.push(keep);
    }
    Ok(TokenizedDocument {
        id: doc.id.clone(),
        grade: doc.grade,
        token_ids,
        sentence_lengths,
        n_real,
    })
}

/// Recover the surviving token strings from an encoded grid.
pub fn decode_document(doc: &TokenizedDocument, vocab: &Vocabulary) -> Vec<Vec<String>> {
    (0..doc.n_real)
        .map(|i| {
            doc.token_ids[i][..doc.sentence_lengths[i]]
                .iter()
                .map(|&id| vocab.token(id).to_string())
                .collect()
        })
        .collect()
}

/// Stratified train/test split.
#[derive(Debug, Clone)]
pub struct CorpusSplit {
    pub train: Vec<TokenizedDocument>,
    pub test: Vec<TokenizedDocument>,
    pub seed: u64,
}

/// Split per grade with `round(ratio · count)` (half-up) documents in train,
/// the rest in test. Deterministic under the seed.
pub fn stratified_split(
    docs: &[TokenizedDocument],
    ratio: f64,
    seed: u64,
) -> Result<CorpusSplit> {
    let mut by_grade: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, d) in docs.iter().enumerate() {
        by_grade.entry(d.grade).or_default().push(i);
    }
    for (&grade, members) in &by_grade {
        if members.len() < 2 {
            return Err(Error::GradeTooSmall {
                grade,
                count: members.len(),
            });
        }
    }
    let mut rng = rng_for(seed, "stratified-split");
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (_, mut members) in by_grade {
        members.shuffle(&mut rng);
        let n_train = (ratio * members.len() as f64 + 0.5).floor() as usize;
        for (k, i) in members.into_iter().enumerate() {
            if k < n_train {
                train.push(docs[i].clone());
            } else {
                test.push(docs[i].clone());
            }
        }
    }
    Ok(CorpusSplit { train, test, seed })
}

/// A fully prepared corpus: raw documents, tokenized grids, vocabulary, and
/// the inferred level count.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub raw: Vec<RawDocument>,
    pub sentences: Vec<Vec<Vec<String>>>,
    pub y: usize,
}

impl Corpus {
    /// Validate grades and tokenize every document.
    pub fn prepare(
        raw: Vec<RawDocument>,
        delimiters: &str,
        tokenizer: Tokenizer,
    ) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::EmptyDocument { id: None });
        }
        let y = raw.iter().map(|d| d.grade).max().unwrap_or(0);
        let mut present = vec![false; y + 1];
        for d in &raw {
            if d.grade == 0 || d.grade > y {
                return Err(Error::GradeOutOfRange {
                    grade: d.grade as i64,
                    max: y,
                });
            }
            present[d.grade] = true;
        }
        for g in 1..=y {
            if !present[g] {
                return Err(Error::MissingGrade { grade: g, max: y });
            }
        }
        let sentences = raw
            .iter()
            .map(|d| d.tokenized_sentences(delimiters, tokenizer))
            .collect::<Result<Vec<_>>>()?;
        Ok(Corpus { raw, sentences, y })
    }

    pub fn build_vocabulary(&self, min_freq: usize) -> Vocabulary {
        Vocabulary::build(&self.sentences, min_freq)
    }

    pub fn encode_all(
        &self,
        vocab: &Vocabulary,
        m_max: usize,
        n_max: usize,
    ) -> Result<Vec<TokenizedDocument>> {
        self.raw
            .iter()
            .zip(&self.sentences)
            .map(|(d, s)| encode_document(d, s, vocab, m_max, n_max))
            .collect()
    }
}

/// Read a corpus JSONL file.
pub fn read_jsonl(path: &Path) -> Result<Vec<RawDocument>> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut docs = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: RawDocument =
            serde_json::from_str(&line).map_err(|e| Error::MalformedCorpus {
                line: lineno + 1,
                message: e.to_string(),
            })?;
        docs.push(doc);
    }
    Ok(docs)
}

/// Write documents as JSONL.
pub fn write_jsonl(path: &Path, docs: &[RawDocument]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    for doc in docs {
        serde_json::to_writer(&mut w, doc)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
