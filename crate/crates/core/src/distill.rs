//! Multi-head difficulty embedding matrix (MDEM) and the reverse path that
//! distills sentence-level difficulty labels from document-level training.
//!
//! The embedding matrix `M` has one `z×Y` slice per attention head
//! (`z = d/h`). Sentence representations are split head-wise, each slice is
//! scored against its head's matrix, and the per-head scores are summed into
//! the sentence score matrix `A` (`n×Y`). Weighted by the document attention,
//! `A` also yields a document-level score vector used by the consistency
//! loss.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, VarId};
use crate::corpus::{TokenizedDocument, Vocabulary};
use crate::encoder::{self, EncoderConfig};
use crate::error::Result;
use crate::params::{Bound, Init, ParamStore};

/// Parameter name of the stacked difficulty embedding matrix (`d×Y`; head
/// `a` owns rows `a·z .. (a+1)·z`).
pub const MDEM_PARAM: &str = "mdem.m";

pub fn register_mdem(store: &mut ParamStore, d: usize, y: usize, seed: u64) {
    store.register(MDEM_PARAM, d, y, Init::Glorot, seed);
}

/// Per-sentence difficulty scores: reshape `u` head-wise, multiply each head
/// slice with its matrix slice, and sum over heads. `n×d → n×Y`.
pub fn sentence_scores(tape: &mut Tape, p: &Bound, u: VarId, heads: usize) -> VarId {
    let d = tape.value(u).ncols();
    assert!(d % heads == 0, "width {d} not divisible by {heads} heads");
    let z = d / heads;
    let m = p.id(MDEM_PARAM);
    let mut partials = Vec::with_capacity(heads);
    for a in 0..heads {
        let ua = tape.slice_cols(u, a * z, (a + 1) * z);
        let ma = tape.slice_rows(m, a * z, (a + 1) * z);
        partials.push(tape.matmul(ua, ma));
    }
    tape.add_n(&partials)
}

/// Document-level score vector: the attention-weighted sum of sentence score
/// rows, `r̂ = Σ_i W_i · A[i]` (`1×Y`).
pub fn document_score(tape: &mut Tape, scores: VarId, doc_attn: VarId) -> VarId {
    let wt = tape.transpose(doc_attn);
    tape.matmul(wt, scores)
}

/// A distilled sentence with its inferred difficulty label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub doc_id: String,
    pub index: usize,
    pub tokens: Vec<String>,
    /// 1-based grade.
    pub label: usize,
    /// Maximum softmax probability of the sentence's score row.
    pub confidence: f64,
}

/// Softmax a score row and take its argmax; ties resolve to the lowest
/// grade.
pub fn label_from_scores(row: &[f64]) -> (usize, f64) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let mut best = 0;
    let mut best_p = exps[0] / sum;
    for (k, e) in exps.iter().enumerate().skip(1) {
        let pk = e / sum;
        if pk > best_p {
            best = k;
            best_p = pk;
        }
    }
    (best + 1, best_p)
}

/// Label every real sentence of every document with the trained model.
/// Records below `min_confidence` are dropped. Tokens are the ones the model
/// actually consumed (truncated to `m_max`).
pub fn extract_sentence_labels(
    store: &ParamStore,
    cfg: &EncoderConfig,
    docs: &[TokenizedDocument],
    vocab: &Vocabulary,
    min_confidence: f64,
) -> Result<Vec<SentenceRecord>> {
    let mut records = Vec::new();
    for doc in docs {
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let fwd = encoder::forward_document(&mut tape, &p, cfg, doc, vocab.len())?;
        let scores = sentence_scores(&mut tape, &p, fwd.u, cfg.heads);
        let a = tape.value(scores).clone();
        for i in 0..doc.n_real {
            let row: Vec<f64> = (0..cfg.y).map(|k| a[[i, k]]).collect();
            let (label, confidence) = label_from_scores(&row);
            if confidence < min_confidence {
                continue;
            }
            let tokens = doc.token_ids[i][..doc.sentence_lengths[i]]
                .iter()
                .map(|&id| vocab.token(id).to_string())
                .collect();
            records.push(SentenceRecord {
                doc_id: doc.id.clone(),
                index: i,
                tokens,
                label,
                confidence,
            });
        }
    }
    Ok(records)
}

/// Write sentence records as JSONL.
pub fn write_sentence_corpus(path: &std::path::Path, records: &[SentenceRecord]) -> Result<()> {
    use std::io::Write;
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sentence_corpus(path: &std::path::Path) -> Result<Vec<SentenceRecord>> {
    use std::io::BufRead;
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    Ok(records)
}
