//! The hierarchical document encoder (HHNN).
//!
//! Word layer: embeddings → BiLSTM word states → convolutional context
//! vectors → multidimensional context weights (attention coefficients from
//! the word states, values from the context vectors, ReLU, then a softmax
//! over the word axis per feature column) → weighted sentence vector.
//!
//! Sentence layer: a stack of gated transformer blocks where the residual
//! connections are replaced by learned sigmoid fusion gates, with one
//! feature fusion gate applied after the stack.
//!
//! Document layer: source2token attention compresses sentence vectors into a
//! document vector, which a softmax classifier maps to grade probabilities.
//!
//! All computations run on the real (non-PAD) tokens and sentences only;
//! padded positions are mathematically inert (zero attention everywhere), so
//! the trimmed computation is exactly equivalent and the public
//! [`EncoderOutput`] re-pads with zeros.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, VarId};
use crate::corpus::TokenizedDocument;
use crate::error::{Error, Result};
use crate::nn;
use crate::params::{Bound, Init, ParamStore};

/// Whether the word layer uses the full multidimensional context weights or
/// the single-dimensional ablation variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ContextMode {
    #[default]
    Multi,
    Single,
}

/// Hyperparameters of the hierarchical encoder.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Embedding width.
    pub d_embed: usize,
    /// Per-direction recurrent width; word representation width is
    /// `d = 2 * d_hidden`.
    pub d_hidden: usize,
    /// Number of convolution kernels.
    pub kernels: usize,
    /// Convolution window length (odd).
    pub window: usize,
    /// Attention heads.
    pub heads: usize,
    /// Sentence-layer depth.
    pub n_layers: usize,
    /// Grade count.
    pub y: usize,
    /// Maximum sentences per document.
    pub n_max: usize,
    /// Maximum tokens per sentence.
    pub m_max: usize,
    #[serde(default)]
    pub context_mode: ContextMode,
}

impl EncoderConfig {
    /// Word representation width.
    pub fn d(&self) -> usize {
        2 * self.d_hidden
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::InvalidConfig(m));
        if self.d_embed == 0 || self.d_hidden == 0 || self.kernels == 0 {
            return err("embedding, hidden, and kernel sizes must be positive".into());
        }
        if self.window % 2 == 0 {
            return err(format!("window must be odd, got {}", self.window));
        }
        if self.heads == 0 || self.d() % self.heads != 0 {
            return err(format!(
                "representation width {} must be divisible by heads {}",
                self.d(),
                self.heads
            ));
        }
        if self.n_layers == 0 {
            return err("need at least one sentence layer".into());
        }
        if self.y < 2 {
            return err(format!("need at least 2 grades, got {}", self.y));
        }
        if self.n_max == 0 || self.m_max == 0 {
            return err("n_max and m_max must be positive".into());
        }
        if self.context_mode == ContextMode::Single && self.kernels != self.d() {
            return err(format!(
                "single context mode needs kernels == representation width ({} != {})",
                self.kernels,
                self.d()
            ));
        }
        Ok(())
    }
}

/// Register every encoder parameter on the store.
pub fn register_encoder(store: &mut ParamStore, cfg: &EncoderConfig, vocab_size: usize, seed: u64) {
    let d = cfg.d();
    store.register("embed.table", vocab_size, cfg.d_embed, Init::Glorot, seed);
    // the PAD row embeds to zero and is never looked up by the model
    store.get_mut("embed.table").row_mut(0).fill(0.0);
    nn::register_bilstm(store, "word.rnn", cfg.d_embed, cfg.d_hidden, seed);
    store.register(
        "word.conv.kernel",
        cfg.window * d,
        cfg.kernels,
        Init::Glorot,
        seed,
    );
    store.register("word.conv.bias", 1, cfg.kernels, Init::Zeros, seed);
    nn::register_attention(store, "word.attn", d, cfg.kernels, seed);
    for l in 0..cfg.n_layers {
        let p = format!("sent.l{l}");
        nn::register_attention(store, &format!("{p}.attn"), d, d, seed);
        nn::register_layer_norm(store, &format!("{p}.norm1"), d, seed);
        store.register(&format!("{p}.gate1.w_o"), d, d, Init::Glorot, seed);
        store.register(&format!("{p}.gate1.w_h"), d, d, Init::Glorot, seed);
        store.register(&format!("{p}.gate1.b"), 1, d, Init::Zeros, seed);
        nn::register_linear(store, &format!("{p}.ff"), d, d, seed);
        nn::register_layer_norm(store, &format!("{p}.norm2"), d, seed);
        store.register(&format!("{p}.gate2.w_t"), d, d, Init::Glorot, seed);
        store.register(&format!("{p}.gate2.w_e"), d, d, Init::Glorot, seed);
        store.register(&format!("{p}.gate2.b"), 1, d, Init::Zeros, seed);
    }
    store.register("sent.fuse.w_f", 2 * d, d, Init::Glorot, seed);
    store.register("sent.fuse.w_g", 2 * d, d, Init::Glorot, seed);
    store.register("sent.fuse.b_f", 1, d, Init::Zeros, seed);
    store.register("sent.fuse.b_g", 1, d, Init::Zeros, seed);
    store.register("doc.attn.hidden.w", d, d, Init::Glorot, seed);
    store.register("doc.attn.hidden.b", 1, d, Init::Zeros, seed);
    store.register("doc.attn.score.w", d, 1, Init::Glorot, seed);
    store.register("doc.attn.score.b", 1, 1, Init::Zeros, seed);
    nn::register_linear(store, "cls", d, cfg.y, seed);
}

/// Embed a row of token ids; PAD positions come out as exact zero rows.
pub fn embed(tape: &mut Tape, p: &Bound, ids: &[u32], vocab_size: usize) -> Result<VarId> {
    for &id in ids {
        if id as usize >= vocab_size {
            return Err(Error::TokenIdOutOfRange {
                id,
                size: vocab_size,
            });
        }
    }
    let table = p.id("embed.table");
    let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
    let rows = tape.gather_rows(table, &idx);
    let mask = Array2::from_shape_fn((ids.len(), 1), |(r, _)| {
        if ids[r] == crate::corpus::PAD_ID {
            0.0
        } else {
            1.0
        }
    });
    let d_embed = tape.value(rows).ncols();
    let full = Array2::from_shape_fn((ids.len(), d_embed), |(r, _)| mask[[r, 0]]);
    let mask_id = tape.leaf(full);
    Ok(tape.mul(rows, mask_id))
}

/// BiLSTM word states for one sentence of embedded tokens (`m×d_embed` →
/// `m×d`).
pub fn encode_words(tape: &mut Tape, p: &Bound, embedded: VarId, d_hidden: usize) -> VarId {
    let m = tape.value(embedded).nrows();
    let xs: Vec<VarId> = (0..m).map(|j| tape.row(embedded, j)).collect();
    nn::bilstm(tape, p, "word.rnn", &xs, d_hidden)
}

/// Same-padding convolution over the word states: `m×d → m×k`.
pub fn context_vectors(tape: &mut Tape, p: &Bound, h_t: VarId, window: usize) -> VarId {
    let wins = tape.windows_same(h_t, window);
    let kernel = p.id("word.conv.kernel");
    let bias = p.id("word.conv.bias");
    let raw = tape.matmul(wins, kernel);
    tape.add_row_broadcast(raw, bias)
}

/// Multidimensional context weights: attention with queries/keys from the
/// word states and values from the context vectors, ReLU, then softmax over
/// the word axis per feature column. Output is `m×d`; columns sum to 1.
pub fn multidim_context_weights(
    tape: &mut Tape,
    p: &Bound,
    h_t: VarId,
    c: VarId,
    heads: usize,
) -> Result<VarId> {
    let (m, _) = tape.value(h_t).dim();
    let (mc, _) = tape.value(c).dim();
    if m != mc {
        return Err(Error::ShapeMismatch {
            context: "multidim_context_weights".into(),
            expected: format!("{m} context rows"),
            actual: format!("{mc}"),
        });
    }
    let mixed = nn::multi_head_attention(tape, p, "word.attn", h_t, c, heads);
    let act = tape.relu(mixed);
    Ok(tape.softmax_cols_masked(act, None))
}

/// Weighted sum of word states: `h_s = Σ_j W[j] ⊙ h_t[j]` (`1×d`).
pub fn sentence_vector(tape: &mut Tape, w_t: VarId, h_t: VarId) -> VarId {
    let prod = tape.mul(w_t, h_t);
    tape.sum_rows(prod)
}

/// Single-dimensional context variant: valid-window convolution, mean over
/// windows, and one scalar weight per word from the dot product of that mean
/// with the word state.
pub fn single_dim_sentence_vector(
    tape: &mut Tape,
    p: &Bound,
    h_t: VarId,
    window: usize,
) -> VarId {
    let (m, d) = tape.value(h_t).dim();
    let kernel = p.id("word.conv.kernel");
    let bias = p.id("word.conv.bias");
    let c = if m >= window {
        let wins = tape.windows_valid(h_t, window);
        let raw = tape.matmul(wins, kernel);
        tape.add_row_broadcast(raw, bias)
    } else {
        // short sentence: a single full-width window against the leading
        // kernel rows
        let wins = tape.windows_valid(h_t, m);
        let head = tape.slice_rows(kernel, 0, m * d);
        let raw = tape.matmul(wins, head);
        tape.add_row_broadcast(raw, bias)
    };
    let a = nn::mean_rows(tape, c);
    let ht_t = tape.transpose(h_t);
    let scores = tape.matmul(a, ht_t);
    tape.matmul(scores, h_t)
}

/// Intermediate nodes of the sentence layer, exposed for tests.
pub struct SentenceLayerTrace {
    /// Normalized self-attention output per layer.
    pub o: Vec<VarId>,
    /// First gate output per layer.
    pub e: Vec<VarId>,
    /// Normalized feed-forward output per layer.
    pub ff_normed: Vec<VarId>,
    /// Second gate output per layer.
    pub v: Vec<VarId>,
    /// Fusion-gate candidate features.
    pub fused_features: VarId,
    /// Final sentence representations.
    pub u: VarId,
}

/// Gated transformer stack plus the final feature fusion gate.
pub fn sentence_layer_traced(
    tape: &mut Tape,
    p: &Bound,
    cfg: &EncoderConfig,
    h_seq: VarId,
) -> SentenceLayerTrace {
    let (n, d) = tape.value(h_seq).dim();
    let ones = tape.leaf(Array2::ones((n, d)));
    let mut x = h_seq;
    let mut trace_o = Vec::new();
    let mut trace_e = Vec::new();
    let mut trace_t = Vec::new();
    let mut trace_v = Vec::new();
    for l in 0..cfg.n_layers {
        let pref = format!("sent.l{l}");
        let attn = nn::multi_head_attention(tape, p, &format!("{pref}.attn"), x, x, cfg.heads);
        let o = nn::layer_norm(tape, p, &format!("{pref}.norm1"), attn);
        let w_o = p.id(&format!("{pref}.gate1.w_o"));
        let w_h = p.id(&format!("{pref}.gate1.w_h"));
        let b1 = p.id(&format!("{pref}.gate1.b"));
        let ow = tape.matmul(o, w_o);
        let hw = tape.matmul(x, w_h);
        let pre = tape.add(ow, hw);
        let pre = tape.add_row_broadcast(pre, b1);
        let g1 = tape.sigmoid(pre);
        let keep = tape.mul(g1, x);
        let inv = tape.sub(ones, g1);
        let take = tape.mul(inv, o);
        let e = tape.add(keep, take);

        let f = nn::linear(tape, p, &format!("{pref}.ff"), e);
        let t = nn::layer_norm(tape, p, &format!("{pref}.norm2"), f);
        let w_t = p.id(&format!("{pref}.gate2.w_t"));
        let w_e = p.id(&format!("{pref}.gate2.w_e"));
        let b2 = p.id(&format!("{pref}.gate2.b"));
        let tw = tape.matmul(t, w_t);
        let ew = tape.matmul(e, w_e);
        let pre2 = tape.add(tw, ew);
        let pre2 = tape.add_row_broadcast(pre2, b2);
        let g2 = tape.sigmoid(pre2);
        let keep2 = tape.mul(g2, e);
        let inv2 = tape.sub(ones, g2);
        let take2 = tape.mul(inv2, t);
        let v = tape.add(keep2, take2);

        trace_o.push(o);
        trace_e.push(e);
        trace_t.push(t);
        trace_v.push(v);
        x = v;
    }
    // feature fusion gate between the original sentence vectors and the
    // stack output
    let hv = tape.concat_cols(&[h_seq, x]);
    let w_f = p.id("sent.fuse.w_f");
    let w_g = p.id("sent.fuse.w_g");
    let b_f = p.id("sent.fuse.b_f");
    let b_g = p.id("sent.fuse.b_g");
    let f_raw = tape.matmul(hv, w_f);
    let f_pre = tape.add_row_broadcast(f_raw, b_f);
    let f_feat = tape.relu(f_pre);
    let g_raw = tape.matmul(hv, w_g);
    let g_pre = tape.add_row_broadcast(g_raw, b_g);
    let g = tape.sigmoid(g_pre);
    let keep = tape.mul(g, f_feat);
    let inv = tape.sub(ones, g);
    let take = tape.mul(inv, h_seq);
    let u = tape.add(keep, take);
    SentenceLayerTrace {
        o: trace_o,
        e: trace_e,
        ff_normed: trace_t,
        v: trace_v,
        fused_features: f_feat,
        u,
    }
}

pub fn sentence_layer(tape: &mut Tape, p: &Bound, cfg: &EncoderConfig, h_seq: VarId) -> VarId {
    sentence_layer_traced(tape, p, cfg, h_seq).u
}

/// source2token document attention: per-sentence scalar weights (softmax
/// over sentences) and the weighted document vector.
pub fn document_vector(tape: &mut Tape, p: &Bound, u: VarId) -> (VarId, VarId) {
    let w_h = p.id("doc.attn.hidden.w");
    let b_h = p.id("doc.attn.hidden.b");
    let w_s = p.id("doc.attn.score.w");
    let b_s = p.id("doc.attn.score.b");
    let raw = tape.matmul(u, w_h);
    let pre = tape.add_row_broadcast(raw, b_h);
    let hidden = tape.relu(pre);
    let score_raw = tape.matmul(hidden, w_s);
    let logits = tape.add_row_broadcast(score_raw, b_s);
    let w_d = tape.softmax_cols_masked(logits, None);
    let wt = tape.transpose(w_d);
    let dvec = tape.matmul(wt, u);
    (w_d, dvec)
}

/// Classifier head: affine map plus softmax.
pub fn classify(tape: &mut Tape, p: &Bound, dvec: VarId) -> (VarId, VarId) {
    let logits = nn::linear(tape, p, "cls", dvec);
    let probs = tape.softmax_rows(logits);
    (logits, probs)
}

/// Tape nodes of a full document forward pass.
pub struct DocForward {
    /// Sentence vectors from the word layer (`n_real×d`).
    pub h_s: VarId,
    /// Sentence representations after the sentence layer (`n_real×d`).
    pub u: VarId,
    /// Document attention weights (`n_real×1`).
    pub doc_attn: VarId,
    /// Document vector (`1×d`).
    pub doc_vec: VarId,
    pub logits: VarId,
    pub probs: VarId,
}

/// Run the full encoder over one document's real sentences.
pub fn forward_document(
    tape: &mut Tape,
    p: &Bound,
    cfg: &EncoderConfig,
    doc: &TokenizedDocument,
    vocab_size: usize,
) -> Result<DocForward> {
    if doc.n_real == 0 {
        return Err(Error::NoSentences {
            id: doc.id.clone(),
        });
    }
    let mut sent_vecs = Vec::with_capacity(doc.n_real);
    for i in 0..doc.n_real {
        let len = doc.sentence_lengths[i];
        let ids = &doc.token_ids[i][..len];
        let embedded = embed(tape, p, ids, vocab_size)?;
        let h_t = encode_words(tape, p, embedded, cfg.d_hidden);
        let h_s = match cfg.context_mode {
            ContextMode::Multi => {
                let c = context_vectors(tape, p, h_t, cfg.window);
                let w_t = multidim_context_weights(tape, p, h_t, c, cfg.heads)?;
                sentence_vector(tape, w_t, h_t)
            }
            ContextMode::Single => single_dim_sentence_vector(tape, p, h_t, cfg.window),
        };
        sent_vecs.push(h_s);
    }
    let h_seq = tape.stack_rows(&sent_vecs);
    let u = sentence_layer(tape, p, cfg, h_seq);
    let (doc_attn, doc_vec) = document_vector(tape, p, u);
    let (logits, probs) = classify(tape, p, doc_vec);
    Ok(DocForward {
        h_s: h_seq,
        u,
        doc_attn,
        doc_vec,
        logits,
        probs,
    })
}

/// Value-level encoder output padded back to the `n_max` contract: PAD
/// sentences carry zero representations and zero attention.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// `n_max × d`.
    pub sentence_reps: Array2<f64>,
    /// Length `d`.
    pub doc_vector: Vec<f64>,
    /// Length `n_max`; sums to 1 over the real sentences.
    pub doc_attention: Vec<f64>,
    /// Length `y`; sums to 1.
    pub doc_probs: Vec<f64>,
}

/// Run the encoder in inference mode.
pub fn encode(
    store: &ParamStore,
    cfg: &EncoderConfig,
    doc: &TokenizedDocument,
    vocab_size: usize,
) -> Result<EncoderOutput> {
    let mut tape = Tape::new();
    let p = store.bind(&mut tape);
    let fwd = forward_document(&mut tape, &p, cfg, doc, vocab_size)?;
    let d = cfg.d();
    let mut sentence_reps = Array2::zeros((cfg.n_max, d));
    let u = tape.value(fwd.u);
    for i in 0..doc.n_real {
        for f in 0..d {
            sentence_reps[[i, f]] = u[[i, f]];
        }
    }
    let mut doc_attention = vec![0.0; cfg.n_max];
    let attn = tape.value(fwd.doc_attn);
    for i in 0..doc.n_real {
        doc_attention[i] = attn[[i, 0]];
    }
    Ok(EncoderOutput {
        sentence_reps,
        doc_vector: tape.value(fwd.doc_vec).iter().cloned().collect(),
        doc_attention,
        doc_probs: tape.value(fwd.probs).iter().cloned().collect(),
    })
}
