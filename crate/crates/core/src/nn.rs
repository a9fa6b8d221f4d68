//! Shared layers on top of the autodiff tape: linear maps, LSTMs,
//! multi-head attention, layer normalization, positional encodings.
//!
//! Each layer comes as a `register_*` function that adds named arrays to a
//! [`ParamStore`] and a forward function that replays the layer on a
//! [`Tape`] through a [`Bound`] view. Sequence inputs are `1×in` rows;
//! sequence outputs are stacked to `len×out` matrices.

use ndarray::Array2;

use crate::autodiff::{Tape, VarId};
use crate::params::{Bound, Init, ParamStore};

pub const LAYER_NORM_EPS: f64 = 1e-5;

// ── linear ──────────────────────────────────────────────────────────────

pub fn register_linear(store: &mut ParamStore, prefix: &str, in_dim: usize, out_dim: usize, seed: u64) {
    store.register(&format!("{prefix}.w"), in_dim, out_dim, Init::Glorot, seed);
    store.register(&format!("{prefix}.b"), 1, out_dim, Init::Zeros, seed);
}

pub fn linear(tape: &mut Tape, p: &Bound, prefix: &str, x: VarId) -> VarId {
    let w = p.id(&format!("{prefix}.w"));
    let b = p.id(&format!("{prefix}.b"));
    let xw = tape.matmul(x, w);
    tape.add_row_broadcast(xw, b)
}

// ── LSTM ────────────────────────────────────────────────────────────────

/// Gate layout in the `4·hidden` block: input, forget, cell, output.
pub fn register_lstm(store: &mut ParamStore, prefix: &str, in_dim: usize, hidden: usize, seed: u64) {
    store.register(&format!("{prefix}.w_ih"), in_dim, 4 * hidden, Init::Glorot, seed);
    store.register(&format!("{prefix}.w_hh"), hidden, 4 * hidden, Init::Glorot, seed);
    store.register(&format!("{prefix}.b"), 1, 4 * hidden, Init::Zeros, seed);
}

/// Run an LSTM over `inputs` (each `1×in`), returning one `1×hidden` state
/// per position.
pub fn lstm_run(
    tape: &mut Tape,
    p: &Bound,
    prefix: &str,
    inputs: &[VarId],
    hidden: usize,
) -> Vec<VarId> {
    let w_ih = p.id(&format!("{prefix}.w_ih"));
    let w_hh = p.id(&format!("{prefix}.w_hh"));
    let b = p.id(&format!("{prefix}.b"));
    let mut h = tape.leaf(Array2::zeros((1, hidden)));
    let mut c = tape.leaf(Array2::zeros((1, hidden)));
    let mut states = Vec::with_capacity(inputs.len());
    for &x in inputs {
        let xg = tape.matmul(x, w_ih);
        let hg = tape.matmul(h, w_hh);
        let sum = tape.add(xg, hg);
        let gates = tape.add_row_broadcast(sum, b);
        let i_raw = tape.slice_cols(gates, 0, hidden);
        let f_raw = tape.slice_cols(gates, hidden, 2 * hidden);
        let g_raw = tape.slice_cols(gates, 2 * hidden, 3 * hidden);
        let o_raw = tape.slice_cols(gates, 3 * hidden, 4 * hidden);
        let i = tape.sigmoid(i_raw);
        let f = tape.sigmoid(f_raw);
        let g = tape.tanh(g_raw);
        let o = tape.sigmoid(o_raw);
        let fc = tape.mul(f, c);
        let ig = tape.mul(i, g);
        c = tape.add(fc, ig);
        let ct = tape.tanh(c);
        h = tape.mul(o, ct);
        states.push(h);
    }
    states
}

pub fn register_bilstm(store: &mut ParamStore, prefix: &str, in_dim: usize, hidden: usize, seed: u64) {
    register_lstm(store, &format!("{prefix}.fwd"), in_dim, hidden, seed);
    register_lstm(store, &format!("{prefix}.bwd"), in_dim, hidden, seed);
}

/// Bidirectional LSTM: position `j` holds the forward state at `j`
/// concatenated with the backward state at `j`. Output is `m×2·hidden`.
pub fn bilstm(
    tape: &mut Tape,
    p: &Bound,
    prefix: &str,
    inputs: &[VarId],
    hidden: usize,
) -> VarId {
    let fwd = lstm_run(tape, p, &format!("{prefix}.fwd"), inputs, hidden);
    let rev: Vec<VarId> = inputs.iter().rev().cloned().collect();
    let mut bwd = lstm_run(tape, p, &format!("{prefix}.bwd"), &rev, hidden);
    bwd.reverse();
    let rows: Vec<VarId> = fwd
        .iter()
        .zip(&bwd)
        .map(|(&f, &b)| tape.concat_cols(&[f, b]))
        .collect();
    tape.stack_rows(&rows)
}

// ── attention ───────────────────────────────────────────────────────────

/// Query/key/value projections. Queries and keys are projected from a
/// `model_dim` source; values from a `value_in` source (equal to `model_dim`
/// for plain self-attention).
pub fn register_attention(
    store: &mut ParamStore,
    prefix: &str,
    model_dim: usize,
    value_in: usize,
    seed: u64,
) {
    store.register(&format!("{prefix}.wq"), model_dim, model_dim, Init::Glorot, seed);
    store.register(&format!("{prefix}.wk"), model_dim, model_dim, Init::Glorot, seed);
    store.register(&format!("{prefix}.wv"), value_in, model_dim, Init::Glorot, seed);
}

/// Multi-head scaled dot-product attention. Queries and keys come from
/// `qk_src` (`n×d`), values from `v_src` (`n×value_in`); heads are
/// column-slices of the projections and are concatenated back to `n×d`.
pub fn multi_head_attention(
    tape: &mut Tape,
    p: &Bound,
    prefix: &str,
    qk_src: VarId,
    v_src: VarId,
    heads: usize,
) -> VarId {
    let d = tape.value(qk_src).ncols();
    assert!(d % heads == 0, "model dim {d} not divisible by {heads} heads");
    let z = d / heads;
    let wq = p.id(&format!("{prefix}.wq"));
    let wk = p.id(&format!("{prefix}.wk"));
    let wv = p.id(&format!("{prefix}.wv"));
    let q = tape.matmul(qk_src, wq);
    let k = tape.matmul(qk_src, wk);
    let v = tape.matmul(v_src, wv);
    let scale = 1.0 / (z as f64).sqrt();
    let mut head_outs = Vec::with_capacity(heads);
    for a in 0..heads {
        let qa = tape.slice_cols(q, a * z, (a + 1) * z);
        let ka = tape.slice_cols(k, a * z, (a + 1) * z);
        let va = tape.slice_cols(v, a * z, (a + 1) * z);
        let kt = tape.transpose(ka);
        let raw = tape.matmul(qa, kt);
        let scores = tape.scale(raw, scale);
        let attn = tape.softmax_rows(scores);
        head_outs.push(tape.matmul(attn, va));
    }
    tape.concat_cols(&head_outs)
}

/// Single-head cross attention: `queries (q×d)` against `keys/values (n×d)`
/// through the `wq`/`wk`/`wv` projections under `prefix`.
pub fn cross_attention(
    tape: &mut Tape,
    p: &Bound,
    prefix: &str,
    queries: VarId,
    source: VarId,
) -> VarId {
    let d = tape.value(queries).ncols();
    let wq = p.id(&format!("{prefix}.wq"));
    let wk = p.id(&format!("{prefix}.wk"));
    let wv = p.id(&format!("{prefix}.wv"));
    let q = tape.matmul(queries, wq);
    let k = tape.matmul(source, wk);
    let v = tape.matmul(source, wv);
    let kt = tape.transpose(k);
    let raw = tape.matmul(q, kt);
    let scores = tape.scale(raw, 1.0 / (d as f64).sqrt());
    let attn = tape.softmax_rows(scores);
    tape.matmul(attn, v)
}

// ── layer norm ──────────────────────────────────────────────────────────

pub fn register_layer_norm(store: &mut ParamStore, prefix: &str, d: usize, seed: u64) {
    store.register(&format!("{prefix}.gamma"), 1, d, Init::Ones, seed);
    store.register(&format!("{prefix}.beta"), 1, d, Init::Zeros, seed);
}

/// Layer normalization over the feature axis with learned scale and shift.
pub fn layer_norm(tape: &mut Tape, p: &Bound, prefix: &str, x: VarId) -> VarId {
    let gamma = p.id(&format!("{prefix}.gamma"));
    let beta = p.id(&format!("{prefix}.beta"));
    let mu = tape.mean_cols(x);
    let centered = tape.sub_col_broadcast(x, mu);
    let sq = tape.mul(centered, centered);
    let var = tape.mean_cols(sq);
    let var_eps = tape.add_scalar(var, LAYER_NORM_EPS);
    let sd = tape.sqrt(var_eps);
    let normed = tape.div_col_broadcast(centered, sd);
    let scaled = tape.mul_row_broadcast(normed, gamma);
    tape.add_row_broadcast(scaled, beta)
}

// ── positional encoding ─────────────────────────────────────────────────

/// Sinusoidal positional encodings, `n×d`.
pub fn positional_encoding(n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |(pos, i)| {
        let rate = 10_000f64.powf((2 * (i / 2)) as f64 / d as f64);
        let angle = pos as f64 / rate;
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Mean over rows: `n×d → 1×d`.
pub fn mean_rows(tape: &mut Tape, x: VarId) -> VarId {
    let n = tape.value(x).nrows();
    let s = tape.sum_rows(x);
    tape.scale(s, 1.0 / n as f64)
}
