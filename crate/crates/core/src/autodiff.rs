//! Reverse-mode automatic differentiation over `f64` matrices.
//!
//! A [`Tape`] records every operation eagerly; [`Tape::backward`] replays the
//! recording in reverse and accumulates gradients for every node. All values
//! are `Array2<f64>`; vectors are `1×n` rows and scalars are `1×1`, which
//! keeps the operation set small.
//!
//! The engine is single-threaded and allocation-order deterministic: the same
//! sequence of operations on the same inputs produces bit-identical values
//! and gradients.

use ndarray::{s, Array2};

/// Index of a node on the tape.
pub type VarId = usize;

type BackFn = Box<dyn Fn(&Tape, &Array2<f64>, &mut Grads)>;

struct Node {
    value: Array2<f64>,
    back: Option<BackFn>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`VarId`].
pub struct Grads {
    slots: Vec<Option<Array2<f64>>>,
}

impl Grads {
    fn new(n: usize) -> Self {
        Grads {
            slots: (0..n).map(|_| None).collect(),
        }
    }

    fn add(&mut self, id: VarId, delta: Array2<f64>) {
        match &mut self.slots[id] {
            Some(g) => *g += &delta,
            slot => *slot = Some(delta),
        }
    }

    /// Gradient of the scalar root with respect to node `id`, if any path
    /// reached it.
    pub fn get(&self, id: VarId) -> Option<&Array2<f64>> {
        self.slots.get(id).and_then(|s| s.as_ref())
    }
}

/// Recording of a forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value of a node.
    pub fn value(&self, id: VarId) -> &Array2<f64> {
        &self.nodes[id].value
    }

    fn push(&mut self, value: Array2<f64>, back: Option<BackFn>) -> VarId {
        self.nodes.push(Node { value, back });
        self.nodes.len() - 1
    }

    /// Insert a leaf node. Gradients accumulate on leaves but do not
    /// propagate further.
    pub fn leaf(&mut self, value: Array2<f64>) -> VarId {
        self.push(value, None)
    }

    /// Run the backward pass from a `1×1` scalar root.
    pub fn backward(&self, root: VarId) -> Grads {
        assert_eq!(
            self.nodes[root].value.dim(),
            (1, 1),
            "backward root must be a 1x1 scalar"
        );
        let mut grads = Grads::new(self.nodes.len());
        grads.add(root, Array2::ones((1, 1)));
        for id in (0..=root).rev() {
            if grads.slots[id].is_none() {
                continue;
            }
            if let Some(back) = &self.nodes[id].back {
                let g = grads.slots[id].take().unwrap();
                back(self, &g, &mut grads);
                grads.slots[id] = Some(g);
            }
        }
        grads
    }

    // ── elementwise arithmetic ──────────────────────────────────────────

    pub fn add(&mut self, a: VarId, b: VarId) -> VarId {
        let v = &self.nodes[a].value + &self.nodes[b].value;
        self.push(
            v,
            Some(Box::new(move |_, g, gr| {
                gr.add(a, g.clone());
                gr.add(b, g.clone());
            })),
        )
    }

    /// Sum of several same-shaped nodes.
    pub fn add_n(&mut self, ids: &[VarId]) -> VarId {
        assert!(!ids.is_empty());
        let mut v = self.nodes[ids[0]].value.clone();
        for id in &ids[1..] {
            v += &self.nodes[*id].value;
        }
        let ids = ids.to_vec();
        self.push(
            v,
            Some(Box::new(move |_, g, gr| {
                for id in &ids {
                    gr.add(*id, g.clone());
                }
            })),
        )
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> VarId {
        let v = &self.nodes[a].value - &self.nodes[b].value;
        self.push(
            v,
            Some(Box::new(move |_, g, gr| {
                gr.add(a, g.clone());
                gr.add(b, g.mapv(|x| -x));
            })),
        )
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> VarId {
        let v = &self.nodes[a].value * &self.nodes[b].value;
        self.push(
            v,
            Some(Box::new(move |t, g, gr| {
                gr.add(a, g * &t.nodes[b].value);
                gr.add(b, g * &t.nodes[a].value);
            })),
        )
    }

    pub fn scale(&mut self, a: VarId, c: f64) -> VarId {
        let v = self.nodes[a].value.mapv(|x| x * c);
        self.push(
            v,
            Some(Box::new(move |_, g, gr| gr.add(a, g.mapv(|x| x * c)))),
        )
    }

    pub fn add_scalar(&mut self, a: VarId, c: f64) -> VarId {
        let v = self.nodes[a].value.mapv(|x| x + c);
        self.push(v, Some(Box::new(move |_, g, gr| gr.add(a, g.clone()))))
    }

    // ── linear algebra ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: VarId, b: VarId) -> VarId {
        let v = self.nodes[a].value.dot(&self.nodes[b].value);
        self.push(
            v,
            Some(Box::new(move |t, g, gr| {
                gr.add(a, g.dot(&t.nodes[b].value.t()));
                gr.add(b, t.nodes[a].value.t().dot(g));
            })),
        )
    }

    pub fn transpose(&mut self, a: VarId) -> VarId {
        let v = self.nodes[a].value.t().to_owned();
        self.push(
            v,
            Some(Box::new(move |_, g, gr| gr.add(a, g.t().to_owned()))),
        )
    }

    // ── activations ─────────────────────────────────────────────────────

    pub fn sigmoid(&mut self, a: VarId) -> VarId {
        let v = self.nodes[a].value.mapv(|x| 1.0 / (1.0 + (-x).exp()));
        let id = self.push(v, None);
        self.nodes[id].back = Some(Box::new(move |t, g, gr| {
            let y = &t.nodes[id].value;
            gr.add(a, g * &(y * &y.mapv(|x| 1.0 - x)));
        }));
        id
    }

    pub fn tanh(&mut self, a: VarId) -> VarId {
        let v = self.nodes[a].value.mapv(f64::tanh);
        let id = self.push(v, None);
        self.nodes[id].back = Some(Box::new(move |t, g, gr| {
            let y = &t.nodes[id].value;
            gr.add(a, g * &y.mapv(|x| 1.0 - x * x));
        }));
        id
    }

    pub fn relu(&mut self, a: VarId) -> VarId {
        let v = self.nodes[a].value.mapv(|x| x.max(0.0));
        self.push(
            v,
            Some(Box::new(move |t, g, gr| {
                let mask = t.nodes[a].value.mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                gr.add(a, g * &mask);
            })),
        )
    }

    pub fn exp(&mut self, a: VarId) -> VarId {
        let v = self.nodes[a].value.mapv(f64::exp);
        let id = self.push(v, None);
        self.nodes[id].back = Some(Box::new(move |t, g, gr| {
            gr.add(a, g * &t.nodes[id].value);
        }));
        id
    }

    pub fn ln(&mut self, a: VarId) -> VarId {
        let v = self.nodes[a].value.mapv(f64::ln);
        self.push(
            v,
            Some(Box::new(move |t, g, gr| {
                gr.add(a, g / &t.nodes[a].value);
            })),
        )
    }

    pub fn sqrt(&mut self, a: VarId) -> VarId {
        let v = self.nodes[a].value.mapv(f64::sqrt);
        let id = self.push(v, None);
        self.nodes[id].back = Some(Box::new(move |t, g, gr| {
            gr.add(a, g / &t.nodes[id].value.mapv(|y| 2.0 * y));
        }));
        id
    }

    /// `max(a, c)` elementwise; gradient passes only where `a > c`.
    pub fn clamp_min(&mut self, a: VarId, c: f64) -> VarId {
        let v = self.nodes[a].value.mapv(|x| x.max(c));
        self.push(
            v,
            Some(Box::new(move |t, g, gr| {
                let mask = t.nodes[a].value.mapv(|x| if x > c { 1.0 } else { 0.0 });
                gr.add(a, g * &mask);
            })),
        )
    }

    // ── softmax family ──────────────────────────────────────────────────

    /// Softmax along each row (axis 1).
    pub fn softmax_rows(&mut self, a: VarId) -> VarId {
        let x = &self.nodes[a].value;
        let mut v = x.clone();
        for mut row in v.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|e| (e - max).exp());
            let sum: f64 = row.sum();
            row.mapv_inplace(|e| e / sum);
        }
        let id = self.push(v, None);
        self.nodes[id].back = Some(Box::new(move |t, g, gr| {
            let y = &t.nodes[id].value;
            let mut da = Array2::zeros(y.raw_dim());
            for r in 0..y.nrows() {
                let dot: f64 = (0..y.ncols()).map(|c| g[[r, c]] * y[[r, c]]).sum();
                for c in 0..y.ncols() {
                    da[[r, c]] = y[[r, c]] * (g[[r, c]] - dot);
                }
            }
            gr.add(a, da);
        }));
        id
    }

    /// Softmax along each column (axis 0) with an optional row mask: masked
    /// rows are exactly zero in the output and receive no gradient.
    pub fn softmax_cols_masked(&mut self, a: VarId, row_mask: Option<Vec<bool>>) -> VarId {
        let x = &self.nodes[a].value;
        let (n, d) = x.dim();
        if let Some(m) = &row_mask {
            assert_eq!(m.len(), n, "row mask length");
        }
        let live = |r: usize| row_mask.as_ref().map_or(true, |m| m[r]);
        let mut v = Array2::zeros((n, d));
        for c in 0..d {
            let max = (0..n)
                .filter(|r| live(*r))
                .map(|r| x[[r, c]])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for r in 0..n {
                if live(r) {
                    let e = (x[[r, c]] - max).exp();
                    v[[r, c]] = e;
                    sum += e;
                }
            }
            for r in 0..n {
                if live(r) {
                    v[[r, c]] /= sum;
                }
            }
        }
        let id = self.push(v, None);
        let mask = row_mask;
        self.nodes[id].back = Some(Box::new(move |t, g, gr| {
            let y = &t.nodes[id].value;
            let live = |r: usize| mask.as_ref().map_or(true, |m| m[r]);
            let mut da = Array2::zeros(y.raw_dim());
            for c in 0..y.ncols() {
                let dot: f64 = (0..y.nrows())
                    .filter(|r| live(*r))
                    .map(|r| g[[r, c]] * y[[r, c]])
                    .sum();
                for r in 0..y.nrows() {
                    if live(r) {
                        da[[r, c]] = y[[r, c]] * (g[[r, c]] - dot);
                    }
                }
            }
            gr.add(a, da);
        }));
        id
    }

    /// Numerically stable log-softmax along each row.
    pub fn log_softmax_rows(&mut self, a: VarId) -> VarId {
        let x = &self.nodes[a].value;
        let mut v = x.clone();
        for mut row in v.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|e| (e - max).exp()).sum::<f64>().ln() + max;
            row.mapv_inplace(|e| e - lse);
        }
        let id = self.push(v, None);
        self.nodes[id].back = Some(Box::new(move |t, g, gr| {
            let y = &t.nodes[id].value;
            let mut da = Array2::zeros(y.raw_dim());
            for r in 0..y.nrows() {
                let gsum: f64 = (0..y.ncols()).map(|c| g[[r, c]]).sum();
                for c in 0..y.ncols() {
                    da[[r, c]] = g[[r, c]] - y[[r, c]].exp() * gsum;
                }
            }
            gr.add(a, da);
        }));
        id
    }

    // ── reductions and reshaping ────────────────────────────────────────

    /// Sum of all entries, as `1×1`.
    pub fn sum(&mut self, a: VarId) -> VarId {
        let v = Array2::from_elem((1, 1), self.nodes[a].value.sum());
        self.push(
            v,
            Some(Box::new(move |t, g, gr| {
                let shape = t.nodes[a].value.raw_dim();
                gr.add(a, Array2::from_elem(shape, g[[0, 0]]));
            })),
        )
    }

    /// Sum over rows: `n×d → 1×d`.
    pub fn sum_rows(&mut self, a: VarId) -> VarId {
        let x = &self.nodes[a].value;
        let mut v = Array2::zeros((1, x.ncols()));
        for row in x.rows() {
            for (c, e) in row.iter().enumerate() {
                v[[0, c]] += e;
            }
        }
        self.push(
            v,
            Some(Box::new(move |t, g, gr| {
                let n = t.nodes[a].value.nrows();
                let mut da = Array2::zeros(t.nodes[a].value.raw_dim());
                for r in 0..n {
                    for c in 0..da.ncols() {
                        da[[r, c]] = g[[0, c]];
                    }
                }
                gr.add(a, da);
            })),
        )
    }

    /// Mean over columns: `n×d → n×1`.
    pub fn mean_cols(&mut self, a: VarId) -> VarId {
        let x = &self.nodes[a].value;
        let d = x.ncols() as f64;
        let mut v = Array2::zeros((x.nrows(), 1));
        for (r, row) in x.rows().into_iter().enumerate() {
            v[[r, 0]] = row.sum() / d;
        }
        self.push(
            v,
            Some(Box::new(move |t, g, gr| {
                let dim = t.nodes[a].value.raw_dim();
                let d = dim[1] as f64;
                let mut da = Array2::zeros(dim);
                for r in 0..da.nrows() {
                    for c in 0..da.ncols() {
                        da[[r, c]] = g[[r, 0]] / d;
                    }
                }
                gr.add(a, da);
            })),
        )
    }

    /// Extract row `i` as `1×d`.
    pub fn row(&mut self, a: VarId, i: usize) -> VarId {
        let v = self
            .nodes[a]
            .value
            .slice(s![i..i + 1, ..])
            .to_owned();
        self.push(
            v,
            Some(Box::new(move |t, g, gr| {
                let mut da = Array2::zeros(t.nodes[a].value.raw_dim());
                da.slice_mut(s![i..i + 1, ..]).assign(g);
                gr.add(a, da);
            })),
        )
    }

    /// Stack `1×d` rows into an `n×d` matrix.
    pub fn stack_rows(&mut self, ids: &[VarId]) -> VarId {
        assert!(!ids.is_empty());
        let d = self.nodes[ids[0]].value.ncols();
        let mut v = Array2::zeros((ids.len(), d));
        for (r, id) in ids.iter().enumerate() {
            let row = &self.nodes[*id].value;
            assert_eq!(row.dim(), (1, d), "stack_rows expects 1×d rows");
            v.slice_mut(s![r..r + 1, ..]).assign(row);
        }
        let ids = ids.to_vec();
        self.push(
            v,
            Some(Box::new(move |_, g, gr| {
                for (r, id) in ids.iter().enumerate() {
                    gr.add(*id, g.slice(s![r..r + 1, ..]).to_owned());
                }
            })),
        )
    }

    /// Concatenate along columns.
    pub fn concat_cols(&mut self, ids: &[VarId]) -> VarId {
        assert!(!ids.is_empty());
        let n = self.nodes[ids[0]].value.nrows();
        let widths: Vec<usize> = ids.iter().map(|id| self.nodes[*id].value.ncols()).collect();
        let total: usize = widths.iter().sum();
        let mut v = Array2::zeros((n, total));
        let mut at = 0;
        for (id, w) in ids.iter().zip(&widths) {
            v.slice_mut(s![.., at..at + w]).assign(&self.nodes[*id].value);
            at += w;
        }
        let ids = ids.to_vec();
        self.push(
            v,
            Some(Box::new(move |_, g, gr| {
                let mut at = 0;
                for (id, w) in ids.iter().zip(&widths) {
                    gr.add(*id, g.slice(s![.., at..at + w]).to_owned());
                    at += w;
                }
            })),
        )
    }

    pub fn slice_cols(&mut self, a: VarId, lo: usize, hi: usize) -> VarId {
        let v = self.nodes[a].value.slice(s![.., lo..hi]).to_owned();
        self.push(
            v,
            Some(Box::new(move |t, g, gr| {
                let mut da = Array2::zeros(t.nodes[a].value.raw_dim());
                da.slice_mut(s![.., lo..hi]).assign(g);
                gr.add(a, da);
            })),
        )
    }

    pub fn slice_rows(&mut self, a: VarId, lo: usize, hi: usize) -> VarId {
        let v = self.nodes[a].value.slice(s![lo..hi, ..]).to_owned();
        self.push(
            v,
            Some(Box::new(move |t, g, gr| {
                let mut da = Array2::zeros(t.nodes[a].value.raw_dim());
                da.slice_mut(s![lo..hi, ..]).assign(g);
                gr.add(a, da);
            })),
        )
    }

    // ── broadcasting ────────────────────────────────────────────────────

    /// `a (n×d) + b (1×d)` broadcast over rows.
    pub fn add_row_broadcast(&mut self, a: VarId, b: VarId) -> VarId {
        let v = &self.nodes[a].value + &self.nodes[b].value;
        self.push(
            v,
            Some(Box::new(move |_, g, gr| {
                gr.add(a, g.clone());
                let mut db = Array2::zeros((1, g.ncols()));
                for row in g.rows() {
                    for (c, e) in row.iter().enumerate() {
                        db[[0, c]] += e;
                    }
                }
                gr.add(b, db);
            })),
        )
    }

    /// `a (n×d) ⊙ b (1×d)` broadcast over rows.
    pub fn mul_row_broadcast(&mut self, a: VarId, b: VarId) -> VarId {
        let v = &self.nodes[a].value * &self.nodes[b].value;
        self.push(
            v,
            Some(Box::new(move |t, g, gr| {
                gr.add(a, g * &t.nodes[b].value);
                let prod = g * &t.nodes[a].value;
                let mut db = Array2::zeros((1, g.ncols()));
                for row in prod.rows() {
                    for (c, e) in row.iter().enumerate() {
                        db[[0, c]] += e;
                    }
                }
                gr.add(b, db);
            })),
        )
    }

    /// `a (n×d) − b (n×1)` broadcast over columns.
    pub fn sub_col_broadcast(&mut self, a: VarId, b: VarId) -> VarId {
        let v = &self.nodes[a].value - &self.nodes[b].value;
        self.push(
            v,
            Some(Box::new(move |_, g, gr| {
                gr.add(a, g.clone());
                let mut db = Array2::zeros((g.nrows(), 1));
                for (r, row) in g.rows().into_iter().enumerate() {
                    db[[r, 0]] = -row.sum();
                }
                gr.add(b, db);
            })),
        )
    }

    /// `a (n×d) / b (n×1)` broadcast over columns.
    pub fn div_col_broadcast(&mut self, a: VarId, b: VarId) -> VarId {
        let v = &self.nodes[a].value / &self.nodes[b].value;
        self.push(
            v,
            Some(Box::new(move |t, g, gr| {
                let bv = &t.nodes[b].value;
                let av = &t.nodes[a].value;
                gr.add(a, g / bv);
                let mut db = Array2::zeros((g.nrows(), 1));
                for r in 0..g.nrows() {
                    let brr = bv[[r, 0]];
                    let mut acc = 0.0;
                    for c in 0..g.ncols() {
                        acc -= g[[r, c]] * av[[r, c]] / (brr * brr);
                    }
                    db[[r, 0]] = acc;
                }
                gr.add(b, db);
            })),
        )
    }

    // ── gathers and windows ─────────────────────────────────────────────

    /// Gather rows of `table` by index (embedding lookup). Duplicate indices
    /// accumulate gradient.
    pub fn gather_rows(&mut self, table: VarId, idx: &[usize]) -> VarId {
        let t = &self.nodes[table].value;
        let mut v = Array2::zeros((idx.len(), t.ncols()));
        for (r, &i) in idx.iter().enumerate() {
            v.slice_mut(s![r..r + 1, ..]).assign(&t.slice(s![i..i + 1, ..]));
        }
        let idx = idx.to_vec();
        self.push(
            v,
            Some(Box::new(move |t, g, gr| {
                let mut dt = Array2::zeros(t.nodes[table].value.raw_dim());
                for (r, &i) in idx.iter().enumerate() {
                    let mut slot = dt.slice_mut(s![i..i + 1, ..]);
                    slot += &g.slice(s![r..r + 1, ..]);
                }
                gr.add(table, dt);
            })),
        )
    }

    /// Sliding windows with zero padding so the output has the same number of
    /// rows as the input: `m×d → m×(l·d)`. Window `j` covers rows
    /// `j−⌊l/2⌋ ..= j+⌊l/2⌋`, with out-of-range rows zero. `l` must be odd.
    pub fn windows_same(&mut self, a: VarId, l: usize) -> VarId {
        assert!(l % 2 == 1, "window length must be odd for same padding");
        let x = &self.nodes[a].value;
        let (m, d) = x.dim();
        let off = l / 2;
        let mut v = Array2::zeros((m, l * d));
        for j in 0..m {
            for t in 0..l {
                let src = j as isize + t as isize - off as isize;
                if src >= 0 && (src as usize) < m {
                    for f in 0..d {
                        v[[j, t * d + f]] = x[[src as usize, f]];
                    }
                }
            }
        }
        self.push(
            v,
            Some(Box::new(move |tape, g, gr| {
                let (m, d) = tape.nodes[a].value.dim();
                let mut da = Array2::zeros((m, d));
                for j in 0..m {
                    for t in 0..l {
                        let src = j as isize + t as isize - off as isize;
                        if src >= 0 && (src as usize) < m {
                            for f in 0..d {
                                da[[src as usize, f]] += g[[j, t * d + f]];
                            }
                        }
                    }
                }
                gr.add(a, da);
            })),
        )
    }

    /// Valid sliding windows, no padding: `m×d → (m−l+1)×(l·d)`. Requires
    /// `m ≥ l`.
    pub fn windows_valid(&mut self, a: VarId, l: usize) -> VarId {
        let x = &self.nodes[a].value;
        let (m, d) = x.dim();
        assert!(m >= l, "windows_valid needs m >= l");
        let rows = m - l + 1;
        let mut v = Array2::zeros((rows, l * d));
        for j in 0..rows {
            for t in 0..l {
                for f in 0..d {
                    v[[j, t * d + f]] = x[[j + t, f]];
                }
            }
        }
        self.push(
            v,
            Some(Box::new(move |tape, g, gr| {
                let (m, d) = tape.nodes[a].value.dim();
                let rows = m - l + 1;
                let mut da = Array2::zeros((m, d));
                for j in 0..rows {
                    for t in 0..l {
                        for f in 0..d {
                            da[[j + t, f]] += g[[j, t * d + f]];
                        }
                    }
                }
                gr.add(a, da);
            })),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    /// Central finite differences of `f` at `x`, one entry at a time.
    fn fd_grad(x: &Array2<f64>, mut f: impl FnMut(&Array2<f64>) -> f64) -> Array2<f64> {
        let eps = 1e-6;
        let mut g = Array2::zeros(x.raw_dim());
        for r in 0..x.nrows() {
            for c in 0..x.ncols() {
                let mut xp = x.clone();
                xp[[r, c]] += eps;
                let mut xm = x.clone();
                xm[[r, c]] -= eps;
                g[[r, c]] = (f(&xp) - f(&xm)) / (2.0 * eps);
            }
        }
        g
    }

    fn assert_close(a: &Array2<f64>, b: &Array2<f64>, tol: f64) {
        assert_eq!(a.dim(), b.dim());
        for (x, y) in a.iter().zip(b.iter()) {
            let denom = (x.abs() + y.abs()).max(1.0);
            assert!(
                ((x - y) / denom).abs() < tol,
                "mismatch: {x} vs {y} (tol {tol})"
            );
        }
    }

    /// Check one unary graph against finite differences.
    fn check_unary(x: Array2<f64>, build: impl Fn(&mut Tape, VarId) -> VarId) {
        let mut tape = Tape::new();
        let xid = tape.leaf(x.clone());
        let out = build(&mut tape, xid);
        let loss = weighted_sum(&mut tape, out);
        let grads = tape.backward(loss);
        let analytic = grads.get(xid).unwrap().clone();
        let numeric = fd_grad(&x, |xv| {
            let mut t = Tape::new();
            let id = t.leaf(xv.clone());
            let out = build(&mut t, id);
            let loss = weighted_sum(&mut t, out);
            t.value(loss)[[0, 0]]
        });
        assert_close(&analytic, &numeric, 1e-6);
    }

    /// Deterministic non-uniform weights make reduction bugs visible where a
    /// plain sum would not.
    fn weighted_sum(tape: &mut Tape, a: VarId) -> VarId {
        let (n, d) = tape.value(a).dim();
        let w = Array2::from_shape_fn((n, d), |(r, c)| 0.3 + 0.7 * ((r * d + c) as f64).sin());
        let wid = tape.leaf(w);
        let prod = tape.mul(a, wid);
        tape.sum(prod)
    }

    fn rand_mat(n: usize, d: usize, lo: f64, hi: f64) -> Array2<f64> {
        let mut rng = crate::rng::rng_for(99, "autodiff-test");
        Array2::from_shape_fn((n, d), |_| rng.gen_range(lo..hi))
    }

    #[test]
    fn unary_ops_match_finite_differences() {
        check_unary(rand_mat(3, 4, -2.0, 2.0), |t, x| t.sigmoid(x));
        check_unary(rand_mat(3, 4, -2.0, 2.0), |t, x| t.tanh(x));
        check_unary(rand_mat(3, 4, 0.3, 2.0), |t, x| t.ln(x));
        check_unary(rand_mat(3, 4, 0.3, 2.0), |t, x| t.sqrt(x));
        check_unary(rand_mat(3, 4, -2.0, 2.0), |t, x| t.exp(x));
        check_unary(rand_mat(3, 4, -2.0, 2.0), |t, x| t.scale(x, -1.7));
        check_unary(rand_mat(3, 4, -2.0, 2.0), |t, x| t.add_scalar(x, 0.9));
        check_unary(rand_mat(3, 4, -2.0, 2.0), |t, x| t.transpose(x));
        check_unary(rand_mat(3, 4, -2.0, 2.0), |t, x| t.softmax_rows(x));
        check_unary(rand_mat(3, 4, -2.0, 2.0), |t, x| t.log_softmax_rows(x));
        check_unary(rand_mat(3, 4, -2.0, 2.0), |t, x| t.sum_rows(x));
        check_unary(rand_mat(3, 4, -2.0, 2.0), |t, x| t.mean_cols(x));
        check_unary(rand_mat(3, 4, -2.0, 2.0), |t, x| t.row(x, 1));
        check_unary(rand_mat(3, 4, -2.0, 2.0), |t, x| t.slice_cols(x, 1, 3));
        check_unary(rand_mat(3, 4, -2.0, 2.0), |t, x| t.slice_rows(x, 0, 2));
        check_unary(rand_mat(4, 3, -2.0, 2.0), |t, x| t.windows_same(x, 3));
        check_unary(rand_mat(4, 3, -2.0, 2.0), |t, x| t.windows_valid(x, 3));
        check_unary(rand_mat(3, 4, -2.0, 2.0), |t, x| {
            t.softmax_cols_masked(x, Some(vec![true, false, true]))
        });
        // relu / clamp_min away from the kink
        check_unary(rand_mat(3, 4, 0.2, 2.0), |t, x| t.relu(x));
        check_unary(rand_mat(3, 4, 0.2, 2.0), |t, x| t.clamp_min(x, 0.1));
    }

    #[test]
    fn binary_ops_match_finite_differences() {
        let a0 = rand_mat(3, 4, -2.0, 2.0);
        let b0 = rand_mat(3, 4, -2.0, 2.0);
        for which in 0..2 {
            let moving = if which == 0 { a0.clone() } else { b0.clone() };
            let analytic_and_numeric = |op: usize| {
                let build = |t: &mut Tape, m: &Array2<f64>| -> (VarId, VarId) {
                    let (av, bv) = if which == 0 {
                        (m.clone(), b0.clone())
                    } else {
                        (a0.clone(), m.clone())
                    };
                    let a = t.leaf(av);
                    let b = t.leaf(bv);
                    let out = match op {
                        0 => t.add(a, b),
                        1 => t.sub(a, b),
                        2 => t.mul(a, b),
                        _ => unreachable!(),
                    };
                    (if which == 0 { a } else { b }, out)
                };
                let mut tape = Tape::new();
                let (target, out) = build(&mut tape, &moving);
                let loss = weighted_sum(&mut tape, out);
                let grads = tape.backward(loss);
                let analytic = grads.get(target).unwrap().clone();
                let numeric = fd_grad(&moving, |m| {
                    let mut t = Tape::new();
                    let (_, out) = build(&mut t, m);
                    let loss = weighted_sum(&mut t, out);
                    t.value(loss)[[0, 0]]
                });
                (analytic, numeric)
            };
            for op in 0..3 {
                let (an, nu) = analytic_and_numeric(op);
                assert_close(&an, &nu, 1e-6);
            }
        }
    }

    #[test]
    fn matmul_matches_finite_differences() {
        let a0 = rand_mat(3, 4, -1.0, 1.0);
        let b0 = rand_mat(4, 2, -1.0, 1.0);
        let mut tape = Tape::new();
        let a = tape.leaf(a0.clone());
        let b = tape.leaf(b0.clone());
        let out = tape.matmul(a, b);
        let loss = weighted_sum(&mut tape, out);
        let grads = tape.backward(loss);
        let eval = |av: &Array2<f64>, bv: &Array2<f64>| {
            let mut t = Tape::new();
            let a = t.leaf(av.clone());
            let b = t.leaf(bv.clone());
            let out = t.matmul(a, b);
            let loss = weighted_sum(&mut t, out);
            t.value(loss)[[0, 0]]
        };
        assert_close(
            grads.get(a).unwrap(),
            &fd_grad(&a0, |av| eval(av, &b0)),
            1e-6,
        );
        assert_close(
            grads.get(b).unwrap(),
            &fd_grad(&b0, |bv| eval(&a0, bv)),
            1e-6,
        );
    }

    #[test]
    fn broadcast_ops_match_finite_differences() {
        let a0 = rand_mat(3, 4, -2.0, 2.0);
        let row0 = rand_mat(1, 4, -2.0, 2.0);
        let col0 = rand_mat(3, 1, 0.5, 2.0);

        // Gradient w.r.t. both args of each broadcast op.
        let cases: Vec<(Box<dyn Fn(&mut Tape, VarId, VarId) -> VarId>, Array2<f64>)> = vec![
            (Box::new(|t: &mut Tape, a, b| t.add_row_broadcast(a, b)), row0.clone()),
            (Box::new(|t: &mut Tape, a, b| t.mul_row_broadcast(a, b)), row0.clone()),
            (Box::new(|t: &mut Tape, a, b| t.sub_col_broadcast(a, b)), col0.clone()),
            (Box::new(|t: &mut Tape, a, b| t.div_col_broadcast(a, b)), col0.clone()),
        ];
        for (build, b0) in cases {
            let mut tape = Tape::new();
            let a = tape.leaf(a0.clone());
            let b = tape.leaf(b0.clone());
            let out = build(&mut tape, a, b);
            let loss = weighted_sum(&mut tape, out);
            let grads = tape.backward(loss);
            let eval = |av: &Array2<f64>, bv: &Array2<f64>| {
                let mut t = Tape::new();
                let a = t.leaf(av.clone());
                let b = t.leaf(bv.clone());
                let out = build(&mut t, a, b);
                let loss = weighted_sum(&mut t, out);
                t.value(loss)[[0, 0]]
            };
            assert_close(grads.get(a).unwrap(), &fd_grad(&a0, |av| eval(av, &b0)), 1e-6);
            assert_close(grads.get(b).unwrap(), &fd_grad(&b0, |bv| eval(&a0, bv)), 1e-6);
        }
    }

    #[test]
    fn gather_accumulates_duplicate_rows() {
        let t0 = rand_mat(4, 3, -1.0, 1.0);
        let idx = vec![1, 1, 3, 0];
        let mut tape = Tape::new();
        let table = tape.leaf(t0.clone());
        let out = tape.gather_rows(table, &idx);
        let loss = weighted_sum(&mut tape, out);
        let grads = tape.backward(loss);
        let numeric = fd_grad(&t0, |tv| {
            let mut t = Tape::new();
            let table = t.leaf(tv.clone());
            let out = t.gather_rows(table, &idx);
            let loss = weighted_sum(&mut t, out);
            t.value(loss)[[0, 0]]
        });
        assert_close(grads.get(table).unwrap(), &numeric, 1e-6);
    }

    #[test]
    fn stack_and_concat_route_gradients() {
        let r0 = rand_mat(1, 3, -1.0, 1.0);
        let r1 = rand_mat(1, 3, -1.0, 1.0);
        let mut tape = Tape::new();
        let a = tape.leaf(r0.clone());
        let b = tape.leaf(r1.clone());
        let stacked = tape.stack_rows(&[a, b]);
        let wide = tape.concat_cols(&[stacked, stacked]);
        let loss = weighted_sum(&mut tape, wide);
        let grads = tape.backward(loss);
        let numeric = fd_grad(&r0, |rv| {
            let mut t = Tape::new();
            let a = t.leaf(rv.clone());
            let b = t.leaf(r1.clone());
            let stacked = t.stack_rows(&[a, b]);
            let wide = t.concat_cols(&[stacked, stacked]);
            let loss = weighted_sum(&mut t, wide);
            t.value(loss)[[0, 0]]
        });
        assert_close(grads.get(a).unwrap(), &numeric, 1e-6);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::new();
        let x = tape.leaf(array![[1.0, 2.0, 3.0], [-1.0, 0.0, 1.0]]);
        let y = tape.softmax_rows(x);
        for row in tape.value(y).rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_softmax_zeroes_masked_rows() {
        let mut tape = Tape::new();
        let x = tape.leaf(array![[1.0, 5.0], [2.0, -3.0], [0.5, 0.5]]);
        let y = tape.softmax_cols_masked(x, Some(vec![true, false, true]));
        let v = tape.value(y);
        assert_eq!(v[[1, 0]], 0.0);
        assert_eq!(v[[1, 1]], 0.0);
        for c in 0..2 {
            let col_sum = v[[0, c]] + v[[2, c]];
            assert!((col_sum - 1.0).abs() < 1e-12);
        }
    }
}
