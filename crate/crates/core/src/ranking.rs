//! Pairwise ranking over document vectors, hard-voting inference, and the
//! ordinal-regression and plain-classification comparison heads.
//!
//! Training data is organized into subsets that hold exactly one document
//! per grade. All ordered pairs within a subset (Y·(Y−1) of them) are
//! labeled with the grade difference and classified by an affine head on the
//! concatenated pair. At inference a test vector is paired with every member
//! of P reference subsets; each pairing proposes `clamp(ref_grade + diff)`
//! and the most frequent candidate wins, ties resolving to the lowest grade.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, VarId};
use crate::error::{Error, Result};
use crate::nn;
use crate::params::{Adam, Init, ParamStore};
use crate::rng::rng_for;
use crate::train::argmax_lowest;

/// A document vector with its grade.
#[derive(Debug, Clone)]
pub struct GradedVector {
    pub id: String,
    pub grade: usize,
    pub vector: Vec<f64>,
}

/// Indices into the document list, exactly one per grade, ordered by grade.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataSubset {
    pub members: Vec<usize>,
}

/// Ranking hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankingConfig {
    /// Reference subsets used per inference.
    pub p_subsets: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for RankingConfig {
    fn default() -> Self {
        RankingConfig {
            p_subsets: 10,
            epochs: 30,
            lr: 1e-2,
            weight_decay: 5e-4,
            seed: 0,
        }
    }
}

/// Deal shuffled per-grade document lists round-robin into subsets. The
/// subset count is the largest per-grade count; smaller grades are refilled
/// by resampling with replacement.
pub fn build_subsets(grades: &[usize], y: usize, seed: u64) -> Result<Vec<DataSubset>> {
    let mut by_grade: Vec<Vec<usize>> = vec![Vec::new(); y];
    for (i, &g) in grades.iter().enumerate() {
        if g == 0 || g > y {
            return Err(Error::GradeOutOfRange {
                grade: g as i64,
                max: y,
            });
        }
        by_grade[g - 1].push(i);
    }
    for (gi, members) in by_grade.iter().enumerate() {
        if members.is_empty() {
            return Err(Error::MissingGrade {
                grade: gi + 1,
                max: y,
            });
        }
    }
    let count = by_grade.iter().map(Vec::len).max().unwrap();
    let mut rng = rng_for(seed, "ranking-subsets");
    use rand::seq::SliceRandom;
    use rand::Rng;
    let mut columns: Vec<Vec<usize>> = Vec::with_capacity(y);
    for members in &by_grade {
        let mut col = members.clone();
        col.shuffle(&mut rng);
        while col.len() < count {
            col.push(members[rng.gen_range(0..members.len())]);
        }
        columns.push(col);
    }
    Ok((0..count)
        .map(|s| DataSubset {
            members: columns.iter().map(|col| col[s]).collect(),
        })
        .collect())
}

/// An ordered pair of document vectors labeled with the grade difference.
#[derive(Debug, Clone)]
pub struct PairExample {
    pub vec_a: Vec<f64>,
    pub vec_b: Vec<f64>,
    /// `grade(a) − grade(b)`, in `−(Y−1)..=(Y−1)`.
    pub diff_label: i64,
}

/// All ordered pairs of distinct members: exactly `Y·(Y−1)` examples.
pub fn make_pairs(subset: &DataSubset, docs: &[GradedVector]) -> Vec<PairExample> {
    let mut out = Vec::with_capacity(subset.members.len() * (subset.members.len() - 1));
    for &a in &subset.members {
        for &b in &subset.members {
            if a == b {
                continue;
            }
            out.push(PairExample {
                vec_a: docs[a].vector.clone(),
                vec_b: docs[b].vector.clone(),
                diff_label: docs[a].grade as i64 - docs[b].grade as i64,
            });
        }
    }
    out
}

/// The pairwise grade-difference head: an affine map on the concatenated
/// pair with `2Y−1` output classes (class `c` encodes `diff = c − (Y−1)`).
pub struct PairHead {
    pub store: ParamStore,
    pub y: usize,
    pub d: usize,
}

impl PairHead {
    pub fn new(d: usize, y: usize, seed: u64) -> Self {
        let mut store = ParamStore::new();
        store.register("rank.w", 2 * d, 2 * y - 1, Init::Glorot, seed);
        store.register("rank.b", 1, 2 * y - 1, Init::Zeros, seed);
        PairHead { store, y, d }
    }

    pub fn classes(&self) -> usize {
        2 * self.y - 1
    }

    /// Logits over difference classes.
    pub fn logits(&self, vec_a: &[f64], vec_b: &[f64]) -> Result<Vec<f64>> {
        if vec_a.len() != self.d || vec_b.len() != self.d {
            return Err(Error::ShapeMismatch {
                context: "pair_logits".into(),
                expected: format!("two vectors of width {}", self.d),
                actual: format!("{} and {}", vec_a.len(), vec_b.len()),
            });
        }
        let w = self.store.get("rank.w");
        let b = self.store.get("rank.b");
        let classes = self.classes();
        let mut out = vec![0.0; classes];
        for c in 0..classes {
            let mut acc = b[[0, c]];
            for (j, v) in vec_a.iter().enumerate() {
                acc += v * w[[j, c]];
            }
            for (j, v) in vec_b.iter().enumerate() {
                acc += v * w[[self.d + j, c]];
            }
            out[c] = acc;
        }
        Ok(out)
    }

    /// Predicted grade difference for the ordered pair `(a, b)`.
    pub fn predict_diff(&self, vec_a: &[f64], vec_b: &[f64]) -> Result<i64> {
        let logits = self.logits(vec_a, vec_b)?;
        Ok(argmax_lowest(&logits) as i64 - (self.y as i64 - 1))
    }
}

/// Train the pair head: each subset's pairs form one cross-entropy batch.
pub fn train_ranking(
    subsets: &[DataSubset],
    docs: &[GradedVector],
    y: usize,
    cfg: &RankingConfig,
) -> Result<(PairHead, Vec<f64>)> {
    assert!(!subsets.is_empty() && !docs.is_empty());
    let d = docs[0].vector.len();
    let mut head = PairHead::new(d, y, cfg.seed);
    let mut adam = Adam::new(&head.store, cfg.lr, cfg.weight_decay);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..subsets.len()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng_for(cfg.seed, &format!("rank-epoch-{epoch}")));
        let mut loss_sum = 0.0;
        let mut pair_count = 0usize;
        for &si in &order {
            let pairs = make_pairs(&subsets[si], docs);
            let mut tape = Tape::new();
            let p = head.store.bind(&mut tape);
            let mut ce_nodes = Vec::with_capacity(pairs.len());
            for pair in &pairs {
                let mut joint = pair.vec_a.clone();
                joint.extend_from_slice(&pair.vec_b);
                let x = tape.leaf(Array2::from_shape_vec((1, 2 * d), joint).unwrap());
                let logits = nn::linear(&mut tape, &p, "rank", x);
                let logq = tape.log_softmax_rows(logits);
                let class = (pair.diff_label + y as i64 - 1) as usize;
                let picked = tape.slice_cols(logq, class, class + 1);
                ce_nodes.push(tape.scale(picked, -1.0));
            }
            let total = tape.add_n(&ce_nodes);
            let loss = tape.scale(total, 1.0 / ce_nodes.len() as f64);
            loss_sum += tape.value(loss)[[0, 0]] * ce_nodes.len() as f64;
            pair_count += ce_nodes.len();
            let grads = tape.backward(loss);
            let arrays = p.collect_grads(&grads);
            adam.step(&mut head.store, &arrays, None);
        }
        epoch_losses.push(loss_sum / pair_count as f64);
    }
    Ok((head, epoch_losses))
}

/// Accuracy of difference-class predictions over all pairs of all subsets.
pub fn pair_accuracy(head: &PairHead, subsets: &[DataSubset], docs: &[GradedVector]) -> Result<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for s in subsets {
        for pair in make_pairs(s, docs) {
            if head.predict_diff(&pair.vec_a, &pair.vec_b)? == pair.diff_label {
                hits += 1;
            }
            total += 1;
        }
    }
    Ok(hits as f64 / total as f64)
}

/// Candidate tallies of one hard vote.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub counts: BTreeMap<usize, usize>,
    pub winner: usize,
}

impl VoteRecord {
    fn from_candidates(candidates: impl IntoIterator<Item = usize>) -> Self {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for c in candidates {
            *counts.entry(c).or_insert(0) += 1;
        }
        // ascending key order makes the lowest grade win ties
        let mut winner = 0;
        let mut best = 0;
        for (&grade, &count) in &counts {
            if count > best {
                winner = grade;
                best = count;
            }
        }
        VoteRecord { counts, winner }
    }
}

/// Infer a grade by pairing the test vector (slot a) against every member of
/// the first `p` reference subsets and hard-voting the clamped candidates.
pub fn infer_grade(
    test_vec: &[f64],
    reference_subsets: &[DataSubset],
    docs: &[GradedVector],
    p: usize,
    head: &PairHead,
) -> Result<(usize, VoteRecord)> {
    assert!(p >= 1, "need at least one reference subset");
    let take = p.min(reference_subsets.len());
    let mut candidates = Vec::with_capacity(take * head.y);
    for subset in &reference_subsets[..take] {
        for &m in &subset.members {
            let diff = head.predict_diff(test_vec, &docs[m].vector)?;
            let raw = docs[m].grade as i64 + diff;
            let clamped = raw.clamp(1, head.y as i64) as usize;
            candidates.push(clamped);
        }
    }
    let record = VoteRecord::from_candidates(candidates);
    Ok((record.winner, record))
}

// ── ordinal regression head ─────────────────────────────────────────────

/// Cumulative-link head: a scalar score per document and `Y−1` strictly
/// increasing thresholds (parameterized as a base plus positive increments).
pub struct OrdinalHead {
    pub store: ParamStore,
    pub y: usize,
    pub d: usize,
}

/// Thresholds from raw parameters: `θ_0 = raw_0`,
/// `θ_j = θ_{j−1} + softplus(raw_j)`.
pub fn thresholds_from_raw(raw: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(raw.len());
    for (j, &r) in raw.iter().enumerate() {
        if j == 0 {
            out.push(r);
        } else {
            out.push(out[j - 1] + (1.0 + r.exp()).ln());
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Interval probability of each grade under the cumulative-link model.
pub fn interval_probs(score: f64, thresholds: &[f64]) -> Vec<f64> {
    let y = thresholds.len() + 1;
    (1..=y)
        .map(|g| {
            let upper = if g < y {
                sigmoid(thresholds[g - 1] - score)
            } else {
                1.0
            };
            let lower = if g > 1 {
                sigmoid(thresholds[g - 2] - score)
            } else {
                0.0
            };
            upper - lower
        })
        .collect()
}

/// Negative log interval probability of the true grade, clamped at `1e-12`.
pub fn ordinal_loss(score: f64, grade: usize, thresholds: &[f64]) -> f64 {
    let y = thresholds.len() + 1;
    assert!(grade >= 1 && grade <= y);
    let p = interval_probs(score, thresholds)[grade - 1];
    -p.max(1e-12).ln()
}

/// Grade from a score: one plus the number of thresholds below the score.
pub fn predict_ordinal(score: f64, thresholds: &[f64]) -> usize {
    1 + thresholds.iter().filter(|&&t| t < score).count()
}

impl OrdinalHead {
    pub fn new(d: usize, y: usize, seed: u64) -> Self {
        assert!(y >= 2);
        let mut store = ParamStore::new();
        store.register("ord.w", d, 1, Init::Glorot, seed);
        store.register("ord.b", 1, 1, Init::Zeros, seed);
        store.register("ord.raw", 1, y - 1, Init::Zeros, seed);
        OrdinalHead { store, y, d }
    }

    pub fn score(&self, vector: &[f64]) -> f64 {
        let w = self.store.get("ord.w");
        let b = self.store.get("ord.b");
        vector.iter().enumerate().map(|(j, v)| v * w[[j, 0]]).sum::<f64>() + b[[0, 0]]
    }

    pub fn thresholds(&self) -> Vec<f64> {
        let raw: Vec<f64> = self.store.get("ord.raw").iter().cloned().collect();
        thresholds_from_raw(&raw)
    }

    pub fn predict(&self, vector: &[f64]) -> usize {
        predict_ordinal(self.score(vector), &self.thresholds())
    }
}

/// Tape replay of the threshold construction plus the interval likelihood,
/// so score map and thresholds train jointly.
pub fn ordinal_loss_node(
    tape: &mut Tape,
    p: &crate::params::Bound,
    vector: &[f64],
    grade: usize,
    y: usize,
) -> VarId {
    let d = vector.len();
    let x = tape.leaf(Array2::from_shape_vec((1, d), vector.to_vec()).unwrap());
    let s = nn::linear(tape, p, "ord", x);
    let raw = p.id("ord.raw");
    // cumulative thresholds
    let mut theta: Vec<VarId> = Vec::with_capacity(y - 1);
    for j in 0..y - 1 {
        let rj = tape.slice_cols(raw, j, j + 1);
        if j == 0 {
            theta.push(rj);
        } else {
            let e = tape.exp(rj);
            let e1 = tape.add_scalar(e, 1.0);
            let sp = tape.ln(e1);
            theta.push(tape.add(theta[j - 1], sp));
        }
    }
    let upper = if grade < y {
        let diff = tape.sub(theta[grade - 1], s);
        tape.sigmoid(diff)
    } else {
        tape.leaf(Array2::ones((1, 1)))
    };
    let lower = if grade > 1 {
        let diff = tape.sub(theta[grade - 2], s);
        tape.sigmoid(diff)
    } else {
        tape.leaf(Array2::zeros((1, 1)))
    };
    let interval = tape.sub(upper, lower);
    let clamped = tape.clamp_min(interval, 1e-12);
    let lnp = tape.ln(clamped);
    tape.scale(lnp, -1.0)
}

/// Train the ordinal head on frozen document vectors.
pub fn train_ordinal(
    docs: &[GradedVector],
    y: usize,
    epochs: usize,
    lr: f64,
    weight_decay: f64,
    seed: u64,
) -> Result<(OrdinalHead, Vec<f64>)> {
    assert!(!docs.is_empty());
    let d = docs[0].vector.len();
    let mut head = OrdinalHead::new(d, y, seed);
    let mut adam = Adam::new(&head.store, lr, weight_decay);
    let mut losses = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..docs.len()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng_for(seed, &format!("ord-epoch-{epoch}")));
        let mut loss_sum = 0.0;
        for chunk in order.chunks(32) {
            let mut tape = Tape::new();
            let p = head.store.bind(&mut tape);
            let nodes: Vec<VarId> = chunk
                .iter()
                .map(|&i| ordinal_loss_node(&mut tape, &p, &docs[i].vector, docs[i].grade, y))
                .collect();
            let total = tape.add_n(&nodes);
            let loss = tape.scale(total, 1.0 / nodes.len() as f64);
            loss_sum += tape.value(loss)[[0, 0]] * nodes.len() as f64;
            let grads = tape.backward(loss);
            let arrays = p.collect_grads(&grads);
            adam.step(&mut head.store, &arrays, None);
        }
        losses.push(loss_sum / docs.len() as f64);
    }
    Ok((head, losses))
}

// ── prediction dump ─────────────────────────────────────────────────────

/// One evaluated document, as dumped to the predictions JSONL.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    #[serde(rename = "true")]
    pub truth: usize,
    pub pred: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub votes: BTreeMap<usize, usize>,
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
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

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn graded(id: &str, grade: usize, vector: Vec<f64>) -> GradedVector {
        GradedVector {
            id: id.to_string(),
            grade,
            vector,
        }
    }

    /// Vectors whose first coordinate encodes the grade, with mild noise.
    fn ordered_vectors(y: usize, per_grade: usize, seed: u64) -> Vec<GradedVector> {
        let mut rng = rng_for(seed, "ordered-vectors");
        let mut out = Vec::new();
        for g in 1..=y {
            for k in 0..per_grade {
                let mut v = vec![g as f64; 1];
                for _ in 0..3 {
                    v.push(rng.gen_range(-0.3..0.3));
                }
                out.push(graded(&format!("v{g}-{k}"), g, v));
            }
        }
        out
    }

    #[test]
    fn balanced_subsets_use_each_doc_once() {
        let docs = ordered_vectors(3, 4, 1);
        let grades: Vec<usize> = docs.iter().map(|d| d.grade).collect();
        let subsets = build_subsets(&grades, 3, 5).unwrap();
        assert_eq!(subsets.len(), 4);
        let mut seen = std::collections::BTreeMap::new();
        for s in &subsets {
            assert_eq!(s.members.len(), 3);
            let gs: Vec<usize> = s.members.iter().map(|&i| grades[i]).collect();
            assert_eq!(gs, vec![1, 2, 3], "one doc per grade in grade order");
            for &m in &s.members {
                *seen.entry(m).or_insert(0) += 1;
            }
        }
        // balanced case: every document appears exactly once
        assert_eq!(seen.len(), 12);
        assert!(seen.values().all(|&c| c == 1));
    }

    #[test]
    fn unbalanced_grades_are_resampled() {
        // grade counts (4, 2, 4)
        let mut grades = vec![1; 4];
        grades.extend(vec![2; 2]);
        grades.extend(vec![3; 4]);
        let subsets = build_subsets(&grades, 3, 9).unwrap();
        assert_eq!(subsets.len(), 4);
        // grade-2 documents fill 4 slots from 2 docs: two appearances each
        // on average
        let g2_slots: usize = subsets
            .iter()
            .flat_map(|s| &s.members)
            .filter(|&&m| grades[m] == 2)
            .count();
        assert_eq!(g2_slots, 4);
    }

    #[test]
    fn subsets_are_deterministic() {
        let grades = vec![1, 1, 2, 2, 3, 3];
        let a = build_subsets(&grades, 3, 11).unwrap();
        let b = build_subsets(&grades, 3, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_grade_is_named() {
        let grades = vec![1, 1, 3];
        match build_subsets(&grades, 3, 0) {
            Err(Error::MissingGrade { grade: 2, max: 3 }) => {}
            other => panic!("expected MissingGrade, got {other:?}"),
        }
    }

    #[test]
    fn pair_counts_match_formula() {
        for y in 2..=6 {
            let docs: Vec<GradedVector> = (1..=y)
                .map(|g| graded(&format!("d{g}"), g, vec![g as f64]))
                .collect();
            let subset = DataSubset {
                members: (0..y).collect(),
            };
            let pairs = make_pairs(&subset, &docs);
            assert_eq!(pairs.len(), y * (y - 1));
            // antisymmetry and the ±2 example
            for p in &pairs {
                let reverse = pairs
                    .iter()
                    .find(|q| q.vec_a == p.vec_b && q.vec_b == p.vec_a)
                    .unwrap();
                assert_eq!(p.diff_label, -reverse.diff_label);
                assert_ne!(p.diff_label, 0, "no intra-subset grade repeats");
            }
        }
    }

    #[test]
    fn pair_direction_examples() {
        let docs = vec![
            graded("a", 1, vec![1.0]),
            graded("b", 2, vec![2.0]),
            graded("c", 3, vec![3.0]),
        ];
        let subset = DataSubset {
            members: vec![0, 1, 2],
        };
        let pairs = make_pairs(&subset, &docs);
        let p13 = pairs
            .iter()
            .find(|p| p.vec_a == vec![1.0] && p.vec_b == vec![3.0])
            .unwrap();
        assert_eq!(p13.diff_label, -2);
        let p31 = pairs
            .iter()
            .find(|p| p.vec_a == vec![3.0] && p.vec_b == vec![1.0])
            .unwrap();
        assert_eq!(p31.diff_label, 2);
    }

    #[test]
    fn zero_head_gives_uniform_distribution() {
        let mut head = PairHead::new(3, 4, 0);
        head.store.get_mut("rank.w").fill(0.0);
        assert_eq!(head.classes(), 7);
        let logits = head.logits(&[1.0, 2.0, 3.0], &[0.5, 0.5, 0.5]).unwrap();
        assert_eq!(logits.len(), 7);
        assert!(logits.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let head = PairHead::new(3, 3, 0);
        assert!(head.logits(&[1.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn antisymmetric_weights_flip_the_predicted_sign() {
        let y = 3;
        let d = 2;
        let mut head = PairHead::new(d, y, 3);
        // mirror class c <-> 2(Y-1)-c and swap the two vector blocks
        let classes = 2 * y - 1;
        let mut w = Array2::zeros((2 * d, classes));
        let mut rng = rng_for(4, "antisym");
        for j in 0..d {
            for c in 0..classes {
                w[[j, c]] = rng.gen_range(-1.0..1.0);
            }
        }
        for j in 0..d {
            for c in 0..classes {
                // block b of class c equals block a of the mirrored class
                w[[d + j, c]] = w[[j, classes - 1 - c]];
            }
        }
        head.store.get_mut("rank.w").assign(&w);
        head.store.get_mut("rank.b").fill(0.0);

        let a = vec![0.7, -0.2];
        let b = vec![-0.4, 0.9];
        let fwd = head.logits(&a, &b).unwrap();
        let rev = head.logits(&b, &a).unwrap();
        for c in 0..classes {
            assert!((fwd[c] - rev[classes - 1 - c]).abs() < 1e-12);
        }
        let d_fwd = head.predict_diff(&a, &b).unwrap();
        let d_rev = head.predict_diff(&b, &a).unwrap();
        assert_eq!(d_fwd, -d_rev);
    }

    #[test]
    fn ranking_learns_ordered_vectors() {
        let docs = ordered_vectors(4, 6, 21);
        let grades: Vec<usize> = docs.iter().map(|d| d.grade).collect();
        let subsets = build_subsets(&grades, 4, 1).unwrap();
        let cfg = RankingConfig {
            epochs: 150,
            lr: 5e-2,
            ..RankingConfig::default()
        };
        let (head, losses) = train_ranking(&subsets, &docs, 4, &cfg).unwrap();
        assert!(losses.last().unwrap() < losses.first().unwrap());
        let acc = pair_accuracy(&head, &subsets, &docs).unwrap();
        assert!(acc >= 0.9, "pair accuracy {acc} below 0.9");
    }

    #[test]
    fn single_subset_loss_collapses() {
        let docs = vec![
            graded("a", 1, vec![1.0, 0.0]),
            graded("b", 2, vec![2.0, 0.5]),
            graded("c", 3, vec![3.0, -0.5]),
        ];
        let subsets = vec![DataSubset {
            members: vec![0, 1, 2],
        }];
        let cfg = RankingConfig {
            epochs: 500,
            lr: 0.1,
            weight_decay: 0.0,
            ..RankingConfig::default()
        };
        let (_, losses) = train_ranking(&subsets, &docs, 3, &cfg).unwrap();
        assert!(*losses.last().unwrap() < 0.05, "loss {:?}", losses.last());
    }

    #[test]
    fn ranking_training_is_deterministic() {
        let docs = ordered_vectors(3, 4, 2);
        let grades: Vec<usize> = docs.iter().map(|d| d.grade).collect();
        let subsets = build_subsets(&grades, 3, 7).unwrap();
        let cfg = RankingConfig {
            epochs: 5,
            ..RankingConfig::default()
        };
        let (a, _) = train_ranking(&subsets, &docs, 3, &cfg).unwrap();
        let (b, _) = train_ranking(&subsets, &docs, 3, &cfg).unwrap();
        assert_eq!(a.store.get("rank.w"), b.store.get("rank.w"));
    }

    #[test]
    fn data_amplification_matches_expansion() {
        let docs = ordered_vectors(4, 5, 3);
        let grades: Vec<usize> = docs.iter().map(|d| d.grade).collect();
        let subsets = build_subsets(&grades, 4, 1).unwrap();
        let total: usize = subsets.iter().map(|s| make_pairs(s, &docs).len()).sum();
        assert_eq!(total, subsets.len() * 4 * 3);
    }

    #[test]
    fn unanimous_votes_pick_that_grade() {
        let r = VoteRecord::from_candidates(vec![2, 2, 2, 2]);
        assert_eq!(r.winner, 2);
    }

    #[test]
    fn vote_ties_pick_lowest_grade() {
        let r = VoteRecord::from_candidates(vec![2, 3, 3, 2]);
        assert_eq!(r.winner, 2);
        assert_eq!(r.counts[&2], 2);
        assert_eq!(r.counts[&3], 2);
    }

    #[test]
    fn candidates_are_clamped_to_grade_range() {
        // head that always predicts the most negative difference
        let y = 3;
        let mut head = PairHead::new(1, y, 0);
        head.store.get_mut("rank.w").fill(0.0);
        let mut b = Array2::zeros((1, 2 * y - 1));
        b[[0, 0]] = 10.0; // class 0 = diff −2
        head.store.get_mut("rank.b").assign(&b);
        let docs = vec![
            graded("a", 1, vec![0.0]),
            graded("b", 2, vec![0.0]),
            graded("c", 3, vec![0.0]),
        ];
        let subsets = vec![DataSubset {
            members: vec![0, 1, 2],
        }];
        let (grade, record) = infer_grade(&[0.0], &subsets, &docs, 1, &head).unwrap();
        // candidates: clamp(1−2)=1, clamp(2−2)=1, clamp(3−2)=1
        assert_eq!(grade, 1);
        assert_eq!(record.counts[&1], 3);
    }

    // ── ordinal head ────────────────────────────────────────────────────

    #[test]
    fn thresholds_are_strictly_increasing() {
        let t = thresholds_from_raw(&[-1.2, -3.0, 0.0, 2.0]);
        for w in t.windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn ordinal_loss_interval_arithmetic() {
        // σ(θ_y − s) = 0.9, σ(θ_{y−1} − s) = 0.1 → −ln 0.8
        let s = 0.0;
        let theta = vec![-(9f64.ln()), 9f64.ln()]; // σ = 0.1, 0.9 at s = 0
        let loss = ordinal_loss(s, 2, &theta);
        assert!((loss - (-(0.8f64.ln()))).abs() < 1e-12);
    }

    #[test]
    fn ordinal_loss_vanishes_far_below_first_threshold() {
        let theta = vec![0.0, 2.0];
        let loss = ordinal_loss(-40.0, 1, &theta);
        assert!(loss < 1e-12);
    }

    #[test]
    fn ordinal_loss_matches_cumulative_link_oracle() {
        let mut rng = rng_for(8, "ordinal-grid");
        for _ in 0..200 {
            let mut theta: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            theta.sort_by(|a, b| a.partial_cmp(b).unwrap());
            theta[1] += 0.01;
            theta[2] += 0.02;
            let s: f64 = rng.gen_range(-3.0..3.0);
            let y = 4;
            for g in 1..=y {
                // independent route: cumulative differences written directly
                let upper = if g < y { sigmoid(theta[g - 1] - s) } else { 1.0 };
                let lower = if g > 1 { sigmoid(theta[g - 2] - s) } else { 0.0 };
                let expect = -(upper - lower).max(1e-12).ln();
                assert!((ordinal_loss(s, g, &theta) - expect).abs() < 1e-12);
            }
            // interval probabilities sum to 1
            let sum: f64 = interval_probs(s, &theta).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn ordinal_prediction_cases() {
        let theta = vec![0.0, 1.0];
        assert_eq!(predict_ordinal(-5.0, &theta), 1);
        assert_eq!(predict_ordinal(0.5, &theta), 2);
        assert_eq!(predict_ordinal(9.0, &theta), 3);
    }

    #[test]
    fn ordinal_prediction_is_monotone_in_score() {
        let theta = thresholds_from_raw(&[-0.7, 0.1, 0.4]);
        let mut prev = 0;
        for i in 0..100 {
            let s = -5.0 + i as f64 * 0.1;
            let g = predict_ordinal(s, &theta);
            assert!(g >= prev);
            prev = g;
        }
    }

    #[test]
    fn ordinal_prediction_agrees_with_interval_argmax_away_from_thresholds() {
        // near a threshold the count rule and the interval argmax can
        // disagree by construction of the logistic link; away from the
        // thresholds they coincide
        let theta = vec![-3.0, 0.0, 3.0];
        for i in 0..240 {
            let s = -6.0 + i as f64 * 0.05;
            if theta.iter().any(|t| (t - s).abs() < 0.3) {
                continue;
            }
            let probs = interval_probs(s, &theta);
            let by_argmax = argmax_lowest(&probs) + 1;
            assert_eq!(predict_ordinal(s, &theta), by_argmax, "at score {s}");
        }
    }

    #[test]
    fn ordinal_head_learns_ordered_vectors() {
        let docs = ordered_vectors(4, 8, 31);
        let (head, losses) = train_ordinal(&docs, 4, 120, 5e-2, 0.0, 2).unwrap();
        assert!(losses.last().unwrap() < losses.first().unwrap());
        let hits = docs.iter().filter(|d| head.predict(&d.vector) == d.grade).count();
        let acc = hits as f64 / docs.len() as f64;
        assert!(acc >= 0.9, "ordinal accuracy {acc}");
    }

    #[test]
    fn prediction_dump_schema() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("preds.jsonl");
        let mut votes = BTreeMap::new();
        votes.insert(2, 5);
        votes.insert(3, 1);
        write_predictions(
            &path,
            &[PredictionRecord {
                id: "doc-1".into(),
                truth: 2,
                pred: 2,
                votes,
            }],
        )
        .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text.trim(),
            "{\"id\":\"doc-1\",\"true\":2,\"pred\":2,\"votes\":{\"2\":5,\"3\":1}}"
        );
    }
}
