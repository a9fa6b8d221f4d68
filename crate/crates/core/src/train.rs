//! Hybrid training objective for the hierarchical encoder: supervised
//! cross-entropy with training-signal annealing plus a consistency loss that
//! aligns the difficulty-embedding document score with the (sharpened,
//! confidence-masked) supervised prediction.
//!
//! The consistency target is treated as a constant within a step; gradients
//! flow through the sentence scores, the document attention, and the encoder
//! below them.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, VarId};
use crate::corpus::TokenizedDocument;
use crate::distill;
use crate::encoder::{self, EncoderConfig};
use crate::error::{Error, Result};
use crate::params::{Adam, ParamStore};
use crate::rng::rng_for;

const PROB_FLOOR: f64 = 1e-12;

/// Annealing schedule for the supervised signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TsaSchedule {
    #[default]
    Linear,
}

/// Training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the consistency loss.
    pub lambda: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub tsa_schedule: TsaSchedule,
    /// Confidence-mask threshold.
    pub beta: f64,
    /// Sharpening temperature.
    pub tau: f64,
    /// Sentence records below this confidence are dropped at extraction.
    pub min_confidence: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1.0,
            lr: 1e-3,
            weight_decay: 5e-4,
            epochs: 30,
            batch_size: 16,
            tsa_schedule: TsaSchedule::Linear,
            beta: 0.45,
            tau: 0.85,
            min_confidence: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::InvalidConfig(m));
        if self.lambda < 0.0 {
            return err(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return err(format!("tau must be in (0, 1], got {}", self.tau));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return err(format!("beta must be in [0, 1], got {}", self.beta));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return err("epochs and batch_size must be positive".into());
        }
        if self.lr <= 0.0 {
            return err(format!("learning rate must be positive, got {}", self.lr));
        }
        Ok(())
    }
}

// ── pure loss components ────────────────────────────────────────────────

/// Mean cross-entropy of probability rows against 1-based grade labels,
/// with the true-class probability clamped at `1e-12`.
pub fn supervised_loss(probs: &[Vec<f64>], grades: &[usize]) -> f64 {
    assert_eq!(probs.len(), grades.len());
    let n = probs.len() as f64;
    probs
        .iter()
        .zip(grades)
        .map(|(p, &g)| -p[g - 1].max(PROB_FLOOR).ln())
        .sum::<f64>()
        / n
}

/// `KL(p ‖ q)` with `q` given as log-probabilities; `0·ln 0 = 0`.
pub fn kl_divergence(p: &[f64], log_q: &[f64]) -> f64 {
    p.iter()
        .zip(log_q)
        .map(|(&pk, &lq)| {
            if pk <= 0.0 {
                0.0
            } else {
                pk * (pk.ln() - lq)
            }
        })
        .sum()
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
    row.iter().map(|x| x - lse).collect()
}

/// Mean `KL(target ‖ softmax(score))` over examples.
pub fn consistency_loss(targets: &[Vec<f64>], scores: &[Vec<f64>]) -> f64 {
    assert_eq!(targets.len(), scores.len());
    let n = targets.len() as f64;
    targets
        .iter()
        .zip(scores)
        .map(|(t, s)| kl_divergence(t, &log_softmax(s)))
        .sum::<f64>()
        / n
}

/// Linear TSA threshold: `η = (step/total)·(1 − 1/Y) + 1/Y`, computed as
/// one exact integer ratio so the endpoints are exactly `1/Y` and `1`.
pub fn tsa_threshold(step: usize, total_steps: usize, y: usize) -> f64 {
    assert!(total_steps > 0 && step <= total_steps);
    ((step * (y - 1) + total_steps) as f64) / ((total_steps * y) as f64)
}

/// Mask out examples whose true-class probability already exceeds `eta` and
/// average the survivors (0 when none survive).
pub fn apply_tsa_mask(losses: &[f64], true_class_probs: &[f64], eta: f64) -> f64 {
    assert_eq!(losses.len(), true_class_probs.len());
    let kept: Vec<f64> = losses
        .iter()
        .zip(true_class_probs)
        .filter(|(_, &p)| p <= eta)
        .map(|(&l, _)| l)
        .collect();
    if kept.is_empty() {
        0.0
    } else {
        kept.iter().sum::<f64>() / kept.len() as f64
    }
}

/// An example joins the unsupervised loss iff its maximum predicted
/// probability reaches `beta` (closed threshold).
pub fn confidence_mask(doc_probs: &[Vec<f64>], beta: f64) -> Vec<bool> {
    doc_probs
        .iter()
        .map(|p| p.iter().cloned().fold(f64::NEG_INFINITY, f64::max) >= beta)
        .collect()
}

/// Raise to `1/tau` and renormalize.
pub fn sharpen(probs: &[f64], tau: f64) -> Vec<f64> {
    let powered: Vec<f64> = probs.iter().map(|p| p.max(0.0).powf(1.0 / tau)).collect();
    let sum: f64 = powered.iter().sum();
    powered.iter().map(|p| p / sum).collect()
}

// ── joint step ──────────────────────────────────────────────────────────

/// Loss breakdown of one optimizer step.
#[derive(Debug, Clone, Copy)]
pub struct StepStats {
    pub sup: f64,
    pub unsup: f64,
    pub total: f64,
    pub eta: f64,
    /// Examples surviving the TSA mask.
    pub sup_kept: usize,
    /// Examples surviving the confidence mask.
    pub unsup_kept: usize,
    /// Argmax-correct predictions in the batch (pre-update).
    pub correct: usize,
}

/// Masking and target state of one objective evaluation. Masks and
/// sharpened targets are treated as constants of the step; freezing them
/// makes the objective a smooth function of the parameters (which the
/// finite-difference gradient checks rely on).
#[derive(Debug, Clone)]
pub struct ObjectiveState {
    /// Examples surviving the TSA mask.
    pub sup_keep: Vec<bool>,
    /// Examples surviving the confidence mask.
    pub conf_keep: Vec<bool>,
    /// Sharpened consistency targets, one per example.
    pub targets: Vec<Vec<f64>>,
    /// Supervised probability rows, one per example.
    pub probs: Vec<Vec<f64>>,
}

/// Nodes and values of one joint-objective evaluation.
pub struct Objective {
    pub total: VarId,
    pub sup: f64,
    pub unsup: f64,
    pub state: ObjectiveState,
    /// Argmax-correct predictions in the batch.
    pub correct: usize,
}

/// Build the hybrid objective on a tape: TSA-masked supervised
/// cross-entropy plus `λ ×` confidence-masked KL between the sharpened
/// supervised distribution (a constant) and the difficulty-embedding
/// document score. When `fixed` is given, its masks and targets are used
/// instead of ones computed from the live probabilities.
pub fn build_joint_objective(
    tape: &mut Tape,
    p: &crate::params::Bound,
    enc_cfg: &EncoderConfig,
    cfg: &TrainConfig,
    batch: &[TokenizedDocument],
    vocab_size: usize,
    eta: f64,
    fixed: Option<&ObjectiveState>,
) -> Result<Objective> {
    assert!(!batch.is_empty());
    let mut ce_nodes = Vec::with_capacity(batch.len());
    let mut kl_nodes = Vec::with_capacity(batch.len());
    let mut probs_rows = Vec::with_capacity(batch.len());
    let mut correct = 0;

    for (i, doc) in batch.iter().enumerate() {
        let fwd = encoder::forward_document(tape, p, enc_cfg, doc, vocab_size)?;
        let probs_val: Vec<f64> = tape.value(fwd.probs).iter().cloned().collect();

        let class = tape.slice_cols(fwd.probs, doc.grade - 1, doc.grade);
        let clamped = tape.clamp_min(class, PROB_FLOOR);
        let ln_p = tape.ln(clamped);
        ce_nodes.push(tape.scale(ln_p, -1.0));

        if argmax_lowest(&probs_val) + 1 == doc.grade {
            correct += 1;
        }

        if cfg.lambda > 0.0 {
            let scores = distill::sentence_scores(tape, p, fwd.u, enc_cfg.heads);
            let rhat = distill::document_score(tape, scores, fwd.doc_attn);
            let log_q = tape.log_softmax_rows(rhat);
            // sharpened supervised distribution as a constant target
            let target = match fixed {
                Some(f) => f.targets[i].clone(),
                None => sharpen(&probs_val, cfg.tau),
            };
            let plogp: f64 = target
                .iter()
                .map(|&t| if t > 0.0 { t * t.ln() } else { 0.0 })
                .sum();
            let t_const = tape.leaf(Array2::from_shape_vec((1, enc_cfg.y), target).unwrap());
            let cross = tape.mul(t_const, log_q);
            let cross_sum = tape.sum(cross);
            let neg = tape.scale(cross_sum, -1.0);
            kl_nodes.push(tape.add_scalar(neg, plogp));
        }
        probs_rows.push(probs_val);
    }

    let state = match fixed {
        Some(f) => ObjectiveState {
            probs: probs_rows,
            ..f.clone()
        },
        None => {
            let sup_keep = probs_rows
                .iter()
                .zip(batch)
                .map(|(pr, d)| pr[d.grade - 1] <= eta)
                .collect();
            let conf_keep = confidence_mask(&probs_rows, cfg.beta);
            let targets = probs_rows.iter().map(|pr| sharpen(pr, cfg.tau)).collect();
            ObjectiveState {
                sup_keep,
                conf_keep,
                targets,
                probs: probs_rows,
            }
        }
    };

    // TSA-masked supervised mean
    let kept_ce: Vec<VarId> = ce_nodes
        .iter()
        .zip(&state.sup_keep)
        .filter(|(_, &k)| k)
        .map(|(&n, _)| n)
        .collect();
    let sup_node = if kept_ce.is_empty() {
        tape.leaf(Array2::zeros((1, 1)))
    } else {
        let total = tape.add_n(&kept_ce);
        tape.scale(total, 1.0 / kept_ce.len() as f64)
    };

    // confidence-masked consistency mean
    let kept_kl: Vec<VarId> = kl_nodes
        .iter()
        .zip(&state.conf_keep)
        .filter(|(_, &k)| k)
        .map(|(&n, _)| n)
        .collect();
    let unsup_node = if cfg.lambda > 0.0 && !kept_kl.is_empty() {
        let total = tape.add_n(&kept_kl);
        Some(tape.scale(total, 1.0 / kept_kl.len() as f64))
    } else {
        None
    };

    let total_node = match unsup_node {
        Some(u) => {
            let scaled = tape.scale(u, cfg.lambda);
            tape.add(sup_node, scaled)
        }
        None => sup_node,
    };

    Ok(Objective {
        total: total_node,
        sup: tape.value(sup_node)[[0, 0]],
        unsup: unsup_node.map_or(0.0, |u| tape.value(u)[[0, 0]]),
        state,
        correct,
    })
}

/// One optimizer step of the hybrid objective over a batch.
pub fn joint_step(
    store: &mut ParamStore,
    adam: &mut Adam,
    enc_cfg: &EncoderConfig,
    cfg: &TrainConfig,
    batch: &[TokenizedDocument],
    vocab_size: usize,
    step: usize,
    total_steps: usize,
    trainable: Option<&[usize]>,
) -> Result<StepStats> {
    let mut tape = Tape::new();
    let p = store.bind(&mut tape);
    let eta = tsa_threshold(step, total_steps, enc_cfg.y);
    let obj = build_joint_objective(&mut tape, &p, enc_cfg, cfg, batch, vocab_size, eta, None)?;

    let total = tape.value(obj.total)[[0, 0]];
    let finite = total.is_finite()
        && obj.state.probs.iter().flatten().all(|v| v.is_finite());
    if !finite {
        return Err(Error::NonFiniteLoss {
            step,
            sup: obj.sup,
            unsup: obj.unsup,
        });
    }

    let grads = tape.backward(obj.total);
    let grad_arrays = p.collect_grads(&grads);
    adam.step(store, &grad_arrays, trainable);

    Ok(StepStats {
        sup: obj.sup,
        unsup: obj.unsup,
        total,
        eta,
        sup_kept: obj.state.sup_keep.iter().filter(|&&k| k).count(),
        unsup_kept: obj.state.conf_keep.iter().filter(|&&k| k).count(),
        correct: obj.correct,
    })
}

// ── training loop ───────────────────────────────────────────────────────

/// Per-epoch summary written to the training log.
#[derive(Debug, Clone, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_sup: f64,
    pub loss_unsup: f64,
    pub loss: f64,
    pub train_acc: f64,
    pub eta: f64,
}

pub struct TrainedEncoder {
    pub store: ParamStore,
    pub log: Vec<EpochLog>,
}

/// Train the encoder plus the difficulty embedding with the hybrid
/// objective. Deterministic under `cfg.seed`.
pub fn train_encoder(
    docs: &[TokenizedDocument],
    vocab_size: usize,
    enc_cfg: &EncoderConfig,
    cfg: &TrainConfig,
) -> Result<TrainedEncoder> {
    enc_cfg.validate()?;
    cfg.validate()?;
    if docs.is_empty() {
        return Err(Error::EmptyDocument { id: None });
    }
    let mut store = ParamStore::new();
    encoder::register_encoder(&mut store, enc_cfg, vocab_size, cfg.seed);
    distill::register_mdem(&mut store, enc_cfg.d(), enc_cfg.y, cfg.seed);
    let mut adam = Adam::new(&store, cfg.lr, cfg.weight_decay);

    let batches_per_epoch = docs.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches_per_epoch;
    let mut step = 0;
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..docs.len()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng_for(cfg.seed, &format!("epoch-{epoch}")));

        let mut sup_sum = 0.0;
        let mut unsup_sum = 0.0;
        let mut total_sum = 0.0;
        let mut correct = 0;
        let mut last_eta = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<TokenizedDocument> =
                chunk.iter().map(|&i| docs[i].clone()).collect();
            let stats = joint_step(
                &mut store,
                &mut adam,
                enc_cfg,
                cfg,
                &batch,
                vocab_size,
                step,
                total_steps,
                None,
            )?;
            let w = batch.len() as f64;
            sup_sum += stats.sup * w;
            unsup_sum += stats.unsup * w;
            total_sum += stats.total * w;
            correct += stats.correct;
            last_eta = stats.eta;
            step += 1;
        }
        let n = docs.len() as f64;
        log.push(EpochLog {
            epoch: epoch + 1,
            loss_sup: sup_sum / n,
            loss_unsup: unsup_sum / n,
            loss: total_sum / n,
            train_acc: correct as f64 / n,
            eta: last_eta,
        });
    }
    Ok(TrainedEncoder { store, log })
}

/// Argmax grade predictions (ties resolve to the lowest grade).
pub fn predict_grades(
    store: &ParamStore,
    enc_cfg: &EncoderConfig,
    docs: &[TokenizedDocument],
    vocab_size: usize,
) -> Result<Vec<usize>> {
    docs.iter()
        .map(|doc| {
            let out = encoder::encode(store, enc_cfg, doc, vocab_size)?;
            Ok(argmax_lowest(&out.doc_probs) + 1)
        })
        .collect()
}

/// Index of the maximum value; the first (lowest) index wins ties.
pub fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = k;
        }
    }
    best
}

/// Write the per-epoch training log as CSV.
pub fn write_training_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "loss_sup", "loss_unsup", "loss", "train_acc", "eta"])?;
    for e in log {
        w.write_record([
            e.epoch.to_string(),
            format!("{}", e.loss_sup),
            format!("{}", e.loss_unsup),
            format!("{}", e.loss),
            format!("{}", e.train_acc),
            format!("{}", e.eta),
        ])?;
    }
    w.flush()?;
    Ok(())
}
