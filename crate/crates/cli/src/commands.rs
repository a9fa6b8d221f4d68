//! The pipeline commands. Every command is reproducible from
//! (config file, seed); every artifact carries the resolved config hash.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use readability_core::corpus::{
    self, Corpus, CorpusSplit, TokenizedDocument, Vocabulary,
};
use readability_core::distill::{self, SentenceRecord};
use readability_core::dsdr::{self, DsdrDocument, DsdrModel};
use readability_core::encoder::{self, EncoderConfig};
use readability_core::features::{self, FeatureResources, TaggedText};
use readability_core::metrics::{self, EvalReport};
use readability_core::params::Checkpoint;
use readability_core::ranking::{
    self, DataSubset, GradedVector, OrdinalHead, PairHead, PredictionRecord,
};
use readability_core::rng::derive_seed;
use readability_core::train::{self, argmax_lowest};

use crate::config::{Backbone, Head, RunConfig};
use crate::CliError;

// ── shared plumbing ─────────────────────────────────────────────────────

pub struct PreparedCorpus {
    pub corpus: Corpus,
    pub vocab: Vocabulary,
    pub split: CorpusSplit,
}

impl PreparedCorpus {
    /// Index of a document id in the raw corpus.
    fn raw_index(&self, id: &str) -> usize {
        self.corpus
            .raw
            .iter()
            .position(|r| r.id == id)
            .expect("split ids come from the corpus")
    }
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if !path.exists() {
        return Err(CliError::Config(format!(
            "{what} not found: {}",
            path.display()
        )));
    }
    Ok(())
}

/// Read the corpus, build the vocabulary, encode, and split. The split is
/// derived from the run seed, so training and evaluation agree on
/// membership.
pub fn load_corpus(cfg: &RunConfig) -> Result<PreparedCorpus, CliError> {
    let path = cfg
        .paths
        .corpus
        .as_ref()
        .ok_or_else(|| CliError::Config("missing corpus path (paths.corpus)".into()))?;
    require_file(path, "corpus file")?;
    let raws = corpus::read_jsonl(path)?;
    let prepared = Corpus::prepare(raws, &cfg.corpus.delimiters, cfg.corpus.tokenizer)?;
    let vocab = prepared.build_vocabulary(cfg.corpus.min_freq);
    let tokenized = prepared.encode_all(&vocab, cfg.corpus.m_max, cfg.corpus.n_max)?;
    let split = corpus::stratified_split(
        &tokenized,
        cfg.corpus.split_ratio,
        derive_seed(cfg.seed, "split"),
    )?;
    Ok(PreparedCorpus {
        corpus: prepared,
        vocab,
        split,
    })
}

fn ensure_out_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let out = cfg.out_dir();
    std::fs::create_dir_all(&out)
        .map_err(|e| CliError::Config(format!("cannot create output directory: {e}")))?;
    Ok(out)
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    config_hash: String,
    seed: u64,
}

fn write_manifest(out: &Path, command: &str, cfg: &RunConfig) -> Result<(), CliError> {
    let manifest = RunManifest {
        command,
        config_hash: cfg.hash(),
        seed: cfg.seed,
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::Data(e.to_string()))?;
    std::fs::write(out.join("run.json"), text).map_err(|e| CliError::Data(e.to_string()))?;
    Ok(())
}

fn checkpoint_config(cfg: &RunConfig, y: usize) -> serde_json::Value {
    // the output location is not part of the run's identity
    let mut stripped = cfg.clone();
    stripped.paths.out = None;
    serde_json::json!({ "run": stripped.as_json(), "y": y })
}

fn load_checkpoint(path: &Path, kind: &str) -> Result<(Checkpoint, RunConfig, usize), CliError> {
    require_file(path, &format!("{kind} checkpoint"))?;
    let ck = Checkpoint::load(path)?;
    if ck.kind != kind {
        return Err(CliError::Config(format!(
            "expected a {kind} checkpoint at {}, found {}",
            path.display(),
            ck.kind
        )));
    }
    let run: RunConfig = serde_json::from_value(ck.config["run"].clone())
        .map_err(|e| CliError::Config(format!("unreadable checkpoint config: {e}")))?;
    let y = ck.config["y"]
        .as_u64()
        .ok_or_else(|| CliError::Config("checkpoint missing level count".into()))? as usize;
    Ok((ck, run, y))
}

// ── split-corpus ────────────────────────────────────────────────────────

pub fn cmd_split_corpus(cfg: &RunConfig) -> Result<(), CliError> {
    let out = ensure_out_dir(cfg)?;
    let pc = load_corpus(cfg)?;
    let pick = |docs: &[TokenizedDocument]| -> Vec<corpus::RawDocument> {
        docs.iter()
            .map(|d| pc.corpus.raw[pc.raw_index(&d.id)].clone())
            .collect()
    };
    corpus::write_jsonl(&out.join("train.jsonl"), &pick(&pc.split.train))?;
    corpus::write_jsonl(&out.join("test.jsonl"), &pick(&pc.split.test))?;
    write_manifest(&out, "split-corpus", cfg)?;
    println!(
        "split {} documents into {} train / {} test",
        pc.corpus.raw.len(),
        pc.split.train.len(),
        pc.split.test.len()
    );
    Ok(())
}

// ── train-hhnn ──────────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
pub struct TrainSummary {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub y: usize,
    pub vocab_size: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
    pub sentence_records: usize,
}

pub fn cmd_train_hhnn(cfg: &RunConfig) -> Result<(), CliError> {
    let out = ensure_out_dir(cfg)?;
    let pc = load_corpus(cfg)?;
    let enc_cfg = cfg.encoder_config(pc.corpus.y);
    enc_cfg.validate()?;
    let train_cfg = cfg.train_config();
    let trained = train::train_encoder(&pc.split.train, pc.vocab.len(), &enc_cfg, &train_cfg)?;

    let test_acc = if pc.split.test.is_empty() {
        None
    } else {
        let preds = train::predict_grades(&trained.store, &enc_cfg, &pc.split.test, pc.vocab.len())?;
        let truths: Vec<usize> = pc.split.test.iter().map(|d| d.grade).collect();
        Some(metrics::accuracy(&preds, &truths))
    };

    let records = distill::extract_sentence_labels(
        &trained.store,
        &enc_cfg,
        &pc.split.train,
        &pc.vocab,
        train_cfg.min_confidence,
    )?;

    let ck = Checkpoint::from_store(
        "hhnn",
        checkpoint_config(cfg, pc.corpus.y),
        &cfg.hash(),
        Some(pc.vocab.tokens().to_vec()),
        &trained.store,
    );
    ck.save(&out.join("checkpoint.json"))?;
    distill::write_sentence_corpus(&out.join("sentences.jsonl"), &records)?;
    train::write_training_log(&out.join("train_log.csv"), &trained.log)?;
    let summary = TrainSummary {
        command: "train-hhnn".into(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        y: pc.corpus.y,
        vocab_size: pc.vocab.len(),
        n_train: pc.split.train.len(),
        n_test: pc.split.test.len(),
        train_acc: trained.log.last().map(|e| e.train_acc).unwrap_or(0.0),
        test_acc,
        sentence_records: records.len(),
    };
    std::fs::write(
        out.join("summary.json"),
        serde_json::to_string_pretty(&summary).map_err(|e| CliError::Data(e.to_string()))?,
    )
    .map_err(|e| CliError::Data(e.to_string()))?;
    write_manifest(&out, "train-hhnn", cfg)?;
    println!(
        "trained encoder: train_acc={:.4} test_acc={} sentences={}",
        summary.train_acc,
        summary
            .test_acc
            .map(|a| format!("{a:.4}"))
            .unwrap_or_else(|| "n/a".into()),
        summary.sentence_records
    );
    Ok(())
}

// ── label-sentences ─────────────────────────────────────────────────────

pub fn cmd_label_sentences(cfg: &RunConfig) -> Result<(), CliError> {
    let out = ensure_out_dir(cfg)?;
    let (ck, ck_run, y) = load_checkpoint(&out.join("checkpoint.json"), "hhnn")?;
    let store = ck.to_store()?;
    let vocab = Vocabulary::from_tokens(ck.vocab.clone().unwrap_or_default());
    let pc = load_corpus(cfg)?;
    if pc.corpus.y != y {
        return Err(CliError::Data(format!(
            "corpus has {} levels but the checkpoint was trained with {y}",
            pc.corpus.y
        )));
    }
    // re-encode the training split with the checkpoint vocabulary
    let enc_cfg = ck_run.encoder_config(y);
    let docs = reencode(&pc, &pc.split.train, &vocab, &enc_cfg)?;
    let records = distill::extract_sentence_labels(
        &store,
        &enc_cfg,
        &docs,
        &vocab,
        cfg.train.min_confidence,
    )?;
    distill::write_sentence_corpus(&out.join("sentences.jsonl"), &records)?;
    write_manifest(&out, "label-sentences", cfg)?;
    println!("labeled {} sentences", records.len());
    Ok(())
}

/// Re-encode documents (picked by id from the corpus) with a given
/// vocabulary and shape limits.
fn reencode(
    pc: &PreparedCorpus,
    docs: &[TokenizedDocument],
    vocab: &Vocabulary,
    enc_cfg: &EncoderConfig,
) -> Result<Vec<TokenizedDocument>, CliError> {
    docs.iter()
        .map(|d| {
            let i = pc.raw_index(&d.id);
            Ok(corpus::encode_document(
                &pc.corpus.raw[i],
                &pc.corpus.sentences[i],
                vocab,
                enc_cfg.m_max,
                enc_cfg.n_max,
            )?)
        })
        .collect()
}

// ── train-dsdrrm ────────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
pub struct DsdrrmSummary {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub y: usize,
    pub backbone: String,
    pub dsdr_train_acc: Option<f64>,
    pub ranking_final_loss: f64,
    pub ordinal_final_loss: f64,
    pub n_train: usize,
}

fn backbone_name(b: Backbone) -> &'static str {
    match b {
        Backbone::Dsdr => "dsdr",
        Backbone::Hhnn => "hhnn",
    }
}

pub fn cmd_train_dsdrrm(cfg: &RunConfig) -> Result<(), CliError> {
    let out = ensure_out_dir(cfg)?;
    let pc = load_corpus(cfg)?;
    let y = pc.corpus.y;

    let (train_vectors, dsdr_train_acc) = match cfg.ranking.backbone {
        Backbone::Dsdr => {
            let sentence_path = match &cfg.paths.sentence_corpus {
                Some(p) => p.clone(),
                None => {
                    let default = out.join("sentences.jsonl");
                    if !default.exists() {
                        return Err(CliError::Config(format!(
                            "no sentence corpus at {} — run train-hhnn first or pass --sentence-corpus",
                            default.display()
                        )));
                    }
                    default
                }
            };
            require_file(&sentence_path, "sentence corpus")?;
            let records = distill::read_sentence_corpus(&sentence_path)?;
            let dsdr_cfg = cfg.dsdr_config();
            let all_docs = dsdr::docs_from_corpus(&pc.corpus, dsdr_cfg.n_max, dsdr_cfg.m_max);
            let train_docs: Vec<DsdrDocument> = pc
                .split
                .train
                .iter()
                .map(|d| all_docs[pc.raw_index(&d.id)].clone())
                .collect();
            let training = dsdr::train_dsdr(&train_docs, &records, y, &dsdr_cfg)?;
            let ck = Checkpoint::from_store(
                "dsdr",
                checkpoint_config(cfg, y),
                &cfg.hash(),
                Some(training.model.vocab.tokens().to_vec()),
                &training.model.store,
            );
            ck.save(&out.join("dsdr.json"))?;
            let vectors = train_docs
                .iter()
                .map(|d| {
                    Ok(GradedVector {
                        id: d.id.clone(),
                        grade: d.grade,
                        vector: dsdr::doc_vector(&training.model, &d.sentences)?,
                    })
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            (vectors, Some(training.train_acc))
        }
        Backbone::Hhnn => {
            let (ck, ck_run, ck_y) = load_checkpoint(&out.join("checkpoint.json"), "hhnn")?;
            if ck_y != y {
                return Err(CliError::Data(format!(
                    "corpus has {y} levels but the encoder checkpoint was trained with {ck_y}"
                )));
            }
            let store = ck.to_store()?;
            let vocab = Vocabulary::from_tokens(ck.vocab.clone().unwrap_or_default());
            let enc_cfg = ck_run.encoder_config(y);
            let docs = reencode(&pc, &pc.split.train, &vocab, &enc_cfg)?;
            let vectors = docs
                .iter()
                .map(|d| {
                    let enc = encoder::encode(&store, &enc_cfg, d, vocab.len())?;
                    Ok(GradedVector {
                        id: d.id.clone(),
                        grade: d.grade,
                        vector: enc.doc_vector,
                    })
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            (vectors, None)
        }
    };

    let grades: Vec<usize> = train_vectors.iter().map(|v| v.grade).collect();
    let subsets = ranking::build_subsets(&grades, y, derive_seed(cfg.seed, "subsets"))?;
    let rank_cfg = ranking::RankingConfig {
        p_subsets: cfg.ranking.p,
        epochs: cfg.ranking.epochs,
        lr: cfg.ranking.lr,
        weight_decay: cfg.ranking.weight_decay,
        seed: derive_seed(cfg.seed, "ranking"),
    };
    let (pair_head, rank_losses) = ranking::train_ranking(&subsets, &train_vectors, y, &rank_cfg)?;
    Checkpoint::from_store(
        "ranking",
        checkpoint_config(cfg, y),
        &cfg.hash(),
        None,
        &pair_head.store,
    )
    .save(&out.join("ranking.json"))?;

    let (ord_head, ord_losses) = ranking::train_ordinal(
        &train_vectors,
        y,
        cfg.ordinal.epochs,
        cfg.ordinal.lr,
        cfg.ordinal.weight_decay,
        derive_seed(cfg.seed, "ordinal"),
    )?;
    Checkpoint::from_store(
        "ordinal",
        checkpoint_config(cfg, y),
        &cfg.hash(),
        None,
        &ord_head.store,
    )
    .save(&out.join("ordinal.json"))?;

    let summary = DsdrrmSummary {
        command: "train-dsdrrm".into(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        y,
        backbone: backbone_name(cfg.ranking.backbone).into(),
        dsdr_train_acc,
        ranking_final_loss: rank_losses.last().copied().unwrap_or(f64::NAN),
        ordinal_final_loss: ord_losses.last().copied().unwrap_or(f64::NAN),
        n_train: train_vectors.len(),
    };
    std::fs::write(
        out.join("dsdrrm-summary.json"),
        serde_json::to_string_pretty(&summary).map_err(|e| CliError::Data(e.to_string()))?,
    )
    .map_err(|e| CliError::Data(e.to_string()))?;
    write_manifest(&out, "train-dsdrrm", cfg)?;
    println!(
        "trained heads on {} backbone: ranking loss {:.4}, ordinal loss {:.4}",
        summary.backbone, summary.ranking_final_loss, summary.ordinal_final_loss
    );
    Ok(())
}

// ── evaluate ────────────────────────────────────────────────────────────

#[derive(Serialize, Deserialize, Clone)]
pub struct FullReport {
    #[serde(flatten)]
    pub report: EvalReport,
    pub head: String,
    pub backbone: String,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
pub struct MultiSeedReport {
    pub runs: Vec<FullReport>,
    pub mean: BTreeMap<String, f64>,
    pub seeds: Vec<u64>,
    pub head: String,
    pub backbone: String,
    pub config_hash: String,
}

fn head_name(h: Head) -> &'static str {
    match h {
        Head::Classification => "cls",
        Head::Ordinal => "ordinal",
        Head::Ranking => "ranking",
    }
}

/// Document vectors from the configured backbone for the given documents.
fn backbone_vectors(
    cfg: &RunConfig,
    pc: &PreparedCorpus,
    out: &Path,
    docs: &[TokenizedDocument],
) -> Result<Vec<GradedVector>, CliError> {
    match cfg.ranking.backbone {
        Backbone::Dsdr => {
            let model = load_dsdr_model(out)?;
            let all = dsdr::docs_from_corpus(&pc.corpus, model.cfg.n_max, model.cfg.m_max);
            docs.iter()
                .map(|d| {
                    let dd = &all[pc.raw_index(&d.id)];
                    Ok(GradedVector {
                        id: d.id.clone(),
                        grade: d.grade,
                        vector: dsdr::doc_vector(&model, &dd.sentences)?,
                    })
                })
                .collect()
        }
        Backbone::Hhnn => {
            let (ck, ck_run, y) = load_checkpoint(&out.join("checkpoint.json"), "hhnn")?;
            let store = ck.to_store()?;
            let vocab = Vocabulary::from_tokens(ck.vocab.clone().unwrap_or_default());
            let enc_cfg = ck_run.encoder_config(y);
            let encoded = reencode(pc, docs, &vocab, &enc_cfg)?;
            encoded
                .iter()
                .map(|d| {
                    let enc = encoder::encode(&store, &enc_cfg, d, vocab.len())?;
                    Ok(GradedVector {
                        id: d.id.clone(),
                        grade: d.grade,
                        vector: enc.doc_vector,
                    })
                })
                .collect()
        }
    }
}

fn load_dsdr_model(out: &Path) -> Result<DsdrModel, CliError> {
    let (ck, ck_run, y) = load_checkpoint(&out.join("dsdr.json"), "dsdr")?;
    let store = ck.to_store()?;
    let vocab = Vocabulary::from_tokens(ck.vocab.clone().unwrap_or_default());
    Ok(DsdrModel {
        store,
        vocab,
        cfg: ck_run.dsdr_config(),
        y,
    })
}

fn load_pair_head(out: &Path) -> Result<PairHead, CliError> {
    let (ck, _, y) = load_checkpoint(&out.join("ranking.json"), "ranking")?;
    let store = ck.to_store()?;
    let d = store.get("rank.w").nrows() / 2;
    Ok(PairHead { store, y, d })
}

fn load_ordinal_head(out: &Path) -> Result<OrdinalHead, CliError> {
    let (ck, _, y) = load_checkpoint(&out.join("ordinal.json"), "ordinal")?;
    let store = ck.to_store()?;
    let d = store.get("ord.w").nrows();
    Ok(OrdinalHead { store, y, d })
}

/// Evaluate the configured head over the test split and write the report
/// plus the prediction dump.
pub fn evaluate_single(cfg: &RunConfig) -> Result<FullReport, CliError> {
    let out = ensure_out_dir(cfg)?;
    let pc = load_corpus(cfg)?;
    let y = pc.corpus.y;
    if pc.split.test.is_empty() {
        return Err(CliError::Data(
            "test split is empty; nothing to evaluate".into(),
        ));
    }
    let truths: Vec<usize> = pc.split.test.iter().map(|d| d.grade).collect();
    let ids: Vec<String> = pc.split.test.iter().map(|d| d.id.clone()).collect();

    let (preds, votes): (Vec<usize>, Vec<BTreeMap<usize, usize>>) = match cfg.eval.head {
        Head::Classification => {
            let preds = match cfg.ranking.backbone {
                Backbone::Dsdr => {
                    let model = load_dsdr_model(&out)?;
                    let all = dsdr::docs_from_corpus(&pc.corpus, model.cfg.n_max, model.cfg.m_max);
                    pc.split
                        .test
                        .iter()
                        .map(|d| {
                            let dd = &all[pc.raw_index(&d.id)];
                            let probs = dsdr::predict_probs(&model, &dd.sentences)?;
                            Ok(argmax_lowest(&probs) + 1)
                        })
                        .collect::<Result<Vec<_>, CliError>>()?
                }
                Backbone::Hhnn => {
                    let (ck, ck_run, ck_y) = load_checkpoint(&out.join("checkpoint.json"), "hhnn")?;
                    if ck_y != y {
                        return Err(CliError::Data(format!(
                            "corpus has {y} levels but the checkpoint was trained with {ck_y}"
                        )));
                    }
                    let store = ck.to_store()?;
                    let vocab = Vocabulary::from_tokens(ck.vocab.clone().unwrap_or_default());
                    let enc_cfg = ck_run.encoder_config(y);
                    let docs = reencode(&pc, &pc.split.test, &vocab, &enc_cfg)?;
                    train::predict_grades(&store, &enc_cfg, &docs, vocab.len())?
                }
            };
            let votes = vec![BTreeMap::new(); preds.len()];
            (preds, votes)
        }
        Head::Ordinal => {
            let head = load_ordinal_head(&out)?;
            let vectors = backbone_vectors(cfg, &pc, &out, &pc.split.test)?;
            let preds = vectors.iter().map(|v| head.predict(&v.vector)).collect();
            let votes = vec![BTreeMap::new(); pc.split.test.len()];
            (preds, votes)
        }
        Head::Ranking => {
            let head = load_pair_head(&out)?;
            let train_vectors = backbone_vectors(cfg, &pc, &out, &pc.split.train)?;
            let test_vectors = backbone_vectors(cfg, &pc, &out, &pc.split.test)?;
            let grades: Vec<usize> = train_vectors.iter().map(|v| v.grade).collect();
            let subsets: Vec<DataSubset> =
                ranking::build_subsets(&grades, y, derive_seed(cfg.seed, "subsets"))?;
            let mut preds = Vec::with_capacity(test_vectors.len());
            let mut votes = Vec::with_capacity(test_vectors.len());
            for v in &test_vectors {
                let (grade, record) =
                    ranking::infer_grade(&v.vector, &subsets, &train_vectors, cfg.ranking.p, &head)?;
                preds.push(grade);
                votes.push(record.counts);
            }
            (preds, votes)
        }
    };

    let report = metrics::evaluate(&preds, &truths, y);
    let full = FullReport {
        report,
        head: head_name(cfg.eval.head).into(),
        backbone: backbone_name(cfg.ranking.backbone).into(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
    };
    std::fs::write(
        out.join("report.json"),
        serde_json::to_string_pretty(&full).map_err(|e| CliError::Data(e.to_string()))?,
    )
    .map_err(|e| CliError::Data(e.to_string()))?;

    let records: Vec<PredictionRecord> = ids
        .iter()
        .zip(&truths)
        .zip(preds.iter().zip(votes))
        .map(|((id, &truth), (&pred, votes))| PredictionRecord {
            id: id.clone(),
            truth,
            pred,
            votes,
        })
        .collect();
    ranking::write_predictions(&out.join("predictions.jsonl"), &records)?;
    write_manifest(&out, "evaluate", cfg)?;
    Ok(full)
}

/// Stages needed before `evaluate` can run for the configured head and
/// backbone.
pub fn run_pipeline_stages(cfg: &RunConfig) -> Result<(), CliError> {
    match (cfg.ranking.backbone, cfg.eval.head) {
        (Backbone::Hhnn, Head::Classification) => cmd_train_hhnn(cfg),
        (Backbone::Hhnn, _) => {
            cmd_train_hhnn(cfg)?;
            cmd_train_dsdrrm(cfg)
        }
        (Backbone::Dsdr, _) => {
            cmd_train_hhnn(cfg)?;
            cmd_train_dsdrrm(cfg)
        }
    }
}

pub fn cmd_evaluate(cfg: &RunConfig, seeds: Option<Vec<u64>>) -> Result<(), CliError> {
    match seeds {
        None => {
            let full = evaluate_single(cfg)?;
            println!(
                "{} head on {} backbone: acc={:.4} adj={:.4} f1={:.4} qwk={:.4}",
                full.head, full.backbone, full.report.acc, full.report.adj_acc,
                full.report.f1_weighted, full.report.qwk
            );
            Ok(())
        }
        Some(seeds) => {
            let out = ensure_out_dir(cfg)?;
            let mut runs = Vec::with_capacity(seeds.len());
            for &s in &seeds {
                let mut sub = cfg.clone();
                sub.seed = s;
                sub.paths.out = Some(out.join(format!("seed-{s}")));
                run_pipeline_stages(&sub)?;
                runs.push(evaluate_single(&sub)?);
            }
            let mut mean = BTreeMap::new();
            let n = runs.len() as f64;
            let avg = |f: &dyn Fn(&FullReport) -> f64| runs.iter().map(|r| f(r)).sum::<f64>() / n;
            mean.insert("acc".to_string(), avg(&|r| r.report.acc));
            mean.insert("adj_acc".to_string(), avg(&|r| r.report.adj_acc));
            mean.insert("f1_weighted".to_string(), avg(&|r| r.report.f1_weighted));
            mean.insert(
                "precision_weighted".to_string(),
                avg(&|r| r.report.precision_weighted),
            );
            mean.insert(
                "recall_weighted".to_string(),
                avg(&|r| r.report.recall_weighted),
            );
            mean.insert("qwk".to_string(), avg(&|r| r.report.qwk));
            let multi = MultiSeedReport {
                runs,
                mean,
                seeds,
                head: head_name(cfg.eval.head).into(),
                backbone: backbone_name(cfg.ranking.backbone).into(),
                config_hash: cfg.hash(),
            };
            std::fs::write(
                out.join("report.json"),
                serde_json::to_string_pretty(&multi).map_err(|e| CliError::Data(e.to_string()))?,
            )
            .map_err(|e| CliError::Data(e.to_string()))?;
            println!(
                "mean over {} seeds: acc={:.4} qwk={:.4}",
                multi.seeds.len(),
                multi.mean["acc"],
                multi.mean["qwk"]
            );
            Ok(())
        }
    }
}

// ── extract-features ────────────────────────────────────────────────────

pub fn cmd_extract_features(cfg: &RunConfig) -> Result<(), CliError> {
    let out = ensure_out_dir(cfg)?;
    let path = cfg
        .paths
        .corpus
        .as_ref()
        .ok_or_else(|| CliError::Config("missing corpus path (paths.corpus)".into()))?;
    require_file(path, "corpus file")?;
    let raws = corpus::read_jsonl(path)?;
    let prepared = Corpus::prepare(raws, &cfg.corpus.delimiters, cfg.corpus.tokenizer)?;
    let resources = match &cfg.paths.resources {
        Some(dir) => {
            require_file(dir, "resources directory")?;
            FeatureResources::load_dir(dir)?
        }
        None => FeatureResources::empty(),
    };
    let names = features::registry();
    let mut rows = Vec::with_capacity(prepared.raw.len());
    for (raw, sents) in prepared.raw.iter().zip(&prepared.sentences) {
        let tagged = TaggedText::from_raw(raw, sents.clone())?;
        let fv = features::extract_all(&tagged, &resources, None)?;
        rows.push((raw.id.clone(), raw.grade, fv));
    }
    features::write_features_csv(&out.join("features.csv"), &rows, &names)?;
    write_manifest(&out, "extract-features", cfg)?;
    println!("extracted {} feature rows x {} columns", rows.len(), names.len());
    Ok(())
}

// ── sentence-record helpers shared with tests ───────────────────────────

/// Agreement rate between distilled sentence labels and the grade of the
/// document each sentence came from, over records at or above the
/// confidence floor.
pub fn sentence_label_agreement(
    records: &[SentenceRecord],
    doc_grades: &BTreeMap<String, usize>,
    min_confidence: f64,
) -> Option<f64> {
    let confident: Vec<&SentenceRecord> = records
        .iter()
        .filter(|r| r.confidence >= min_confidence)
        .collect();
    if confident.is_empty() {
        return None;
    }
    let hits = confident
        .iter()
        .filter(|r| doc_grades.get(&r.doc_id) == Some(&r.label))
        .count();
    Some(hits as f64 / confident.len() as f64)
}
