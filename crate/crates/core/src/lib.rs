//! Bidirectional long-document readability assessment.
//!
//! The crate implements both directions of a document/sentence readability
//! pipeline plus the evaluation and feature tooling around it:
//!
//! - [`corpus`] — graded-document ingestion, vocabularies, fixed-shape
//!   tokenized grids, stratified splits.
//! - [`encoder`] — the hierarchical document encoder (HHNN): a word layer
//!   with multidimensional context weights, a gated transformer sentence
//!   layer, and a source2token document layer.
//! - [`distill`] — the multi-head difficulty embedding matrix (MDEM) that
//!   scores sentences per readability level and distills a sentence-label
//!   corpus from document labels.
//! - [`train`] — the hybrid supervised + consistency objective with TSA,
//!   confidence masking, and sharpening.
//! - [`dsdr`] — the forward model: sentence-difficulty pretraining (EPTM),
//!   contextual sentence encoding, multi-view difficulty attention.
//! - [`ranking`] — pairwise grade-difference training with hard-voting
//!   inference, plus ordinal-regression and plain classification heads.
//! - [`metrics`] — accuracy, adjacent accuracy, weighted P/R/F1, quadratic
//!   weighted kappa.
//! - [`features`] — explicit lexical/POS/discourse/cohesion features emitted
//!   as CSV for external classifiers.
//!
//! Model math runs on a small reverse-mode [`autodiff`] tape in `f64`, which
//! keeps training deterministic and lets tests verify every gradient against
//! central finite differences.

pub mod autodiff;
pub mod corpus;
pub mod distill;
pub mod dsdr;
pub mod encoder;
pub mod error;
pub mod features;
pub mod metrics;
pub mod nn;
pub mod params;
pub mod ranking;
pub mod rng;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
