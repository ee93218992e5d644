//! Attention-based LSTM models for aspect-level sentiment classification,
//! with document-level knowledge transfer by pretraining (PRET), multi-task
//! learning (MULT) and their combination.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`], [`tape`], [`gradcheck`]: dense tensors, reverse-mode
//!   differentiation and a finite-difference oracle.
//! - [`corpus`]: aspect/document samples, vocabulary, embeddings, splits.
//! - [`layers`]: embedding lookup, LSTM, target attention, output head,
//!   dropout.
//! - [`model`]: the aspect model, the document model, layer transfer and
//!   parameter sharing; [`checkpoint`] persists them.
//! - [`train`]: losses, RMSProp and the four training regimes.
//! - [`metrics`]: accuracy, macro-F1, t-tests and attention dumps.
//! - [`experiment`]: data preparation and multi-seed runs; [`synthetic`]
//!   generates seeded toy corpora.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod synthetic;
pub mod tape;
pub mod tensor;
pub mod train;

pub use config::{Regime, RunConfig, Selection};
pub use corpus::{AspectSample, DocSample, EmbeddingMatrix, Label, Vocab};
pub use error::{Error, Result};
pub use gradcheck::{grad_check, GradCheckReport};
pub use metrics::{ConfusionMatrix, RunSet};
pub use model::{AspectParams, DocParams, Layer, ModelDims, SharedBinding, TransferMask};
pub use tape::{Tape, Var};
pub use tensor::{Param, Real, Tensor};
