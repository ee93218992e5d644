//! The aspect-level model (LSTM+ATT), the document-level classifier, and the
//! two ways of moving knowledge between them: layer-wise value copies
//! ([`transfer_init`]) and storage sharing ([`bind_shared`]).

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::corpus::{EncodedAspect, EncodedDoc, Label, PAD};
use crate::error::{Error, Result};
use crate::layers::{self, AttentionParams, LstmParams, OutputParams};
use crate::rng::StreamRng;
use crate::tape::{Tape, Var};
use crate::tensor::{Param, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub vocab: usize,
    pub emb_dim: usize,
    pub hidden: usize,
    pub classes: usize,
}

/// A parameter with its stable name. `pad_row` marks tables whose PAD row
/// must never be updated.
#[derive(Clone, Debug)]
pub struct NamedParam<T> {
    pub name: String,
    pub param: Param<T>,
    pub pad_row: bool,
}

impl<T> NamedParam<T> {
    fn new(name: impl Into<String>, param: &Param<T>) -> Self {
        NamedParam {
            name: name.into(),
            param: param.clone(),
            pad_row: false,
        }
    }
}

/// Document representation fed to the output layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DocRep {
    /// Last hidden state (pretraining).
    Last,
    /// Mean over hidden states (multi-task training).
    Mean,
}

/// Dropout source for training-mode forwards: rate plus RNG stream.
pub type Dropout<'a> = Option<(f64, &'a mut StreamRng)>;

#[derive(Clone, Debug)]
pub struct AspectParams<T> {
    pub embedding: Param<T>,
    pub lstm: LstmParams<T>,
    pub attn: AttentionParams<T>,
    pub out: OutputParams<T>,
}

#[derive(Clone, Debug)]
pub struct DocParams<T> {
    pub embedding: Param<T>,
    pub lstm: LstmParams<T>,
    pub out: OutputParams<T>,
}

fn embedding_param<T: Real>(base: &Tensor<T>) -> Param<T> {
    Param::new(base.clone())
}

fn check_chain<T: Real>(embedding: &Param<T>, lstm: &LstmParams<T>, out: &OutputParams<T>) -> Result<ModelDims> {
    lstm.validate()?;
    let e = embedding.shape();
    if e.len() != 2 || e[1] != lstm.input_dim() || out.w.shape()[1] != lstm.hidden_dim() || out.b.shape() != [out.classes()] {
        return Err(Error::shape(
            "model",
            format!(
                "embedding {e:?}, lstm input {}, hidden {}, output {:?}",
                lstm.input_dim(),
                lstm.hidden_dim(),
                out.w.shape()
            ),
        ));
    }
    Ok(ModelDims {
        vocab: e[0],
        emb_dim: e[1],
        hidden: lstm.hidden_dim(),
        classes: out.classes(),
    })
}

impl<T: Real> AspectParams<T> {
    /// Scratch initialization: the embedding table is a copy of `base`,
    /// everything else is drawn from `seed`.
    pub fn init(base: &Tensor<T>, hidden: usize, seed: u64) -> Self {
        let d = base.cols();
        AspectParams {
            embedding: embedding_param(base),
            lstm: LstmParams::init(d, hidden, seed, "aspect/lstm"),
            attn: AttentionParams::init(hidden, d, seed, "aspect/attn.w_a"),
            out: OutputParams::init(hidden, Label::COUNT, seed, "aspect/out"),
        }
    }

    pub fn dims(&self) -> Result<ModelDims> {
        let dims = check_chain(&self.embedding, &self.lstm, &self.out)?;
        if self.attn.w_a.shape() != [dims.hidden, dims.emb_dim] {
            return Err(Error::shape("model", format!("W_a {:?}", self.attn.w_a.shape())));
        }
        Ok(dims)
    }

    pub fn named(&self) -> Vec<NamedParam<T>> {
        let mut v = vec![NamedParam {
            pad_row: true,
            ..NamedParam::new("embedding", &self.embedding)
        }];
        v.extend(self.lstm.named().map(|(n, p)| NamedParam::new(format!("lstm.{n}"), p)));
        v.push(NamedParam::new("attn.w_a", &self.attn.w_a));
        v.extend(self.out.named().map(|(n, p)| NamedParam::new(format!("out.{n}"), p)));
        v
    }

    pub fn deep_clone(&self) -> Self {
        AspectParams {
            embedding: self.embedding.deep_clone(),
            lstm: self.lstm.deep_clone(),
            attn: self.attn.deep_clone(),
            out: self.out.deep_clone(),
        }
    }

    pub fn cast<U: Real>(&self) -> AspectParams<U> {
        AspectParams {
            embedding: self.embedding.cast(),
            lstm: self.lstm.cast(),
            attn: self.attn.cast(),
            out: self.out.cast(),
        }
    }

    pub fn predict(&self, sample: &EncodedAspect) -> Result<Prediction> {
        let mut tape = Tape::inference();
        let out = aspect_forward(&mut tape, sample, self, None)?;
        Ok(Prediction::new(
            tape.value(out.probs).to_f64_vec(),
            tape.value(out.alpha).to_f64_vec(),
        ))
    }
}

impl<T: Real> DocParams<T> {
    pub fn init(base: &Tensor<T>, hidden: usize, seed: u64) -> Self {
        let d = base.cols();
        DocParams {
            embedding: embedding_param(base),
            lstm: LstmParams::init(d, hidden, seed, "doc/lstm"),
            out: OutputParams::init(hidden, Label::COUNT, seed, "doc/out"),
        }
    }

    pub fn dims(&self) -> Result<ModelDims> {
        check_chain(&self.embedding, &self.lstm, &self.out)
    }

    pub fn named(&self) -> Vec<NamedParam<T>> {
        let mut v = vec![NamedParam {
            pad_row: true,
            ..NamedParam::new("embedding", &self.embedding)
        }];
        v.extend(self.lstm.named().map(|(n, p)| NamedParam::new(format!("lstm.{n}"), p)));
        v.extend(self.out.named().map(|(n, p)| NamedParam::new(format!("out.{n}"), p)));
        v
    }

    pub fn deep_clone(&self) -> Self {
        DocParams {
            embedding: self.embedding.deep_clone(),
            lstm: self.lstm.deep_clone(),
            out: self.out.deep_clone(),
        }
    }

    pub fn cast<U: Real>(&self) -> DocParams<U> {
        DocParams {
            embedding: self.embedding.cast(),
            lstm: self.lstm.cast(),
            out: self.out.cast(),
        }
    }

    pub fn predict(&self, doc: &EncodedDoc, rep: DocRep) -> Result<Prediction> {
        let mut tape = Tape::inference();
        let p = doc_forward(&mut tape, doc, self, rep, None)?;
        Ok(Prediction::new(tape.value(p).to_f64_vec(), Vec::new()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub alpha: Vec<f64>,
    pub label: Label,
}

impl Prediction {
    fn new(probs: Vec<f64>, alpha: Vec<f64>) -> Self {
        // First maximum wins ties.
        let best = probs
            .iter()
            .enumerate()
            .fold(0, |best, (i, &p)| if p > probs[best] { i } else { best });
        Prediction {
            label: Label::from_index(best).expect("three-class output"),
            probs,
            alpha,
        }
    }
}

pub struct AspectOutput {
    pub probs: Var,
    pub alpha: Var,
}

/// Embeds the sentence, encodes it with the LSTM, attends with the averaged
/// target embedding, applies dropout to the pooled vector when `dropout` is
/// given, and classifies.
pub fn aspect_forward<T: Real>(
    tape: &mut Tape<T>,
    sample: &EncodedAspect,
    params: &AspectParams<T>,
    dropout: Dropout<'_>,
) -> Result<AspectOutput> {
    let embedded = tape.gather(&params.embedding, &sample.ids)?;
    let hidden = layers::lstm_forward(tape, embedded, &params.lstm)?;
    let target = layers::target_rep(tape, &params.embedding, sample.target_ids())?;
    let w_a = tape.param(&params.attn.w_a);
    let (z, alpha) = layers::attention(tape, hidden, target, w_a, None)?;
    let z = apply_dropout(tape, z, dropout)?;
    let probs = layers::output_layer(tape, z, &params.out)?;
    Ok(AspectOutput { probs, alpha })
}

pub fn doc_forward<T: Real>(
    tape: &mut Tape<T>,
    doc: &EncodedDoc,
    params: &DocParams<T>,
    rep: DocRep,
    dropout: Dropout<'_>,
) -> Result<Var> {
    if doc.ids.is_empty() {
        return Err(Error::invalid("empty document"));
    }
    let embedded = tape.gather(&params.embedding, &doc.ids)?;
    let hidden = layers::lstm_forward(tape, embedded, &params.lstm)?;
    let n = doc.ids.len();
    let r = match rep {
        DocRep::Last => {
            let last = tape.slice(hidden, 0, n - 1, n)?;
            tape.reshape(last, &[params.lstm.hidden_dim()])?
        }
        DocRep::Mean => tape.mean_rows(hidden)?,
    };
    let r = apply_dropout(tape, r, dropout)?;
    layers::output_layer(tape, r, &params.out)
}

fn apply_dropout<T: Real>(tape: &mut Tape<T>, x: Var, dropout: Dropout<'_>) -> Result<Var> {
    match dropout {
        Some((rate, rng)) => layers::dropout(tape, x, rate, Some(rng)),
        None => Ok(x),
    }
}

/// Transferable layer groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Layer {
    Embedding,
    Lstm,
    Output,
}

impl Layer {
    pub const ALL: [Layer; 3] = [Layer::Embedding, Layer::Lstm, Layer::Output];

    pub fn as_str(self) -> &'static str {
        match self {
            Layer::Embedding => "embedding",
            Layer::Lstm => "lstm",
            Layer::Output => "output",
        }
    }
}

/// Which layers pretraining copies into the aspect model.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct TransferMask(BTreeSet<Layer>);

impl TransferMask {
    pub fn none() -> Self {
        TransferMask(BTreeSet::new())
    }

    pub fn all() -> Self {
        Self::of(&Layer::ALL)
    }

    pub fn of(layers: &[Layer]) -> Self {
        TransferMask(layers.iter().copied().collect())
    }

    pub fn contains(&self, layer: Layer) -> bool {
        self.0.contains(&layer)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn layers(&self) -> impl Iterator<Item = Layer> + '_ {
        self.0.iter().copied()
    }

    /// The layer-selective settings compared in the ablation study, with
    /// their row labels, in table order, followed by full transfer.
    pub fn ablation_settings() -> Vec<(&'static str, TransferMask)> {
        use Layer::*;
        vec![
            ("LSTM only", Self::of(&[Lstm])),
            ("Embeddings only", Self::of(&[Embedding])),
            ("Output layer only", Self::of(&[Output])),
            ("Without LSTM", Self::of(&[Embedding, Output])),
            ("Without embeddings", Self::of(&[Lstm, Output])),
            ("Without output layer", Self::of(&[Embedding, Lstm])),
            ("Full transfer", Self::all()),
        ]
    }
}

impl fmt::Display for TransferMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("none");
        }
        let names: Vec<&str> = self.0.iter().map(|l| l.as_str()).collect();
        f.write_str(&names.join("+"))
    }
}

impl FromStr for TransferMask {
    type Err = Error;

    /// Accepts `none`, `all`, or layer names joined by `,` or `+`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "" | "none" | "{}" => return Ok(Self::none()),
            "all" => return Ok(Self::all()),
            _ => {}
        }
        let mut set = BTreeSet::new();
        for part in s.trim_matches(|c| c == '{' || c == '}').split([',', '+']) {
            let layer = match part.trim() {
                "embedding" | "embeddings" => Layer::Embedding,
                "lstm" => Layer::Lstm,
                "output" => Layer::Output,
                other => return Err(Error::invalid(format!("unknown layer `{other}` in mask"))),
            };
            set.insert(layer);
        }
        Ok(TransferMask(set))
    }
}

/// Builds an aspect model from a trained document model: masked layers are
/// value copies of the document layers, the rest (and always `W_a`) are the
/// scratch initialization for `seed`, with the embedding table taken from
/// `base`.
pub fn transfer_init<T: Real>(
    doc: &DocParams<T>,
    mask: &TransferMask,
    base: &Tensor<T>,
    hidden: usize,
    seed: u64,
) -> Result<AspectParams<T>> {
    let dims = doc.dims()?;
    if base.shape() != [dims.vocab, dims.emb_dim] || hidden != dims.hidden {
        return Err(Error::shape(
            "transfer_init",
            format!(
                "document model {dims:?} vs base embedding {:?}, hidden {hidden}",
                base.shape()
            ),
        ));
    }
    let scratch = AspectParams::init(base, hidden, seed);
    Ok(AspectParams {
        embedding: if mask.contains(Layer::Embedding) {
            doc.embedding.deep_clone()
        } else {
            scratch.embedding
        },
        lstm: if mask.contains(Layer::Lstm) {
            doc.lstm.deep_clone()
        } else {
            scratch.lstm
        },
        attn: scratch.attn,
        out: if mask.contains(Layer::Output) {
            doc.out.deep_clone()
        } else {
            scratch.out
        },
    })
}

/// Aspect and document models whose embedding table and LSTM are one
/// storage. Attention and both output heads stay task-specific.
#[derive(Clone, Debug)]
pub struct SharedBinding<T> {
    pub aspect: AspectParams<T>,
    pub doc: DocParams<T>,
}

pub fn bind_shared<T: Real>(aspect: AspectParams<T>, doc: DocParams<T>) -> Result<SharedBinding<T>> {
    let (a, d) = (aspect.dims()?, doc.dims()?);
    let same_lstm = aspect
        .lstm
        .named()
        .iter()
        .zip(doc.lstm.named())
        .all(|((_, x), (_, y))| x.shape() == y.shape());
    if a != d || !same_lstm {
        return Err(Error::shape("bind_shared", format!("aspect {a:?} vs document {d:?}")));
    }
    let doc = DocParams {
        embedding: aspect.embedding.clone(),
        lstm: aspect.lstm.clone(),
        out: doc.out,
    };
    Ok(SharedBinding { aspect, doc })
}

impl<T: Real> SharedBinding<T> {
    pub fn is_bound(&self) -> bool {
        self.aspect.embedding.ptr_eq(&self.doc.embedding)
            && self
                .aspect
                .lstm
                .named()
                .iter()
                .zip(self.doc.lstm.named())
                .all(|((_, a), (_, b))| a.ptr_eq(b))
    }

    /// Every trainable parameter once: the aspect model's, then the document
    /// head as `doc.out.*`.
    pub fn named(&self) -> Vec<NamedParam<T>> {
        let mut v = self.aspect.named();
        v.extend(self.doc.out.named().map(|(n, p)| NamedParam::new(format!("doc.out.{n}"), p)));
        v
    }
}

/// Zeroes the PAD row of an embedding table in place.
pub fn zero_pad_row<T: Real>(table: &mut Tensor<T>) {
    table.row_mut(PAD).iter_mut().for_each(|v| *v = T::zero());
}
