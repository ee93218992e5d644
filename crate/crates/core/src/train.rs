//! Losses, RMSProp, and the training loops for the document model and the
//! aspect model (alone or jointly with the document task).

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{RunConfig, Selection};
use crate::corpus::{EncodedAspect, EncodedDoc, Label};
use crate::error::{Error, Result};
use crate::metrics::ConfusionMatrix;
use crate::model::{self, bind_shared, AspectParams, DocParams, DocRep, Dropout, NamedParam};
use crate::rng::{self, StreamRng};
use crate::tape::{Tape, Var};
use crate::tensor::Real;

/// Probabilities are clamped here before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Batch mean of `-log p_i(c_i)`.
pub fn cross_entropy<T: Real>(tape: &mut Tape<T>, probs: &[Var], labels: &[Label]) -> Result<Var> {
    if probs.is_empty() || probs.len() != labels.len() {
        return Err(Error::invalid(format!(
            "cross entropy over {} predictions and {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let mut terms = Vec::with_capacity(probs.len());
    for (&p, &l) in probs.iter().zip(labels) {
        if let Some(index) = tape.value(p).data().iter().position(|v| v.is_nan()) {
            return Err(Error::NonFinite {
                param: "probabilities".into(),
                index,
            });
        }
        let picked = tape.pick(p, l.index())?;
        terms.push(tape.log(picked, T::from_f64(PROB_FLOOR)));
    }
    let all = tape.concat(&terms, 0)?;
    let total = tape.sum(all);
    Ok(tape.scale(total, T::from_f64(-1.0 / probs.len() as f64)))
}

/// [`cross_entropy`] on plain probability rows.
pub fn cross_entropy_value(probs: &[Vec<f64>], labels: &[Label]) -> Result<f64> {
    if probs.is_empty() || probs.len() != labels.len() {
        return Err(Error::invalid("cross entropy needs one label per row"));
    }
    let mut total = 0.0;
    for (p, l) in probs.iter().zip(labels) {
        if let Some(index) = p.iter().position(|v| v.is_nan()) {
            return Err(Error::NonFinite {
                param: "probabilities".into(),
                index,
            });
        }
        total -= p[l.index()].max(PROB_FLOOR).ln();
    }
    Ok(total / probs.len() as f64)
}

/// `L = J + λU`.
pub fn combined_loss<T: Real>(tape: &mut Tape<T>, j: Var, u: Var, lambda: f64) -> Result<Var> {
    let weighted = tape.scale(u, T::from_f64(lambda));
    tape.add(j, weighted)
}

pub fn combined_loss_value(j: f64, u: f64, lambda: f64) -> f64 {
    j + lambda * u
}

fn reborrow<'a>(d: &'a mut Dropout<'_>) -> Dropout<'a> {
    d.as_mut().map(|(rate, rng)| (*rate, &mut **rng))
}

/// Mean cross entropy of the aspect model over `batch`.
pub fn aspect_loss<T: Real>(
    tape: &mut Tape<T>,
    batch: &[&EncodedAspect],
    params: &AspectParams<T>,
    mut dropout: Dropout<'_>,
) -> Result<Var> {
    let mut probs = Vec::with_capacity(batch.len());
    for s in batch {
        probs.push(model::aspect_forward(tape, s, params, reborrow(&mut dropout))?.probs);
    }
    let labels: Vec<Label> = batch.iter().map(|s| s.label).collect();
    cross_entropy(tape, &probs, &labels)
}

/// Mean cross entropy of the document model over `batch`.
pub fn doc_loss<T: Real>(
    tape: &mut Tape<T>,
    batch: &[&EncodedDoc],
    params: &DocParams<T>,
    rep: DocRep,
    mut dropout: Dropout<'_>,
) -> Result<Var> {
    let mut probs = Vec::with_capacity(batch.len());
    for d in batch {
        probs.push(model::doc_forward(tape, d, params, rep, reborrow(&mut dropout))?);
    }
    let labels: Vec<Label> = batch.iter().map(|d| d.label).collect();
    cross_entropy(tape, &probs, &labels)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RmsProp {
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
    /// Global gradient-norm clip; off when `None`.
    pub clip_norm: Option<f64>,
}

impl Default for RmsProp {
    fn default() -> Self {
        RmsProp {
            lr: 0.001,
            rho: 0.9,
            eps: 1e-8,
            clip_norm: None,
        }
    }
}

impl RmsProp {
    pub fn from_config(cfg: &RunConfig) -> Self {
        RmsProp {
            lr: cfg.lr,
            rho: cfg.rho,
            eps: cfg.eps,
            clip_norm: cfg.clip_norm,
        }
    }

    /// One update of every parameter from its accumulated gradient. A
    /// missing gradient counts as zero. Nothing is written unless every new
    /// value is finite.
    pub fn step<T: Real>(&self, params: &[NamedParam<T>], state: &mut RmsState<T>) -> Result<()> {
        if params.len() != state.acc.len() || params.iter().any(|p| !state.acc.contains_key(&p.name)) {
            return Err(Error::invalid("optimizer state does not match the parameter set"));
        }
        let grads: Vec<Option<Vec<T>>> = params.iter().map(|p| p.param.grad()).collect();
        let scale = match self.clip_norm {
            Some(c) => {
                let sq: f64 = grads.iter().flatten().flatten().map(|&g| g.as_f64().powi(2)).sum();
                let norm = sq.sqrt();
                if norm > c {
                    c / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let (rho, lr, eps, scale) = (
            T::from_f64(self.rho),
            T::from_f64(self.lr),
            T::from_f64(self.eps),
            T::from_f64(scale),
        );
        let one_minus_rho = T::one() - rho;

        let mut staged = Vec::with_capacity(params.len());
        for (p, g) in params.iter().zip(&grads) {
            let t = p.param.read();
            let s = &state.acc[&p.name];
            let frozen = if p.pad_row { t.cols() } else { 0 };
            let mut new_s = s.clone();
            let mut new_v = t.data().to_vec();
            if let Some(g) = g {
                for i in frozen..new_v.len() {
                    let gi = g[i] * scale;
                    let si = rho * s[i] + one_minus_rho * gi * gi;
                    let vi = new_v[i] - lr * gi / (si.sqrt() + eps);
                    if !si.is_finite() || !vi.is_finite() {
                        return Err(Error::NonFinite {
                            param: p.name.clone(),
                            index: i,
                        });
                    }
                    new_s[i] = si;
                    new_v[i] = vi;
                }
            } else {
                for v in &mut new_s[frozen..] {
                    *v = rho * *v;
                }
            }
            staged.push((new_s, new_v));
        }
        for (p, (s, v)) in params.iter().zip(staged) {
            state.acc.insert(p.name.clone(), s);
            p.param.write().data_mut().copy_from_slice(&v);
        }
        Ok(())
    }
}

/// Running averages of squared gradients, keyed by parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsState<T> {
    acc: BTreeMap<String, Vec<T>>,
}

impl<T: Real> RmsState<T> {
    pub fn new(params: &[NamedParam<T>]) -> Self {
        RmsState {
            acc: params
                .iter()
                .map(|p| (p.name.clone(), vec![T::zero(); p.param.read().numel()]))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&[T]> {
        self.acc.get(name).map(Vec::as_slice)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.acc.keys().map(String::as_str)
    }
}

pub fn rmsprop_step<T: Real>(opt: &RmsProp, params: &[NamedParam<T>], state: &mut RmsState<T>) -> Result<()> {
    opt.step(params, state)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean aspect loss `J` over the epoch's steps.
    pub train_loss: f64,
    /// Mean document loss `U` over the epoch's steps, under multi-task training.
    pub doc_loss: Option<f64>,
    /// Eval-mode accuracy on the training split.
    pub train_acc: f64,
    pub dev_acc: Option<f64>,
    pub dev_f1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct History {
    pub selection: String,
    pub epochs: Vec<EpochRecord>,
    /// Index into `epochs` of the retained checkpoint.
    pub best: usize,
}

impl History {
    /// The epoch maximizing the selection metric on dev (ties: the other
    /// metric, then the earlier epoch). Without a dev split, the last epoch.
    pub fn select(epochs: &[EpochRecord], selection: Selection) -> usize {
        let key = |r: &EpochRecord| {
            let (acc, f1) = (r.dev_acc.unwrap_or(f64::NEG_INFINITY), r.dev_f1.unwrap_or(f64::NEG_INFINITY));
            match selection {
                Selection::MacroF1 => (f1, acc),
                Selection::Accuracy => (acc, f1),
            }
        };
        if epochs.iter().all(|r| r.dev_acc.is_none()) {
            return epochs.len().saturating_sub(1);
        }
        let mut best = 0;
        for (i, r) in epochs.iter().enumerate().skip(1) {
            if key(r) > key(&epochs[best]) {
                best = i;
            }
        }
        best
    }

    pub fn best_record(&self) -> &EpochRecord {
        &self.epochs[self.best]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("history serialize") + "\n"
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DocEpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_acc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DocHistory {
    pub epochs: Vec<DocEpochRecord>,
    pub best: usize,
}

impl DocHistory {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("history serialize") + "\n"
    }
}

/// Confusion matrix of the aspect model over `samples`, evaluated in
/// parallel on the frozen parameters.
pub fn evaluate_aspect<T: Real>(params: &AspectParams<T>, samples: &[EncodedAspect]) -> Result<ConfusionMatrix> {
    let pairs = samples
        .par_iter()
        .map(|s| params.predict(s).map(|p| (s.label, p.label)))
        .collect::<Result<Vec<_>>>()?;
    let mut cm = ConfusionMatrix::new();
    for (g, p) in pairs {
        cm.add(g, p);
    }
    Ok(cm)
}

pub fn evaluate_doc<T: Real>(params: &DocParams<T>, docs: &[EncodedDoc], rep: DocRep) -> Result<ConfusionMatrix> {
    let pairs = docs
        .par_iter()
        .map(|d| params.predict(d, rep).map(|p| (d.label, p.label)))
        .collect::<Result<Vec<_>>>()?;
    let mut cm = ConfusionMatrix::new();
    for (g, p) in pairs {
        cm.add(g, p);
    }
    Ok(cm)
}

/// Endless reshuffled passes over `n` documents.
struct DocCycler {
    order: Vec<usize>,
    pos: usize,
    rng: StreamRng,
}

impl DocCycler {
    fn new(n: usize, rng: StreamRng) -> Self {
        DocCycler {
            order: (0..n).collect(),
            pos: n,
            rng,
        }
    }

    fn next_batch(&mut self, k: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn check_loss(value: f64, epoch: usize, step: usize) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence {
            epoch,
            step,
            loss: value,
        })
    }
}

fn dropout_of(rate: f64, rng: &mut StreamRng) -> Dropout<'_> {
    Some((rate, rng))
}

pub struct DocRun<T> {
    pub best: DocParams<T>,
    pub history: DocHistory,
}

/// Trains the document model on its own (last-hidden-state representation)
/// for `cfg.doc_epochs` epochs and keeps the epoch with the best dev
/// accuracy, or the last one when `dev` is empty.
pub fn pretrain_doc<T: Real>(
    params: DocParams<T>,
    train: &[EncodedDoc],
    dev: &[EncodedDoc],
    cfg: &RunConfig,
    seed: u64,
) -> Result<DocRun<T>> {
    if train.is_empty() {
        return Err(Error::invalid("no documents to pretrain on"));
    }
    if cfg.doc_epochs == 0 {
        return Err(Error::invalid("doc_epochs must be positive"));
    }
    let opt = RmsProp::from_config(cfg);
    let named = params.named();
    let mut state = RmsState::new(&named);
    let mut shuffle = rng::stream(seed, "pretrain/shuffle");
    let mut drop = rng::stream(seed, "pretrain/dropout");
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs: Vec<DocEpochRecord> = Vec::new();
    let mut best = params.deep_clone();
    let mut best_acc = f64::NEG_INFINITY;

    for epoch in 0..cfg.doc_epochs {
        order.shuffle(&mut shuffle);
        let mut loss_sum = 0.0;
        let mut steps = 0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            named.iter().for_each(|p| p.param.zero_grad());
            let mut tape = Tape::new();
            let batch: Vec<&EncodedDoc> = chunk.iter().map(|&i| &train[i]).collect();
            let loss = doc_loss(&mut tape, &batch, &params, DocRep::Last, dropout_of(cfg.dropout, &mut drop))?;
            let value = tape.value(loss).data()[0].as_f64();
            check_loss(value, epoch, step)?;
            tape.backward(loss)?;
            opt.step(&named, &mut state)?;
            loss_sum += value;
            steps += 1;
        }
        let dev_acc = if dev.is_empty() {
            None
        } else {
            Some(evaluate_doc(&params, dev, DocRep::Last)?.accuracy()?)
        };
        let score = dev_acc.unwrap_or(f64::INFINITY);
        if score > best_acc || dev_acc.is_none() {
            best_acc = score;
            best = params.deep_clone();
        }
        epochs.push(DocEpochRecord {
            epoch,
            train_loss: loss_sum / steps as f64,
            dev_acc,
        });
    }
    let best_idx = if dev.is_empty() {
        epochs.len() - 1
    } else {
        // First epoch reaching the maximum.
        epochs
            .iter()
            .enumerate()
            .fold(0, |b, (i, r)| if r.dev_acc > epochs[b].dev_acc { i } else { b })
    };
    Ok(DocRun {
        best,
        history: DocHistory {
            epochs,
            best: best_idx,
        },
    })
}

/// The document task joined to aspect training under multi-task learning.
pub struct Auxiliary<'a, T> {
    pub doc: DocParams<T>,
    pub docs: &'a [EncodedDoc],
}

pub struct AspectRun<T> {
    /// Parameters at the selected epoch.
    pub best: AspectParams<T>,
    /// Parameters after the final epoch.
    pub last: AspectParams<T>,
    /// The document model after the final epoch, under multi-task training.
    pub doc: Option<DocParams<T>>,
    pub history: History,
}

/// Trains the aspect model for `cfg.max_epochs` epochs. With an auxiliary
/// document task (and a nonempty document set) every step also draws a
/// document batch, binds the embedding and LSTM of both models to one
/// storage, and minimizes `J + λU` in a single update.
pub fn train_aspect<T: Real>(
    params: AspectParams<T>,
    aux: Option<Auxiliary<'_, T>>,
    train: &[EncodedAspect],
    dev: &[EncodedAspect],
    cfg: &RunConfig,
    seed: u64,
) -> Result<AspectRun<T>> {
    if train.is_empty() {
        return Err(Error::invalid("no aspect training samples"));
    }
    if cfg.max_epochs == 0 {
        return Err(Error::invalid("max_epochs must be positive"));
    }
    let (aspect, mult) = match aux {
        Some(a) if !a.docs.is_empty() => {
            let binding = bind_shared(params, a.doc)?;
            (binding.aspect.clone(), Some((binding, a.docs)))
        }
        _ => (params, None),
    };
    let named = match &mult {
        Some((b, _)) => b.named(),
        None => aspect.named(),
    };
    let opt = RmsProp::from_config(cfg);
    let mut state = RmsState::new(&named);
    let mut shuffle = rng::stream(seed, "aspect/shuffle");
    let mut a_drop = rng::stream(seed, "aspect/dropout");
    let mut d_drop = rng::stream(seed, "doc/dropout");
    let mut cycler = mult
        .as_ref()
        .map(|(_, docs)| DocCycler::new(docs.len(), rng::stream(seed, "doc/shuffle")));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.max_epochs);
    let mut best = aspect.deep_clone();

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut shuffle);
        let (mut j_sum, mut u_sum, mut steps) = (0.0, 0.0, 0);
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            named.iter().for_each(|p| p.param.zero_grad());
            let mut tape = Tape::new();
            let batch: Vec<&EncodedAspect> = chunk.iter().map(|&i| &train[i]).collect();
            let j = aspect_loss(&mut tape, &batch, &aspect, dropout_of(cfg.dropout, &mut a_drop))?;
            let loss = match (&mult, cycler.as_mut()) {
                (Some((binding, docs)), Some(cycler)) => {
                    let idx = cycler.next_batch(cfg.batch_size);
                    let dbatch: Vec<&EncodedDoc> = idx.iter().map(|&i| &docs[i]).collect();
                    let u = doc_loss(
                        &mut tape,
                        &dbatch,
                        &binding.doc,
                        DocRep::Mean,
                        dropout_of(cfg.dropout, &mut d_drop),
                    )?;
                    u_sum += tape.value(u).data()[0].as_f64();
                    combined_loss(&mut tape, j, u, cfg.lambda)?
                }
                _ => j,
            };
            check_loss(tape.value(loss).data()[0].as_f64(), epoch, step)?;
            j_sum += tape.value(j).data()[0].as_f64();
            tape.backward(loss)?;
            opt.step(&named, &mut state)?;
            steps += 1;
        }

        let train_acc = evaluate_aspect(&aspect, train)?.accuracy()?;
        let (dev_acc, dev_f1) = if dev.is_empty() {
            (None, None)
        } else {
            let cm = evaluate_aspect(&aspect, dev)?;
            (Some(cm.accuracy()?), Some(cm.macro_f1()?))
        };
        epochs.push(EpochRecord {
            epoch,
            train_loss: j_sum / steps as f64,
            doc_loss: mult.as_ref().map(|_| u_sum / steps as f64),
            train_acc,
            dev_acc,
            dev_f1,
        });
        if History::select(&epochs, cfg.selection) == epoch {
            best = aspect.deep_clone();
        }
    }

    let best_idx = History::select(&epochs, cfg.selection);
    Ok(AspectRun {
        best,
        last: aspect,
        doc: mult.map(|(b, _)| b.doc),
        history: History {
            selection: cfg.selection.as_str().to_owned(),
            epochs,
            best: best_idx,
        },
    })
}
