//! Data preparation and the four training regimes, run over a set of seeds.

use rayon::prelude::*;

use crate::config::{Regime, RunConfig};
use crate::corpus::{self, AspectSample, DocSample, EmbeddingMatrix, EncodedAspect, EncodedDoc, Label, Vocab};
use crate::error::{Error, Result};
use crate::metrics::{ConfusionMatrix, MetricsReport, RunSet};
use crate::model::{transfer_init, AspectParams, DocParams};
use crate::train::{self, AspectRun, Auxiliary, DocHistory, DocRun, History};

/// Raw corpora for one experiment.
#[derive(Clone, Debug, Default)]
pub struct Corpora {
    pub aspect_train: Vec<AspectSample>,
    pub aspect_test: Vec<AspectSample>,
    pub docs: Vec<DocSample>,
}

impl Corpora {
    /// Reads the corpus files named in `cfg`. The aspect training file is
    /// required; the test and document files are optional.
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let train = cfg
            .aspect_train
            .as_deref()
            .ok_or_else(|| Error::invalid("no aspect training file given"))?;
        Ok(Corpora {
            aspect_train: corpus::load_aspect_corpus(train, cfg.filter_conflicts)?,
            aspect_test: match &cfg.aspect_test {
                Some(p) => corpus::load_aspect_corpus(p, cfg.filter_conflicts)?,
                None => Vec::new(),
            },
            docs: match &cfg.doc_data {
                Some(p) => corpus::load_doc_corpus(p, cfg.max_doc_len)?,
                None => Vec::new(),
            },
        })
    }
}

/// Encoded splits, vocabulary and base embeddings, shared by every seed.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub vocab: Vocab,
    pub embeddings: EmbeddingMatrix,
    pub train: Vec<EncodedAspect>,
    pub dev: Vec<EncodedAspect>,
    pub test: Vec<EncodedAspect>,
    /// Document training set after `doc_fraction` subsampling.
    pub doc_train: Vec<EncodedDoc>,
    pub doc_dev: Vec<EncodedDoc>,
    /// Positions in the loaded document corpus of `doc_train`.
    pub doc_ids: Vec<usize>,
}

/// Splits, balances and subsamples with `cfg.split_seed`, builds the
/// vocabulary over the aspect training split plus the whole document corpus,
/// and loads (or draws) the embedding table.
///
/// The vocabulary does not depend on `doc_fraction`, so every point of a
/// fraction sweep indexes the same table.
pub fn prepare(cfg: &RunConfig, corpora: &Corpora) -> Result<Prepared> {
    let seed = cfg.split_seed;
    let (train, dev) = if cfg.dev_fraction > 0.0 && corpora.aspect_train.len() >= 2 {
        corpus::dev_split(&corpora.aspect_train, cfg.dev_fraction, seed)?
    } else {
        (corpora.aspect_train.clone(), Vec::new())
    };
    if train.is_empty() && corpora.docs.is_empty() {
        return Err(Error::invalid("no aspect or document data"));
    }

    let labels: Vec<Label> = corpora.docs.iter().map(|d| d.label).collect();
    let pool: Vec<usize> = match cfg.balance_per_class {
        Some(k) => corpus::balance_indices(&labels, k, seed)?,
        None => (0..corpora.docs.len()).collect(),
    };
    let (doc_pool, doc_dev_ids) = if cfg.doc_dev_fraction > 0.0 && pool.len() >= 2 {
        corpus::dev_split(&pool, cfg.doc_dev_fraction, seed)?
    } else {
        (pool, Vec::new())
    };
    let doc_ids: Vec<usize> = corpus::nested_subsample(doc_pool.len(), cfg.doc_fraction, seed)?
        .into_iter()
        .map(|i| doc_pool[i])
        .collect();

    let vocab = Vocab::build(
        train
            .iter()
            .map(|s| &s.tokens)
            .chain(corpora.docs.iter().map(|d| &d.tokens)),
    );
    let embeddings = match &cfg.embeddings {
        Some(p) => corpus::load_embeddings(p, &vocab, cfg.emb_dim, seed)?,
        None => EmbeddingMatrix::random(&vocab, cfg.emb_dim, seed)?,
    };
    let enc_docs = |ids: &[usize]| ids.iter().map(|&i| vocab.encode_doc(&corpora.docs[i])).collect::<Vec<_>>();
    Ok(Prepared {
        train: train.iter().map(|s| vocab.encode_aspect(s)).collect(),
        dev: dev.iter().map(|s| vocab.encode_aspect(s)).collect(),
        test: corpora.aspect_test.iter().map(|s| vocab.encode_aspect(s)).collect(),
        doc_train: enc_docs(&doc_ids),
        doc_dev: enc_docs(&doc_dev_ids),
        doc_ids,
        embeddings,
        vocab,
    })
}

/// Everything one seed produces.
pub struct SeedRun {
    pub seed: u64,
    pub params: AspectParams<f32>,
    pub history: History,
    /// The pretrained document model, when this run pretrained one.
    pub pretrained: Option<DocParams<f32>>,
    pub doc_history: Option<DocHistory>,
    pub dev: Option<ConfusionMatrix>,
    pub test: Option<ConfusionMatrix>,
}

/// Document pretraining for one seed on the prepared document splits.
pub fn pretrain_seed(cfg: &RunConfig, data: &Prepared, seed: u64) -> Result<DocRun<f32>> {
    let doc = DocParams::init(&data.embeddings.table, cfg.hidden_dim, seed);
    train::pretrain_doc(doc, &data.doc_train, &data.doc_dev, cfg, seed)
}

/// [`pretrain_seed`] for every configured seed, in parallel.
pub fn pretrain_all(cfg: &RunConfig, data: &Prepared) -> Result<Vec<DocRun<f32>>> {
    cfg.seeds.par_iter().map(|&s| pretrain_seed(cfg, data, s)).collect()
}

/// Document model to transfer from: trained here, or supplied.
pub enum DocSource<'a> {
    Pretrain,
    Given(&'a DocParams<f32>),
}

/// Runs `cfg.regime` for one seed.
///
/// - scratch: fresh aspect model.
/// - pret: document pretraining (unless a model is given), masked copy into
///   the aspect model, then aspect training alone.
/// - mult: fresh aspect and document models trained jointly.
/// - pret_mult: as pret, then joint training whose document model starts
///   from the pretrained one.
///
/// Without documents, mult and pret_mult reduce to scratch.
pub fn run_seed(cfg: &RunConfig, data: &Prepared, seed: u64, source: &DocSource<'_>) -> Result<SeedRun> {
    let base = &data.embeddings.table;
    let hidden = cfg.hidden_dim;
    let has_docs = !data.doc_train.is_empty();
    let given = match source {
        DocSource::Given(d) => {
            let dims = d.dims()?;
            if dims.vocab != data.vocab.len() || dims.emb_dim != cfg.emb_dim || dims.hidden != hidden {
                return Err(Error::shape(
                    "document checkpoint",
                    format!(
                        "{dims:?} vs vocab {}, emb_dim {}, hidden {hidden}",
                        data.vocab.len(),
                        cfg.emb_dim
                    ),
                ));
            }
            Some(*d)
        }
        DocSource::Pretrain => None,
    };

    let mut pretrained = None;
    let mut doc_history = None;
    if cfg.regime.pretrains() && (given.is_some() || has_docs) {
        match given {
            Some(d) => pretrained = Some(d.deep_clone()),
            None => {
                let run = pretrain_seed(cfg, data, seed)?;
                pretrained = Some(run.best);
                doc_history = Some(run.history);
            }
        }
    } else if cfg.regime == Regime::Pret {
        return Err(Error::invalid("pret needs document data or a document checkpoint"));
    }

    let aspect = match &pretrained {
        Some(doc) => transfer_init(doc, &cfg.mask, base, hidden, seed)?,
        None => AspectParams::init(base, hidden, seed),
    };
    let aux = if cfg.regime.multitask() && has_docs {
        let doc = match &pretrained {
            Some(p) => p.deep_clone(),
            None => DocParams::init(base, hidden, seed),
        };
        Some(Auxiliary {
            doc,
            docs: &data.doc_train,
        })
    } else {
        None
    };
    let AspectRun { best, history, .. } = train::train_aspect(aspect, aux, &data.train, &data.dev, cfg, seed)?;
    let eval = |set: &[EncodedAspect]| -> Result<Option<ConfusionMatrix>> {
        if set.is_empty() {
            Ok(None)
        } else {
            train::evaluate_aspect(&best, set).map(Some)
        }
    };
    Ok(SeedRun {
        seed,
        dev: eval(&data.dev)?,
        test: eval(&data.test)?,
        params: best,
        history,
        pretrained,
        doc_history,
    })
}

/// [`run_seed`] for every configured seed, in parallel; results follow
/// `cfg.seeds` order.
pub fn run_all(cfg: &RunConfig, data: &Prepared, source: &DocSource<'_>) -> Result<Vec<SeedRun>> {
    cfg.seeds
        .par_iter()
        .map(|&s| run_seed(cfg, data, s, source))
        .collect()
}

/// [`run_all`] with one document source per seed, in `cfg.seeds` order.
pub fn run_all_from(cfg: &RunConfig, data: &Prepared, sources: &[DocSource<'_>]) -> Result<Vec<SeedRun>> {
    if sources.len() != cfg.seeds.len() {
        return Err(Error::invalid(format!(
            "{} document sources for {} seeds",
            sources.len(),
            cfg.seeds.len()
        )));
    }
    cfg.seeds
        .par_iter()
        .zip(sources)
        .map(|(&s, source)| run_seed(cfg, data, s, source))
        .collect()
}

/// Aggregates test metrics (dev metrics when there is no test set).
pub fn report(method: &str, dataset: &str, runs: &[SeedRun]) -> Result<MetricsReport> {
    let mut acc = Vec::with_capacity(runs.len());
    let mut f1 = Vec::with_capacity(runs.len());
    for r in runs {
        let cm = r
            .test
            .or(r.dev)
            .ok_or_else(|| Error::invalid("no test or dev set to report on"))?;
        acc.push(cm.accuracy()?);
        f1.push(cm.macro_f1()?);
    }
    let seeds: Vec<u64> = runs.iter().map(|r| r.seed).collect();
    Ok(MetricsReport::new(method, dataset, &seeds, &RunSet::new(acc)?, &RunSet::new(f1)?))
}
