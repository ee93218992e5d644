//! Experiment configuration, stored as a flat `key = value` text file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::corpus::DEFAULT_MAX_DOC_LEN;
use crate::error::{Error, Result};
use crate::model::TransferMask;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Regime {
    Scratch,
    Pret,
    Mult,
    PretMult,
}

impl Regime {
    pub const ALL: [Regime; 4] = [Regime::Scratch, Regime::Pret, Regime::Mult, Regime::PretMult];

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Scratch => "scratch",
            Regime::Pret => "pret",
            Regime::Mult => "mult",
            Regime::PretMult => "pret_mult",
        }
    }

    /// Method name used in reports.
    pub fn method(self) -> &'static str {
        match self {
            Regime::Scratch => "LSTM+ATT",
            Regime::Pret => "PRET",
            Regime::Mult => "MULT",
            Regime::PretMult => "PRET+MULT",
        }
    }

    pub fn pretrains(self) -> bool {
        matches!(self, Regime::Pret | Regime::PretMult)
    }

    pub fn multitask(self) -> bool {
        matches!(self, Regime::Mult | Regime::PretMult)
    }

    pub fn needs_docs(self) -> bool {
        self != Regime::Scratch
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace(['-', '+'], "_").to_ascii_lowercase().as_str() {
            "scratch" => Ok(Regime::Scratch),
            "pret" => Ok(Regime::Pret),
            "mult" => Ok(Regime::Mult),
            "pret_mult" => Ok(Regime::PretMult),
            _ => Err(Error::invalid(format!("unknown regime `{s}`"))),
        }
    }
}

/// Model-selection metric on the dev split.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Selection {
    /// Macro-F1, ties broken by accuracy, then by the earlier epoch.
    MacroF1,
    /// Accuracy, ties broken by macro-F1, then by the earlier epoch.
    Accuracy,
}

impl Selection {
    pub fn as_str(self) -> &'static str {
        match self {
            Selection::MacroF1 => "macro_f1",
            Selection::Accuracy => "accuracy",
        }
    }
}

impl FromStr for Selection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "macro_f1" | "f1" => Ok(Selection::MacroF1),
            "accuracy" | "acc" => Ok(Selection::Accuracy),
            _ => Err(Error::invalid(format!("unknown selection metric `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub regime: Regime,
    pub lambda: f64,
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub doc_epochs: usize,
    pub dropout: f64,
    pub emb_dim: usize,
    pub hidden_dim: usize,
    pub dev_fraction: f64,
    pub doc_dev_fraction: f64,
    /// Seeds the data-side randomness (splits, balancing, doc subsampling,
    /// OOV embedding rows), held fixed across runs.
    pub split_seed: u64,
    pub doc_fraction: f64,
    pub max_doc_len: usize,
    pub filter_conflicts: bool,
    pub balance_per_class: Option<usize>,
    pub mask: TransferMask,
    pub seeds: Vec<u64>,
    pub selection: Selection,
    pub aspect_train: Option<PathBuf>,
    pub aspect_test: Option<PathBuf>,
    pub doc_data: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub doc_checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            regime: Regime::Scratch,
            lambda: 0.1,
            lr: 0.001,
            rho: 0.9,
            eps: 1e-8,
            clip_norm: None,
            batch_size: 32,
            max_epochs: 30,
            doc_epochs: 10,
            dropout: 0.5,
            emb_dim: 300,
            hidden_dim: 300,
            dev_fraction: 0.2,
            doc_dev_fraction: 0.1,
            split_seed: 0,
            doc_fraction: 1.0,
            max_doc_len: DEFAULT_MAX_DOC_LEN,
            filter_conflicts: false,
            balance_per_class: None,
            mask: TransferMask::all(),
            seeds: (1..=5).collect(),
            selection: Selection::MacroF1,
            aspect_train: None,
            aspect_test: None,
            doc_data: None,
            embeddings: None,
            doc_checkpoint: None,
        }
    }
}

/// Config keys in file order.
pub const KEYS: [&str; 27] = [
    "regime",
    "lambda",
    "lr",
    "rho",
    "eps",
    "clip_norm",
    "batch_size",
    "max_epochs",
    "doc_epochs",
    "dropout",
    "emb_dim",
    "hidden_dim",
    "dev_fraction",
    "doc_dev_fraction",
    "split_seed",
    "doc_fraction",
    "max_doc_len",
    "filter_conflicts",
    "balance_per_class",
    "mask",
    "seeds",
    "selection",
    "aspect_train",
    "aspect_test",
    "doc_data",
    "embeddings",
    "doc_checkpoint",
];

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::invalid(format!("`{key}`: cannot parse `{v}`")))
}

fn opt<T: FromStr>(key: &str, v: &str) -> Result<Option<T>> {
    if v.is_empty() || v == "none" {
        Ok(None)
    } else {
        num(key, v).map(Some)
    }
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

/// Parses `1,2,3`, `1-5` or a mix of both.
pub fn parse_seeds(v: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for part in v.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (num("seeds", a.trim())?, num("seeds", b.trim())?);
                if a > b {
                    return Err(Error::invalid(format!("empty seed range `{part}`")));
                }
                out.extend(a..=b);
            }
            None => out.push(num("seeds", part)?),
        }
    }
    Ok(out)
}

impl RunConfig {
    /// Overrides one field from its textual form.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        match key {
            "regime" => self.regime = v.parse()?,
            "lambda" => self.lambda = num(key, v)?,
            "lr" => self.lr = num(key, v)?,
            "rho" => self.rho = num(key, v)?,
            "eps" => self.eps = num(key, v)?,
            "clip_norm" => self.clip_norm = opt(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "max_epochs" => self.max_epochs = num(key, v)?,
            "doc_epochs" => self.doc_epochs = num(key, v)?,
            "dropout" => self.dropout = num(key, v)?,
            "emb_dim" => self.emb_dim = num(key, v)?,
            "hidden_dim" => self.hidden_dim = num(key, v)?,
            "dev_fraction" => self.dev_fraction = num(key, v)?,
            "doc_dev_fraction" => self.doc_dev_fraction = num(key, v)?,
            "split_seed" => self.split_seed = num(key, v)?,
            "doc_fraction" => self.doc_fraction = num(key, v)?,
            "max_doc_len" => self.max_doc_len = num(key, v)?,
            "filter_conflicts" => self.filter_conflicts = num(key, v)?,
            "balance_per_class" => self.balance_per_class = opt(key, v)?,
            "mask" => self.mask = v.parse()?,
            "seeds" => self.seeds = parse_seeds(v)?,
            "selection" => self.selection = v.parse()?,
            "aspect_train" => self.aspect_train = opt_path(v),
            "aspect_test" => self.aspect_test = opt_path(v),
            "doc_data" => self.doc_data = opt_path(v),
            "embeddings" => self.embeddings = opt_path(v),
            "doc_checkpoint" => self.doc_checkpoint = opt_path(v),
            _ => return Err(Error::invalid(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        fn o<T: ToString>(v: &Option<T>) -> String {
            v.as_ref().map(ToString::to_string).unwrap_or_default()
        }
        fn p(v: &Option<PathBuf>) -> String {
            v.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
        }
        Some(match key {
            "regime" => self.regime.to_string(),
            "lambda" => self.lambda.to_string(),
            "lr" => self.lr.to_string(),
            "rho" => self.rho.to_string(),
            "eps" => self.eps.to_string(),
            "clip_norm" => o(&self.clip_norm),
            "batch_size" => self.batch_size.to_string(),
            "max_epochs" => self.max_epochs.to_string(),
            "doc_epochs" => self.doc_epochs.to_string(),
            "dropout" => self.dropout.to_string(),
            "emb_dim" => self.emb_dim.to_string(),
            "hidden_dim" => self.hidden_dim.to_string(),
            "dev_fraction" => self.dev_fraction.to_string(),
            "doc_dev_fraction" => self.doc_dev_fraction.to_string(),
            "split_seed" => self.split_seed.to_string(),
            "doc_fraction" => self.doc_fraction.to_string(),
            "max_doc_len" => self.max_doc_len.to_string(),
            "filter_conflicts" => self.filter_conflicts.to_string(),
            "balance_per_class" => o(&self.balance_per_class),
            "mask" => self.mask.to_string(),
            "seeds" => self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
            "selection" => self.selection.as_str().to_owned(),
            "aspect_train" => p(&self.aspect_train),
            "aspect_test" => p(&self.aspect_test),
            "doc_data" => p(&self.doc_data),
            "embeddings" => p(&self.embeddings),
            "doc_checkpoint" => p(&self.doc_checkpoint),
            _ => return None,
        })
    }

    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.get(k).unwrap()))
            .collect()
    }

    /// Parses `key = value` lines over the defaults. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                msg,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err("expected `key = value`".into()))?;
            cfg.set(k.trim(), v).map_err(|e| err(e.to_string()))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.regime.multitask() && !(self.lambda > 0.0 && self.lambda < 1.0) {
            return bad(format!("lambda must lie in (0, 1) for {}, got {}", self.regime, self.lambda));
        }
        if !(0.0..=1.0).contains(&self.doc_fraction) {
            return bad(format!("doc_fraction must lie in [0, 1], got {}", self.doc_fraction));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(0.0..1.0).contains(&self.dev_fraction) || !(0.0..1.0).contains(&self.doc_dev_fraction) {
            return bad("dev fractions must lie in [0, 1)".into());
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.rho) || !(self.eps > 0.0) {
            return bad("optimizer settings need lr > 0, rho in [0, 1), eps > 0".into());
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return bad("clip_norm must be positive".into());
        }
        if self.batch_size == 0 || self.emb_dim == 0 || self.hidden_dim == 0 || self.max_doc_len == 0 {
            return bad("batch_size, emb_dim, hidden_dim and max_doc_len must be positive".into());
        }
        if self.seeds.is_empty() {
            return bad("no seeds".into());
        }
        Ok(())
    }
}
