use std::path::{Path, PathBuf};

use absa_core::RunConfig;
use clap::Args;

use crate::{CliError, Result};

/// Experiment settings. A config file, when given, is read first; flags
/// override it.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// scratch, pret, mult or pret_mult.
    #[arg(long)]
    pub regime: Option<String>,
    /// Weight of the document loss under multi-task training.
    #[arg(long)]
    pub lambda: Option<String>,
    #[arg(long)]
    pub lr: Option<String>,
    /// Global gradient-norm clip.
    #[arg(long)]
    pub clip_norm: Option<String>,
    #[arg(long)]
    pub batch_size: Option<String>,
    #[arg(long)]
    pub max_epochs: Option<String>,
    /// Epochs of document pretraining.
    #[arg(long)]
    pub doc_epochs: Option<String>,
    #[arg(long)]
    pub dropout: Option<String>,
    #[arg(long)]
    pub emb_dim: Option<String>,
    #[arg(long)]
    pub hidden_dim: Option<String>,
    /// Share of the aspect training file held out for model selection.
    #[arg(long)]
    pub dev_fraction: Option<String>,
    /// Share of the document corpus held out during pretraining.
    #[arg(long)]
    pub doc_dev_fraction: Option<String>,
    /// Seed for splits, subsampling and random embedding rows.
    #[arg(long)]
    pub split_seed: Option<String>,
    /// Fraction of the document training pool to use.
    #[arg(long)]
    pub doc_fraction: Option<String>,
    #[arg(long)]
    pub max_doc_len: Option<String>,
    /// Drop sentences whose targets carry conflicting labels.
    #[arg(long)]
    pub filter_conflicts: bool,
    /// Sample this many documents per class.
    #[arg(long)]
    pub balance_per_class: Option<String>,
    /// Layers to transfer: all, none, or names from embedding, lstm, output
    /// joined by `,` or `+`.
    #[arg(long)]
    pub mask: Option<String>,
    /// Seed list such as `1-5` or `1,3,7`.
    #[arg(long)]
    pub seeds: Option<String>,
    /// macro_f1 or accuracy.
    #[arg(long)]
    pub selection: Option<String>,
    #[arg(long)]
    pub aspect_train: Option<PathBuf>,
    #[arg(long)]
    pub aspect_test: Option<PathBuf>,
    #[arg(long)]
    pub doc_data: Option<PathBuf>,
    /// Word vectors in text format; random vectors when absent.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Pretrained document checkpoint to transfer from.
    #[arg(long)]
    pub doc_checkpoint: Option<PathBuf>,
}

impl RunArgs {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let text = [
            ("regime", &self.regime),
            ("lambda", &self.lambda),
            ("lr", &self.lr),
            ("clip_norm", &self.clip_norm),
            ("batch_size", &self.batch_size),
            ("max_epochs", &self.max_epochs),
            ("doc_epochs", &self.doc_epochs),
            ("dropout", &self.dropout),
            ("emb_dim", &self.emb_dim),
            ("hidden_dim", &self.hidden_dim),
            ("dev_fraction", &self.dev_fraction),
            ("doc_dev_fraction", &self.doc_dev_fraction),
            ("split_seed", &self.split_seed),
            ("doc_fraction", &self.doc_fraction),
            ("max_doc_len", &self.max_doc_len),
            ("balance_per_class", &self.balance_per_class),
            ("mask", &self.mask),
            ("seeds", &self.seeds),
            ("selection", &self.selection),
        ];
        let paths = [
            ("aspect_train", &self.aspect_train),
            ("aspect_test", &self.aspect_test),
            ("doc_data", &self.doc_data),
            ("embeddings", &self.embeddings),
            ("doc_checkpoint", &self.doc_checkpoint),
        ];
        let mut out: Vec<(&'static str, String)> = text
            .into_iter()
            .filter_map(|(k, v)| v.clone().map(|v| (k, v)))
            .collect();
        out.extend(
            paths
                .into_iter()
                .filter_map(|(k, v)| v.as_ref().map(|p| (k, p.display().to_string()))),
        );
        if self.filter_conflicts {
            out.push(("filter_conflicts", "true".into()));
        }
        out
    }

    /// The config file (or defaults) with flags applied, validated, with
    /// every input path checked for existence.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                require_file(p)?;
                RunConfig::load(p)?
            }
            None => RunConfig::default(),
        };
        for (key, value) in self.overrides() {
            cfg.set(key, &value)
                .map_err(|e| CliError::Usage(format!("--{}: {e}", key.replace('_', "-"))))?;
        }
        cfg.validate()?;
        for p in [
            &cfg.aspect_train,
            &cfg.aspect_test,
            &cfg.doc_data,
            &cfg.embeddings,
            &cfg.doc_checkpoint,
        ]
        .into_iter()
        .flatten()
        {
            require_file(p)?;
        }
        Ok(cfg)
    }
}

pub fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("no such file: {}", path.display())))
    }
}

pub fn require_dir(path: &Path) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("no such directory: {}", path.display())))
    }
}
