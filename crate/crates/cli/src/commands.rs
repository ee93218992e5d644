use std::fs;
use std::path::{Path, PathBuf};

use absa_core::checkpoint::Checkpoint;
use absa_core::corpus::{self, AspectSample};
use absa_core::experiment::{self, Corpora, DocSource, Prepared};
use absa_core::metrics::{self, MetricsReport, RunSet};
use absa_core::model::{DocParams, TransferMask};
use absa_core::synthetic::{self, DirectionalSpec};
use absa_core::{Regime, RunConfig, Vocab};
use clap::{Args, ValueEnum};

use crate::args::{require_dir, require_file, RunArgs};
use crate::output::{curve_svg, doc_ids_text, find_vocab, seed_dir, write_run, Staging};
use crate::{CliError, Result};

#[derive(Debug, Args)]
pub struct Destination {
    /// Directory to create.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Replace the output directory if it exists.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub dest: Destination,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub dest: Destination,
    /// Earlier run directory (or its metrics.json) to t-test against.
    #[arg(long)]
    pub baseline_run: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run directory whose `seed-*/model.ckpt` checkpoints are evaluated.
    #[arg(long, conflicts_with = "checkpoint", required_unless_present = "checkpoint")]
    pub run_dir: Option<PathBuf>,
    /// A single aspect checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Vocabulary file; found next to the checkpoint when omitted.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Labelled aspect corpus.
    #[arg(long)]
    pub aspect_test: PathBuf,
    #[arg(long)]
    pub filter_conflicts: bool,
    /// Write the metrics JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub dest: Destination,
    /// Also run the empty mask (no transfer).
    #[arg(long)]
    pub include_empty: bool,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub dest: Destination,
    /// Sorted document fractions in [0, 1].
    #[arg(long, default_value = "0,0.2,0.4,0.6,0.8,1")]
    pub fractions: String,
    /// Also render curve.svg.
    #[arg(long)]
    pub plot: bool,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Aspect checkpoint to dump.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Second checkpoint; samples it gets wrong and the first gets right go
    /// to disagreement.jsonl.
    #[arg(long)]
    pub compare: Option<PathBuf>,
    /// Vocabulary for `--checkpoint`; found next to it when omitted.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Vocabulary for `--compare`; found next to it when omitted.
    #[arg(long)]
    pub compare_vocab: Option<PathBuf>,
    /// Labelled aspect samples.
    #[arg(long)]
    pub samples: PathBuf,
    #[command(flatten)]
    pub dest: Destination,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    /// Shared-lexicon sentences and documents.
    Toy,
    /// Test sentences use opinion words seen only in documents.
    Directional,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub kind: SynthKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub n_train: usize,
    #[arg(long, default_value_t = 300)]
    pub n_test: usize,
    #[arg(long, default_value_t = 3000)]
    pub n_docs: usize,
    #[command(flatten)]
    pub dest: Destination,
}

fn dataset_name(cfg: &RunConfig) -> String {
    cfg.aspect_test
        .as_ref()
        .or(cfg.aspect_train.as_ref())
        .and_then(|p| p.file_stem())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn load_corpora(cfg: &RunConfig, need_aspect: bool) -> Result<Corpora> {
    if need_aspect && cfg.aspect_train.is_none() {
        return Err(CliError::Usage("--aspect-train is required".into()));
    }
    Ok(Corpora {
        aspect_train: match &cfg.aspect_train {
            Some(p) => corpus::load_aspect_corpus(p, cfg.filter_conflicts)?,
            None => Vec::new(),
        },
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

/// The document checkpoint named in `cfg`, checked against `vocab`.
fn given_doc(cfg: &RunConfig, vocab: &Vocab) -> Result<Option<DocParams<f32>>> {
    let Some(path) = &cfg.doc_checkpoint else { return Ok(None) };
    let ckpt = Checkpoint::load(path)?;
    ckpt.check_vocab(vocab)?;
    Ok(Some(ckpt.into_doc()?))
}

fn write_common(out: &Staging, cfg: &RunConfig, data: &Prepared) -> Result<()> {
    out.write("config.txt", cfg.to_text())?;
    data.vocab.save(&out.file("vocab.txt")?)?;
    Ok(())
}

fn summary(report: &MetricsReport) -> String {
    format!(
        "{}: acc {:.4}, macro-F1 {:.4} over {} seed(s)",
        report.method,
        report.acc_mean,
        report.f1_mean,
        report.seeds.len()
    )
}

pub fn pretrain(a: PretrainArgs) -> Result<()> {
    let cfg = a.run.resolve()?;
    if cfg.doc_data.is_none() {
        return Err(CliError::Usage("pretrain needs --doc-data".into()));
    }
    let out = Staging::new(&a.dest.out_dir, a.dest.force)?;
    let data = experiment::prepare(&cfg, &load_corpora(&cfg, false)?)?;
    eprintln!(
        "pretrain: {} documents ({} held out), {} seed(s)",
        data.doc_train.len(),
        data.doc_dev.len(),
        cfg.seeds.len()
    );
    let runs = experiment::pretrain_all(&cfg, &data)?;
    write_common(&out, &cfg, &data)?;
    out.write("doc_ids.txt", doc_ids_text(&data.doc_ids))?;
    for (seed, run) in cfg.seeds.iter().zip(&runs) {
        let dir = PathBuf::from(seed_dir(*seed));
        Checkpoint::from_doc(&run.best, &data.vocab)?.save(&out.file(dir.join("doc.ckpt"))?)?;
        out.write(dir.join("history.json"), run.history.to_json())?;
    }
    let dest = out.commit()?;
    eprintln!("pretrain: wrote {}", dest.display());
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let cfg = a.run.resolve()?;
    let baseline = match &a.baseline_run {
        Some(p) => {
            let p = if p.is_dir() { p.join("metrics.json") } else { p.clone() };
            require_file(&p)?;
            Some(MetricsReport::load(&p)?)
        }
        None => None,
    };
    let out = Staging::new(&a.dest.out_dir, a.dest.force)?;
    let data = experiment::prepare(&cfg, &load_corpora(&cfg, true)?)?;
    let given = given_doc(&cfg, &data.vocab)?;
    if cfg.regime.multitask() && data.doc_train.is_empty() {
        eprintln!("train: no documents; {} reduces to scratch training", cfg.regime);
    }
    eprintln!(
        "train: {} regime, {} train / {} dev / {} test samples, {} seed(s)",
        cfg.regime,
        data.train.len(),
        data.dev.len(),
        data.test.len(),
        cfg.seeds.len()
    );
    let source = match &given {
        Some(d) => DocSource::Given(d),
        None => DocSource::Pretrain,
    };
    let runs = experiment::run_all(&cfg, &data, &source)?;
    let mut report = experiment::report(cfg.regime.method(), &dataset_name(&cfg), &runs)?;
    if let Some(b) = &baseline {
        report.compare_to(b)?;
    }
    write_common(&out, &cfg, &data)?;
    write_run(&out, Path::new(""), &cfg, &data, &runs, &report)?;
    let dest = out.commit()?;
    eprintln!("train: {}; wrote {}", summary(&report), dest.display());
    Ok(())
}

fn seed_dirs(run: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let entries = fs::read_dir(run).map_err(|e| CliError::Core(absa_core::Error::Io {
        path: run.to_path_buf(),
        source: e,
    }))?;
    let mut out: Vec<(u64, PathBuf)> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            let seed = name.strip_prefix("seed-")?.parse().ok()?;
            let ckpt = e.path().join("model.ckpt");
            ckpt.is_file().then_some((seed, ckpt))
        })
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(CliError::Usage(format!("no seed-*/model.ckpt under {}", run.display())));
    }
    Ok(out)
}

fn vocab_for(checkpoint: &Path, explicit: Option<&Path>) -> Result<Vocab> {
    let path = match explicit {
        Some(p) => p.to_path_buf(),
        None => find_vocab(checkpoint).ok_or_else(|| {
            CliError::Usage(format!("no vocab.txt found near {}; pass --vocab", checkpoint.display()))
        })?,
    };
    require_file(&path)?;
    Ok(Vocab::load(&path)?)
}

fn load_aspect_model(checkpoint: &Path, vocab: &Vocab) -> Result<absa_core::AspectParams<f32>> {
    require_file(checkpoint)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    ckpt.check_vocab(vocab)?;
    Ok(ckpt.into_aspect()?)
}

pub fn eval(a: EvalArgs) -> Result<()> {
    require_file(&a.aspect_test)?;
    let samples = corpus::load_aspect_corpus(&a.aspect_test, a.filter_conflicts)?;
    if samples.is_empty() {
        return Err(CliError::Usage(format!("{} has no samples", a.aspect_test.display())));
    }
    let (method, models) = match (&a.run_dir, &a.checkpoint) {
        (Some(dir), _) => {
            require_dir(dir)?;
            let method = RunConfig::load(&dir.join("config.txt"))
                .map(|c| c.regime.method().to_owned())
                .unwrap_or_else(|_| "model".into());
            (method, seed_dirs(dir)?)
        }
        (None, Some(ckpt)) => ("model".to_owned(), vec![(0, ckpt.clone())]),
        (None, None) => return Err(CliError::Usage("pass --run-dir or --checkpoint".into())),
    };
    let (mut acc, mut f1, mut seeds) = (Vec::new(), Vec::new(), Vec::new());
    for (seed, ckpt) in &models {
        let vocab = vocab_for(ckpt, a.vocab.as_deref())?;
        let params = load_aspect_model(ckpt, &vocab)?;
        let encoded: Vec<_> = samples.iter().map(|s| vocab.encode_aspect(s)).collect();
        let cm = absa_core::train::evaluate_aspect(&params, &encoded)?;
        acc.push(cm.accuracy()?);
        f1.push(cm.macro_f1()?);
        seeds.push(*seed);
    }
    let dataset = a
        .aspect_test
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let report = MetricsReport::new(&method, &dataset, &seeds, &RunSet::new(acc)?, &RunSet::new(f1)?);
    match &a.out {
        Some(p) => fs::write(p, report.to_json()).map_err(|e| CliError::output(p, e))?,
        None => print!("{}", report.to_json()),
    }
    eprintln!("eval: {}", summary(&report));
    Ok(())
}

/// Directory name for an ablation row.
fn mask_dir(index: usize, mask: &TransferMask) -> String {
    format!("{index:02}-{}", mask.to_string().replace('+', "-"))
}

pub fn ablate(a: AblateArgs) -> Result<()> {
    let mut cfg = a.run.resolve()?;
    cfg.regime = Regime::Pret;
    if cfg.doc_checkpoint.is_none() && cfg.doc_data.is_none() {
        return Err(CliError::Usage("ablate needs --doc-checkpoint or --doc-data".into()));
    }
    let out = Staging::new(&a.dest.out_dir, a.dest.force)?;
    let data = experiment::prepare(&cfg, &load_corpora(&cfg, true)?)?;
    let given = given_doc(&cfg, &data.vocab)?;
    let pretrained = match &given {
        Some(_) => Vec::new(),
        None => {
            eprintln!("ablate: pretraining {} seed(s)", cfg.seeds.len());
            experiment::pretrain_all(&cfg, &data)?
        }
    };
    let sources: Vec<DocSource<'_>> = match &given {
        Some(d) => cfg.seeds.iter().map(|_| DocSource::Given(d)).collect(),
        None => pretrained.iter().map(|r| DocSource::Given(&r.best)).collect(),
    };

    let mut settings = TransferMask::ablation_settings();
    if a.include_empty {
        settings.push(("No transfer", TransferMask::none()));
    }
    write_common(&out, &cfg, &data)?;
    for (seed, run) in cfg.seeds.iter().zip(&pretrained) {
        let dir = PathBuf::from(seed_dir(*seed));
        Checkpoint::from_doc(&run.best, &data.vocab)?.save(&out.file(dir.join("doc.ckpt"))?)?;
        out.write(dir.join("doc-history.json"), run.history.to_json())?;
    }
    let mut table = csv::Writer::from_writer(Vec::new());
    table
        .write_record(["setting", "mask", "acc", "macro_f1"])
        .map_err(csv_err)?;
    for (i, (label, mask)) in settings.iter().enumerate() {
        let setting_cfg = RunConfig {
            mask: mask.clone(),
            ..cfg.clone()
        };
        let runs = experiment::run_all_from(&setting_cfg, &data, &sources)?;
        let report = experiment::report(cfg.regime.method(), &dataset_name(&cfg), &runs)?;
        eprintln!("ablate: {label} ({mask}): {}", summary(&report));
        write_run(&out, Path::new(&mask_dir(i, mask)), &setting_cfg, &data, &runs, &report)?;
        table
            .write_record([
                label.to_string(),
                mask.to_string(),
                report.acc_mean.to_string(),
                report.f1_mean.to_string(),
            ])
            .map_err(csv_err)?;
    }
    out.write("ablation.csv", table.into_inner().map_err(|e| csv_err(e.into_error().into()))?)?;
    let dest = out.commit()?;
    eprintln!("ablate: wrote {}", dest.display());
    Ok(())
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Output {
        path: PathBuf::from("<csv>"),
        source: std::io::Error::other(e),
    }
}

fn parse_fractions(s: &str) -> Result<Vec<f64>> {
    let bad = |m: String| CliError::Usage(format!("--fractions: {m}"));
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad(format!("cannot parse `{p}`"))))
        .collect::<Result<_>>()?;
    if v.is_empty() || v.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(bad("values must lie in [0, 1]".into()));
    }
    if v.windows(2).any(|w| w[0] >= w[1]) {
        return Err(bad("values must be strictly increasing".into()));
    }
    Ok(v)
}

pub fn curve(a: CurveArgs) -> Result<()> {
    let fractions = parse_fractions(&a.fractions)?;
    let mut cfg = a.run.resolve()?;
    cfg.regime = Regime::PretMult;
    cfg.validate()?;
    if cfg.doc_data.is_none() {
        return Err(CliError::Usage("curve needs --doc-data".into()));
    }
    if cfg.doc_checkpoint.is_some() {
        return Err(CliError::Usage(
            "curve pretrains on each document subsample; --doc-checkpoint is not accepted".into(),
        ));
    }
    let out = Staging::new(&a.dest.out_dir, a.dest.force)?;
    let corpora = load_corpora(&cfg, true)?;
    let mut table = csv::Writer::from_writer(Vec::new());
    table.write_record(["fraction", "acc", "macro_f1"]).map_err(csv_err)?;
    let mut points = Vec::new();
    for (i, &f) in fractions.iter().enumerate() {
        let fcfg = RunConfig {
            doc_fraction: f,
            ..cfg.clone()
        };
        let data = experiment::prepare(&fcfg, &corpora)?;
        if i == 0 {
            write_common(&out, &cfg, &data)?;
        }
        let runs = experiment::run_all(&fcfg, &data, &DocSource::Pretrain)?;
        let report = experiment::report(cfg.regime.method(), &dataset_name(&cfg), &runs)?;
        eprintln!("curve: fraction {f} ({} documents): {}", data.doc_train.len(), summary(&report));
        let rel = PathBuf::from(format!("fraction-{f:.2}"));
        write_run(&out, &rel, &fcfg, &data, &runs, &report)?;
        out.write(rel.join("doc_ids.txt"), doc_ids_text(&data.doc_ids))?;
        table
            .write_record([f.to_string(), report.acc_mean.to_string(), report.f1_mean.to_string()])
            .map_err(csv_err)?;
        points.push((f, report.acc_mean, report.f1_mean));
    }
    out.write("curve.csv", table.into_inner().map_err(|e| csv_err(e.into_error().into()))?)?;
    if a.plot {
        out.write("curve.svg", curve_svg(&points))?;
    }
    let dest = out.commit()?;
    eprintln!("curve: wrote {}", dest.display());
    Ok(())
}

fn dump(checkpoint: &Path, vocab: Option<&Path>, samples: &[AspectSample]) -> Result<Vec<metrics::AttentionRecord>> {
    let vocab = vocab_for(checkpoint, vocab)?;
    let params = load_aspect_model(checkpoint, &vocab)?;
    let encoded: Vec<_> = samples.iter().map(|s| vocab.encode_aspect(s)).collect();
    Ok(metrics::attention_dump(&params, samples, &encoded)?)
}

pub fn inspect(a: InspectArgs) -> Result<()> {
    require_file(&a.samples)?;
    let samples = corpus::load_aspect_corpus(&a.samples, false)?;
    let first = dump(&a.checkpoint, a.vocab.as_deref(), &samples)?;
    let second = match &a.compare {
        Some(b) => Some(dump(b, a.compare_vocab.as_deref(), &samples)?),
        None => None,
    };
    let out = Staging::new(&a.dest.out_dir, a.dest.force)?;
    metrics::write_jsonl(&out.file("attention.jsonl")?, &first)?;
    if let Some(second) = &second {
        metrics::write_jsonl(&out.file("attention-compare.jsonl")?, second)?;
        let diff = metrics::disagreements(&first, second);
        eprintln!("inspect: {} sample(s) fixed by the first model", diff.len());
        metrics::write_jsonl(&out.file("disagreement.jsonl")?, &diff)?;
    }
    let dest = out.commit()?;
    eprintln!("inspect: {} record(s); wrote {}", first.len(), dest.display());
    Ok(())
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let (train, test, docs) = match a.kind {
        SynthKind::Directional => {
            let d = synthetic::directional(&DirectionalSpec {
                n_docs: a.n_docs,
                n_train: a.n_train,
                n_test: a.n_test,
                seed: a.seed,
                ..DirectionalSpec::default()
            });
            (d.aspect_train, d.aspect_test, d.docs)
        }
        SynthKind::Toy => (
            synthetic::toy_aspect(a.n_train, a.seed),
            synthetic::toy_aspect(a.n_test, a.seed.wrapping_add(1)),
            synthetic::toy_docs(a.n_docs.div_ceil(3), a.seed),
        ),
    };
    let out = Staging::new(&a.dest.out_dir, a.dest.force)?;
    corpus::save_aspect_corpus(&out.file("aspect_train.jsonl")?, &train)?;
    corpus::save_aspect_corpus(&out.file("aspect_test.jsonl")?, &test)?;
    corpus::save_doc_corpus(&out.file("docs.jsonl")?, &docs)?;
    let dest = out.commit()?;
    eprintln!(
        "synth: {} train, {} test, {} documents; wrote {}",
        train.len(),
        test.len(),
        docs.len(),
        dest.display()
    );
    Ok(())
}
