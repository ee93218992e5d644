//! Aspect-level and document-level corpora, vocabulary and embeddings.
//!
//! Corpora are JSON-lines files with pre-tokenized text:
//!
//! ```text
//! {"tokens": ["great", "food"], "target": [1, 2], "label": "positive"}
//! {"tokens": ["awful", "stay"], "rating": 1}
//! ```
//!
//! A `text` field may replace `tokens`; it is split with [`tokenize`].
//! Embedding files are plain text, one `token v1 ... vd` per line.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Default cap on document length, in tokens.
pub const DEFAULT_MAX_DOC_LEN: usize = 400;

/// Sentiment class. The discriminant is the class index shared by every
/// output layer, so transferred heads line up across tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive = 0,
    Negative = 1,
    Neutral = 2,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Positive, Label::Negative, Label::Neutral];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Label::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Positive => "positive",
            Label::Negative => "negative",
            Label::Neutral => "neutral",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Label> {
        match s {
            "positive" => Ok(Label::Positive),
            "negative" => Ok(Label::Negative),
            "neutral" => Ok(Label::Neutral),
            other => Err(Error::invalid(format!("unknown label `{other}`"))),
        }
    }
}

/// Review rating to sentiment: below 3 negative, above 3 positive, 3 neutral.
pub fn map_rating(rating: i64) -> Result<Label> {
    match rating {
        1 | 2 => Ok(Label::Negative),
        3 => Ok(Label::Neutral),
        4 | 5 => Ok(Label::Positive),
        r => Err(Error::invalid(format!("rating {r} outside 1..=5"))),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AspectSample {
    pub tokens: Vec<String>,
    pub target: Range<usize>,
    pub label: Label,
}

impl AspectSample {
    pub fn new(tokens: Vec<String>, target: Range<usize>, label: Label) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::invalid("aspect sample has no tokens"));
        }
        if target.start >= target.end || target.end > tokens.len() {
            return Err(Error::invalid(format!(
                "target span [{}, {}) invalid for {} tokens",
                target.start,
                target.end,
                tokens.len()
            )));
        }
        Ok(AspectSample { tokens, target, label })
    }

    pub fn target_tokens(&self) -> &[String] {
        &self.tokens[self.target.clone()]
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DocSample {
    pub tokens: Vec<String>,
    pub label: Label,
}

impl DocSample {
    pub fn new(tokens: Vec<String>, label: Label) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::invalid("document has no tokens"));
        }
        Ok(DocSample { tokens, label })
    }
}

/// Fallback tokenizer: lowercase, split punctuation off, split on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut spaced = String::with_capacity(text.len() + 8);
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_ascii_punctuation() {
            spaced.push(' ');
            spaced.push(ch);
            spaced.push(' ');
        } else {
            spaced.push(ch);
        }
    }
    spaced.split_whitespace().map(str::to_owned).collect()
}

#[derive(Deserialize)]
struct RawAspect {
    tokens: Option<Vec<String>>,
    text: Option<String>,
    target: [usize; 2],
    label: String,
}

#[derive(Deserialize)]
struct RawDoc {
    tokens: Option<Vec<String>>,
    text: Option<String>,
    label: Option<String>,
    rating: Option<i64>,
}

fn raw_tokens(tokens: Option<Vec<String>>, text: Option<String>) -> std::result::Result<Vec<String>, String> {
    match (tokens, text) {
        (Some(t), _) => Ok(t),
        (None, Some(text)) => Ok(tokenize(&text)),
        (None, None) => Err("missing `tokens` (or `text`)".into()),
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

pub fn load_aspect_corpus(path: &Path, filter_conflicts: bool) -> Result<Vec<AspectSample>> {
    let samples = parse_aspect_lines(open(path)?, path)?;
    Ok(if filter_conflicts {
        drop_conflicts(samples)
    } else {
        samples
    })
}

pub fn parse_aspect_lines(reader: impl BufRead, path: &Path) -> Result<Vec<AspectSample>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawAspect =
            serde_json::from_str(&line).map_err(|e| parse_err(path, lineno, e.to_string()))?;
        let tokens = raw_tokens(raw.tokens, raw.text).map_err(|m| parse_err(path, lineno, m))?;
        let label: Label = raw
            .label
            .parse()
            .map_err(|e: Error| parse_err(path, lineno, e.to_string()))?;
        let sample = AspectSample::new(tokens, raw.target[0]..raw.target[1], label)
            .map_err(|e| parse_err(path, lineno, format!("sample {}: {e}", out.len())))?;
        out.push(sample);
    }
    Ok(out)
}

#[derive(Serialize)]
struct AspectLine<'a> {
    tokens: &'a [String],
    target: [usize; 2],
    label: Label,
}

#[derive(Serialize)]
struct DocLine<'a> {
    tokens: &'a [String],
    label: Label,
}

fn write_lines<S: Serialize>(path: &Path, lines: impl Iterator<Item = S>) -> Result<()> {
    let mut out = Vec::new();
    for l in lines {
        serde_json::to_writer(&mut out, &l).expect("sample serialize");
        out.push(b'\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes samples in the aspect JSON-lines format.
pub fn save_aspect_corpus(path: &Path, samples: &[AspectSample]) -> Result<()> {
    write_lines(
        path,
        samples.iter().map(|s| AspectLine {
            tokens: &s.tokens,
            target: [s.target.start, s.target.end],
            label: s.label,
        }),
    )
}

/// Writes documents in the document JSON-lines format (with labels).
pub fn save_doc_corpus(path: &Path, docs: &[DocSample]) -> Result<()> {
    write_lines(
        path,
        docs.iter().map(|d| DocLine {
            tokens: &d.tokens,
            label: d.label,
        }),
    )
}

/// Removes every sample whose (sentence, target surface form) pair also
/// occurs with a different label.
pub fn drop_conflicts(samples: Vec<AspectSample>) -> Vec<AspectSample> {
    let mut labels: HashMap<(Vec<String>, Vec<String>), HashSet<Label>> = HashMap::new();
    for s in &samples {
        labels
            .entry((s.tokens.clone(), s.target_tokens().to_vec()))
            .or_default()
            .insert(s.label);
    }
    samples
        .into_iter()
        .filter(|s| labels[&(s.tokens.clone(), s.target_tokens().to_vec())].len() == 1)
        .collect()
}

pub fn load_doc_corpus(path: &Path, max_len: usize) -> Result<Vec<DocSample>> {
    parse_doc_lines(open(path)?, path, max_len)
}

pub fn parse_doc_lines(reader: impl BufRead, path: &Path, max_len: usize) -> Result<Vec<DocSample>> {
    if max_len == 0 {
        return Err(Error::invalid("max document length must be positive"));
    }
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawDoc =
            serde_json::from_str(&line).map_err(|e| parse_err(path, lineno, e.to_string()))?;
        let mut tokens = raw_tokens(raw.tokens, raw.text).map_err(|m| parse_err(path, lineno, m))?;
        let label = match (raw.label, raw.rating) {
            (Some(l), _) => l.parse(),
            (None, Some(r)) => map_rating(r),
            (None, None) => Err(Error::invalid("missing `label` or `rating`")),
        }
        .map_err(|e| parse_err(path, lineno, e.to_string()))?;
        tokens.truncate(max_len);
        out.push(DocSample::new(tokens, label).map_err(|e| parse_err(path, lineno, e.to_string()))?);
    }
    Ok(out)
}

/// Exactly `per_class` documents of each class, drawn without replacement,
/// in a seed-determined order.
pub fn balance_docs(docs: &[DocSample], per_class: usize, seed: u64) -> Result<Vec<DocSample>> {
    let labels: Vec<Label> = docs.iter().map(|d| d.label).collect();
    Ok(balance_indices(&labels, per_class, seed)?
        .into_iter()
        .map(|i| docs[i].clone())
        .collect())
}

/// [`balance_docs`] over labels, returning positions into `labels`.
pub fn balance_indices(labels: &[Label], per_class: usize, seed: u64) -> Result<Vec<usize>> {
    let mut rng = rng::stream(seed, "corpus/balance");
    let mut out = Vec::with_capacity(3 * per_class);
    for label in Label::ALL {
        let pool: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == label).collect();
        if pool.len() < per_class {
            return Err(Error::invalid(format!(
                "class {label} has {} documents, {per_class} requested",
                pool.len()
            )));
        }
        let mut picked = index::sample(&mut rng, pool.len(), per_class).into_vec();
        picked.sort_unstable();
        out.extend(picked.into_iter().map(|i| pool[i]));
    }
    out.shuffle(&mut rng);
    Ok(out)
}

/// Holds out `round(fraction·N)` samples, chosen uniformly by `seed`, as a
/// development set. Both halves keep the original order.
pub fn dev_split<S: Clone>(samples: &[S], fraction: f64, seed: u64) -> Result<(Vec<S>, Vec<S>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!("dev fraction {fraction} outside (0, 1)")));
    }
    let n = samples.len();
    if n < 2 {
        return Err(Error::invalid(format!("cannot split {n} samples")));
    }
    let k = (fraction * n as f64).round() as usize;
    let mut rng = rng::stream(seed, "corpus/dev_split");
    let dev: HashSet<usize> = index::sample(&mut rng, n, k).into_iter().collect();
    let mut train = Vec::with_capacity(n - k);
    let mut held = Vec::with_capacity(k);
    for (i, s) in samples.iter().enumerate() {
        if dev.contains(&i) {
            held.push(s.clone());
        } else {
            train.push(s.clone());
        }
    }
    Ok((train, held))
}

/// Indices of the first `round(fraction·n)` entries of one fixed
/// permutation, so larger fractions always contain smaller ones.
pub fn nested_subsample(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid(format!("fraction {fraction} outside [0, 1]")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, "corpus/subsample"));
    let k = (fraction * n as f64).round() as usize;
    let mut picked = order[..k].to_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Token index with PAD at 0 and UNK at 1; corpus tokens follow by
/// descending frequency, ties broken lexicographically.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn build<'a, I, S>(sequences: I) -> Vocab
    where
        I: IntoIterator<Item = &'a S>,
        S: AsRef<[String]> + 'a + ?Sized,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for seq in sequences {
            for tok in seq.as_ref() {
                if tok != PAD_TOKEN && tok != UNK_TOKEN {
                    *counts.entry(tok.as_str()).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Self::from_tokens(ranked.into_iter().map(|(t, _)| t.to_owned()))
    }

    fn from_tokens(corpus_tokens: impl IntoIterator<Item = String>) -> Vocab {
        let tokens: Vec<String> = [PAD_TOKEN.to_owned(), UNK_TOKEN.to_owned()]
            .into_iter()
            .chain(corpus_tokens)
            .collect();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn encode(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn decode(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// SHA-256 over the ordered token list.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update((t.len() as u64).to_le_bytes());
            h.update(t.as_bytes());
        }
        h.finalize().into()
    }

    pub fn digest_hex(&self) -> String {
        self.digest().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
        for t in &self.tokens {
            writeln!(f, "{t}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocab> {
        let mut lines = Vec::new();
        for line in open(path)?.lines() {
            lines.push(line.map_err(|e| Error::io(path, e))?);
        }
        if lines.len() < 2 || lines[0] != PAD_TOKEN || lines[1] != UNK_TOKEN {
            return Err(parse_err(path, 1, "vocabulary must start with <pad>, <unk>"));
        }
        let vocab = Self::from_tokens(lines.into_iter().skip(2));
        if vocab.index.len() != vocab.tokens.len() {
            return Err(parse_err(path, 1, "duplicate vocabulary entries"));
        }
        Ok(vocab)
    }

    pub fn encode_aspect(&self, s: &AspectSample) -> EncodedAspect {
        EncodedAspect {
            ids: s.tokens.iter().map(|t| self.encode(t)).collect(),
            target: s.target.clone(),
            label: s.label,
        }
    }

    pub fn encode_doc(&self, d: &DocSample) -> EncodedDoc {
        EncodedDoc {
            ids: d.tokens.iter().map(|t| self.encode(t)).collect(),
            label: d.label,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedAspect {
    pub ids: Vec<usize>,
    pub target: Range<usize>,
    pub label: Label,
}

impl EncodedAspect {
    pub fn target_ids(&self) -> &[usize] {
        &self.ids[self.target.clone()]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedDoc {
    pub ids: Vec<usize>,
    pub label: Label,
}

/// A `V × d` embedding table with per-row provenance.
#[derive(Clone, Debug)]
pub struct EmbeddingMatrix {
    pub table: Tensor<f32>,
    /// True where the row came from the embedding file.
    pub pretrained: Vec<bool>,
    pub found: usize,
    pub missing: usize,
}

impl EmbeddingMatrix {
    pub fn dim(&self) -> usize {
        self.table.cols()
    }

    pub fn rows(&self) -> usize {
        self.table.rows()
    }

    /// Every row random except PAD, which is zero.
    pub fn random(vocab: &Vocab, dim: usize, seed: u64) -> Result<EmbeddingMatrix> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        let mut rng = rng::stream(seed, "embedding/oov");
        let bound = 0.25 / (dim as f64).sqrt();
        let mut data: Vec<f32> = (0..vocab.len() * dim)
            .map(|_| rng.random_range(-bound..bound) as f32)
            .collect();
        data[..dim].iter_mut().for_each(|v| *v = 0.0);
        Ok(EmbeddingMatrix {
            table: Tensor::new(vec![vocab.len(), dim], data)?,
            pretrained: vec![false; vocab.len()],
            found: 0,
            missing: vocab.len() - 2,
        })
    }
}

/// Loads vectors for vocabulary tokens from a text embedding file. Tokens
/// absent from the file keep seeded random rows; PAD stays zero.
pub fn load_embeddings(path: &Path, vocab: &Vocab, dim: usize, seed: u64) -> Result<EmbeddingMatrix> {
    let mut m = EmbeddingMatrix::random(vocab, dim, seed)?;
    let reader = open(path)?;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut fields = line.split(' ').filter(|f| !f.is_empty());
        let Some(token) = fields.next() else { continue };
        let values: Vec<&str> = fields.collect();
        if values.len() != dim {
            return Err(parse_err(
                path,
                lineno,
                format!("expected {dim} values for `{token}`, found {}", values.len()),
            ));
        }
        let id = match vocab.index.get(token) {
            Some(&id) if id != PAD && id != UNK => id,
            _ => continue,
        };
        if m.pretrained[id] {
            continue;
        }
        let row = m.table.row_mut(id);
        for (dst, v) in row.iter_mut().zip(&values) {
            *dst = v
                .parse::<f32>()
                .map_err(|e| parse_err(path, lineno, format!("`{v}`: {e}")))?;
        }
        m.pretrained[id] = true;
    }
    m.found = m.pretrained.iter().filter(|&&p| p).count();
    m.missing = vocab.len() - 2 - m.found;
    Ok(m)
}
