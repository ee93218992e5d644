//! Accuracy, macro-F1, multi-run aggregation, the one-tailed t-test, and
//! attention dumps.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::corpus::{AspectSample, EncodedAspect, Label};
use crate::error::{Error, Result};
use crate::model::AspectParams;
use crate::tensor::Real;

const K: usize = Label::COUNT;

/// Rows are gold labels, columns are predictions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: [[u64; K]; K],
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(gold: &[Label], pred: &[Label]) -> Result<Self> {
        if gold.len() != pred.len() {
            return Err(Error::invalid(format!(
                "{} gold labels vs {} predictions",
                gold.len(),
                pred.len()
            )));
        }
        let mut cm = Self::new();
        for (&g, &p) in gold.iter().zip(pred) {
            cm.add(g, p);
        }
        Ok(cm)
    }

    pub fn from_counts(counts: [[u64; K]; K]) -> Self {
        ConfusionMatrix { counts }
    }

    pub fn add(&mut self, gold: Label, pred: Label) {
        self.counts[gold.index()][pred.index()] += 1;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (r, o) in self.counts.iter_mut().zip(&other.counts) {
            for (c, v) in r.iter_mut().zip(o) {
                *c += v;
            }
        }
    }

    pub fn counts(&self) -> &[[u64; K]; K] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    fn trace(&self) -> u64 {
        (0..K).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> Result<f64> {
        match self.total() {
            0 => Err(Error::invalid("accuracy of an empty confusion matrix")),
            n => Ok(self.trace() as f64 / n as f64),
        }
    }

    /// Per-class F1; a zero precision or recall denominator gives F1 = 0.
    pub fn per_class_f1(&self) -> [f64; K] {
        let mut f = [0.0; K];
        for (c, out) in f.iter_mut().enumerate() {
            let tp = self.counts[c][c] as f64;
            let col: u64 = (0..K).map(|g| self.counts[g][c]).sum();
            let row: u64 = self.counts[c].iter().sum();
            if col == 0 || row == 0 {
                continue;
            }
            let p = tp / col as f64;
            let r = tp / row as f64;
            if p + r > 0.0 {
                *out = 2.0 * p * r / (p + r);
            }
        }
        f
    }

    pub fn macro_f1(&self) -> Result<f64> {
        if self.total() == 0 {
            return Err(Error::invalid("macro-F1 of an empty confusion matrix"));
        }
        Ok(self.per_class_f1().iter().sum::<f64>() / K as f64)
    }
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    cm.accuracy()
}

pub fn macro_f1(cm: &ConfusionMatrix) -> Result<f64> {
    cm.macro_f1()
}

/// Per-seed values of one metric for one method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSet(Vec<f64>);

impl RunSet {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("empty run set"));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite run value {v}")));
        }
        Ok(RunSet(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.0.iter().sum::<f64>() / self.0.len() as f64
    }

    /// Unbiased sample variance; zero for a single run.
    pub fn variance(&self) -> f64 {
        let n = self.0.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        self.0.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64
    }
}

/// CDF of Student's t with `df` degrees of freedom.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let x = df / (df + t * t);
    let tail = 0.5 * beta_reg(df / 2.0, 0.5, x);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// One-tailed p-value for mean(a) > mean(b).
    pub p: f64,
}

/// Unpaired equal-variance t-test of H1: mean(a) > mean(b).
pub fn ttest_one_tailed(a: &RunSet, b: &RunSet) -> Result<TTest> {
    let (na, nb) = (a.len(), b.len());
    if na < 2 || nb < 2 {
        return Err(Error::invalid(format!("t-test needs at least 2 runs per side, got {na} and {nb}")));
    }
    let df = (na + nb - 2) as f64;
    let pooled = ((na - 1) as f64 * a.variance() + (nb - 1) as f64 * b.variance()) / df;
    let diff = a.mean() - b.mean();
    if pooled == 0.0 {
        let (t, p) = match diff.partial_cmp(&0.0) {
            Some(std::cmp::Ordering::Greater) => (f64::INFINITY, 0.0),
            Some(std::cmp::Ordering::Less) => (f64::NEG_INFINITY, 1.0),
            _ => (0.0, 0.5),
        };
        return Ok(TTest { t, df, p });
    }
    let se = (pooled * (1.0 / na as f64 + 1.0 / nb as f64)).sqrt();
    let t = diff / se;
    Ok(TTest {
        t,
        df,
        p: 1.0 - student_t_cdf(t, df),
    })
}

/// Metrics document for one method over its seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub dataset: String,
    pub seeds: Vec<u64>,
    pub acc_mean: f64,
    pub f1_mean: f64,
    pub acc_runs: Vec<f64>,
    pub f1_runs: Vec<f64>,
    pub p_vs_baseline: Option<Significance>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    pub acc: f64,
    pub f1: f64,
}

impl MetricsReport {
    pub fn new(method: &str, dataset: &str, seeds: &[u64], acc: &RunSet, f1: &RunSet) -> Self {
        MetricsReport {
            method: method.to_owned(),
            dataset: dataset.to_owned(),
            seeds: seeds.to_vec(),
            acc_mean: acc.mean(),
            f1_mean: f1.mean(),
            acc_runs: acc.values().to_vec(),
            f1_runs: f1.values().to_vec(),
            p_vs_baseline: None,
        }
    }

    pub fn acc(&self) -> Result<RunSet> {
        RunSet::new(self.acc_runs.clone())
    }

    pub fn f1(&self) -> Result<RunSet> {
        RunSet::new(self.f1_runs.clone())
    }

    /// Fills `p_vs_baseline` with one-tailed p-values for this method beating
    /// `baseline`, on accuracy and on macro-F1.
    pub fn compare_to(&mut self, baseline: &MetricsReport) -> Result<()> {
        self.p_vs_baseline = Some(Significance {
            acc: ttest_one_tailed(&self.acc()?, &baseline.acc()?)?.p,
            f1: ttest_one_tailed(&self.f1()?, &baseline.f1()?)?.p,
        });
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize") + "\n"
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: e.line(),
            msg: e.to_string(),
        })
    }
}

/// One attention-dump record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub tokens: Vec<String>,
    pub target: [usize; 2],
    pub alpha: Vec<f64>,
    pub predicted: Label,
    pub gold: Label,
}

impl AttentionRecord {
    pub fn correct(&self) -> bool {
        self.predicted == self.gold
    }
}

fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

pub fn attention_dump<T: Real>(
    params: &AspectParams<T>,
    samples: &[AspectSample],
    encoded: &[EncodedAspect],
) -> Result<Vec<AttentionRecord>> {
    if samples.len() != encoded.len() {
        return Err(Error::invalid("samples and encodings differ in length"));
    }
    samples
        .iter()
        .zip(encoded)
        .map(|(s, e)| {
            let pred = params.predict(e)?;
            Ok(AttentionRecord {
                tokens: s.tokens.clone(),
                target: [s.target.start, s.target.end],
                alpha: pred.alpha.iter().map(|&a| round4(a)).collect(),
                predicted: pred.label,
                gold: s.label,
            })
        })
        .collect()
}

/// Records that model A gets right and model B gets wrong.
pub fn disagreements(a: &[AttentionRecord], b: &[AttentionRecord]) -> Vec<AttentionRecord> {
    a.iter()
        .zip(b)
        .filter(|(x, y)| x.correct() && !y.correct())
        .map(|(x, _)| x.clone())
        .collect()
}

pub fn write_jsonl<S: Serialize>(path: &Path, records: &[S]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("record serialize");
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Evaluates `params` on `samples`.
pub fn evaluate<T: Real>(params: &AspectParams<T>, samples: &[EncodedAspect]) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new();
    for s in samples {
        cm.add(s.label, params.predict(s)?.label);
    }
    Ok(cm)
}
