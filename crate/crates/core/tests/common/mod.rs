//! Plain-loop 64-bit reference implementations, written without the tape,
//! used as oracles for the model code. Also shared (by path) with the
//! acceptance suite.
#![allow(dead_code)]

use absa_core::model::{AspectParams, DocParams};
use absa_core::tensor::{Param, Tensor};
use absa_core::Label;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(r: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-scale..scale)).collect()
}

pub fn matrix(p: &Param<f64>) -> Vec<Vec<f64>> {
    let t = p.read();
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

pub fn vector(p: &Param<f64>) -> Vec<f64> {
    p.read().data().to_vec()
}

pub fn random_param(r: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Param<f64> {
    let n = shape.iter().product();
    Param::new(Tensor::from_f64(shape, &uniform(r, n, scale)).unwrap())
}

/// Direct exponentiation and normalization; masked entries are 0.
pub fn softmax(v: &[f64], mask: Option<&[bool]>) -> Vec<f64> {
    let on = |i: usize| mask.is_none_or(|m| m[i]);
    let e: Vec<f64> = v
        .iter()
        .enumerate()
        .map(|(i, &x)| if on(i) { x.exp() } else { 0.0 })
        .collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `x · M` for a row vector `x` and matrix `M` (rows × cols).
fn row_times(x: &[f64], m: &[Vec<f64>]) -> Vec<f64> {
    let cols = m[0].len();
    let mut out = vec![0.0; cols];
    for (xi, row) in x.iter().zip(m) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += xi * v;
        }
    }
    out
}

/// Standard LSTM from a zero state. Gate blocks in the stacked matrices are
/// ordered input, forget, candidate, output.
pub fn lstm(xs: &[Vec<f64>], w: &[Vec<f64>], u: &[Vec<f64>], b: &[f64]) -> Vec<Vec<f64>> {
    let h_dim = u.len();
    let mut h = vec![0.0; h_dim];
    let mut c = vec![0.0; h_dim];
    let mut out = Vec::new();
    for x in xs {
        let a = row_times(x, w);
        let r = row_times(&h, u);
        let pre: Vec<f64> = (0..4 * h_dim).map(|k| a[k] + r[k] + b[k]).collect();
        for j in 0..h_dim {
            let i = sigmoid(pre[j]);
            let f = sigmoid(pre[h_dim + j]);
            let g = pre[2 * h_dim + j].tanh();
            let o = sigmoid(pre[3 * h_dim + j]);
            c[j] = f * c[j] + i * g;
            h[j] = o * c[j].tanh();
        }
        out.push(h.clone());
    }
    out
}

pub fn mean_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut m = vec![0.0; rows[0].len()];
    for r in rows {
        for (a, v) in m.iter_mut().zip(r) {
            *a += v / rows.len() as f64;
        }
    }
    m
}

/// `(z, α)` with `β_i = tanh(h_iᵀ W_a t)`.
pub fn attention(h: &[Vec<f64>], t: &[f64], w_a: &[Vec<f64>], mask: Option<&[bool]>) -> (Vec<f64>, Vec<f64>) {
    let beta: Vec<f64> = h
        .iter()
        .map(|hi| {
            let mut s = 0.0;
            for (p, row) in hi.iter().zip(w_a) {
                for (q, w) in t.iter().zip(row) {
                    s += p * w * q;
                }
            }
            s.tanh()
        })
        .collect();
    let alpha = softmax(&beta, mask);
    let mut z = vec![0.0; h[0].len()];
    for (a, hi) in alpha.iter().zip(h) {
        for (zk, v) in z.iter_mut().zip(hi) {
            *zk += a * v;
        }
    }
    (z, alpha)
}

pub fn output(rep: &[f64], w: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let logits: Vec<f64> = w
        .iter()
        .zip(b)
        .map(|(row, bi)| row.iter().zip(rep).map(|(x, y)| x * y).sum::<f64>() + bi)
        .collect();
    softmax(&logits, None)
}

fn rows_of(table: &[Vec<f64>], ids: &[usize]) -> Vec<Vec<f64>> {
    ids.iter().map(|&i| table[i].clone()).collect()
}

/// Eval-mode aspect model: `(p, α)`.
pub fn aspect_model(p: &AspectParams<f64>, ids: &[usize], target: std::ops::Range<usize>) -> (Vec<f64>, Vec<f64>) {
    let e = matrix(&p.embedding);
    let h = lstm(&rows_of(&e, ids), &matrix(&p.lstm.w), &matrix(&p.lstm.u), &vector(&p.lstm.b));
    let t = mean_rows(&rows_of(&e, &ids[target]));
    let (z, alpha) = attention(&h, &t, &matrix(&p.attn.w_a), None);
    (output(&z, &matrix(&p.out.w), &vector(&p.out.b)), alpha)
}

/// Eval-mode document model with the last (`mean = false`) or mean hidden
/// state as representation.
pub fn doc_model(p: &DocParams<f64>, ids: &[usize], mean: bool) -> Vec<f64> {
    let e = matrix(&p.embedding);
    let h = lstm(&rows_of(&e, ids), &matrix(&p.lstm.w), &matrix(&p.lstm.u), &vector(&p.lstm.b));
    let rep = if mean { mean_rows(&h) } else { h.last().unwrap().clone() };
    output(&rep, &matrix(&p.out.w), &vector(&p.out.b))
}

/// Accuracy and macro-F1 by counting, with F1 = 0 whenever precision or
/// recall is undefined.
pub fn brute_metrics(gold: &[Label], pred: &[Label]) -> (f64, f64) {
    let n = gold.len() as f64;
    let correct = gold.iter().zip(pred).filter(|(g, p)| g == p).count() as f64;
    let mut f1 = 0.0;
    for c in Label::ALL {
        let tp = gold.iter().zip(pred).filter(|(g, p)| **g == c && **p == c).count() as f64;
        let predicted = pred.iter().filter(|&&p| p == c).count() as f64;
        let actual = gold.iter().filter(|&&g| g == c).count() as f64;
        if predicted == 0.0 || actual == 0.0 {
            continue;
        }
        let (prec, rec) = (tp / predicted, tp / actual);
        if prec + rec > 0.0 {
            f1 += 2.0 * prec * rec / (prec + rec);
        }
    }
    (correct / n, f1 / 3.0)
}

/// One-tailed p-value for mean(a) > mean(b) under the pooled-variance t
/// statistic, by integrating the t density with composite Simpson's rule.
pub fn t_test_by_integration(a: &[f64], b: &[f64]) -> f64 {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let ss = |v: &[f64]| {
        let m = mean(v);
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>()
    };
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let df = na + nb - 2.0;
    let pooled = (ss(a) + ss(b)) / df;
    let t = (mean(a) - mean(b)) / (pooled * (1.0 / na + 1.0 / nb)).sqrt();
    upper_tail(t, df)
}

fn ln_gamma(x: f64) -> f64 {
    // Lanczos approximation, g = 7.
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    let x = x - 1.0;
    let mut s = C[0];
    for (i, c) in C.iter().enumerate().skip(1) {
        s += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + s.ln()
}

fn t_density(x: f64, df: f64) -> f64 {
    let ln_c = ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
    (ln_c - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp()
}

/// P(T > t): integral of the density over [t, ∞), mapped to a finite
/// interval by x = t + s/(1-s).
fn upper_tail(t: f64, df: f64) -> f64 {
    if t < 0.0 {
        return 1.0 - upper_tail(-t, df);
    }
    let f = |s: f64| {
        if s >= 1.0 {
            return 0.0;
        }
        let x = t + s / (1.0 - s);
        t_density(x, df) / ((1.0 - s) * (1.0 - s))
    };
    let n = 200_000;
    let h = 1.0 / n as f64;
    let mut acc = f(0.0) + f(1.0);
    for i in 1..n {
        acc += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

/// Largest relative difference, scaled by max(1, |a|, |b|).
pub fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / 1f64.max(x.abs()).max(y.abs()))
        .fold(0.0, f64::max)
}

/// True when every pair agrees to `tol` relative to the larger magnitude,
/// with a 1e-12 absolute floor for entries that cancel to near zero.
pub fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len()
        && a
            .iter()
            .zip(b)
            .all(|(x, y)| (x - y).abs() <= tol * x.abs().max(y.abs()) + 1e-12)
}
