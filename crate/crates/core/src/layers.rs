//! Neural building blocks: LSTM encoder, target representation,
//! target-conditioned attention, softmax output head and dropout.
//!
//! Every block is expressed in tape primitives, so its gradient comes from
//! the primitives' backward rules.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, glorot_uniform, StreamRng};
use crate::tape::{Tape, Var};
use crate::tensor::{Param, Real, Tensor};

/// Gate blocks inside the stacked LSTM matrices, in column order.
pub const GATES: [&str; 4] = ["input", "forget", "candidate", "output"];

/// Single-direction LSTM parameters. The four gates are stacked column-wise:
/// `w` is `d_in × 4h`, `u` is `h × 4h`, `b` has length `4h`.
#[derive(Clone, Debug)]
pub struct LstmParams<T> {
    pub w: Param<T>,
    pub u: Param<T>,
    pub b: Param<T>,
}

pub struct LstmVars {
    w: Var,
    u: Var,
    b: Var,
    hidden: usize,
}

impl<T: Real> LstmParams<T> {
    /// Glorot-uniform weights, zero biases except the forget gate at 1.
    pub fn init(input_dim: usize, hidden: usize, seed: u64, name: &str) -> Self {
        let w = glorot_uniform(input_dim, 4 * hidden, &mut rng::stream(seed, &format!("{name}.w")));
        let u = glorot_uniform(hidden, 4 * hidden, &mut rng::stream(seed, &format!("{name}.u")));
        let mut b = Tensor::zeros(&[4 * hidden]);
        b.data_mut()[hidden..2 * hidden].iter_mut().for_each(|v| *v = T::one());
        LstmParams {
            w: Param::new(w),
            u: Param::new(u),
            b: Param::new(b),
        }
    }

    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        LstmParams {
            w: Param::new(Tensor::zeros(&[input_dim, 4 * hidden])),
            u: Param::new(Tensor::zeros(&[hidden, 4 * hidden])),
            b: Param::new(Tensor::zeros(&[4 * hidden])),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn hidden_dim(&self) -> usize {
        self.u.shape()[0]
    }

    pub fn validate(&self) -> Result<()> {
        let (w, u, b) = (self.w.shape(), self.u.shape(), self.b.shape());
        let h = u[0];
        if w.len() != 2 || u.len() != 2 || b.len() != 1 || w[1] != 4 * h || u[1] != 4 * h || b[0] != 4 * h {
            return Err(Error::shape("lstm", format!("w {w:?}, u {u:?}, b {b:?}")));
        }
        Ok(())
    }

    pub fn named(&self) -> [(&'static str, &Param<T>); 3] {
        [("w", &self.w), ("u", &self.u), ("b", &self.b)]
    }

    pub fn deep_clone(&self) -> Self {
        LstmParams {
            w: self.w.deep_clone(),
            u: self.u.deep_clone(),
            b: self.b.deep_clone(),
        }
    }

    pub fn cast<U: Real>(&self) -> LstmParams<U> {
        LstmParams {
            w: self.w.cast(),
            u: self.u.cast(),
            b: self.b.cast(),
        }
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> LstmVars {
        LstmVars {
            w: tape.param(&self.w),
            u: tape.param(&self.u),
            b: tape.param(&self.b),
            hidden: self.hidden_dim(),
        }
    }
}

/// One recurrence step. `x` is `1 × d_in`; `h`, `c` are `1 × hidden`.
pub fn lstm_step<T: Real>(tape: &mut Tape<T>, x: Var, h: Var, c: Var, p: &LstmVars) -> Result<(Var, Var)> {
    let n = p.hidden;
    let xw = tape.matmul(x, p.w)?;
    let hu = tape.matmul(h, p.u)?;
    let pre = tape.add(xw, hu)?;
    let pre = tape.add_row(pre, p.b)?;
    let gate = |tape: &mut Tape<T>, k: usize| tape.slice(pre, 1, k * n, (k + 1) * n);
    let i = gate(tape, 0)?;
    let i = tape.sigmoid(i);
    let f = gate(tape, 1)?;
    let f = tape.sigmoid(f);
    let g = gate(tape, 2)?;
    let g = tape.tanh(g);
    let o = gate(tape, 3)?;
    let o = tape.sigmoid(o);
    let keep = tape.mul(f, c)?;
    let write = tape.mul(i, g)?;
    let c_next = tape.add(keep, write)?;
    let squashed = tape.tanh(c_next);
    let h_next = tape.mul(o, squashed)?;
    Ok((h_next, c_next))
}

/// Runs the LSTM over an `n × d_in` sequence from a zero state and returns
/// the `n × hidden` stack of hidden states.
pub fn lstm_forward<T: Real>(tape: &mut Tape<T>, embedded: Var, params: &LstmParams<T>) -> Result<Var> {
    let shape = tape.value(embedded).shape().to_vec();
    if shape.len() != 2 || shape[1] != params.input_dim() {
        return Err(Error::shape(
            "lstm_forward",
            format!("input {shape:?} for input dimension {}", params.input_dim()),
        ));
    }
    let vars = params.bind(tape);
    let zero = Tensor::zeros(&[1, vars.hidden]);
    let mut h = tape.constant(zero.clone());
    let mut c = tape.constant(zero);
    let mut states = Vec::with_capacity(shape[0]);
    for t in 0..shape[0] {
        let x = tape.slice(embedded, 0, t, t + 1)?;
        (h, c) = lstm_step(tape, x, h, c, &vars)?;
        states.push(h);
    }
    tape.concat(&states, 0)
}

/// Mean of the embedding rows of the target words.
pub fn target_rep<T: Real>(tape: &mut Tape<T>, embedding: &Param<T>, ids: &[usize]) -> Result<Var> {
    if ids.is_empty() {
        return Err(Error::invalid("target has no words"));
    }
    let rows = tape.gather(embedding, ids)?;
    tape.mean_rows(rows)
}

/// Bilinear attention matrix, `hidden × embedding_dim`.
#[derive(Clone, Debug)]
pub struct AttentionParams<T> {
    pub w_a: Param<T>,
}

impl<T: Real> AttentionParams<T> {
    pub fn init(hidden: usize, emb_dim: usize, seed: u64, name: &str) -> Self {
        AttentionParams {
            w_a: Param::new(glorot_uniform(hidden, emb_dim, &mut rng::stream(seed, name))),
        }
    }

    pub fn deep_clone(&self) -> Self {
        AttentionParams {
            w_a: self.w_a.deep_clone(),
        }
    }

    pub fn cast<U: Real>(&self) -> AttentionParams<U> {
        AttentionParams { w_a: self.w_a.cast() }
    }
}

/// Scores `β_i = tanh(h_iᵀ W_a t)`, weights `α = softmax(β)` over unmasked
/// positions, and pools `z = Σ α_i h_i`. Returns `(z, α)`.
pub fn attention<T: Real>(
    tape: &mut Tape<T>,
    hidden: Var,
    target: Var,
    w_a: Var,
    mask: Option<&[bool]>,
) -> Result<(Var, Var)> {
    let (hs, ts, ws) = (
        tape.value(hidden).shape().to_vec(),
        tape.value(target).shape().to_vec(),
        tape.value(w_a).shape().to_vec(),
    );
    if hs.len() != 2 || ts.len() != 1 || ws != [hs[1], ts[0]] {
        return Err(Error::shape(
            "attention",
            format!("hidden {hs:?}, target {ts:?}, W_a {ws:?}"),
        ));
    }
    let n = hs[0];
    let t_col = tape.reshape(target, &[ts[0], 1])?;
    let projected = tape.matmul(w_a, t_col)?;
    let scores = tape.matmul(hidden, projected)?;
    let scores = tape.reshape(scores, &[n])?;
    let beta = tape.tanh(scores);
    let alpha = tape.softmax(beta, mask)?;
    let alpha_row = tape.reshape(alpha, &[1, n])?;
    let z = tape.matmul(alpha_row, hidden)?;
    let z = tape.reshape(z, &[hs[1]])?;
    Ok((z, alpha))
}

/// Softmax classifier head: `W` is `classes × hidden`, `b` has length
/// `classes`.
#[derive(Clone, Debug)]
pub struct OutputParams<T> {
    pub w: Param<T>,
    pub b: Param<T>,
}

impl<T: Real> OutputParams<T> {
    pub fn init(hidden: usize, classes: usize, seed: u64, name: &str) -> Self {
        OutputParams {
            w: Param::new(glorot_uniform(classes, hidden, &mut rng::stream(seed, &format!("{name}.w")))),
            b: Param::new(Tensor::zeros(&[classes])),
        }
    }

    pub fn named(&self) -> [(&'static str, &Param<T>); 2] {
        [("w", &self.w), ("b", &self.b)]
    }

    pub fn classes(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn deep_clone(&self) -> Self {
        OutputParams {
            w: self.w.deep_clone(),
            b: self.b.deep_clone(),
        }
    }

    pub fn cast<U: Real>(&self) -> OutputParams<U> {
        OutputParams {
            w: self.w.cast(),
            b: self.b.cast(),
        }
    }
}

/// `p = softmax(W rep + b)` for a representation vector `rep`.
pub fn output_layer<T: Real>(tape: &mut Tape<T>, rep: Var, params: &OutputParams<T>) -> Result<Var> {
    let rs = tape.value(rep).shape().to_vec();
    let ws = params.w.shape();
    if rs.len() != 1 || ws[1] != rs[0] {
        return Err(Error::shape("output_layer", format!("rep {rs:?}, W {ws:?}")));
    }
    let w = tape.param(&params.w);
    let b = tape.param(&params.b);
    let col = tape.reshape(rep, &[rs[0], 1])?;
    let logits = tape.matmul(w, col)?;
    let logits = tape.reshape(logits, &[ws[0]])?;
    let logits = tape.add(logits, b)?;
    tape.softmax(logits, None)
}

/// Inverted dropout. With `rng = None` (evaluation) or `rate = 0` the input
/// is returned unchanged.
pub fn dropout<T: Real>(tape: &mut Tape<T>, x: Var, rate: f64, rng: Option<&mut StreamRng>) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
    }
    let Some(rng) = rng else { return Ok(x) };
    if rate == 0.0 {
        return Ok(x);
    }
    let keep = T::from_f64(1.0 / (1.0 - rate));
    let shape = tape.value(x).shape().to_vec();
    let n = tape.value(x).numel();
    let mask: Vec<T> = (0..n)
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let mask = tape.constant(Tensor::new(shape, mask)?);
    tape.mul(x, mask)
}
