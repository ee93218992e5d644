//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

#[path = "../../core/tests/common/mod.rs"]
mod oracle;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use absa_core::corpus::{EncodedAspect, EncodedDoc, Label};
use absa_core::experiment::{prepare, Corpora};
use absa_core::layers::{self, LstmParams, OutputParams};
use absa_core::metrics::{ttest_one_tailed, ConfusionMatrix, MetricsReport};
use absa_core::model::{bind_shared, transfer_init, AspectParams, DocParams, DocRep, Layer, NamedParam, TransferMask};
use absa_core::train::{aspect_loss, combined_loss, doc_loss, train_aspect, Auxiliary, RmsProp, RmsState};
use absa_core::{grad_check, rng, synthetic, Param, RunConfig, RunSet, Tape, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

type Check = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn core<T>(r: absa_core::Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

// ---------------------------------------------------------------- gradients

const GRAD_SEEDS: u64 = 20;
const GRAD_EPS: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-3;

fn named(list: &[NamedParam<f64>]) -> Vec<(String, Param<f64>)> {
    list.iter().map(|p| (p.name.clone(), p.param.clone())).collect()
}

fn project(tape: &mut Tape<f64>, x: Var, weights: &[f64]) -> absa_core::Result<Var> {
    let shape = tape.value(x).shape().to_vec();
    let w = tape.constant(Tensor::from_f64(&shape, weights)?);
    let p = tape.mul(x, w)?;
    Ok(tape.sum(p))
}

fn table(r: &mut ChaCha8Rng, vocab: usize, d: usize) -> Tensor<f64> {
    let mut data = oracle::uniform(r, vocab * d, 0.5);
    data[..d].iter_mut().for_each(|v| *v = 0.0);
    Tensor::from_f64(&[vocab, d], &data).unwrap()
}

fn aspect_sample(r: &mut ChaCha8Rng, vocab: usize) -> EncodedAspect {
    let n = r.random_range(2..7);
    let ids: Vec<usize> = (0..n).map(|_| r.random_range(1..vocab)).collect();
    let start = r.random_range(0..n);
    let end = r.random_range(start + 1..=n.min(start + 2));
    EncodedAspect {
        ids,
        target: start..end,
        label: Label::ALL[r.random_range(0..3)],
    }
}

fn doc_sample(r: &mut ChaCha8Rng, vocab: usize) -> EncodedDoc {
    let n = r.random_range(1..8);
    EncodedDoc {
        ids: (0..n).map(|_| r.random_range(1..vocab)).collect(),
        label: Label::ALL[r.random_range(0..3)],
    }
}

/// Worst relative error of `case` over all gradient seeds.
fn worst(case: impl Fn(u64) -> absa_core::Result<f64>) -> std::result::Result<f64, String> {
    let mut max = 0.0f64;
    for seed in 0..GRAD_SEEDS {
        max = max.max(core(case(seed))?);
    }
    Ok(max)
}

fn gradient() -> Check {
    let mut cases: Vec<(&str, f64)> = Vec::new();
    cases.push((
        "embedding+target",
        worst(|seed| {
            let mut r = oracle::rng(seed);
            let e = Param::new(table(&mut r, 6, 3));
            let ids = [2, 4, 2, 5];
            let (w12, w3) = (oracle::uniform(&mut r, 12, 1.0), oracle::uniform(&mut r, 3, 1.0));
            grad_check(
                |tape| {
                    let g = tape.gather(&e, &ids)?;
                    let a = project(tape, g, &w12)?;
                    let t = layers::target_rep(tape, &e, &ids[1..3])?;
                    let b = project(tape, t, &w3)?;
                    tape.add(a, b)
                },
                &[("embedding".to_string(), e.clone())],
                GRAD_EPS,
            )
            .map(|r| r.max_rel_error)
        })?,
    ));
    cases.push((
        "lstm",
        worst(|seed| {
            let mut r = oracle::rng(seed);
            let (n, d, h) = (r.random_range(1..6), 3, 4);
            let p = LstmParams::<f64> {
                w: oracle::random_param(&mut r, &[d, 4 * h], 0.6),
                u: oracle::random_param(&mut r, &[h, 4 * h], 0.6),
                b: oracle::random_param(&mut r, &[4 * h], 0.6),
            };
            let x = oracle::random_param(&mut r, &[n, d], 1.0);
            let w = oracle::uniform(&mut r, n * h, 1.0);
            let mut params: Vec<(String, Param<f64>)> =
                p.named().iter().map(|(k, v)| (k.to_string(), (*v).clone())).collect();
            params.push(("x".into(), x.clone()));
            grad_check(
                |tape| {
                    let xv = tape.param(&x);
                    let hs = layers::lstm_forward(tape, xv, &p)?;
                    project(tape, hs, &w)
                },
                &params,
                GRAD_EPS,
            )
            .map(|r| r.max_rel_error)
        })?,
    ));
    cases.push((
        "attention",
        worst(|seed| {
            let mut r = oracle::rng(seed);
            let (n, dh, d) = (r.random_range(1..7), 4, 3);
            let h = oracle::random_param(&mut r, &[n, dh], 1.0);
            let t = oracle::random_param(&mut r, &[d], 1.0);
            let w_a = oracle::random_param(&mut r, &[dh, d], 1.0);
            let (wz, wa) = (oracle::uniform(&mut r, dh, 1.0), oracle::uniform(&mut r, n, 1.0));
            grad_check(
                |tape| {
                    let (hv, tv, wv) = (tape.param(&h), tape.param(&t), tape.param(&w_a));
                    let (z, alpha) = layers::attention(tape, hv, tv, wv, None)?;
                    let a = project(tape, z, &wz)?;
                    let b = project(tape, alpha, &wa)?;
                    tape.add(a, b)
                },
                &[("h".into(), h.clone()), ("t".into(), t.clone()), ("w_a".into(), w_a.clone())],
                GRAD_EPS,
            )
            .map(|r| r.max_rel_error)
        })?,
    ));
    cases.push((
        "dropout+output",
        worst(|seed| {
            let mut r = oracle::rng(seed);
            let rep = oracle::random_param(&mut r, &[5], 1.0);
            let out = OutputParams::<f64> {
                w: oracle::random_param(&mut r, &[3, 5], 1.0),
                b: oracle::random_param(&mut r, &[3], 1.0),
            };
            let w = oracle::uniform(&mut r, 3, 1.0);
            let mut params: Vec<(String, Param<f64>)> =
                out.named().iter().map(|(k, v)| (k.to_string(), (*v).clone())).collect();
            params.push(("rep".into(), rep.clone()));
            grad_check(
                |tape| {
                    let mut drop = rng::stream(seed, "acceptance/dropout");
                    let x = tape.param(&rep);
                    let x = layers::dropout(tape, x, 0.4, Some(&mut drop))?;
                    let p = layers::output_layer(tape, x, &out)?;
                    project(tape, p, &w)
                },
                &params,
                GRAD_EPS,
            )
            .map(|r| r.max_rel_error)
        })?,
    ));
    cases.push((
        "aspect loss",
        worst(|seed| {
            let mut r = oracle::rng(seed);
            let params = AspectParams::init(&table(&mut r, 8, 3), 4, seed);
            let batch: Vec<EncodedAspect> = (0..2).map(|_| aspect_sample(&mut r, 8)).collect();
            let refs: Vec<&EncodedAspect> = batch.iter().collect();
            grad_check(
                |tape| {
                    let mut drop = rng::stream(seed, "acceptance/dropout");
                    aspect_loss(tape, &refs, &params, Some((0.3, &mut drop)))
                },
                &named(&params.named()),
                GRAD_EPS,
            )
            .map(|r| r.max_rel_error)
        })?,
    ));
    for (label, rep) in [("doc loss (last)", DocRep::Last), ("doc loss (mean)", DocRep::Mean)] {
        cases.push((
            label,
            worst(|seed| {
                let mut r = oracle::rng(seed);
                let params = DocParams::init(&table(&mut r, 8, 3), 4, seed);
                let batch: Vec<EncodedDoc> = (0..2).map(|_| doc_sample(&mut r, 8)).collect();
                let refs: Vec<&EncodedDoc> = batch.iter().collect();
                grad_check(
                    |tape| {
                        let mut drop = rng::stream(seed, "acceptance/dropout");
                        doc_loss(tape, &refs, &params, rep, Some((0.3, &mut drop)))
                    },
                    &named(&params.named()),
                    GRAD_EPS,
                )
                .map(|r| r.max_rel_error)
            })?,
        ));
    }
    cases.push((
        "joint loss",
        worst(|seed| {
            let mut r = oracle::rng(seed);
            let base = table(&mut r, 8, 3);
            let b = bind_shared(AspectParams::init(&base, 4, seed), DocParams::init(&base, 4, seed + 100))?;
            let aspects: Vec<EncodedAspect> = (0..2).map(|_| aspect_sample(&mut r, 8)).collect();
            let docs: Vec<EncodedDoc> = (0..2).map(|_| doc_sample(&mut r, 8)).collect();
            let (a_refs, d_refs): (Vec<_>, Vec<_>) = (aspects.iter().collect(), docs.iter().collect());
            grad_check(
                |tape| {
                    let j = aspect_loss(tape, &a_refs, &b.aspect, None)?;
                    let u = doc_loss(tape, &d_refs, &b.doc, DocRep::Mean, None)?;
                    combined_loss(tape, j, u, 0.1)
                },
                &named(&b.named()),
                GRAD_EPS,
            )
            .map(|r| r.max_rel_error)
        })?,
    ));
    let max = cases.iter().map(|c| c.1).fold(0.0, f64::max);
    let detail = cases.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    ensure(max < GRAD_TOL, || format!("max rel err {max:.3e} >= {GRAD_TOL:e}: {detail}"))?;
    Ok(format!("max rel err {max:.2e} over {GRAD_SEEDS} seeds per case ({detail})"))
}

// ------------------------------------------------------------------ oracles

const INSTANCES: u64 = 100;
const ORACLE_TOL: f64 = 1e-5;

fn base_table(r: &mut ChaCha8Rng, vocab: usize, d: usize) -> Tensor<f64> {
    let mut data = oracle::uniform(r, vocab * d, 0.8);
    data[..d].iter_mut().for_each(|v| *v = 0.0);
    Tensor::from_f64(&[vocab, d], &data).unwrap()
}

fn random_ids(r: &mut ChaCha8Rng, n: usize, vocab: usize) -> Vec<usize> {
    (0..n).map(|_| r.random_range(2..vocab)).collect()
}

fn label(r: &mut ChaCha8Rng) -> Label {
    Label::ALL[r.random_range(0..3)]
}

/// Forward passes at both precisions against the 64-bit plain-loop
/// references, and metrics against brute-force counting.
fn oracles() -> Check {
    let mut worst = [0.0f64; 4];
    let mut track = |k: usize, got: &[f64], expect: &[f64]| -> std::result::Result<(), String> {
        ensure(got.len() == expect.len(), || "length mismatch".into())?;
        worst[k] = worst[k].max(oracle::max_rel(got, expect));
        Ok(())
    };
    for seed in 0..INSTANCES {
        let mut r = oracle::rng(seed);

        let n = r.random_range(1..12);
        let v = oracle::uniform(&mut r, n, 5.0);
        let mut mask: Vec<bool> = (0..n).map(|_| r.random_bool(0.7)).collect();
        mask[r.random_range(0..n)] = true;
        let expect = oracle::softmax(&v, Some(&mask));
        track(0, &absa_core::tape::softmax_masked(&v, Some(&mask)), &expect)?;
        let v32: Vec<f32> = v.iter().map(|&x| x as f32).collect();
        let got32: Vec<f64> = absa_core::tape::softmax_masked(&v32, Some(&mask)).iter().map(|&x| x as f64).collect();
        let expect32 = oracle::softmax(&v32.iter().map(|&x| x as f64).collect::<Vec<_>>(), Some(&mask));
        track(0, &got32, &expect32)?;

        let (len, dh, d) = (r.random_range(1..8), r.random_range(1..6), r.random_range(1..6));
        let hs: Vec<Vec<f64>> = (0..len).map(|_| oracle::uniform(&mut r, dh, 1.0)).collect();
        let t = oracle::uniform(&mut r, d, 1.0);
        let w = oracle::random_param(&mut r, &[dh, d], 1.5);
        let mut tape = Tape::inference();
        let hv = tape.leaf(Tensor::from_rows(&hs).unwrap());
        let tv = tape.leaf(Tensor::from_vec(t.clone()).unwrap());
        let wv = tape.param(&w);
        let (z, alpha) = core(layers::attention(&mut tape, hv, tv, wv, None))?;
        let (ez, ealpha) = oracle::attention(&hs, &t, &oracle::matrix(&w), None);
        track(1, tape.value(z).data(), &ez)?;
        track(1, tape.value(alpha).data(), &ealpha)?;

        let (vocab, d, h) = (r.random_range(4..12), r.random_range(2..6), r.random_range(2..6));
        let table = Param::new(base_table(&mut r, vocab, d));
        let m = r.random_range(1..5);
        let ids = random_ids(&mut r, m, vocab);
        let mut tape = Tape::inference();
        let tr = core(layers::target_rep(&mut tape, &table, &ids))?;
        let rows: Vec<Vec<f64>> = ids.iter().map(|&i| table.read().row(i).to_vec()).collect();
        track(2, tape.value(tr).data(), &oracle::mean_rows(&rows))?;

        // The production f32 model against a 64-bit re-evaluation of the
        // same (rounded) parameters.
        let doc32 = DocParams::<f64>::init(&base_table(&mut r, vocab, d), h, seed).cast::<f32>();
        let doc64 = doc32.cast::<f64>();
        let n = r.random_range(1..10);
        let doc = EncodedDoc {
            ids: random_ids(&mut r, n, vocab),
            label: label(&mut r),
        };
        for (rep, mean) in [(DocRep::Last, false), (DocRep::Mean, true)] {
            let expect = oracle::doc_model(&doc64, &doc.ids, mean);
            track(3, &core(doc64.predict(&doc, rep))?.probs, &expect)?;
            track(3, &core(doc32.predict(&doc, rep))?.probs, &expect)?;
        }
        let a32 = AspectParams::<f64>::init(&base_table(&mut r, vocab, d), h, seed).cast::<f32>();
        let a64 = a32.cast::<f64>();
        let n = r.random_range(1..8);
        let start = r.random_range(0..n);
        let end = r.random_range(start + 1..=n);
        let sample = EncodedAspect {
            ids: random_ids(&mut r, n, vocab),
            target: start..end,
            label: label(&mut r),
        };
        let (p, al) = oracle::aspect_model(&a64, &sample.ids, start..end);
        for pred in [core(a64.predict(&sample))?, core(a32.predict(&sample))?] {
            track(1, &pred.alpha, &al)?;
            track(3, &pred.probs, &p)?;
        }
    }
    let max = worst.iter().copied().fold(0.0, f64::max);
    ensure(max < ORACLE_TOL, || format!("max rel err {max:.3e} (softmax, attention, target, model: {worst:?})"))?;

    let mut r = oracle::rng(2024);
    let mut f1_err = 0.0f64;
    for case in 0..1000 {
        let n = r.random_range(1..=50);
        let gold: Vec<Label> = (0..n).map(|_| label(&mut r)).collect();
        let pred: Vec<Label> = (0..n).map(|_| label(&mut r)).collect();
        let cm = core(ConfusionMatrix::from_pairs(&gold, &pred))?;
        let (acc, f1) = oracle::brute_metrics(&gold, &pred);
        ensure(core(cm.accuracy())? == acc, || format!("accuracy differs on case {case}"))?;
        f1_err = f1_err.max((core(cm.macro_f1())? - f1).abs());
    }
    ensure(f1_err <= 1e-12, || format!("macro-F1 error {f1_err:e}"))?;
    Ok(format!(
        "{INSTANCES} instances: softmax {:.1e}, attention {:.1e}, target {:.1e}, model {:.1e}; 1000 metric vectors exact acc, F1 err {f1_err:.0e}",
        worst[0], worst[1], worst[2], worst[3]
    ))
}

// ---------------------------------------------------------------- transfer

fn transfer() -> Check {
    const H: usize = 4;
    let mut r = oracle::rng(1);
    let mut data = oracle::uniform(&mut r, 10 * 3, 0.5);
    data[..3].iter_mut().for_each(|v| *v = 0.0);
    let base: Tensor<f32> = Tensor::from_f64(&[10, 3], &data).unwrap();
    let doc = DocParams::init(&base, H, 999);
    for p in doc.named() {
        let noise = oracle::uniform(&mut r, p.param.read().numel(), 0.3);
        for (v, e) in p.param.write().data_mut().iter_mut().zip(noise) {
            *v += e as f32;
        }
    }
    let copy = |a: &Param<f32>, b: &Param<f32>| a.bit_eq(b) && !a.ptr_eq(b);
    let mut masks = vec![TransferMask::none()];
    masks.extend(TransferMask::ablation_settings().into_iter().map(|(_, m)| m));
    for seed in 1..=5 {
        let scratch = AspectParams::init(&base, H, seed);
        for mask in &masks {
            let a = core(transfer_init(&doc, mask, &base, H, seed))?;
            let e = if mask.contains(Layer::Embedding) { &doc.embedding } else { &scratch.embedding };
            let l = if mask.contains(Layer::Lstm) { &doc.lstm } else { &scratch.lstm };
            let o = if mask.contains(Layer::Output) { &doc.out } else { &scratch.out };
            let ok = copy(&a.embedding, e)
                && a.lstm.named().iter().zip(l.named()).all(|((_, x), (_, y))| copy(x, y))
                && a.out.named().iter().zip(o.named()).all(|((_, x), (_, y))| copy(x, y))
                && a.attn.w_a.bit_eq(&scratch.attn.w_a);
            ensure(ok, || format!("mask {mask}, seed {seed}: layers are not the expected copies"))?;
        }
    }

    // Shared storage stays identical through joint updates.
    let cfg = RunConfig {
        emb_dim: 12,
        hidden_dim: 12,
        batch_size: 4,
        dev_fraction: 0.0,
        doc_dev_fraction: 0.0,
        max_epochs: 3,
        ..RunConfig::default()
    };
    let corpora = Corpora {
        aspect_train: synthetic::toy_aspect(24, 11),
        aspect_test: Vec::new(),
        docs: synthetic::toy_docs(8, 12),
    };
    let prepared = core(prepare(&cfg, &corpora))?;
    let table = &prepared.embeddings.table;
    let b = core(bind_shared(AspectParams::init(table, 12, 3), DocParams::init(table, 12, 3)))?;
    let params = b.named();
    let opt = RmsProp::from_config(&cfg);
    let mut state = RmsState::new(&params);
    let a_refs: Vec<&EncodedAspect> = prepared.train.iter().take(4).collect();
    let d_refs: Vec<&EncodedDoc> = prepared.doc_train.iter().take(4).collect();
    let w0 = b.aspect.lstm.w.read().clone();
    for step in 0..10 {
        params.iter().for_each(|p| p.param.zero_grad());
        let mut tape = Tape::new();
        let j = core(aspect_loss(&mut tape, &a_refs, &b.aspect, None))?;
        let u = core(doc_loss(&mut tape, &d_refs, &b.doc, DocRep::Mean, None))?;
        let l = core(combined_loss(&mut tape, j, u, 0.5))?;
        core(tape.backward(l))?;
        core(opt.step(&params, &mut state))?;
        ensure(SharedViews { aspect: &b.aspect, doc: &b.doc }.equal(), || format!("views diverge after step {step}"))?;
    }
    ensure(!b.aspect.lstm.w.read().bit_eq(&w0), || "updates did not move the shared LSTM".into())?;
    let aux = Auxiliary {
        doc: DocParams::init(table, 12, 4),
        docs: &prepared.doc_train,
    };
    let run = core(train_aspect(AspectParams::init(table, 12, 4), Some(aux), &prepared.train, &[], &cfg, 4))?;
    let d = run.doc.ok_or("no document model returned")?;
    ensure(SharedViews { aspect: &run.last, doc: &d }.equal(), || "views diverge after multi-task training".into())?;

    // λ = 0 reproduces scratch training bit for bit.
    let zero = RunConfig {
        lambda: 0.0,
        dev_fraction: 0.25,
        ..cfg.clone()
    };
    let prepared = core(prepare(&zero, &corpora))?;
    let table = &prepared.embeddings.table;
    let scratch = core(train_aspect(AspectParams::init(table, 12, 5), None, &prepared.train, &prepared.dev, &zero, 5))?;
    let aux = Auxiliary {
        doc: DocParams::init(table, 12, 5),
        docs: &prepared.doc_train,
    };
    let mult = core(train_aspect(AspectParams::init(table, 12, 5), Some(aux), &prepared.train, &prepared.dev, &zero, 5))?;
    let same = |x: &AspectParams<f32>, y: &AspectParams<f32>| x.named().iter().zip(y.named()).all(|(p, q)| p.param.bit_eq(&q.param));
    let history_same = scratch.history.best == mult.history.best
        && scratch.history.epochs.iter().zip(&mult.history.epochs).all(|(a, b)| {
            a.train_loss.to_bits() == b.train_loss.to_bits() && (a.train_acc, a.dev_acc, a.dev_f1) == (b.train_acc, b.dev_acc, b.dev_f1)
        });
    ensure(same(&scratch.last, &mult.last) && same(&scratch.best, &mult.best) && history_same, || {
        "MULT with lambda 0 departs from scratch".into()
    })?;
    Ok(format!(
        "{} masks x 5 seeds copied bitwise, W_a scratch; shared views equal after 10 joint steps and {} epochs; lambda 0 == scratch",
        masks.len(),
        cfg.max_epochs
    ))
}

struct SharedViews<'a> {
    aspect: &'a AspectParams<f32>,
    doc: &'a DocParams<f32>,
}

impl SharedViews<'_> {
    fn equal(&self) -> bool {
        self.aspect.embedding.bit_eq(&self.doc.embedding)
            && self
                .aspect
                .lstm
                .named()
                .iter()
                .zip(self.doc.lstm.named())
                .all(|((_, x), (_, y))| x.bit_eq(y))
    }
}

// ----------------------------------------------------------------- overfit

fn overfit() -> Check {
    let cfg = RunConfig {
        emb_dim: 16,
        hidden_dim: 16,
        batch_size: 4,
        dev_fraction: 0.0,
        doc_dev_fraction: 0.0,
        max_epochs: 200,
        ..RunConfig::default()
    };
    let corpora = Corpora {
        aspect_train: synthetic::toy_aspect(32, 11),
        aspect_test: Vec::new(),
        docs: Vec::new(),
    };
    let data = core(prepare(&cfg, &corpora))?;
    ensure(data.train.len() == 32, || format!("{} training samples", data.train.len()))?;
    let run = core(train_aspect(
        AspectParams::init(&data.embeddings.table, cfg.hidden_dim, 1),
        None,
        &data.train,
        &[],
        &cfg,
        1,
    ))?;
    let hit = run.history.epochs.iter().position(|e| e.train_acc == 1.0);
    let best = run.history.epochs.iter().map(|e| e.train_acc).fold(0.0, f64::max);
    match hit {
        Some(i) => Ok(format!("100% train accuracy on 32 samples at epoch {}", i + 1)),
        None => Err(format!("best train accuracy {best:.4} after 200 epochs")),
    }
}

// ------------------------------------------------------------- CLI helpers

fn absa(dir: &Path, args: &[&str]) -> std::result::Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_absa"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("absa {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim())
    })
}

fn load(path: PathBuf) -> std::result::Result<MetricsReport, String> {
    MetricsReport::load(&path).map_err(|e| e.to_string())
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn same_runs(a: &MetricsReport, b: &MetricsReport) -> bool {
    a.seeds == b.seeds && bits(&a.acc_runs) == bits(&b.acc_runs) && bits(&a.f1_runs) == bits(&b.f1_runs)
}

// ------------------------------------------------------------- directional

fn directional() -> Check {
    let tmp = TempDir::new().map_err(|e| e.to_string())?;
    let d = tmp.path();
    absa(d, &["synth", "--kind", "directional", "--seed", "0", "--out-dir", "data"])?;
    let common = [
        "--aspect-train", "data/aspect_train.jsonl", "--aspect-test", "data/aspect_test.jsonl",
        "--doc-data", "data/docs.jsonl", "--emb-dim", "24", "--hidden-dim", "24", "--doc-epochs", "5",
        "--seeds", "1-5",
    ];
    absa(d, &[&["train", "--regime", "scratch", "--out-dir", "scratch"][..], &common].concat())?;
    absa(
        d,
        &[&["train", "--regime", "pret_mult", "--baseline-run", "scratch", "--out-dir", "pm"][..], &common].concat(),
    )?;
    let s = load(d.join("scratch/metrics.json"))?;
    let p = load(d.join("pm/metrics.json"))?;
    let test = core(ttest_one_tailed(&core(RunSet::new(p.acc_runs.clone()))?, &core(RunSet::new(s.acc_runs.clone()))?))?;
    let reported = p.p_vs_baseline.ok_or("no p-value in metrics.json")?.acc;
    ensure(reported == test.p, || format!("reported p {reported} vs recomputed {}", test.p))?;
    let gap = p.acc_mean - s.acc_mean;
    let line = format!(
        "PRET+MULT acc {:.4} vs scratch {:.4} (gap {:+.4}), one-tailed p {:.2e}",
        p.acc_mean, s.acc_mean, gap, test.p
    );
    ensure(gap >= 0.05 && test.p < 0.05, || line.clone())?;
    Ok(line)
}

// ------------------------------------------------------------------ toy CLI

const TOY: &[&str] = &[
    "--aspect-train", "data/aspect_train.jsonl", "--aspect-test", "data/aspect_test.jsonl",
    "--doc-data", "data/docs.jsonl", "--emb-dim", "8", "--hidden-dim", "8", "--max-epochs", "3",
    "--doc-epochs", "2", "--seeds", "1-3",
];

fn toy_dir() -> std::result::Result<TempDir, String> {
    let tmp = TempDir::new().map_err(|e| e.to_string())?;
    absa(
        tmp.path(),
        &["synth", "--kind", "toy", "--n-train", "40", "--n-test", "30", "--n-docs", "90", "--out-dir", "data"],
    )?;
    Ok(tmp)
}

fn endpoints() -> Check {
    let tmp = toy_dir()?;
    let d = tmp.path();
    absa(d, &[&["train", "--regime", "scratch", "--out-dir", "scratch"][..], TOY].concat())?;
    absa(d, &[&["curve", "--fractions", "0,0.5,1", "--out-dir", "curve"][..], TOY].concat())?;
    absa(d, &[&["ablate", "--include-empty", "--out-dir", "ablate"][..], TOY].concat())?;
    let scratch = load(d.join("scratch/metrics.json"))?;
    let curve0 = load(d.join("curve/fraction-0.00/metrics.json"))?;
    let empty = load(d.join("ablate/07-none/metrics.json"))?;
    ensure(same_runs(&curve0, &scratch), || format!("curve at 0: {:?} vs scratch {:?}", curve0.acc_runs, scratch.acc_runs))?;
    ensure(same_runs(&empty, &scratch), || format!("empty mask: {:?} vs scratch {:?}", empty.acc_runs, scratch.acc_runs))?;
    for seed in 1..=3 {
        let model = |p: &str| fs::read(d.join(p).join(format!("seed-{seed}/model.ckpt"))).map_err(|e| e.to_string());
        let s = model("scratch")?;
        ensure(model("curve/fraction-0.00")? == s && model("ablate/07-none")? == s, || {
            format!("seed {seed}: selected checkpoints differ from scratch")
        })?;
    }
    Ok(format!("curve at 0.0 and empty-mask ablation equal scratch exactly on seeds {:?}", scratch.seeds))
}

fn tree(root: &Path) -> std::result::Result<Vec<(PathBuf, Vec<u8>)>, String> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).map_err(|e| e.to_string())? {
            let p = e.map_err(|e| e.to_string())?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let bytes = fs::read(&p).map_err(|e| e.to_string())?;
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), bytes));
            }
        }
    }
    out.sort();
    Ok(out)
}

fn determinism() -> Check {
    let tmp = toy_dir()?;
    let d = tmp.path();
    let commands: Vec<Vec<&str>> = vec![
        [&["pretrain"][..], TOY].concat(),
        [&["train", "--regime", "pret_mult"][..], TOY].concat(),
        [&["train", "--regime", "mult", "--lambda", "0.3"][..], TOY].concat(),
        [&["ablate"][..], TOY].concat(),
        [&["curve", "--fractions", "0,0.5,1", "--plot"][..], TOY].concat(),
    ];
    let mut files = 0;
    for (i, cmd) in commands.iter().enumerate() {
        let mut trees = Vec::new();
        for rep in 0..2 {
            let out = format!("out-{i}-{rep}");
            absa(d, &[&cmd[..], &["--out-dir", &out]].concat())?;
            trees.push(tree(&d.join(out))?);
        }
        ensure(trees[0] == trees[1], || format!("`absa {}` output differs between runs", cmd[0]))?;
        files += trees[0].len();
    }
    let run = ["eval", "--run-dir", "out-1-0", "--aspect-test", "data/aspect_test.jsonl", "--out"];
    absa(d, &[&run[..], &["e0.json"]].concat())?;
    absa(d, &[&run[..], &["e1.json"]].concat())?;
    let read = |p: &str| fs::read(d.join(p)).map_err(|e| e.to_string());
    ensure(read("e0.json")? == read("e1.json")?, || "eval output differs between runs".into())?;
    absa(d, &["inspect", "--checkpoint", "out-1-0/seed-1/model.ckpt", "--compare", "out-2-0/seed-1/model.ckpt", "--samples", "data/aspect_test.jsonl", "--out-dir", "i0"])?;
    absa(d, &["inspect", "--checkpoint", "out-1-0/seed-1/model.ckpt", "--compare", "out-2-0/seed-1/model.ckpt", "--samples", "data/aspect_test.jsonl", "--out-dir", "i1"])?;
    ensure(tree(&d.join("i0"))? == tree(&d.join("i1"))?, || "inspect output differs between runs".into())?;
    Ok(format!("pretrain, train, ablate, curve, eval and inspect repeated: {} files byte-identical", files + 3))
}

// -------------------------------------------------------------------- main

fn main() {
    let checks: [(&str, fn() -> Check, Option<Duration>); 7] = [
        ("gradient", gradient, Some(Duration::from_secs(120))),
        ("oracle", oracles, Some(Duration::from_secs(60))),
        ("transfer contracts", transfer, Some(Duration::from_secs(60))),
        ("overfit", overfit, Some(Duration::from_secs(120))),
        ("directional", directional, Some(Duration::from_secs(15 * 60))),
        ("endpoint identities", endpoints, None),
        ("determinism", determinism, None),
    ];
    let mut failed = 0;
    for (name, check, budget) in checks {
        let start = Instant::now();
        let result = check();
        let took = start.elapsed();
        let result = match (result, budget) {
            (Ok(_), Some(b)) if took > b => Err(format!("took {took:.1?}, budget {b:?}")),
            (r, _) => r,
        };
        match result {
            Ok(detail) => println!("PASS {name} [{took:.1?}]: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name} [{took:.1?}]: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
