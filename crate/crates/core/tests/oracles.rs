//! Forward passes and metrics against the plain-loop references in
//! `common`, on random instances.

mod common;

use absa_core::corpus::{EncodedAspect, EncodedDoc, Label};
use absa_core::layers::{self, LstmParams};
use absa_core::metrics::{ttest_one_tailed, ConfusionMatrix, RunSet};
use absa_core::model::{AspectParams, DocParams, DocRep};
use absa_core::tape::{softmax_masked, Tape};
use absa_core::tensor::Tensor;
use common::{close, rng};
use rand::Rng;

const INSTANCES: u64 = 100;
const TOL: f64 = 1e-5;

fn base_table(r: &mut rand_chacha::ChaCha8Rng, vocab: usize, d: usize) -> Tensor<f64> {
    let mut data = common::uniform(r, vocab * d, 0.8);
    data[..d].iter_mut().for_each(|v| *v = 0.0);
    Tensor::from_f64(&[vocab, d], &data).unwrap()
}

fn random_ids(r: &mut rand_chacha::ChaCha8Rng, n: usize, vocab: usize) -> Vec<usize> {
    (0..n).map(|_| r.random_range(2..vocab)).collect()
}

fn label(r: &mut rand_chacha::ChaCha8Rng) -> Label {
    Label::ALL[r.random_range(0..3)]
}

#[test]
fn softmax_matches_direct_exponentiation() {
    assert!(close(&softmax_masked(&[1.0, 2.0, 3.0], None), &common::softmax(&[1.0, 2.0, 3.0], None), 1e-12));
    for seed in 0..INSTANCES {
        let mut r = rng(seed);
        let n = r.random_range(1..12);
        let v = common::uniform(&mut r, n, 5.0);
        let mut mask: Vec<bool> = (0..n).map(|_| r.random_bool(0.7)).collect();
        mask[r.random_range(0..n)] = true;
        assert!(close(&softmax_masked(&v, None), &common::softmax(&v, None), TOL), "seed {seed}");
        let got = softmax_masked(&v, Some(&mask));
        assert!(close(&got, &common::softmax(&v, Some(&mask)), TOL), "seed {seed}");
        for (g, m) in got.iter().zip(&mask) {
            if !m {
                assert_eq!(*g, 0.0);
            }
        }
    }
}

#[test]
fn lstm_matches_step_recurrence() {
    for seed in 0..INSTANCES {
        let mut r = rng(seed);
        let (n, d, h) = (r.random_range(1..7), r.random_range(1..6), r.random_range(1..6));
        let p = LstmParams::<f64> {
            w: common::random_param(&mut r, &[d, 4 * h], 0.7),
            u: common::random_param(&mut r, &[h, 4 * h], 0.7),
            b: common::random_param(&mut r, &[4 * h], 0.7),
        };
        let xs: Vec<Vec<f64>> = (0..n).map(|_| common::uniform(&mut r, d, 1.0)).collect();
        let mut tape = Tape::inference();
        let x = tape.leaf(Tensor::from_rows(&xs).unwrap());
        let hs = layers::lstm_forward(&mut tape, x, &p).unwrap();
        let expect: Vec<f64> = common::lstm(&xs, &common::matrix(&p.w), &common::matrix(&p.u), &common::vector(&p.b))
            .concat();
        assert!(close(tape.value(hs).data(), &expect, TOL), "seed {seed}");
    }
}

#[test]
fn target_rep_is_row_mean() {
    let mut tape = Tape::<f64>::inference();
    let table = absa_core::Param::new(Tensor::from_f64(&[3, 2], &[0.0, 0.0, 1.0, 3.0, 3.0, 5.0]).unwrap());
    let t = layers::target_rep(&mut tape, &table, &[1, 2]).unwrap();
    assert_eq!(tape.value(t).data(), &[2.0, 4.0]);
    for seed in 0..INSTANCES {
        let mut r = rng(seed);
        let (vocab, d) = (r.random_range(3..10), r.random_range(1..6));
        let table = absa_core::Param::new(base_table(&mut r, vocab, d));
        let m = r.random_range(1..5);
        let ids = random_ids(&mut r, m, vocab);
        let mut tape = Tape::inference();
        let t = layers::target_rep(&mut tape, &table, &ids).unwrap();
        let rows: Vec<Vec<f64>> = ids.iter().map(|&i| table.read().row(i).to_vec()).collect();
        assert!(close(tape.value(t).data(), &common::mean_rows(&rows), TOL), "seed {seed}");
    }
}

#[test]
fn attention_matches_direct_evaluation() {
    for seed in 0..INSTANCES {
        let mut r = rng(seed);
        let (n, dh, d) = (r.random_range(1..8), r.random_range(1..6), r.random_range(1..6));
        let hs: Vec<Vec<f64>> = (0..n).map(|_| common::uniform(&mut r, dh, 1.0)).collect();
        let t = common::uniform(&mut r, d, 1.0);
        let w = common::random_param(&mut r, &[dh, d], 1.5);
        let mut mask: Vec<bool> = (0..n).map(|_| r.random_bool(0.8)).collect();
        mask[r.random_range(0..n)] = true;

        let mut tape = Tape::inference();
        let hv = tape.leaf(Tensor::from_rows(&hs).unwrap());
        let tv = tape.leaf(Tensor::from_vec(t.clone()).unwrap());
        let wv = tape.param(&w);
        let (z, alpha) = layers::attention(&mut tape, hv, tv, wv, Some(&mask)).unwrap();
        let (ez, ealpha) = common::attention(&hs, &t, &common::matrix(&w), Some(&mask));
        assert!(close(tape.value(z).data(), &ez, TOL), "seed {seed}");
        assert!(close(tape.value(alpha).data(), &ealpha, TOL), "seed {seed}");
    }
}

#[test]
fn output_layer_matches_direct_softmax() {
    for seed in 0..INSTANCES {
        let mut r = rng(seed);
        let dh = r.random_range(1..8);
        let p = layers::OutputParams::<f64> {
            w: common::random_param(&mut r, &[3, dh], 2.0),
            b: common::random_param(&mut r, &[3], 1.0),
        };
        let rep = common::uniform(&mut r, dh, 1.0);
        let mut tape = Tape::inference();
        let v = tape.leaf(Tensor::from_vec(rep.clone()).unwrap());
        let probs = layers::output_layer(&mut tape, v, &p).unwrap();
        let expect = common::output(&rep, &common::matrix(&p.w), &common::vector(&p.b));
        assert!(close(tape.value(probs).data(), &expect, TOL), "seed {seed}");
    }
}

#[test]
fn aspect_model_matches_reference() {
    for seed in 0..INSTANCES {
        let mut r = rng(seed);
        let (vocab, d, h) = (r.random_range(4..12), r.random_range(2..6), r.random_range(2..6));
        let params = AspectParams::init(&base_table(&mut r, vocab, d), h, seed);
        // Nonzero biases so every parameter matters.
        params.out.b.write().data_mut().copy_from_slice(&common::uniform(&mut r, 3, 0.5));
        let n = r.random_range(1..8);
        let ids = random_ids(&mut r, n, vocab);
        let start = r.random_range(0..n);
        let end = r.random_range(start + 1..=n);
        let sample = EncodedAspect {
            ids: ids.clone(),
            target: start..end,
            label: label(&mut r),
        };
        let pred = params.predict(&sample).unwrap();
        let (p, alpha) = common::aspect_model(&params, &ids, start..end);
        assert!(close(&pred.probs, &p, TOL), "seed {seed}");
        assert!(close(&pred.alpha, &alpha, TOL), "seed {seed}");
    }
}

#[test]
fn doc_model_matches_reference_under_both_reps() {
    for seed in 0..INSTANCES {
        let mut r = rng(seed);
        let (vocab, d, h) = (r.random_range(4..12), r.random_range(2..6), r.random_range(2..6));
        let params = DocParams::init(&base_table(&mut r, vocab, d), h, seed);
        let n = r.random_range(1..10);
        let doc = EncodedDoc {
            ids: random_ids(&mut r, n, vocab),
            label: label(&mut r),
        };
        for (rep, mean) in [(DocRep::Last, false), (DocRep::Mean, true)] {
            let got = params.predict(&doc, rep).unwrap().probs;
            assert!(close(&got, &common::doc_model(&params, &doc.ids, mean), TOL), "seed {seed} {rep:?}");
        }
    }
}

#[test]
fn metrics_match_brute_force() {
    let mut r = rng(2024);
    for case in 0..1000 {
        let n = r.random_range(1..=50);
        let gold: Vec<Label> = (0..n).map(|_| label(&mut r)).collect();
        let pred: Vec<Label> = (0..n).map(|_| label(&mut r)).collect();
        let cm = ConfusionMatrix::from_pairs(&gold, &pred).unwrap();
        let (acc, f1) = common::brute_metrics(&gold, &pred);
        assert_eq!(cm.accuracy().unwrap(), acc, "case {case}");
        assert!((cm.macro_f1().unwrap() - f1).abs() <= 1e-12, "case {case}");
    }
}

#[test]
fn missing_class_lowers_macro_f1_by_a_third_of_its_complement() {
    let mut r = rng(7);
    for _ in 0..200 {
        let n = r.random_range(3..40);
        let mut gold: Vec<Label> = (0..n).map(|_| label(&mut r)).collect();
        gold[0] = Label::Neutral;
        let pred: Vec<Label> = gold
            .iter()
            .map(|&g| if g == Label::Neutral { Label::ALL[r.random_range(0..2)] } else { g })
            .collect();
        let cm = ConfusionMatrix::from_pairs(&gold, &pred).unwrap();
        let f = cm.per_class_f1();
        assert_eq!(f[2], 0.0);
        let with_neutral_perfect = (f[0] + f[1] + 1.0) / 3.0;
        assert!((with_neutral_perfect - cm.macro_f1().unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }
}

#[test]
fn t_test_matches_numerical_integration() {
    let mut r = rng(99);
    for case in 0..20 {
        let a: Vec<f64> = (0..5).map(|_| r.random_range(0.6..0.9)).collect();
        let b: Vec<f64> = (0..5).map(|_| r.random_range(0.55..0.85)).collect();
        let p = ttest_one_tailed(&RunSet::new(a.clone()).unwrap(), &RunSet::new(b.clone()).unwrap())
            .unwrap()
            .p;
        let oracle = common::t_test_by_integration(&a, &b);
        assert!((p - oracle).abs() < 1e-8, "case {case}: {p} vs {oracle}");
    }
}
