//! Seeded synthetic review corpora.
//!
//! Sentences are short restaurant-review clauses built from a fixed lexicon.
//! The directional corpus reserves ten opinion words for documents only: an
//! aspect model trained without document data never sees them, so the share
//! of test sentences that use them measures what transfer brings in.

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::corpus::{AspectSample, DocSample, Label};
use crate::rng::{self, StreamRng};

pub const TARGETS: [&str; 18] = [
    "food",
    "service",
    "staff",
    "pizza",
    "wine list",
    "decor",
    "menu",
    "waiter",
    "pasta",
    "dessert",
    "music",
    "fish tacos",
    "bread",
    "coffee",
    "steak",
    "sushi",
    "outdoor seating",
    "bar",
];

pub const SHARED_POSITIVE: [&str; 6] = ["good", "great", "tasty", "friendly", "excellent", "lovely"];
pub const SHARED_NEGATIVE: [&str; 6] = ["bad", "awful", "rude", "bland", "terrible", "stale"];
pub const NEUTRAL: [&str; 5] = ["okay", "average", "ordinary", "standard", "typical"];

/// Opinion words that only ever occur in the document corpus.
pub const DOC_ONLY_POSITIVE: [&str; 5] = ["superb", "delightful", "stellar", "divine", "splendid"];
pub const DOC_ONLY_NEGATIVE: [&str; 5] = ["dreadful", "horrid", "abysmal", "vile", "atrocious"];

const DOC_FILLERS: [&str; 8] = [
    "we came here on a friday night",
    "my friends and i sat near the window",
    "we ordered a few dishes to share",
    "it was busy when we arrived",
    "this place is close to my office",
    "we had a reservation for four",
    "it was our first visit",
    "the table was ready on time",
];

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_owned).collect()
}

fn shared(label: Label) -> &'static [&'static str] {
    match label {
        Label::Positive => &SHARED_POSITIVE,
        Label::Negative => &SHARED_NEGATIVE,
        Label::Neutral => &NEUTRAL,
    }
}

fn doc_only(label: Label) -> &'static [&'static str] {
    match label {
        Label::Positive => &DOC_ONLY_POSITIVE,
        Label::Negative => &DOC_ONLY_NEGATIVE,
        Label::Neutral => &NEUTRAL,
    }
}

pub fn doc_only_words() -> Vec<&'static str> {
    DOC_ONLY_POSITIVE.iter().chain(&DOC_ONLY_NEGATIVE).copied().collect()
}

/// Clause stating `opinion` about `target`; returns tokens and the target
/// span inside them.
fn clause(rng: &mut StreamRng, target: &str, opinion: &str) -> (Vec<String>, std::ops::Range<usize>) {
    let t = words(target);
    let (pre, post): (&str, String) = match rng.random_range(0..4) {
        0 => ("the", format!("was {opinion}")),
        1 => ("i thought the", format!("was really {opinion}")),
        2 => ("we found the", opinion.to_owned()),
        _ => ("the", format!("is quite {opinion} here")),
    };
    let mut tokens = words(pre);
    let start = tokens.len();
    tokens.extend(t);
    let end = tokens.len();
    tokens.extend(words(&post));
    (tokens, start..end)
}

fn other_label(rng: &mut StreamRng, label: Label) -> Label {
    let others: Vec<Label> = Label::ALL.into_iter().filter(|&l| l != label).collect();
    *others.choose(rng).unwrap()
}

/// One aspect sentence for `label` using an opinion word from `lexicon`.
/// With probability `contrast` a second clause about another target with a
/// different (shared-lexicon) polarity follows.
fn aspect_sentence(rng: &mut StreamRng, label: Label, lexicon: &[&str], contrast: f64) -> AspectSample {
    let target = *TARGETS.choose(rng).unwrap();
    let opinion = *lexicon.choose(rng).unwrap();
    let (mut tokens, span) = clause(rng, target, opinion);
    if rng.random_bool(contrast) {
        let other_target = loop {
            let t = *TARGETS.choose(rng).unwrap();
            if t != target {
                break t;
            }
        };
        let other = other_label(rng, label);
        let other_opinion = *shared(other).choose(rng).unwrap();
        let (second, _) = clause(rng, other_target, other_opinion);
        tokens.push("but".into());
        tokens.extend(second);
    }
    AspectSample::new(tokens, span, label).expect("generated sample is valid")
}

fn random_label(rng: &mut StreamRng) -> Label {
    *Label::ALL.choose(rng).unwrap()
}

/// `n` aspect sentences over the shared lexicon only.
pub fn toy_aspect(n: usize, seed: u64) -> Vec<AspectSample> {
    let mut rng = rng::stream(seed, "synthetic/toy_aspect");
    (0..n)
        .map(|i| {
            let label = Label::ALL[i % Label::COUNT];
            aspect_sentence(&mut rng, label, shared(label), 0.25)
        })
        .collect()
}

/// A review of a few clauses, all agreeing with `label`. Polar opinion words
/// come from the document-only lexicon with probability `doc_only_rate`.
fn document(rng: &mut StreamRng, label: Label, doc_only_rate: f64) -> DocSample {
    let mut tokens = Vec::new();
    if rng.random_bool(0.5) {
        tokens.extend(words(DOC_FILLERS.choose(rng).unwrap()));
    }
    for _ in 0..rng.random_range(1..=3) {
        let lexicon = if rng.random_bool(doc_only_rate) {
            doc_only(label)
        } else {
            shared(label)
        };
        let target = *TARGETS.choose(rng).unwrap();
        let opinion = *lexicon.choose(rng).unwrap();
        let (c, _) = clause(rng, target, opinion);
        if !tokens.is_empty() {
            tokens.push("and".into());
        }
        tokens.extend(c);
    }
    DocSample::new(tokens, label).expect("generated document is valid")
}

/// `per_class` documents of each class, interleaved.
pub fn toy_docs(per_class: usize, seed: u64) -> Vec<DocSample> {
    let mut rng = rng::stream(seed, "synthetic/toy_docs");
    (0..per_class * Label::COUNT)
        .map(|i| document(&mut rng, Label::ALL[i % Label::COUNT], 0.5))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DirectionalSpec {
    pub n_docs: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Fraction of test sentences whose opinion word is document-only.
    pub doc_only_share: f64,
    pub seed: u64,
}

impl Default for DirectionalSpec {
    fn default() -> Self {
        DirectionalSpec {
            n_docs: 3000,
            n_train: 200,
            n_test: 300,
            doc_only_share: 0.5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Directional {
    pub aspect_train: Vec<AspectSample>,
    pub aspect_test: Vec<AspectSample>,
    pub docs: Vec<DocSample>,
}

/// Aspect train sentences use only the shared lexicon; a share of the test
/// sentences state their polarity with a document-only word; documents use
/// both lexicons.
pub fn directional(spec: &DirectionalSpec) -> Directional {
    let mut rng = rng::stream(spec.seed, "synthetic/directional");
    let aspect_train = (0..spec.n_train)
        .map(|_| {
            let label = random_label(&mut rng);
            aspect_sentence(&mut rng, label, shared(label), 0.25)
        })
        .collect();
    let n_doc_only = (spec.doc_only_share * spec.n_test as f64).round() as usize;
    let aspect_test = (0..spec.n_test)
        .map(|i| {
            if i < n_doc_only {
                let label = [Label::Positive, Label::Negative][i % 2];
                aspect_sentence(&mut rng, label, doc_only(label), 0.25)
            } else {
                let label = random_label(&mut rng);
                aspect_sentence(&mut rng, label, shared(label), 0.25)
            }
        })
        .collect();
    let docs = (0..spec.n_docs)
        .map(|i| document(&mut rng, Label::ALL[i % Label::COUNT], 0.5))
        .collect();
    Directional {
        aspect_train,
        aspect_test,
        docs,
    }
}
