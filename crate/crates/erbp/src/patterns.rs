//! Synthetic triple datasets for abstract, concrete, and combined pattern
//! classification.
//!
//! Abstract classes are pure equality signatures over a triple (α, β, γ);
//! train and evaluation splits use disjoint vocabulary halves so evaluation
//! tokens activate input neurons that are always zero during training.

use crate::autodiff::Tensor;
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Three token indices into a vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple(pub usize, pub usize, pub usize);

/// Equality signature of a triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PatternClass {
    Aaa,
    Aab,
    Aba,
    Abb,
    Abc,
}

/// Classifies a triple by its equality relations alone.
pub fn classify_pattern(t: Triple) -> PatternClass {
    let Triple(a, b, c) = t;
    match (a == b, b == c, a == c) {
        (true, true, _) => PatternClass::Aaa,
        (true, false, _) => PatternClass::Aab,
        (false, _, true) => PatternClass::Aba,
        (false, true, false) => PatternClass::Abb,
        _ => PatternClass::Abc,
    }
}

/// The synthetic classification tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskId {
    /// ABA vs every other pattern.
    AbaVsOther,
    /// ABB vs every other pattern.
    AbbVsOther,
    /// ABA in training; the mirrored BAB triples at evaluation.
    AbaBabVsOther,
    /// ABA vs ABB only.
    AbaVsAbb,
    /// ABC (no equal pair) vs patterns with at least one equality.
    AbcVsOther,
    /// Four-way product of {ABA, ABB} x {starts with 'a', starts with 'b'}.
    Combined,
    /// Two-way concrete classification: starts with 'a' vs starts with 'b'.
    ConcreteOnly,
}

impl TaskId {
    pub fn vocabulary_size(&self) -> usize {
        match self {
            TaskId::Combined | TaskId::ConcreteOnly => 20, // 'a', 'b' + 18 letters
            _ => 12,
        }
    }

    pub fn class_count(&self) -> usize {
        match self {
            TaskId::Combined => 4,
            _ => 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TaskId::AbaVsOther => "task1",
            TaskId::AbbVsOther => "task2",
            TaskId::AbaBabVsOther => "task3",
            TaskId::AbaVsAbb => "task4",
            TaskId::AbcVsOther => "task5",
            TaskId::Combined => "combined",
            TaskId::ConcreteOnly => "concrete_only",
        }
    }
}

/// Task definition: which task, and the seed that drives vocabulary split and
/// all downsampling.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task: TaskId,
    pub seed: u64,
}

/// Generated dataset; labels are dense class indices, label 1 (binary tasks)
/// marks the positive pattern.
#[derive(Debug, Clone)]
pub struct LabelledDataset {
    pub vocabulary: usize,
    pub classes: usize,
    pub train: Vec<(Triple, usize)>,
    pub validation: Vec<(Triple, usize)>,
    pub test: Vec<(Triple, usize)>,
}

impl LabelledDataset {
    /// JSON-lines export: one `{"tokens":[i,j,k],"label":c,"split":...}` per row.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (split, rows) in [
            ("train", &self.train),
            ("val", &self.validation),
            ("test", &self.test),
        ] {
            for (t, label) in rows {
                writeln!(
                    out,
                    "{{\"tokens\":[{},{},{}],\"label\":{},\"split\":\"{}\"}}",
                    t.0, t.1, t.2, label, split
                )
                .expect("string write");
            }
        }
        out
    }
}

/// One-hot encoding of a triple over the full vocabulary: `[3·V]`.
pub fn one_hot(t: Triple, vocab: usize) -> Result<Tensor> {
    for idx in [t.0, t.1, t.2] {
        if idx >= vocab {
            return Err(Error::IndexOutOfRange {
                index: idx,
                size: vocab,
            });
        }
    }
    let mut data = vec![0.0; 3 * vocab];
    data[t.0] = 1.0;
    data[vocab + t.1] = 1.0;
    data[2 * vocab + t.2] = 1.0;
    Ok(Tensor::vector(data))
}

fn all_triples_of(pattern: PatternClass, vocab: &[usize]) -> Vec<Triple> {
    let mut out = Vec::new();
    for &a in vocab {
        for &b in vocab {
            for &c in vocab {
                let t = Triple(a, b, c);
                if classify_pattern(t) == pattern {
                    out.push(t);
                }
            }
        }
    }
    out
}

/// Draws `total` negatives from the given per-pattern pools with equal counts
/// per pattern where available; shortfall from small pools is redistributed
/// round-robin to the others.
fn sample_balanced_negatives(
    pools: Vec<Vec<Triple>>,
    total: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Triple>> {
    let available: usize = pools.iter().map(Vec::len).sum();
    if available < total {
        return Err(Error::Generation(format!(
            "need {total} negatives but only {available} exist (deficit {})",
            total - available
        )));
    }
    let mut shuffled: Vec<Vec<Triple>> = pools
        .into_iter()
        .map(|mut p| {
            p.shuffle(rng);
            p
        })
        .collect();
    let mut out = Vec::with_capacity(total);
    while out.len() < total {
        for pool in shuffled.iter_mut() {
            if out.len() == total {
                break;
            }
            if let Some(t) = pool.pop() {
                out.push(t);
            }
        }
    }
    Ok(out)
}

/// Binary positive-vs-rest rows over one vocabulary half, exactly balanced.
fn binary_rows(
    positive: PatternClass,
    negatives: &[PatternClass],
    vocab: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(Triple, usize)>> {
    let mut pos = all_triples_of(positive, vocab);
    let pools: Vec<Vec<Triple>> = negatives
        .iter()
        .map(|&p| all_triples_of(p, vocab))
        .collect();
    let neg_available: usize = pools.iter().map(Vec::len).sum();
    let target = pos.len().min(neg_available);
    if target == 0 {
        return Err(Error::Generation(format!(
            "vocabulary of {} letters yields no balanced classes",
            vocab.len()
        )));
    }
    pos.shuffle(rng);
    pos.truncate(target);
    let neg = sample_balanced_negatives(pools, target, rng)?;
    let mut rows: Vec<(Triple, usize)> = pos.into_iter().map(|t| (t, 1)).collect();
    rows.extend(neg.into_iter().map(|t| (t, 0)));
    Ok(rows)
}

/// Splits evaluation rows into validation and test halves, class-balanced.
fn split_eval(rows: Vec<(Triple, usize)>, classes: usize, rng: &mut ChaCha8Rng) -> (Vec<(Triple, usize)>, Vec<(Triple, usize)>) {
    let mut by_class: Vec<Vec<(Triple, usize)>> = vec![Vec::new(); classes];
    for row in rows {
        by_class[row.1].push(row);
    }
    let (mut val, mut test) = (Vec::new(), Vec::new());
    for mut group in by_class {
        group.shuffle(rng);
        let half = group.len() / 2;
        for (i, row) in group.into_iter().enumerate() {
            if i < half {
                val.push(row);
            } else {
                test.push(row);
            }
        }
    }
    (val, test)
}

const OTHER_THAN_ABA: [PatternClass; 4] = [
    PatternClass::Aaa,
    PatternClass::Aab,
    PatternClass::Abb,
    PatternClass::Abc,
];
const OTHER_THAN_ABB: [PatternClass; 4] = [
    PatternClass::Aaa,
    PatternClass::Aab,
    PatternClass::Aba,
    PatternClass::Abc,
];
const WITH_EQUALITY: [PatternClass; 4] = [
    PatternClass::Aaa,
    PatternClass::Aab,
    PatternClass::Aba,
    PatternClass::Abb,
];

/// Generates the dataset for one task. Deterministic in the spec's seed.
pub fn generate_task(spec: &TaskSpec) -> Result<LabelledDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let vocab = spec.task.vocabulary_size();
    match spec.task {
        TaskId::AbaVsOther => abstract_binary(spec, PatternClass::Aba, &OTHER_THAN_ABA, &mut rng),
        TaskId::AbbVsOther => abstract_binary(spec, PatternClass::Abb, &OTHER_THAN_ABB, &mut rng),
        TaskId::AbcVsOther => abstract_binary(spec, PatternClass::Abc, &WITH_EQUALITY, &mut rng),
        TaskId::AbaVsAbb => abstract_binary(spec, PatternClass::Aba, &[PatternClass::Abb], &mut rng),
        TaskId::AbaBabVsOther => {
            let (train_vocab, eval_vocab) = split_vocab(vocab, &mut rng);
            let train = binary_rows(PatternClass::Aba, &OTHER_THAN_ABA, &train_vocab, &mut rng)?;
            // Evaluation positives are the mirrored (β, α, β) versions of the
            // training positives; negatives follow the held-out protocol.
            let mirrored: Vec<Triple> = train
                .iter()
                .filter(|(_, l)| *l == 1)
                .map(|(t, _)| Triple(t.1, t.0, t.1))
                .collect();
            let pools: Vec<Vec<Triple>> = OTHER_THAN_ABA
                .iter()
                .map(|&p| all_triples_of(p, &eval_vocab))
                .collect();
            let neg = sample_balanced_negatives(pools, mirrored.len(), &mut rng)?;
            let mut eval: Vec<(Triple, usize)> = mirrored.into_iter().map(|t| (t, 1)).collect();
            eval.extend(neg.into_iter().map(|t| (t, 0)));
            let (validation, test) = split_eval(eval, 2, &mut rng);
            Ok(LabelledDataset {
                vocabulary: vocab,
                classes: 2,
                train,
                validation,
                test,
            })
        }
        TaskId::Combined => {
            let (train_letters, eval_letters) = split_anchor_vocab(vocab, &mut rng);
            let train = combined_rows(&train_letters);
            let eval = combined_rows(&eval_letters);
            let (validation, test) = split_eval(eval, 4, &mut rng);
            Ok(LabelledDataset {
                vocabulary: vocab,
                classes: 4,
                train,
                validation,
                test,
            })
        }
        TaskId::ConcreteOnly => {
            let (train_letters, eval_letters) = split_anchor_vocab(vocab, &mut rng);
            let per_class = 60;
            let train = concrete_rows(&train_letters, per_class, &mut rng)?;
            let eval = concrete_rows(&eval_letters, eval_letters.len() * eval_letters.len(), &mut rng)?;
            let (validation, test) = split_eval(eval, 2, &mut rng);
            Ok(LabelledDataset {
                vocabulary: vocab,
                classes: 2,
                train,
                validation,
                test,
            })
        }
    }
}

fn abstract_binary(
    spec: &TaskSpec,
    positive: PatternClass,
    negatives: &[PatternClass],
    rng: &mut ChaCha8Rng,
) -> Result<LabelledDataset> {
    let vocab = spec.task.vocabulary_size();
    let (train_vocab, eval_vocab) = split_vocab(vocab, rng);
    let train = binary_rows(positive, negatives, &train_vocab, rng)?;
    let eval = binary_rows(positive, negatives, &eval_vocab, rng)?;
    let (validation, test) = split_eval(eval, 2, rng);
    Ok(LabelledDataset {
        vocabulary: vocab,
        classes: 2,
        train,
        validation,
        test,
    })
}

/// Random half/half vocabulary split.
fn split_vocab(vocab: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut letters: Vec<usize> = (0..vocab).collect();
    letters.shuffle(rng);
    let half = vocab / 2;
    let mut train = letters[..half].to_vec();
    let mut eval = letters[half..].to_vec();
    train.sort_unstable();
    eval.sort_unstable();
    (train, eval)
}

/// Split for the anchored tasks: tokens 0 ('a') and 1 ('b') appear in every
/// split; the remaining 18 letters go 12 to train, 6 to evaluation.
fn split_anchor_vocab(vocab: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut letters: Vec<usize> = (2..vocab).collect();
    letters.shuffle(rng);
    let mut train = letters[..12].to_vec();
    let mut eval = letters[12..].to_vec();
    train.sort_unstable();
    eval.sort_unstable();
    (train, eval)
}

/// Classes 0..3 = (ABA,a**), (ABB,a**), (ABA,b**), (ABB,b**); β runs over the
/// split's free letters so the abstract and concrete labels are independent
/// by construction.
fn combined_rows(free_letters: &[usize]) -> Vec<(Triple, usize)> {
    let mut rows = Vec::new();
    // label 0: ABA a**, 1: ABB a**, 2: ABA b**, 3: ABB b**
    for (label, (anchor, is_aba)) in [(0, true), (0, false), (1, true), (1, false)]
        .into_iter()
        .enumerate()
    {
        for &beta in free_letters {
            let t = if is_aba {
                Triple(anchor, beta, anchor)
            } else {
                Triple(anchor, beta, beta)
            };
            rows.push((t, label));
        }
    }
    rows
}

/// Concrete-only rows: class by first token ('a' vs 'b'), tails random.
fn concrete_rows(
    free_letters: &[usize],
    per_class: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(Triple, usize)>> {
    let mut tails: Vec<(usize, usize)> = free_letters
        .iter()
        .flat_map(|&b| free_letters.iter().map(move |&c| (b, c)))
        .collect();
    if tails.len() < per_class {
        return Err(Error::Generation(format!(
            "need {per_class} tails per class but only {} exist",
            tails.len()
        )));
    }
    let mut rows = Vec::new();
    for class in [0usize, 1] {
        tails.shuffle(rng);
        for &(b, c) in tails.iter().take(per_class) {
            rows.push((Triple(class, b, c), class));
        }
    }
    Ok(rows)
}
